//! Voxelised reaction-diffusion channel.
//!
//! The medium is a box of cubic voxels. A signalling molecule jumps to each
//! face-adjacent voxel at rate `D / W^2` and leaves the medium through each
//! exterior face of a boundary voxel at rate `D / (divisor * W^2)`. The
//! transmitter voxel hosts a Poisson source whose rate follows the symbol's
//! emission schedule, and the receiver voxel hosts the two-state receptors.
//!
//! The source is written as `E -> E + S_tx` where `E` is a clamped emitter
//! species; its level encodes the emission rate in units of
//! [`EMISSION_QUANTUM`].

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crn::{CrnError, ExogenousSchedule, Reaction, ReactionNetwork};
use crate::signal::SampledSeries;

/// Emission rate carried by one emitter unit, molecules per second.
pub const EMISSION_QUANTUM: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RdmeError {
    #[error("grid dimensions must all be at least 1, got {0:?}")]
    EmptyGrid([usize; 3]),
    #[error("voxel {0:?} lies outside the grid")]
    OutOfGrid([usize; 3]),
    #[error("transmitter and receiver must occupy different voxels")]
    CoincidentEndpoints,
    #[error("voxel edge and diffusion coefficient must be positive")]
    BadGeometry,
    #[error("escape divisor must be positive")]
    BadEscape,
    #[error("invalid emission schedule: {0}")]
    BadEmission(String),
    #[error("invalid receptor parameters: {0}")]
    BadReceptors(String),
    #[error("no escape path: the mean-field steady state is unbounded")]
    Unbounded,
    #[error("mean-field integration went negative even at step {0}")]
    Unstable(f64),
    #[error("symbol {0} is not in the emission schedule")]
    UnknownSymbol(usize),
    #[error("sampling step must be positive")]
    BadStep,
    #[error(transparent)]
    Network(#[from] CrnError),
}

/// Box of `nx * ny * nz` cubic voxels with zero-based voxel coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoxelGrid {
    pub dims: [usize; 3],
    /// Voxel edge W in micrometres.
    pub voxel_edge: f64,
    /// Diffusion coefficient in um^2/s.
    pub diffusion: f64,
    pub transmitter: [usize; 3],
    pub receiver: [usize; 3],
    /// Escape rate through a boundary face is `D / (escape_divisor * W^2)`.
    /// Infinity means a closed box.
    pub escape_divisor: f64,
}

impl VoxelGrid {
    /// 2 x 2 x 1 um medium with W = 1/3 um, D = 1 um^2/s, transmitter at
    /// (0.5, 0.8, 0.5) um and receiver at (1.5, 0.8, 0.5) um.
    pub fn standard() -> Self {
        Self {
            dims: [6, 6, 3],
            voxel_edge: 1.0 / 3.0,
            diffusion: 1.0,
            transmitter: [1, 2, 1],
            receiver: [4, 2, 1],
            escape_divisor: 50.0,
        }
    }

    pub fn validate(&self) -> Result<(), RdmeError> {
        if self.dims.contains(&0) {
            return Err(RdmeError::EmptyGrid(self.dims));
        }
        for p in [self.transmitter, self.receiver] {
            if p.iter().zip(&self.dims).any(|(&c, &d)| c >= d) {
                return Err(RdmeError::OutOfGrid(p));
            }
        }
        if self.transmitter == self.receiver && self.n_voxels() > 1 {
            return Err(RdmeError::CoincidentEndpoints);
        }
        if !(self.voxel_edge > 0.0 && self.voxel_edge.is_finite())
            || !(self.diffusion > 0.0 && self.diffusion.is_finite())
        {
            return Err(RdmeError::BadGeometry);
        }
        if !(self.escape_divisor > 0.0) {
            return Err(RdmeError::BadEscape);
        }
        Ok(())
    }

    pub fn n_voxels(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn index(&self, p: [usize; 3]) -> usize {
        p[0] + self.dims[0] * (p[1] + self.dims[1] * p[2])
    }

    pub fn coords(&self, i: usize) -> [usize; 3] {
        let x = i % self.dims[0];
        let y = (i / self.dims[0]) % self.dims[1];
        let z = i / (self.dims[0] * self.dims[1]);
        [x, y, z]
    }

    pub fn jump_rate(&self) -> f64 {
        self.diffusion / (self.voxel_edge * self.voxel_edge)
    }

    pub fn escape_rate(&self) -> f64 {
        if self.escape_divisor.is_infinite() {
            0.0
        } else {
            self.diffusion / (self.escape_divisor * self.voxel_edge * self.voxel_edge)
        }
    }

    /// Face-adjacent voxels of voxel `i`.
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        let p = self.coords(i);
        let mut out = Vec::with_capacity(6);
        for axis in 0..3 {
            if p[axis] > 0 {
                let mut q = p;
                q[axis] -= 1;
                out.push(self.index(q));
            }
            if p[axis] + 1 < self.dims[axis] {
                let mut q = p;
                q[axis] += 1;
                out.push(self.index(q));
            }
        }
        out
    }

    /// Number of faces of voxel `i` on the outer surface.
    pub fn exterior_faces(&self, i: usize) -> usize {
        6 - self.neighbors(i).len()
    }

    /// Reflection of the geometry along one axis.
    pub fn mirrored(&self, axis: usize) -> Self {
        let flip = |mut p: [usize; 3]| {
            p[axis] = self.dims[axis] - 1 - p[axis];
            p
        };
        Self {
            transmitter: flip(self.transmitter),
            receiver: flip(self.receiver),
            ..self.clone()
        }
    }

    pub fn transmitter_index(&self) -> usize {
        self.index(self.transmitter)
    }

    pub fn receiver_index(&self) -> usize {
        self.index(self.receiver)
    }

    /// Mean-field generator: `dc/dt = L c + source`.
    fn generator(&self) -> DMatrix<f64> {
        let n = self.n_voxels();
        let k = self.jump_rate();
        let e = self.escape_rate();
        let mut l = DMatrix::zeros(n, n);
        for v in 0..n {
            let nb = self.neighbors(v);
            l[(v, v)] -= k * nb.len() as f64 + e * (6 - nb.len()) as f64;
            for w in nb {
                l[(w, v)] += k;
            }
        }
        l
    }
}

/// Per-symbol emission rates and pulse timing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmissionSchedule {
    /// ON emission rate r_k of each symbol, molecules/s.
    pub rates: Vec<f64>,
    /// ON duration, s.
    pub on_duration: f64,
    /// Emission rate while OFF, molecules/s.
    pub basal_rate: f64,
}

impl EmissionSchedule {
    pub fn validate(&self) -> Result<(), RdmeError> {
        if !(self.basal_rate >= 0.0 && self.basal_rate.is_finite()) {
            return Err(RdmeError::BadEmission("basal rate must be non-negative".into()));
        }
        if !(self.on_duration > 0.0) {
            return Err(RdmeError::BadEmission("ON duration must be positive".into()));
        }
        if self.rates.is_empty() {
            return Err(RdmeError::BadEmission("no symbols".into()));
        }
        if let Some(r) = self.rates.iter().find(|&&r| !(r > self.basal_rate && r.is_finite())) {
            return Err(RdmeError::BadEmission(format!(
                "ON rate {r} must exceed the basal rate {}",
                self.basal_rate
            )));
        }
        Ok(())
    }

    pub fn rate(&self, symbol: usize, t: f64) -> f64 {
        if t < self.on_duration {
            self.rates[symbol]
        } else {
            self.basal_rate
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReceptorParams {
    /// Activation constant g+, 1/(count s).
    pub g_plus: f64,
    /// Deactivation rate g-, 1/s.
    pub g_minus: f64,
    /// Number of receptors M.
    pub count: u32,
}

impl ReceptorParams {
    pub fn validate(&self) -> Result<(), RdmeError> {
        if !(self.g_plus > 0.0 && self.g_plus.is_finite()) {
            return Err(RdmeError::BadReceptors("g+ must be positive".into()));
        }
        if !(self.g_minus > 0.0 && self.g_minus.is_finite()) {
            return Err(RdmeError::BadReceptors("g- must be positive".into()));
        }
        if self.count == 0 {
            return Err(RdmeError::BadReceptors("at least one receptor is required".into()));
        }
        Ok(())
    }
}

/// Species indices of a built lattice network.
#[derive(Debug, Clone, PartialEq)]
pub struct RdmeLayout {
    /// `S` species of voxel `v` has index `v`.
    pub n_voxels: usize,
    pub transmitter: usize,
    pub receiver: usize,
    pub emitter: usize,
    pub inactive: usize,
    pub active: usize,
}

#[derive(Debug, Clone)]
pub struct RdmeModel {
    pub grid: VoxelGrid,
    pub emission: EmissionSchedule,
    pub receptors: ReceptorParams,
    pub network: ReactionNetwork,
    pub layout: RdmeLayout,
}

impl RdmeModel {
    /// Empty medium, all receptors inactive.
    pub fn initial_state(&self) -> Vec<i64> {
        let mut s = vec![0; self.network.n_species()];
        s[self.layout.inactive] = i64::from(self.receptors.count);
        s
    }

    /// Emitter clamp for one symbol.
    pub fn schedule(&self, symbol: usize) -> Result<ExogenousSchedule, RdmeError> {
        let on = *self
            .emission
            .rates
            .get(symbol)
            .ok_or(RdmeError::UnknownSymbol(symbol))?;
        Ok(ExogenousSchedule::pulse(
            self.layout.emitter,
            emitter_level(on),
            emitter_level(self.emission.basal_rate),
            self.emission.on_duration,
        ))
    }
}

fn emitter_level(rate: f64) -> i64 {
    (rate / EMISSION_QUANTUM).round() as i64
}

/// Builds the lattice reaction network.
pub fn build_rdme(
    grid: &VoxelGrid,
    emission: &EmissionSchedule,
    receptors: &ReceptorParams,
) -> Result<RdmeModel, RdmeError> {
    grid.validate()?;
    emission.validate()?;
    receptors.validate()?;
    let n = grid.n_voxels();
    let mut species: Vec<String> = (0..n)
        .map(|v| {
            let [x, y, z] = grid.coords(v);
            format!("S[{x}:{y}:{z}]")
        })
        .collect();
    let emitter = n;
    let inactive = n + 1;
    let active = n + 2;
    species.extend(["E".to_string(), "X".to_string(), "Xs".to_string()]);

    let k = grid.jump_rate();
    let e = grid.escape_rate();
    let mut reactions = Vec::new();
    for v in 0..n {
        for w in grid.neighbors(v) {
            reactions.push(Reaction::new(format!("jump{v}-{w}"), k).reactant(v, 1).product(w, 1));
        }
        if e > 0.0 {
            for f in 0..grid.exterior_faces(v) {
                reactions.push(Reaction::new(format!("escape{v}.{f}"), e).reactant(v, 1));
            }
        }
    }
    let tx = grid.transmitter_index();
    let rx = grid.receiver_index();
    reactions.push(
        Reaction::new("emission", EMISSION_QUANTUM)
            .reactant(emitter, 1)
            .product(emitter, 1)
            .product(tx, 1),
    );
    reactions.push(
        Reaction::new("activation", receptors.g_plus)
            .reactant(rx, 1)
            .reactant(inactive, 1)
            .product(rx, 1)
            .product(active, 1),
    );
    reactions.push(
        Reaction::new("deactivation", receptors.g_minus)
            .reactant(active, 1)
            .product(inactive, 1),
    );
    let network = ReactionNetwork::new(species, reactions)?;
    Ok(RdmeModel {
        grid: grid.clone(),
        emission: emission.clone(),
        receptors: *receptors,
        network,
        layout: RdmeLayout {
            n_voxels: n,
            transmitter: tx,
            receiver: rx,
            emitter,
            inactive,
            active,
        },
    })
}

/// Mean-field steady-state counts of every voxel under constant emission.
pub fn steady_state_field(grid: &VoxelGrid, rate: f64) -> Result<Vec<f64>, RdmeError> {
    grid.validate()?;
    if grid.escape_rate() == 0.0 {
        return Err(RdmeError::Unbounded);
    }
    let l = grid.generator();
    let mut rhs = DVector::zeros(grid.n_voxels());
    rhs[grid.transmitter_index()] = -rate;
    let sol = l.lu().solve(&rhs).ok_or(RdmeError::Unbounded)?;
    Ok(sol.iter().copied().collect())
}

/// Mean receiver-voxel count when the transmitter emits `rate` forever.
pub fn steady_state_mean(grid: &VoxelGrid, rate: f64) -> Result<f64, RdmeError> {
    Ok(steady_state_field(grid, rate)?[grid.receiver_index()])
}

/// Largest RK4 step used by [`mean_trajectory`].
pub fn max_mean_field_step(grid: &VoxelGrid) -> f64 {
    0.1 * grid.voxel_edge * grid.voxel_edge / (6.0 * grid.diffusion)
}

/// Mean receiver count sigma_k(t) sampled every `dt` on `[0, horizon]`,
/// starting from an empty medium.
pub fn mean_trajectory(
    grid: &VoxelGrid,
    emission: &EmissionSchedule,
    symbol: usize,
    horizon: f64,
    dt: f64,
) -> Result<SampledSeries, RdmeError> {
    grid.validate()?;
    emission.validate()?;
    if symbol >= emission.rates.len() {
        return Err(RdmeError::UnknownSymbol(symbol));
    }
    if !(dt > 0.0) {
        return Err(RdmeError::BadStep);
    }
    let mut h_max = max_mean_field_step(grid);
    for _ in 0..6 {
        if let Some(s) = integrate_mean_field(grid, emission, symbol, horizon, dt, h_max) {
            return Ok(s);
        }
        h_max *= 0.5;
    }
    Err(RdmeError::Unstable(h_max))
}

struct Lattice {
    neighbors: Vec<Vec<usize>>,
    loss: Vec<f64>,
    jump: f64,
}

impl Lattice {
    fn new(grid: &VoxelGrid) -> Self {
        let n = grid.n_voxels();
        let neighbors: Vec<Vec<usize>> = (0..n).map(|v| grid.neighbors(v)).collect();
        let jump = grid.jump_rate();
        let esc = grid.escape_rate();
        let loss = neighbors
            .iter()
            .map(|nb| jump * nb.len() as f64 + esc * (6 - nb.len()) as f64)
            .collect();
        Self {
            neighbors,
            loss,
            jump,
        }
    }

    fn rhs(&self, c: &[f64], source: usize, rate: f64, out: &mut [f64]) {
        for v in 0..c.len() {
            let inflow: f64 = self.neighbors[v].iter().map(|&w| c[w]).sum();
            out[v] = self.jump * inflow - self.loss[v] * c[v];
        }
        out[source] += rate;
    }
}

fn integrate_mean_field(
    grid: &VoxelGrid,
    emission: &EmissionSchedule,
    symbol: usize,
    horizon: f64,
    dt: f64,
    h_max: f64,
) -> Option<SampledSeries> {
    let lat = Lattice::new(grid);
    let n = grid.n_voxels();
    let tx = grid.transmitter_index();
    let rx = grid.receiver_index();
    let grid_times = crate::signal::uniform_grid(dt, horizon);
    let mut c = vec![0.0; n];
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) =
        (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut out = Vec::with_capacity(grid_times.len());
    out.push(c[rx]);
    let mut scale: f64 = 0.0;
    for w in grid_times.windows(2) {
        let (a, b) = (w[0], w[1]);
        let switch = emission.on_duration;
        let pieces: Vec<(f64, f64)> = if switch > a && switch < b {
            vec![(a, switch), (switch, b)]
        } else {
            vec![(a, b)]
        };
        for (p0, p1) in pieces {
            // constant source on the piece, evaluated at its left end
            let rate = emission.rate(symbol, p0);
            let steps = ((p1 - p0) / h_max).ceil().max(1.0) as usize;
            let h = (p1 - p0) / steps as f64;
            for _ in 0..steps {
                lat.rhs(&c, tx, rate, &mut k1);
                for i in 0..n {
                    tmp[i] = c[i] + 0.5 * h * k1[i];
                }
                lat.rhs(&tmp, tx, rate, &mut k2);
                for i in 0..n {
                    tmp[i] = c[i] + 0.5 * h * k2[i];
                }
                lat.rhs(&tmp, tx, rate, &mut k3);
                for i in 0..n {
                    tmp[i] = c[i] + h * k3[i];
                }
                lat.rhs(&tmp, tx, rate, &mut k4);
                for i in 0..n {
                    c[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                }
            }
        }
        scale = c.iter().copied().fold(scale, f64::max);
        if c.iter().any(|&x| x < -1e-9 * scale.max(1.0)) {
            return None;
        }
        out.push(c[rx].max(0.0));
    }
    Some(SampledSeries::new(dt, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn emission() -> EmissionSchedule {
        EmissionSchedule {
            rates: vec![150.0, 600.0],
            on_duration: 20.0,
            basal_rate: 0.0,
        }
    }

    fn receptors() -> ReceptorParams {
        ReceptorParams {
            g_plus: 0.005 * 27.0,
            g_minus: 1.0,
            count: 40,
        }
    }

    #[test]
    fn standard_rates() {
        let g = VoxelGrid::standard();
        assert!((g.jump_rate() - 9.0).abs() < 1e-12);
        assert!((g.escape_rate() - 0.18).abs() < 1e-12);
        assert_eq!(g.n_voxels(), 108);
    }

    #[test]
    fn adjacency_counts() {
        let g = VoxelGrid::standard();
        let interior = g.index([2, 2, 1]);
        assert_eq!(g.neighbors(interior).len(), 6);
        assert_eq!(g.exterior_faces(interior), 0);
        let corner = g.index([0, 0, 0]);
        assert_eq!(g.neighbors(corner).len(), 3);
        assert_eq!(g.exterior_faces(corner), 3);

        let model = build_rdme(&g, &emission(), &receptors()).unwrap();
        let out_of = |v: usize, prefix: &str| {
            model
                .network
                .reactions()
                .iter()
                .filter(|r| r.name.starts_with(prefix) && r.reactants == vec![(v, 1)])
                .count()
        };
        assert_eq!(out_of(interior, "jump"), 6);
        assert_eq!(out_of(corner, "jump"), 3);
        assert_eq!(out_of(corner, "escape"), 3);
        assert_eq!(out_of(interior, "escape"), 0);
    }

    #[test]
    fn single_voxel_reduces_to_colocated_receptor() {
        let g = VoxelGrid {
            dims: [1, 1, 1],
            transmitter: [0, 0, 0],
            receiver: [0, 0, 0],
            ..VoxelGrid::standard()
        };
        let model = build_rdme(&g, &emission(), &receptors()).unwrap();
        let names: Vec<&str> = model.network.reactions().iter().map(|r| r.name.as_str()).collect();
        assert!(names.iter().all(|n| !n.starts_with("jump")));
        assert_eq!(names.iter().filter(|n| n.starts_with("escape")).count(), 6);
        assert!(names.contains(&"activation") && names.contains(&"deactivation"));
    }

    #[test]
    fn rejects_invalid_geometry() {
        let mut g = VoxelGrid::standard();
        g.dims = [0, 6, 3];
        assert_eq!(g.validate(), Err(RdmeError::EmptyGrid([0, 6, 3])));
        let mut g = VoxelGrid::standard();
        g.receiver = [6, 0, 0];
        assert!(matches!(g.validate(), Err(RdmeError::OutOfGrid(_))));
        let mut g = VoxelGrid::standard();
        g.receiver = g.transmitter;
        assert_eq!(g.validate(), Err(RdmeError::CoincidentEndpoints));
        let mut g = VoxelGrid::standard();
        g.voxel_edge = 0.0;
        assert_eq!(g.validate(), Err(RdmeError::BadGeometry));
        let bad = EmissionSchedule {
            rates: vec![1.0],
            on_duration: 1.0,
            basal_rate: 2.0,
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn steady_state_linear_in_rate() {
        let g = VoxelGrid::standard();
        assert_eq!(steady_state_mean(&g, 0.0).unwrap(), 0.0);
        let a = steady_state_mean(&g, 150.0).unwrap();
        let b = steady_state_mean(&g, 300.0).unwrap();
        assert!(a > 0.0);
        assert!((b - 2.0 * a).abs() < 1e-9 * b);
    }

    #[test]
    fn steady_state_mass_balance() {
        // emission equals total escape flux
        let g = VoxelGrid::standard();
        let field = steady_state_field(&g, 600.0).unwrap();
        let flux: f64 = (0..g.n_voxels())
            .map(|v| field[v] * g.escape_rate() * g.exterior_faces(v) as f64)
            .sum();
        assert!((flux - 600.0).abs() < 1e-8);
    }

    #[test]
    fn closed_box_is_unbounded() {
        let g = VoxelGrid {
            escape_divisor: f64::INFINITY,
            ..VoxelGrid::standard()
        };
        assert_eq!(steady_state_mean(&g, 10.0), Err(RdmeError::Unbounded));
    }

    #[test]
    fn isometries_preserve_receiver_mean() {
        let g = VoxelGrid::standard();
        let base = steady_state_mean(&g, 150.0).unwrap();
        for axis in 0..3 {
            let m = steady_state_mean(&g.mirrored(axis), 150.0).unwrap();
            assert!((m - base).abs() < 1e-10 * base);
        }
        // reciprocity of the symmetric generator
        let swapped = VoxelGrid {
            transmitter: g.receiver,
            receiver: g.transmitter,
            ..g.clone()
        };
        assert!((steady_state_mean(&swapped, 150.0).unwrap() - base).abs() < 1e-10 * base);
    }

    #[test]
    fn mean_trajectory_zero_schedule() {
        let g = VoxelGrid::standard();
        let e = EmissionSchedule {
            rates: vec![1e-300],
            on_duration: 1.0,
            basal_rate: 0.0,
        };
        let s = mean_trajectory(&g, &e, 0, 2.0, 0.1).unwrap();
        assert!(s.values.iter().all(|&v| v.abs() < 1e-290));
    }

    #[test]
    fn mean_trajectory_converges_to_steady_state() {
        let g = VoxelGrid::standard();
        let e = EmissionSchedule {
            rates: vec![150.0],
            on_duration: 200.0,
            basal_rate: 0.0,
        };
        let s = mean_trajectory(&g, &e, 0, 60.0, 0.1).unwrap();
        let target = steady_state_mean(&g, 150.0).unwrap();
        let end = *s.values.last().unwrap();
        assert!((end - target).abs() < 0.01 * target, "{end} vs {target}");
        assert!(s.values.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn mean_trajectory_rises_monotonically_while_on() {
        let g = VoxelGrid::standard();
        let e = emission();
        let s = mean_trajectory(&g, &e, 1, 20.0, 0.05).unwrap();
        for w in s.values.windows(2) {
            assert!(w[1] >= w[0] - 1e-12);
        }
        // finer integration agrees
        let mut h = max_mean_field_step(&g) / 4.0;
        h = h.min(0.05);
        let fine = integrate_mean_field(&g, &e, 1, 20.0, 0.05, h).unwrap();
        for (a, b) in s.values.iter().zip(&fine.values) {
            assert!((a - b).abs() < 1e-6 * b.max(1.0));
        }
    }

    #[test]
    fn mean_trajectory_decays_after_off() {
        let g = VoxelGrid::standard();
        let s = mean_trajectory(&g, &emission(), 1, 40.0, 0.1).unwrap();
        let at20 = s.value(20.0);
        let at40 = s.value(40.0);
        assert!(at40 < 0.2 * at20);
        assert!(at40 > 0.0);
    }
}
