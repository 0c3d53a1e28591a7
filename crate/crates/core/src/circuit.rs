//! Molecular realisation of the positive filters and the annihilation
//! argmax.
//!
//! Each `y_k` is a nonhomogeneous Poisson counting process with rate
//! `g_- x_*(t) Hill_k(u(t))`, sampled by thinning. The species `Y_k` then
//! annihilate pairwise, `Y_i + Y_j -> 0`, and the survivor names the
//! decoded symbol.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hill::{hill_eval, HillParams};
use crate::rng::{exp_sample, SimRng};
use crate::signal::StepSignal;
use crate::trajectory::{Event, Trajectory};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CircuitError {
    #[error("annihilation rate must be positive and finite")]
    BadRate,
    #[error("annihilation needs at least two species, got {0}")]
    TooFewSpecies(usize),
    #[error("expected {expected} production paths, got {got}")]
    SpeciesMismatch { expected: usize, got: usize },
    #[error("impulse sizes must be non-negative and times finite")]
    BadImpulse,
    #[error("species {species:?} coexist at t = {time}; the infinite-rate limit has no unique order")]
    OrderAmbiguous { time: f64, species: Vec<usize> },
    #[error("counting path times must be strictly increasing within [0, horizon]")]
    BadPath,
}

/// Production events of one species, each with a molecule count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountingPath {
    times: Vec<f64>,
    sizes: Vec<u64>,
    horizon: f64,
}

impl CountingPath {
    pub fn empty(horizon: f64) -> Self {
        Self {
            times: Vec::new(),
            sizes: Vec::new(),
            horizon,
        }
    }

    /// Impulses `(time, size)`; times strictly increasing.
    pub fn from_impulses(impulses: &[(f64, u64)], horizon: f64) -> Result<Self, CircuitError> {
        let mut last = -1.0;
        for &(t, _) in impulses {
            if !(t > last && (0.0..=horizon).contains(&t)) {
                return Err(CircuitError::BadPath);
            }
            last = t;
        }
        Ok(Self {
            times: impulses.iter().map(|p| p.0).collect(),
            sizes: impulses.iter().map(|p| p.1).collect(),
            horizon,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn sizes(&self) -> &[u64] {
        &self.sizes
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// `y(t)`, counting every production at times `<= t`.
    pub fn count_at(&self, t: f64) -> u64 {
        let n = self.times.partition_point(|&s| s <= t);
        self.sizes[..n].iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.sizes.iter().sum()
    }

    pub fn signal(&self) -> StepSignal {
        let mut pts = vec![(0.0, 0.0)];
        let mut acc = 0.0;
        for (&t, &s) in self.times.iter().zip(&self.sizes) {
            acc += s as f64;
            if t == 0.0 {
                pts[0].1 = acc;
            } else {
                pts.push((t, acc));
            }
        }
        StepSignal::from_breakpoints(&pts, self.horizon).expect("times are increasing")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnihilationConfig {
    /// Pairwise annihilation constant, 1/(count s).
    pub k_a: f64,
    pub species: usize,
}

impl AnnihilationConfig {
    pub fn validate(&self) -> Result<(), CircuitError> {
        if !(self.k_a > 0.0 && self.k_a.is_finite()) {
            return Err(CircuitError::BadRate);
        }
        if self.species < 2 {
            return Err(CircuitError::TooFewSpecies(self.species));
        }
        Ok(())
    }
}

/// Thinning sample of the Hill-driven counting process on
/// `[0, x_star.horizon()]`, using envelope `g_- M h`.
pub fn simulate_y(
    x_star: &StepSignal,
    input: &StepSignal,
    hill: &HillParams,
    g_minus: f64,
    receptors: u32,
    rng: &mut SimRng,
) -> CountingPath {
    let horizon = x_star.horizon();
    let envelope = g_minus * f64::from(receptors) * hill.h;
    let mut path = CountingPath::empty(horizon);
    if !(envelope > 0.0) {
        return path;
    }
    let mut xc = x_star.cursor();
    let mut uc = input.cursor();
    let mut t = 0.0;
    loop {
        t += exp_sample(rng, envelope);
        if t > horizon {
            break;
        }
        let rate = g_minus * xc.value(t) * hill_eval(hill, uc.value(t));
        let u: f64 = rng.random();
        if u * envelope < rate {
            path.times.push(t);
            path.sizes.push(1);
        }
    }
    path
}

/// Exact SSA of births at the given production times plus pairwise
/// annihilation. Returns counts of `Y0..Y{K-1}` over time.
pub fn annihilate(
    paths: &[CountingPath],
    config: &AnnihilationConfig,
    rng: &mut SimRng,
) -> Result<Trajectory, CircuitError> {
    config.validate()?;
    let k = config.species;
    if paths.len() != k {
        return Err(CircuitError::SpeciesMismatch {
            expected: k,
            got: paths.len(),
        });
    }
    let horizon = paths.iter().map(CountingPath::horizon).fold(0.0, f64::max);
    let mut prods: Vec<(f64, usize, u64)> = paths
        .iter()
        .enumerate()
        .flat_map(|(i, p)| p.times.iter().zip(&p.sizes).map(move |(&t, &s)| (t, i, s)))
        .collect();
    prods.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut y = vec![0i64; k];
    let mut events = Vec::new();
    let mut t = 0.0;
    let mut next = 0;
    loop {
        let t_prod = prods.get(next).map_or(horizon, |p| p.0);
        let mut pair_rate = 0.0;
        for i in 0..k {
            for j in i + 1..k {
                pair_rate += (y[i] * y[j]) as f64;
            }
        }
        let total = config.k_a * pair_rate;
        let t_fire = if total > 0.0 { t + exp_sample(rng, total) } else { f64::INFINITY };
        if t_fire < t_prod && t_fire <= horizon {
            t = t_fire;
            let mut target = rng.random::<f64>() * pair_rate;
            let mut chosen = None;
            'outer: for i in 0..k {
                for j in i + 1..k {
                    let w = (y[i] * y[j]) as f64;
                    if w > 0.0 {
                        chosen = Some((i, j));
                        if target < w {
                            break 'outer;
                        }
                        target -= w;
                    }
                }
            }
            let (i, j) = chosen.expect("positive pair rate has a pair");
            y[i] -= 1;
            y[j] -= 1;
            events.push(Event { time: t, species: i as u32, delta: -1 });
            events.push(Event { time: t, species: j as u32, delta: -1 });
        } else if next < prods.len() {
            let (tp, i, s) = prods[next];
            next += 1;
            t = tp;
            if s > 0 {
                y[i] += s as i64;
                events.push(Event { time: t, species: i as u32, delta: s as i64 });
            }
        } else {
            break;
        }
    }
    let species = (0..k).map(|i| format!("Y{i}")).collect();
    Ok(Trajectory::from_parts(species, vec![0; k], events, horizon))
}

/// Infinite-rate annihilation of impulse inputs `impulses[k] = [(t, size)]`.
///
/// After every impulse time, any two surviving species cancel to
/// completion. Three or more coexisting species are rejected.
pub fn deterministic_annihilation(impulses: &[Vec<(f64, f64)>]) -> Result<Vec<f64>, CircuitError> {
    if impulses.len() < 2 {
        return Err(CircuitError::TooFewSpecies(impulses.len()));
    }
    let mut all: Vec<(f64, usize, f64)> = Vec::new();
    for (k, list) in impulses.iter().enumerate() {
        for &(t, s) in list {
            if !(t.is_finite() && s >= 0.0 && s.is_finite()) {
                return Err(CircuitError::BadImpulse);
            }
            all.push((t, k, s));
        }
    }
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut y = vec![0.0; impulses.len()];
    let mut i = 0;
    while i < all.len() {
        let t = all[i].0;
        while i < all.len() && all[i].0 == t {
            y[all[i].1] += all[i].2;
            i += 1;
        }
        let alive: Vec<usize> = (0..y.len()).filter(|&k| y[k] > 0.0).collect();
        match alive.len() {
            0 | 1 => {}
            2 => {
                let m = y[alive[0]].min(y[alive[1]]);
                y[alive[0]] -= m;
                y[alive[1]] -= m;
            }
            _ => return Err(CircuitError::OrderAmbiguous { time: t, species: alive }),
        }
    }
    Ok(y)
}

/// Finite-rate mean-field annihilation,
/// `dY_i/dt = rho_i(t) - k_a Y_i sum_{j != i} Y_j`, with impulse inputs,
/// integrated by RK4 to `horizon`.
pub fn annihilation_ode(impulses: &[Vec<(f64, f64)>], k_a: f64, horizon: f64) -> Result<Vec<f64>, CircuitError> {
    if !(k_a > 0.0 && k_a.is_finite()) {
        return Err(CircuitError::BadRate);
    }
    let n = impulses.len();
    if n < 2 {
        return Err(CircuitError::TooFewSpecies(n));
    }
    let mut all: Vec<(f64, usize, f64)> = Vec::new();
    for (k, list) in impulses.iter().enumerate() {
        for &(t, s) in list {
            if !(t.is_finite() && t >= 0.0 && s >= 0.0 && s.is_finite()) {
                return Err(CircuitError::BadImpulse);
            }
            all.push((t, k, s));
        }
    }
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let rhs = |y: &[f64], out: &mut [f64]| {
        let total: f64 = y.iter().sum();
        for i in 0..y.len() {
            out[i] = -k_a * y[i] * (total - y[i]);
        }
    };
    let mut y = vec![0.0; n];
    let mut t = 0.0;
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) =
        (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut idx = 0;
    loop {
        while idx < all.len() && all[idx].0 <= t {
            y[all[idx].1] += all[idx].2;
            idx += 1;
        }
        let stop = all.get(idx).map_or(horizon, |p| p.0.min(horizon));
        if t >= horizon {
            break;
        }
        while t < stop {
            // remnants below 1e-12 molecules are dropped; a lone species is constant
            for v in y.iter_mut().filter(|v| **v < 1e-12) {
                *v = 0.0;
            }
            if y.iter().filter(|&&v| v > 0.0).count() < 2 {
                t = stop;
                break;
            }
            let total: f64 = y.iter().sum();
            let h = (0.5 / (k_a * total.max(1e-12))).min(stop - t).min(0.01);
            rhs(&y, &mut k1);
            for i in 0..n {
                tmp[i] = y[i] + 0.5 * h * k1[i];
            }
            rhs(&tmp, &mut k2);
            for i in 0..n {
                tmp[i] = y[i] + 0.5 * h * k2[i];
            }
            rhs(&tmp, &mut k3);
            for i in 0..n {
                tmp[i] = y[i] + h * k3[i];
            }
            rhs(&tmp, &mut k4);
            for i in 0..n {
                y[i] = (y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])).max(0.0);
            }
            t = if stop - t <= h { stop } else { t + h };
        }
        if idx >= all.len() && t >= horizon {
            break;
        }
    }
    Ok(y)
}

/// Index of the largest count; ties go to the lowest index.
pub fn decide(counts: &[i64]) -> usize {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

/// The two impulse scenarios of the three-species counterexample.
pub fn counterexample_scenarios() -> [Vec<Vec<(f64, f64)>>; 2] {
    [
        vec![vec![(0.0, 20.0)], vec![(0.0, 30.0)], vec![(10.0, 40.0)]],
        vec![vec![(0.0, 20.0)], vec![(10.0, 30.0)], vec![(0.0, 40.0)]],
    ]
}
