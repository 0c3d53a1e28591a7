//! Mass-action reaction networks and the Gillespie direct method.
//!
//! The simulator keeps propensities in a binary sum tree and a per-reaction
//! dependency list, so the cost of one event is logarithmic in the number of
//! reactions. That matters for the voxel lattice, which has several hundred
//! diffusion channels.
//!
//! Exogenous (clamped) species are overwritten at schedule breakpoints. The
//! exponential clocks of all reactions are restarted at every breakpoint,
//! which is exact because the clocks are memoryless.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::rng::{exp_sample, RngSpec, SimRng};
use crate::trajectory::{Event, Trajectory};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CrnError {
    #[error("reaction `{reaction}` has invalid rate constant {rate}")]
    InvalidRate { reaction: String, rate: f64 },
    #[error("reaction `{reaction}` references unknown species index {species}")]
    UnknownSpecies { reaction: String, species: usize },
    #[error("duplicate species name `{0}`")]
    DuplicateSpecies(String),
    #[error("species name `{0}` must be non-empty and free of whitespace and commas")]
    BadSpeciesName(String),
    #[error("initial state has {got} entries, network has {expected} species")]
    StateLength { expected: usize, got: usize },
    #[error("initial count of species `{0}` is negative")]
    NegativeCount(String),
    #[error("horizon must be positive and finite, got {0}")]
    BadHorizon(f64),
    #[error("total propensity overflowed at t = {time}")]
    PropensityOverflow { time: f64 },
    #[error("exogenous schedule for `{species}` leaves a gap or overlap near t = {time}")]
    ScheduleGap { species: String, time: f64 },
    #[error("exogenous schedule for `{species}` has a negative level")]
    ScheduleNegative { species: String },
}

/// One mass-action reaction.
#[derive(Debug, Clone, PartialEq)]
pub struct Reaction {
    pub name: String,
    pub reactants: Vec<(usize, u32)>,
    pub products: Vec<(usize, u32)>,
    pub rate: f64,
}

impl Reaction {
    pub fn new(name: impl Into<String>, rate: f64) -> Self {
        Self {
            name: name.into(),
            reactants: Vec::new(),
            products: Vec::new(),
            rate,
        }
    }

    pub fn reactant(mut self, species: usize, coeff: u32) -> Self {
        self.reactants.push((species, coeff));
        self
    }

    pub fn product(mut self, species: usize, coeff: u32) -> Self {
        self.products.push((species, coeff));
        self
    }

    /// Rate constant times the falling factorial of every reactant count.
    #[inline]
    pub fn propensity(&self, state: &[i64]) -> f64 {
        let mut a = self.rate;
        for &(s, nu) in &self.reactants {
            let x = state[s];
            for j in 0..i64::from(nu) {
                let f = x - j;
                if f <= 0 {
                    return 0.0;
                }
                a *= f as f64;
            }
        }
        a
    }
}

/// Immutable, validated reaction network.
#[derive(Debug, Clone)]
pub struct ReactionNetwork {
    species: Vec<String>,
    reactions: Vec<Reaction>,
    /// Net state change of each reaction.
    net: Vec<Vec<(usize, i64)>>,
    /// Reactions whose propensity reads a species.
    readers: Vec<Vec<usize>>,
    /// Reactions whose propensity may change after each reaction fires.
    dependents: Vec<Vec<usize>>,
}

impl ReactionNetwork {
    pub fn new(species: Vec<String>, reactions: Vec<Reaction>) -> Result<Self, CrnError> {
        let mut seen = std::collections::HashSet::new();
        for name in &species {
            if name.is_empty() || name.contains(|c: char| c.is_whitespace() || c == ',') {
                return Err(CrnError::BadSpeciesName(name.clone()));
            }
            if !seen.insert(name.as_str()) {
                return Err(CrnError::DuplicateSpecies(name.clone()));
            }
        }
        let n = species.len();
        let mut net = Vec::with_capacity(reactions.len());
        let mut readers = vec![Vec::new(); n];
        for (r, rx) in reactions.iter().enumerate() {
            if !(rx.rate.is_finite() && rx.rate > 0.0) {
                return Err(CrnError::InvalidRate {
                    reaction: rx.name.clone(),
                    rate: rx.rate,
                });
            }
            let mut change: BTreeMap<usize, i64> = BTreeMap::new();
            for &(s, c) in &rx.reactants {
                if s >= n {
                    return Err(CrnError::UnknownSpecies {
                        reaction: rx.name.clone(),
                        species: s,
                    });
                }
                *change.entry(s).or_default() -= i64::from(c);
                if c > 0 && readers[s].last() != Some(&r) {
                    readers[s].push(r);
                }
            }
            for &(s, c) in &rx.products {
                if s >= n {
                    return Err(CrnError::UnknownSpecies {
                        reaction: rx.name.clone(),
                        species: s,
                    });
                }
                *change.entry(s).or_default() += i64::from(c);
            }
            net.push(change.into_iter().filter(|&(_, d)| d != 0).collect::<Vec<_>>());
        }
        let dependents = net
            .iter()
            .map(|changes: &Vec<(usize, i64)>| {
                let mut d: Vec<usize> = changes
                    .iter()
                    .flat_map(|&(s, _)| readers[s].iter().copied())
                    .collect();
                d.sort_unstable();
                d.dedup();
                d
            })
            .collect();
        Ok(Self {
            species,
            reactions,
            net,
            readers,
            dependents,
        })
    }

    pub fn species(&self) -> &[String] {
        &self.species
    }

    pub fn reactions(&self) -> &[Reaction] {
        &self.reactions
    }

    pub fn species_index(&self, name: &str) -> Option<usize> {
        self.species.iter().position(|s| s == name)
    }

    /// Net stoichiometric change of reaction `r`.
    pub fn net_change(&self, r: usize) -> &[(usize, i64)] {
        &self.net[r]
    }

    pub fn n_species(&self) -> usize {
        self.species.len()
    }
}

/// One clamped interval of an exogenous species.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClampSegment {
    pub species: usize,
    pub start: f64,
    pub end: f64,
    pub level: i64,
}

/// Time and the clamp levels `(species, level)` that take effect there.
type Breakpoint = (f64, Vec<(usize, i64)>);

/// Piecewise-constant levels for exogenous species.
///
/// Each clamped species must be covered without gaps from 0 to the horizon.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExogenousSchedule {
    pub segments: Vec<ClampSegment>,
}

impl ExogenousSchedule {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn clamp(mut self, species: usize, start: f64, end: f64, level: i64) -> Self {
        self.segments.push(ClampSegment {
            species,
            start,
            end,
            level,
        });
        self
    }

    /// One species held at `level` forever.
    pub fn constant(species: usize, level: i64) -> Self {
        Self::new().clamp(species, 0.0, f64::INFINITY, level)
    }

    /// `on` on `[0, duration)`, then `off` forever.
    pub fn pulse(species: usize, on: i64, off: i64, duration: f64) -> Self {
        Self::new()
            .clamp(species, 0.0, duration, on)
            .clamp(species, duration, f64::INFINITY, off)
    }

    /// Checks coverage and returns sorted breakpoints with the levels that
    /// take effect there.
    fn breakpoints(
        &self,
        network: &ReactionNetwork,
        horizon: f64,
    ) -> Result<Vec<Breakpoint>, CrnError> {
        let mut by_species: BTreeMap<usize, Vec<ClampSegment>> = BTreeMap::new();
        for seg in &self.segments {
            if seg.species >= network.n_species() {
                return Err(CrnError::UnknownSpecies {
                    reaction: "<schedule>".into(),
                    species: seg.species,
                });
            }
            by_species.entry(seg.species).or_default().push(*seg);
        }
        let mut points: BTreeMap<u64, (f64, Vec<(usize, i64)>)> = BTreeMap::new();
        for (s, mut segs) in by_species {
            let name = network.species()[s].clone();
            segs.sort_by(|a, b| a.start.total_cmp(&b.start));
            let mut cursor = 0.0;
            for seg in &segs {
                if seg.level < 0 {
                    return Err(CrnError::ScheduleNegative { species: name });
                }
                if (seg.start - cursor).abs() > 1e-12 * cursor.abs().max(1.0) || seg.end <= seg.start
                {
                    return Err(CrnError::ScheduleGap {
                        species: name,
                        time: cursor,
                    });
                }
                cursor = seg.end;
                if seg.start < horizon {
                    points
                        .entry(seg.start.to_bits())
                        .or_insert_with(|| (seg.start, Vec::new()))
                        .1
                        .push((s, seg.level));
                }
            }
            if cursor < horizon {
                return Err(CrnError::ScheduleGap {
                    species: name,
                    time: cursor,
                });
            }
        }
        Ok(points.into_values().collect())
    }

    fn clamped_species(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.segments.iter().map(|s| s.species).collect();
        v.sort_unstable();
        v.dedup();
        v
    }
}

/// Binary sum tree over reaction propensities.
#[derive(Debug, Clone)]
struct SumTree {
    size: usize,
    nodes: Vec<f64>,
    scratch: Vec<usize>,
    scratch2: Vec<usize>,
}

impl SumTree {
    fn new(values: &[f64]) -> Self {
        let size = values.len().max(1).next_power_of_two();
        let mut nodes = vec![0.0; 2 * size];
        nodes[size..size + values.len()].copy_from_slice(values);
        for i in (1..size).rev() {
            nodes[i] = nodes[2 * i] + nodes[2 * i + 1];
        }
        Self {
            size,
            nodes,
            scratch: Vec::new(),
            scratch2: Vec::new(),
        }
    }

    #[inline]
    fn total(&self) -> f64 {
        self.nodes[1]
    }

    #[inline]
    fn set(&mut self, leaf: usize, v: f64) {
        self.nodes[self.size + leaf] = v;
    }

    /// Recomputes ancestors of the given sorted leaves.
    fn refresh(&mut self, leaves: &[usize]) {
        if self.size == 1 {
            self.nodes[1] = self.nodes[self.size];
            return;
        }
        let mut cur = std::mem::take(&mut self.scratch);
        let mut next = std::mem::take(&mut self.scratch2);
        cur.clear();
        for &l in leaves {
            let p = (l + self.size) >> 1;
            if cur.last() != Some(&p) {
                cur.push(p);
            }
        }
        loop {
            for &p in &cur {
                self.nodes[p] = self.nodes[2 * p] + self.nodes[2 * p + 1];
            }
            if cur.first() == Some(&1) || cur.is_empty() {
                break;
            }
            next.clear();
            for &p in &cur {
                let q = p >> 1;
                if next.last() != Some(&q) {
                    next.push(q);
                }
            }
            std::mem::swap(&mut cur, &mut next);
        }
        self.scratch = cur;
        self.scratch2 = next;
    }

    /// Leaf whose cumulative interval contains `target`, skipping zero
    /// subtrees that rounding might otherwise land on.
    fn find(&self, mut target: f64) -> usize {
        let mut i = 1;
        while i < self.size {
            let left = self.nodes[2 * i];
            if (target < left && left > 0.0) || self.nodes[2 * i + 1] <= 0.0 {
                i *= 2;
            } else {
                target -= left;
                i = 2 * i + 1;
            }
        }
        i - self.size
    }
}

/// Configurable SSA run: which species to record and which to clamp.
#[derive(Debug, Clone)]
pub struct Simulation<'a> {
    network: &'a ReactionNetwork,
    record: Option<Vec<usize>>,
    schedule: ExogenousSchedule,
}

impl<'a> Simulation<'a> {
    pub fn new(network: &'a ReactionNetwork) -> Self {
        Self {
            network,
            record: None,
            schedule: ExogenousSchedule::default(),
        }
    }

    /// Records only these species in the trajectory (default: all).
    pub fn record(mut self, species: &[usize]) -> Self {
        self.record = Some(species.to_vec());
        self
    }

    pub fn schedule(mut self, schedule: ExogenousSchedule) -> Self {
        self.schedule = schedule;
        self
    }

    pub fn run(&self, initial: &[i64], horizon: f64, rng: &RngSpec) -> Result<Trajectory, CrnError> {
        let mut r = rng.rng();
        self.run_with(initial, horizon, &mut r)
    }

    pub fn run_with(
        &self,
        initial: &[i64],
        horizon: f64,
        rng: &mut SimRng,
    ) -> Result<Trajectory, CrnError> {
        let net = self.network;
        if initial.len() != net.n_species() {
            return Err(CrnError::StateLength {
                expected: net.n_species(),
                got: initial.len(),
            });
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(CrnError::BadHorizon(horizon));
        }
        if let Some(i) = initial.iter().position(|&x| x < 0) {
            return Err(CrnError::NegativeCount(net.species[i].clone()));
        }
        let breakpoints = self.schedule.breakpoints(net, horizon)?;
        let mut clamped = vec![false; net.n_species()];
        for s in self.schedule.clamped_species() {
            clamped[s] = true;
        }
        let recorded: Vec<usize> = self
            .record
            .clone()
            .unwrap_or_else(|| (0..net.n_species()).collect());
        let mut rec_map: Vec<Option<u32>> = vec![None; net.n_species()];
        for (k, &s) in recorded.iter().enumerate() {
            if s >= net.n_species() {
                return Err(CrnError::UnknownSpecies {
                    reaction: "<record>".into(),
                    species: s,
                });
            }
            rec_map[s] = Some(k as u32);
        }
        // Net changes that skip clamped species.
        let net_changes: Vec<Vec<(usize, i64)>> = net
            .net
            .iter()
            .map(|c| c.iter().copied().filter(|&(s, _)| !clamped[s]).collect())
            .collect();

        let mut state = initial.to_vec();
        let mut bp = breakpoints.into_iter().peekable();
        if let Some((t0, _)) = bp.peek() {
            if *t0 == 0.0 {
                let (_, levels) = bp.next().expect("peeked");
                for (s, v) in levels {
                    state[s] = v;
                }
            }
        }
        let initial_recorded: Vec<i64> = recorded.iter().map(|&s| state[s]).collect();
        let props: Vec<f64> = net.reactions.iter().map(|r| r.propensity(&state)).collect();
        let mut tree = SumTree::new(&props);
        let mut events: Vec<Event> = Vec::new();
        let mut t = 0.0_f64;
        let mut touched: Vec<usize> = Vec::new();

        loop {
            let next_bp = bp.peek().map_or(horizon, |(tb, _)| tb.min(horizon));
            let a0 = tree.total();
            if !a0.is_finite() {
                return Err(CrnError::PropensityOverflow { time: t });
            }
            let tau = if a0 > 0.0 {
                exp_sample(rng, a0)
            } else {
                f64::INFINITY
            };
            if t + tau >= next_bp {
                if next_bp >= horizon {
                    break;
                }
                let (tb, levels) = bp.next().expect("peeked");
                t = tb;
                touched.clear();
                for (s, v) in levels {
                    let d = v - state[s];
                    if d == 0 {
                        continue;
                    }
                    state[s] = v;
                    if let Some(k) = rec_map[s] {
                        events.push(Event {
                            time: t,
                            species: k,
                            delta: d,
                        });
                    }
                    touched.extend_from_slice(&net.readers[s]);
                }
                touched.sort_unstable();
                touched.dedup();
                for &j in &touched {
                    tree.set(j, net.reactions[j].propensity(&state));
                }
                tree.refresh(&touched);
                continue;
            }
            t += tau;
            let u: f64 = rand::Rng::random(rng);
            let r = tree.find(u * a0);
            for &(s, d) in &net_changes[r] {
                state[s] += d;
                debug_assert!(state[s] >= 0, "negative count after {}", net.reactions[r].name);
                if let Some(k) = rec_map[s] {
                    events.push(Event {
                        time: t,
                        species: k,
                        delta: d,
                    });
                }
            }
            let deps = &net.dependents[r];
            for &j in deps {
                tree.set(j, net.reactions[j].propensity(&state));
            }
            tree.refresh(deps);
        }

        Ok(Trajectory::from_parts(
            recorded.iter().map(|&s| net.species[s].clone()).collect(),
            initial_recorded,
            events,
            horizon,
        ))
    }
}

/// Plain SSA on `[0, horizon]` recording every species.
pub fn ssa_simulate(
    network: &ReactionNetwork,
    initial: &[i64],
    horizon: f64,
    rng: &RngSpec,
) -> Result<Trajectory, CrnError> {
    Simulation::new(network).run(initial, horizon, rng)
}

/// SSA with exogenous species clamped by `schedule`.
pub fn time_varying_ssa(
    network: &ReactionNetwork,
    initial: &[i64],
    schedule: &ExogenousSchedule,
    horizon: f64,
    rng: &RngSpec,
) -> Result<Trajectory, CrnError> {
    Simulation::new(network)
        .schedule(schedule.clone())
        .run(initial, horizon, rng)
}

/// The co-located two-state receptor of reactions S + X -> S + X*, X* -> X.
///
/// Species order is `S`, `X`, `Xs`.
pub fn receptor_network(g_plus: f64, g_minus: f64) -> Result<ReactionNetwork, CrnError> {
    ReactionNetwork::new(
        vec!["S".into(), "X".into(), "Xs".into()],
        vec![
            Reaction::new("activation", g_plus)
                .reactant(0, 1)
                .reactant(1, 1)
                .product(0, 1)
                .product(2, 1),
            Reaction::new("deactivation", g_minus).reactant(2, 1).product(1, 1),
        ],
    )
}
