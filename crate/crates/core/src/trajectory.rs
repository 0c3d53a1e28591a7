//! Event-list trajectories of molecular counts.
//!
//! A trajectory stores the initial counts of the recorded species and the
//! list of count changes. All changes made by one reaction firing share a
//! time stamp; distinct firings have strictly increasing times.

use std::io::{BufRead, Write};

use thiserror::Error;

use crate::signal::StepSignal;

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("event {index} at t = {time} is out of order or outside [0, horizon]")]
    BadTime { index: usize, time: f64 },
    #[error("species `{species}` becomes negative at t = {time}")]
    Negative { species: String, time: f64 },
    #[error("unknown species `{0}`")]
    UnknownSpecies(String),
    #[error("malformed event list at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("sampling step must be positive, got {0}")]
    BadStep(f64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub time: f64,
    /// Index into the trajectory's species list.
    pub species: u32,
    pub delta: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    species: Vec<String>,
    initial: Vec<i64>,
    events: Vec<Event>,
    horizon: f64,
}

const EVENT_LIST_HEADER: &str = "# cmdemod event list v1";

impl Trajectory {
    pub fn from_parts(species: Vec<String>, initial: Vec<i64>, events: Vec<Event>, horizon: f64) -> Self {
        Self {
            species,
            initial,
            events,
            horizon,
        }
    }

    pub fn species(&self) -> &[String] {
        &self.species
    }

    pub fn species_index(&self, name: &str) -> Option<usize> {
        self.species.iter().position(|s| s == name)
    }

    pub fn initial(&self) -> &[i64] {
        &self.initial
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Checks time ordering and non-negativity of every implied count.
    pub fn validate(&self) -> Result<(), TrajectoryError> {
        let mut state = self.initial.clone();
        if let Some(i) = state.iter().position(|&x| x < 0) {
            return Err(TrajectoryError::Negative {
                species: self.species[i].clone(),
                time: 0.0,
            });
        }
        let mut last = f64::NEG_INFINITY;
        for (i, e) in self.events.iter().enumerate() {
            if !(e.time >= last && e.time >= 0.0 && e.time <= self.horizon) {
                return Err(TrajectoryError::BadTime { index: i, time: e.time });
            }
            last = e.time;
            let s = e.species as usize;
            state[s] += e.delta;
            if state[s] < 0 {
                return Err(TrajectoryError::Negative {
                    species: self.species[s].clone(),
                    time: e.time,
                });
            }
        }
        Ok(())
    }

    /// Counts at time `t`, including every event at times `<= t`.
    pub fn state_at(&self, t: f64) -> Vec<i64> {
        let mut state = self.initial.clone();
        for e in self.events.iter().take_while(|e| e.time <= t) {
            state[e.species as usize] += e.delta;
        }
        state
    }

    /// One species as a piecewise-constant signal.
    pub fn signal(&self, species: usize) -> StepSignal {
        let mut times = vec![0.0];
        let mut values = vec![self.initial[species] as f64];
        let mut cur = self.initial[species];
        for e in self.events.iter().filter(|e| e.species as usize == species) {
            cur += e.delta;
            let v = cur as f64;
            if *times.last().expect("non-empty") == e.time {
                *values.last_mut().expect("non-empty") = v;
                if values.len() > 1 && values[values.len() - 2] == v {
                    times.pop();
                    values.pop();
                }
            } else if *values.last().expect("non-empty") != v {
                times.push(e.time);
                values.push(v);
            }
        }
        StepSignal::from_parts_unchecked(times, values, self.horizon)
    }

    pub fn signal_by_name(&self, name: &str) -> Result<StepSignal, TrajectoryError> {
        self.species_index(name)
            .map(|i| self.signal(i))
            .ok_or_else(|| TrajectoryError::UnknownSpecies(name.to_string()))
    }

    /// Writes counts sampled every `dt` as CSV: `time,<species>...`.
    pub fn write_sampled_csv<W: Write>(&self, dt: f64, out: W) -> Result<(), TrajectoryError> {
        if !(dt > 0.0) {
            return Err(TrajectoryError::BadStep(dt));
        }
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["time".to_string()];
        header.extend(self.species.iter().cloned());
        w.write_record(&header)?;
        let mut state = self.initial.clone();
        let mut next = 0;
        for t in crate::signal::uniform_grid(dt, self.horizon) {
            while next < self.events.len() && self.events[next].time <= t {
                let e = self.events[next];
                state[e.species as usize] += e.delta;
                next += 1;
            }
            let mut row = vec![format!("{t}")];
            row.extend(state.iter().map(|c| c.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Lossless text event list: a header, then one `time species delta`
    /// line per event. Times use Rust's shortest round-trip formatting.
    pub fn write_event_list<W: Write>(&self, mut out: W) -> Result<(), TrajectoryError> {
        writeln!(out, "{EVENT_LIST_HEADER}")?;
        writeln!(out, "horizon {}", self.horizon)?;
        writeln!(out, "species {}", self.species.join(" "))?;
        let init: Vec<String> = self.initial.iter().map(|c| c.to_string()).collect();
        writeln!(out, "initial {}", init.join(" "))?;
        for e in &self.events {
            writeln!(out, "{} {} {}", e.time, self.species[e.species as usize], e.delta)?;
        }
        Ok(())
    }

    pub fn read_event_list<R: BufRead>(input: R) -> Result<Self, TrajectoryError> {
        let mut lines = input.lines().enumerate();
        let mut next_line = |what: &str| -> Result<(usize, String), TrajectoryError> {
            match lines.next() {
                Some((i, l)) => Ok((i + 1, l?)),
                None => Err(TrajectoryError::Parse {
                    line: 0,
                    msg: format!("missing {what}"),
                }),
            }
        };
        let (n, header) = next_line("header")?;
        if header.trim() != EVENT_LIST_HEADER {
            return Err(TrajectoryError::Parse { line: n, msg: "bad header".into() });
        }
        let parse_err = |line: usize, msg: &str| TrajectoryError::Parse { line, msg: msg.into() };
        let (n, h) = next_line("horizon")?;
        let horizon: f64 = h
            .strip_prefix("horizon ")
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| parse_err(n, "bad horizon"))?;
        let (n, s) = next_line("species")?;
        let species: Vec<String> = s
            .strip_prefix("species")
            .ok_or_else(|| parse_err(n, "bad species line"))?
            .split_whitespace()
            .map(str::to_string)
            .collect();
        let (n, i) = next_line("initial")?;
        let initial: Vec<i64> = i
            .strip_prefix("initial")
            .ok_or_else(|| parse_err(n, "bad initial line"))?
            .split_whitespace()
            .map(|v| v.parse().map_err(|_| parse_err(n, "bad initial count")))
            .collect::<Result<_, _>>()?;
        if initial.len() != species.len() {
            return Err(parse_err(n, "initial count length differs from species"));
        }
        let mut events = Vec::new();
        for (i, line) in lines {
            let line = line?;
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let (Some(t), Some(sp), Some(d), None) = (parts.next(), parts.next(), parts.next(), parts.next())
            else {
                return Err(parse_err(line_no, "expected `time species delta`"));
            };
            let time: f64 = t.parse().map_err(|_| parse_err(line_no, "bad time"))?;
            let species_idx = species
                .iter()
                .position(|x| x == sp)
                .ok_or_else(|| parse_err(line_no, "unknown species"))?;
            let delta: i64 = d.parse().map_err(|_| parse_err(line_no, "bad delta"))?;
            events.push(Event {
                time,
                species: species_idx as u32,
                delta,
            });
        }
        let tr = Self {
            species,
            initial,
            events,
            horizon,
        };
        tr.validate()?;
        Ok(tr)
    }
}
