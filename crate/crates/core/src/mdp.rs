//! The scheduling decision process.
//!
//! The channel fits `m` packets per step and every sensor transmission
//! needs `d_i` consecutive slots, so the scheduler faces a deterministic
//! decision process over states
//!
//! ```text
//! s = (tau_1, .., tau_n, nu_1, .., nu_n)
//! ```
//!
//! where `tau_i` is the age of the fusion center's freshest estimate from
//! sensor `i` (clamped at `tau_max`) and `nu_i` is the number of slots
//! sensor `i` still needs to finish its current transmission (`nu_i = d_i`
//! when nothing is in flight). Scheduling the set `a` (exactly `m`
//! sensors) moves each coordinate deterministically:
//!
//! * scheduled, `nu_i > 1`: the transmission continues, `tau_i' =
//!   min(tau_i + 1, tau_max)`, `nu_i' = nu_i - 1`;
//! * scheduled, `nu_i = 1`: the transmission completes and the delivered
//!   estimate was snapshotted `d_i` steps ago, so `tau_i' = d_i`,
//!   `nu_i' = d_i`;
//! * unscheduled: any partial transmission is dropped, `tau_i' =
//!   min(tau_i + 1, tau_max)`, `nu_i' = d_i`.
//!
//! The stage cost `c(s) = sum_i cost_table_i[tau_i]` charges each sensor's
//! remote error trace; tables come from [`crate::estimation`].

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::estimation::{ProcessModel, SteadyState};

/// Upper bound on the number of enumerated states before
/// [`Error::StateExplosion`] is raised.
pub const DEFAULT_STATE_CEILING: usize = 5_000_000;

/// The cross-sensor scheduling problem: models, channel capacity `m`, and
/// the holding-time truncation `tau_max`.
#[derive(Debug, Clone)]
pub struct SystemConfig {
    pub models: Vec<ProcessModel>,
    /// Packets per step the channel carries; `1 <= m < n`.
    pub m: usize,
    /// Holding times are clamped at this value. Must be at least
    /// `max_i d_i` so each completion is representable; leaving head-room
    /// (`>= max_i d_i + 1`, more in practice) keeps the truncation from
    /// touching the optimal recurrent class.
    pub tau_max: u32,
}

impl SystemConfig {
    pub fn new(models: Vec<ProcessModel>, m: usize, tau_max: u32) -> Result<Self> {
        let n = models.len();
        if n < 2 {
            return Err(Error::InvalidModel {
                field: "models".into(),
                reason: format!("need at least 2 sensors, got {n}"),
            });
        }
        if m < 1 || m >= n {
            return Err(Error::InvalidModel {
                field: "m".into(),
                reason: format!("must satisfy 1 <= m < n, got m={m} with n={n}"),
            });
        }
        let d_max = models.iter().map(|mo| mo.d).max().unwrap();
        if tau_max < d_max {
            return Err(Error::InvalidModel {
                field: "tau_max".into(),
                reason: format!(
                    "must be at least the longest packet length {d_max} so completions are representable, got {tau_max}"
                ),
            });
        }
        Ok(Self { models, m, tau_max })
    }

    /// Number of sensors.
    pub fn n(&self) -> usize {
        self.models.len()
    }
}

/// One scheduling state: per-sensor holding times and remaining slots.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MdpState {
    pub tau: Vec<u32>,
    pub nu: Vec<u32>,
}

impl MdpState {
    /// The fresh-start state: every estimate just delivered (`tau = 0`),
    /// nothing in flight (`nu = d`).
    pub fn initial(cfg: &SystemConfig) -> Self {
        Self {
            tau: vec![0; cfg.n()],
            nu: cfg.models.iter().map(|m| m.d).collect(),
        }
    }

    /// True when no transmission is in flight (`nu_i = d_i` for all `i`),
    /// i.e. the scheduler makes a fresh choice.
    pub fn is_decision_epoch(&self, cfg: &SystemConfig) -> bool {
        self.nu
            .iter()
            .zip(&cfg.models)
            .all(|(&nu, m)| nu == m.d)
    }

    /// True when any holding time sits at the truncation bound.
    pub fn is_clamped(&self, cfg: &SystemConfig) -> bool {
        self.tau.iter().any(|&t| t == cfg.tau_max)
    }

    /// Checks ranges: `tau_i <= tau_max`, `1 <= nu_i <= d_i`, and at most
    /// `m` sensors mid-transmission.
    pub fn validate(&self, cfg: &SystemConfig) -> Result<()> {
        let n = cfg.n();
        if self.tau.len() != n || self.nu.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "state has {} holding times and {} slot counters for {n} sensors",
                self.tau.len(),
                self.nu.len()
            )));
        }
        for (i, (&tau, &nu)) in self.tau.iter().zip(&self.nu).enumerate() {
            if tau > cfg.tau_max {
                return Err(Error::UnknownState(format!(
                    "tau[{i}] = {tau} exceeds tau_max = {}",
                    cfg.tau_max
                )));
            }
            let d = cfg.models[i].d;
            if nu < 1 || nu > d {
                return Err(Error::UnknownState(format!(
                    "nu[{i}] = {nu} outside 1..={d}"
                )));
            }
        }
        let mid = self
            .nu
            .iter()
            .zip(&cfg.models)
            .filter(|(&nu, m)| nu < m.d)
            .count();
        if mid > cfg.m {
            return Err(Error::UnknownState(format!(
                "{mid} sensors mid-transmission exceeds channel capacity m = {}",
                cfg.m
            )));
        }
        Ok(())
    }
}

/// All `m`-subsets of `0..n` in lexicographic order. For `m = 1` this is
/// simply `[0], [1], ..`, so "lowest action index" ties break toward the
/// lowest sensor.
pub fn enumerate_actions(n: usize, m: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current: Vec<usize> = (0..m).collect();
    loop {
        out.push(current.clone());
        // Advance to the next combination.
        let mut i = m;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if current[i] != i + n - m {
                break;
            }
            if i == 0 {
                return out;
            }
        }
        current[i] += 1;
        for j in i + 1..m {
            current[j] = current[j - 1] + 1;
        }
    }
}

fn validate_action(action: &[usize], cfg: &SystemConfig) -> Result<()> {
    if action.len() != cfg.m {
        return Err(Error::InvalidAction(format!(
            "expected {} scheduled sensors, got {}",
            cfg.m,
            action.len()
        )));
    }
    for pair in action.windows(2) {
        if pair[0] >= pair[1] {
            return Err(Error::InvalidAction(format!(
                "sensor indices must be strictly increasing, got {action:?}"
            )));
        }
    }
    if let Some(&last) = action.last() {
        if last >= cfg.n() {
            return Err(Error::InvalidAction(format!(
                "sensor index {last} out of range for n = {}",
                cfg.n()
            )));
        }
    }
    Ok(())
}

/// Applies the deterministic transition law for scheduling the sensor set
/// `action` (strictly increasing indices, exactly `m` of them).
pub fn transition(s: &MdpState, action: &[usize], cfg: &SystemConfig) -> Result<MdpState> {
    s.validate(cfg)?;
    validate_action(action, cfg)?;
    let n = cfg.n();
    let mut scheduled = vec![false; n];
    for &i in action {
        scheduled[i] = true;
    }
    let mut tau = vec![0u32; n];
    let mut nu = vec![0u32; n];
    for i in 0..n {
        let d = cfg.models[i].d;
        if scheduled[i] && s.nu[i] == 1 {
            // Completion: the delivered estimate was snapshotted d steps
            // ago, so its age is exactly d now.
            tau[i] = d.min(cfg.tau_max);
            nu[i] = d;
        } else {
            tau[i] = (s.tau[i] + 1).min(cfg.tau_max);
            nu[i] = if scheduled[i] { s.nu[i] - 1 } else { d };
        }
    }
    Ok(MdpState { tau, nu })
}

/// Stage cost `sum_i tables[i][tau_i]`.
pub fn stage_cost<T: AsRef<[f64]>>(s: &MdpState, tables: &[T]) -> f64 {
    debug_assert_eq!(s.tau.len(), tables.len());
    s.tau
        .iter()
        .zip(tables)
        .map(|(&tau, table)| table.as_ref()[tau as usize])
        .sum()
}

/// A fully enumerated instance: indexed states, the lexicographic action
/// list, a dense next-state table, per-state stage costs, and clamp flags.
#[derive(Debug, Clone)]
pub struct MdpInstance {
    pub states: Vec<MdpState>,
    pub actions: Vec<Vec<usize>>,
    /// Row-major `next[s * actions.len() + a]`.
    pub next: Vec<u32>,
    pub cost: Vec<f64>,
    /// True where any holding time sits at `tau_max`; the truncation audit
    /// keys off these.
    pub clamped: Vec<bool>,
    /// Index of the reference/start state (always 0 for the built-in
    /// enumerations).
    pub initial: usize,
    /// Packet length per sensor; a state is a decision epoch exactly when
    /// its remaining-length fields equal this vector.
    pub d: Vec<u32>,
    index: HashMap<MdpState, u32>,
}

impl MdpInstance {
    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn num_actions(&self) -> usize {
        self.actions.len()
    }

    /// Successor index under action `a`.
    pub fn next_of(&self, s: usize, a: usize) -> usize {
        self.next[s * self.actions.len() + a] as usize
    }

    /// Index of a state if it was enumerated.
    pub fn index_of(&self, s: &MdpState) -> Option<usize> {
        self.index.get(s).map(|&i| i as usize)
    }

    /// Largest stage cost over all states; tolerance defaults scale off
    /// this.
    pub fn max_cost(&self) -> f64 {
        self.cost.iter().copied().fold(0.0, f64::max)
    }

    /// True when state `s` is a decision epoch: no transmission is in
    /// flight, so every sensor may be scheduled afresh.
    pub fn is_decision(&self, s: usize) -> bool {
        self.states[s].nu == self.d
    }

    /// Builds an instance from raw parts, checking shapes and that every
    /// next index is in range. Meant for synthetic graphs in tests and for
    /// deserialized dumps.
    pub fn from_parts(
        states: Vec<MdpState>,
        actions: Vec<Vec<usize>>,
        next: Vec<u32>,
        cost: Vec<f64>,
        clamped: Vec<bool>,
        initial: usize,
    ) -> Result<Self> {
        let ns = states.len();
        let na = actions.len();
        if ns == 0 || na == 0 {
            return Err(Error::InvalidOptions("instance needs at least one state and one action".into()));
        }
        if next.len() != ns * na || cost.len() != ns || clamped.len() != ns || initial >= ns {
            return Err(Error::DimensionMismatch(format!(
                "instance tables disagree: {ns} states, {na} actions, {} next entries, {} costs, {} clamp flags, initial {initial}",
                next.len(),
                cost.len(),
                clamped.len()
            )));
        }
        if let Some(&bad) = next.iter().find(|&&t| t as usize >= ns) {
            return Err(Error::UnknownState(format!("next table points at {bad} >= {ns}")));
        }
        let arity = states[0].tau.len();
        if states
            .iter()
            .any(|s| s.tau.len() != arity || s.nu.len() != arity)
        {
            return Err(Error::DimensionMismatch(
                "states disagree on the number of sensors".into(),
            ));
        }
        let mut index = HashMap::with_capacity(ns);
        for (i, s) in states.iter().enumerate() {
            if index.insert(s.clone(), i as u32).is_some() {
                return Err(Error::UnknownState(format!("duplicate state {s:?}")));
            }
        }
        // Packet lengths recovered as the componentwise maximum of the
        // remaining-length fields; exact whenever any decision state is
        // present, which every built enumeration guarantees.
        let mut d = vec![0u32; arity];
        for s in &states {
            for (slot, &nu) in d.iter_mut().zip(&s.nu) {
                *slot = (*slot).max(nu);
            }
        }
        Ok(Self { states, actions, next, cost, clamped, initial, d, index })
    }
}

fn check_tables(cfg: &SystemConfig, steady: &[SteadyState]) -> Result<()> {
    if steady.len() != cfg.n() {
        return Err(Error::DimensionMismatch(format!(
            "{} steady states for {} sensors",
            steady.len(),
            cfg.n()
        )));
    }
    for (i, s) in steady.iter().enumerate() {
        if s.cost_table.len() != cfg.tau_max as usize + 1 {
            return Err(Error::DimensionMismatch(format!(
                "cost table {i} has {} entries, expected tau_max + 1 = {}",
                s.cost_table.len(),
                cfg.tau_max + 1
            )));
        }
    }
    Ok(())
}

fn enumerate_from_seeds(
    cfg: &SystemConfig,
    steady: &[SteadyState],
    seeds: Vec<MdpState>,
    ceiling: usize,
) -> Result<MdpInstance> {
    check_tables(cfg, steady)?;
    let actions = enumerate_actions(cfg.n(), cfg.m);
    let mut index: HashMap<MdpState, u32> = HashMap::new();
    let mut states: Vec<MdpState> = Vec::new();
    for seed in seeds {
        seed.validate(cfg)?;
        index.entry(seed.clone()).or_insert_with(|| {
            states.push(seed);
            (states.len() - 1) as u32
        });
    }
    if states.is_empty() {
        return Err(Error::InvalidOptions("enumeration needs at least one seed state".into()));
    }
    if states.len() > ceiling {
        return Err(Error::StateExplosion { ceiling });
    }

    // The states vector doubles as a FIFO frontier: entries are processed
    // in discovery order, so indices are assigned breadth-first and the
    // next table fills row by row.
    let mut next: Vec<u32> = Vec::new();
    let mut processed = 0;
    while processed < states.len() {
        let s = states[processed].clone();
        for action in &actions {
            let t = transition(&s, action, cfg)?;
            let ti = match index.get(&t) {
                Some(&ti) => ti,
                None => {
                    if states.len() + 1 > ceiling {
                        return Err(Error::StateExplosion { ceiling });
                    }
                    let ti = states.len() as u32;
                    index.insert(t.clone(), ti);
                    states.push(t);
                    ti
                }
            };
            next.push(ti);
        }
        processed += 1;
    }

    let tables: Vec<&[f64]> = steady.iter().map(|s| s.cost_table.as_slice()).collect();
    let cost: Vec<f64> = states.iter().map(|s| stage_cost(s, &tables)).collect();
    let clamped: Vec<bool> = states.iter().map(|s| s.is_clamped(cfg)).collect();
    let d: Vec<u32> = cfg.models.iter().map(|m| m.d).collect();
    Ok(MdpInstance { states, actions, next, cost, clamped, initial: 0, d, index })
}

/// Breadth-first closure of a single start state under all actions, with
/// the default state ceiling. The start state gets index 0.
pub fn enumerate_reachable(
    cfg: &SystemConfig,
    steady: &[SteadyState],
    initial: &MdpState,
) -> Result<MdpInstance> {
    enumerate_reachable_with_ceiling(cfg, steady, initial, DEFAULT_STATE_CEILING)
}

/// [`enumerate_reachable`] with an explicit state ceiling.
pub fn enumerate_reachable_with_ceiling(
    cfg: &SystemConfig,
    steady: &[SteadyState],
    initial: &MdpState,
    ceiling: usize,
) -> Result<MdpInstance> {
    enumerate_from_seeds(cfg, steady, vec![initial.clone()], ceiling)
}

/// Closure of the full decision-epoch grid: every `(tau_1..tau_n, nu = d)`
/// combination is seeded, so the solved policy is defined across the whole
/// holding-time plane (the deterministic dynamics alone reach only a thin
/// slice of it from any single start). The fresh-start state is seeded
/// first and keeps index 0 as the reference state.
pub fn enumerate_decision_grid(cfg: &SystemConfig, steady: &[SteadyState]) -> Result<MdpInstance> {
    let n = cfg.n();
    let d: Vec<u32> = cfg.models.iter().map(|m| m.d).collect();
    let mut seeds = vec![MdpState::initial(cfg)];
    let mut tau = vec![0u32; n];
    loop {
        if tau.iter().any(|&t| t > 0) {
            seeds.push(MdpState { tau: tau.clone(), nu: d.clone() });
        }
        // Odometer increment over the tau grid.
        let mut i = n;
        loop {
            if i == 0 {
                let seeds_len = seeds.len();
                debug_assert_eq!(seeds_len, (cfg.tau_max as usize + 1).pow(n as u32));
                return enumerate_from_seeds(cfg, steady, seeds, DEFAULT_STATE_CEILING);
            }
            i -= 1;
            if tau[i] < cfg.tau_max {
                tau[i] += 1;
                break;
            }
            tau[i] = 0;
        }
    }
}

/// Computes per-sensor steady states (default Riccati settings) and the
/// decision-grid instance in one go.
pub fn build_instance(cfg: &SystemConfig) -> Result<(Vec<SteadyState>, MdpInstance)> {
    let steady: Vec<SteadyState> = cfg
        .models
        .iter()
        .map(|m| SteadyState::compute_default(m, cfg.tau_max))
        .collect::<Result<_>>()?;
    let instance = enumerate_decision_grid(cfg, &steady)?;
    Ok((steady, instance))
}
