//! Structural audits of solved policies.
//!
//! The solved policy is expected to look like a sensible transmission
//! schedule, and the properties below make that checkable:
//!
//! * **consistency** — a transmission, once started, is carried to
//!   completion rather than abandoned mid-flight;
//! * **threshold structure** — with everything else fixed, scheduling a
//!   sensor is monotone in its own holding time: once stale enough to be
//!   scheduled, staler is scheduled too;
//! * **value monotonicity** — relative values never decrease when a single
//!   holding time grows.
//!
//! The audited set is the recurrently reachable interior of the grid:
//! states where every holding time is at least its sensor's packet length
//! and below `tau_max`. Once a sensor's first packet lands, its holding
//! time never drops below the packet length again, so states under that
//! floor occur at most once after a fresh start — and there the properties
//! genuinely need not hold: with every slot forcibly allocated, the
//! optimal policy kills time in the artificial all-fresh opening by
//! starting transmissions it intends to drop. Clamped states are excluded
//! at the other end because truncation, not the underlying problem,
//! dictates their behavior. For two sensors sharing a single slot the
//! threshold structure is also summarized as an explicit switching
//! boundary over the audited holding-time grid.

use std::collections::HashMap;

use crate::mdp::MdpInstance;
use crate::solver::Solution;

/// A transmission abandoned before completion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConsistencyViolation {
    /// Decision state where the transmission started.
    pub origin: usize,
    /// State at which the policy dropped the sensor.
    pub state: usize,
    /// Sensor whose transmission was abandoned (0-based).
    pub sensor: usize,
    /// Slots into the transmission when it was dropped (1-based).
    pub step: usize,
    /// The set actually scheduled there.
    pub action: Vec<usize>,
}

/// A sensor scheduled at some holding time but not at a larger one, all
/// else equal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ThresholdViolation {
    pub sensor: usize,
    /// State with the smaller holding time, where the sensor is scheduled.
    pub lower: usize,
    /// State with the larger holding time, where it is not.
    pub upper: usize,
    pub lower_action: Vec<usize>,
    pub upper_action: Vec<usize>,
}

/// A relative value that decreases as a holding time grows, all else equal.
#[derive(Debug, Clone, PartialEq)]
pub struct MonotonicityViolation {
    pub sensor: usize,
    pub lower: usize,
    pub upper: usize,
    pub v_lower: f64,
    pub v_upper: f64,
}

/// One row of the two-sensor switching boundary: the smallest own holding
/// time at which sensor 1 gets the slot, given the other sensor's holding
/// time. `None` means sensor 1 is never scheduled on that row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundaryPoint {
    pub tau_other: u32,
    pub min_tau: Option<u32>,
}

/// Combined audit results.
#[derive(Debug, Clone)]
pub struct StructureReport {
    pub consistency: Vec<ConsistencyViolation>,
    pub threshold: Vec<ThresholdViolation>,
    pub monotonicity: Vec<MonotonicityViolation>,
    /// Present only for two sensors sharing a single slot.
    pub boundary: Option<Vec<BoundaryPoint>>,
}

impl StructureReport {
    /// True when no audited property is violated. The boundary is a
    /// summary, not a pass/fail check, and does not participate.
    pub fn is_clean(&self) -> bool {
        self.consistency.is_empty()
            && self.threshold.is_empty()
            && self.monotonicity.is_empty()
    }
}

/// True for states inside the audited region: non-clamped, with every
/// holding time at or above its sensor's packet length (the floor it can
/// never fall below once that sensor has delivered its first packet).
pub fn in_audit_region(mdp: &MdpInstance, s: usize) -> bool {
    !mdp.clamped[s]
        && mdp.states[s]
            .tau
            .iter()
            .zip(&mdp.d)
            .all(|(&tau, &d)| tau >= d)
}

/// Runs every audit against a solved instance. `value_tol` is the slack
/// allowed on value comparisons; a small multiple of the solver's span
/// tolerance is appropriate.
pub fn analyze(mdp: &MdpInstance, solution: &Solution, value_tol: f64) -> StructureReport {
    StructureReport {
        consistency: check_consistency(mdp, &solution.policy),
        threshold: check_threshold(mdp, &solution.policy),
        monotonicity: check_value_monotonicity(mdp, &solution.v, value_tol),
        boundary: threshold_boundary(mdp, &solution.policy),
    }
}

/// Verifies that every transmission the policy starts at a decision state
/// in the audited region is continued until its final slot. Walks that
/// run into a clamped state are skipped rather than judged.
pub fn check_consistency(mdp: &MdpInstance, policy: &[u32]) -> Vec<ConsistencyViolation> {
    let mut violations = Vec::new();
    for s in 0..mdp.num_states() {
        if !in_audit_region(mdp, s) || !mdp.is_decision(s) {
            continue;
        }
        let started: Vec<usize> = mdp.actions[policy[s] as usize].clone();
        for &sensor in &started {
            // At a decision epoch the remaining-length field carries the
            // full packet length.
            let length = mdp.states[s].nu[sensor] as usize;
            let mut cur = s;
            for step in 1..length {
                cur = mdp.next_of(cur, policy[cur] as usize);
                if mdp.clamped[cur] {
                    break;
                }
                let action = &mdp.actions[policy[cur] as usize];
                if !action.contains(&sensor) {
                    violations.push(ConsistencyViolation {
                        origin: s,
                        state: cur,
                        sensor,
                        step,
                        action: action.clone(),
                    });
                    break;
                }
            }
        }
    }
    violations
}

/// Groups audited decision states by everything except one sensor's
/// holding time and verifies that the set where that sensor is scheduled
/// is upward closed in it. Reported pairs are consecutive in the group.
pub fn check_threshold(mdp: &MdpInstance, policy: &[u32]) -> Vec<ThresholdViolation> {
    let n = mdp.states[mdp.initial].tau.len();
    let mut violations = Vec::new();
    for sensor in 0..n {
        // Key: holding times with the probed coordinate masked out. Only
        // decision states enter, so the remaining lengths are implied.
        let mut groups: HashMap<Vec<u32>, Vec<(u32, usize)>> = HashMap::new();
        for s in 0..mdp.num_states() {
            if !in_audit_region(mdp, s) || !mdp.is_decision(s) {
                continue;
            }
            let mut key = mdp.states[s].tau.clone();
            let own = key[sensor];
            key[sensor] = u32::MAX;
            groups.entry(key).or_default().push((own, s));
        }
        for members in groups.values_mut() {
            members.sort_unstable();
            for pair in members.windows(2) {
                let (_, lower) = pair[0];
                let (_, upper) = pair[1];
                let lower_action = &mdp.actions[policy[lower] as usize];
                let upper_action = &mdp.actions[policy[upper] as usize];
                if lower_action.contains(&sensor) && !upper_action.contains(&sensor) {
                    violations.push(ThresholdViolation {
                        sensor,
                        lower,
                        upper,
                        lower_action: lower_action.clone(),
                        upper_action: upper_action.clone(),
                    });
                }
            }
        }
    }
    violations.sort_by_key(|v| (v.sensor, v.lower));
    violations
}

/// Checks that relative values are non-decreasing in each holding time,
/// comparing consecutive states within groups that agree on everything
/// else. `tol` absorbs solver noise.
pub fn check_value_monotonicity(
    mdp: &MdpInstance,
    v: &[f64],
    tol: f64,
) -> Vec<MonotonicityViolation> {
    let n = mdp.states[mdp.initial].tau.len();
    let mut violations = Vec::new();
    for sensor in 0..n {
        let mut groups: HashMap<(Vec<u32>, Vec<u32>), Vec<(u32, usize)>> = HashMap::new();
        for s in 0..mdp.num_states() {
            if !in_audit_region(mdp, s) {
                continue;
            }
            let mut key_tau = mdp.states[s].tau.clone();
            let own = key_tau[sensor];
            key_tau[sensor] = u32::MAX;
            groups
                .entry((key_tau, mdp.states[s].nu.clone()))
                .or_default()
                .push((own, s));
        }
        for members in groups.values_mut() {
            members.sort_unstable();
            for pair in members.windows(2) {
                let (_, lower) = pair[0];
                let (_, upper) = pair[1];
                if v[upper] < v[lower] - tol {
                    violations.push(MonotonicityViolation {
                        sensor,
                        lower,
                        upper,
                        v_lower: v[lower],
                        v_upper: v[upper],
                    });
                }
            }
        }
    }
    violations.sort_by_key(|v| (v.sensor, v.lower));
    violations
}

/// For two sensors sharing one slot, tabulates the switching boundary
/// over the audited region: for each holding time of sensor 2, the
/// smallest holding time at which sensor 1 is scheduled. Returns `None`
/// for other configurations.
pub fn threshold_boundary(mdp: &MdpInstance, policy: &[u32]) -> Option<Vec<BoundaryPoint>> {
    let n = mdp.states[mdp.initial].tau.len();
    let m = mdp.actions[0].len();
    if n != 2 || m != 1 {
        return None;
    }
    // Rows indexed by sensor 2's holding time, scanning sensor 1's.
    let mut rows: HashMap<u32, Vec<(u32, usize)>> = HashMap::new();
    let mut max_other = 0;
    for s in 0..mdp.num_states() {
        if !in_audit_region(mdp, s) || !mdp.is_decision(s) {
            continue;
        }
        let tau = &mdp.states[s].tau;
        rows.entry(tau[1]).or_default().push((tau[0], s));
        max_other = max_other.max(tau[1]);
    }
    let mut boundary = Vec::new();
    for tau_other in mdp.d[1]..=max_other {
        let min_tau = rows.get(&tau_other).and_then(|row| {
            row.iter()
                .filter(|&&(_, s)| mdp.actions[policy[s] as usize] == [0])
                .map(|&(tau, _)| tau)
                .min()
        });
        boundary.push(BoundaryPoint { tau_other, min_tau });
    }
    Some(boundary)
}

/// True when the switching boundary is a non-decreasing staircase, with
/// `None` read as "beyond the grid" (infinite).
pub fn boundary_is_monotone(boundary: &[BoundaryPoint]) -> bool {
    let mut prev_unbounded = false;
    let mut prev = 0u32;
    for point in boundary {
        match point.min_tau {
            Some(tau) => {
                if prev_unbounded || tau < prev {
                    return false;
                }
                prev = tau;
            }
            None => prev_unbounded = true,
        }
    }
    true
}
