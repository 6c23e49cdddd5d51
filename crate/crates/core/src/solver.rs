//! Average-cost and discounted solvers, plus an independent cycle oracle.
//!
//! The workhorse is damped relative value iteration on the average-cost
//! optimality equation `rho + V(s) = min_a [c(s) + V(next(s, a))]`. Because
//! the transitions are deterministic, the optimal average cost also equals
//! the minimum mean cycle weight of the transition graph, which
//! [`min_mean_cycle_oracle`] computes with Karp's dynamic program — a
//! structurally unrelated algorithm that serves as a cross-check on the
//! iterative solver. A discounted solver approximating the same problem
//! from the vanishing-discount side rounds out the set.

use crate::error::{Error, Result};
use crate::mdp::MdpInstance;

/// Relative span tolerance applied to the largest stage cost when no
/// explicit `span_tol` is given.
pub const SPAN_TOL_SCALE: f64 = 1e-9;

/// Which solver the pipeline should run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverMode {
    RelativeVi,
    DiscountedVi,
}

/// Knobs shared by both solvers.
#[derive(Debug, Clone)]
pub struct SolverOptions {
    pub mode: SolverMode,
    /// Discount factor for [`discounted_value_iteration`]; in (0, 1).
    pub alpha: f64,
    /// Absolute span tolerance. `None` resolves to
    /// `SPAN_TOL_SCALE * max stage cost` per instance.
    pub span_tol: Option<f64>,
    pub max_iters: usize,
    /// Damping weight on the relative-value update; in (0, 1]. The default
    /// 0.5 keeps the iteration contracting on the periodic cycles a
    /// deterministic chain produces.
    pub damping: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            mode: SolverMode::RelativeVi,
            alpha: 0.999,
            span_tol: None,
            max_iters: 1_000_000,
            damping: 0.5,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidOptions(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::InvalidOptions(format!(
                "damping must lie in (0, 1], got {}",
                self.damping
            )));
        }
        if let Some(tol) = self.span_tol {
            if !(tol > 0.0 && tol.is_finite()) {
                return Err(Error::InvalidOptions(format!(
                    "span_tol must be positive and finite, got {tol}"
                )));
            }
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidOptions("max_iters must be at least 1".into()));
        }
        Ok(())
    }

    /// Resolves the span tolerance against an instance's cost scale.
    pub fn effective_span_tol(&self, mdp: &MdpInstance) -> f64 {
        self.span_tol
            .unwrap_or(SPAN_TOL_SCALE * mdp.max_cost())
            .max(f64::MIN_POSITIVE)
    }
}

/// Output of [`relative_value_iteration`].
#[derive(Debug, Clone)]
pub struct Solution {
    /// Optimal long-run average cost per step.
    pub rho_star: f64,
    /// Relative values, normalized so `v[initial] = 0`.
    pub v: Vec<f64>,
    /// Greedy action index per state (into `mdp.actions`), ties broken
    /// toward the lowest index.
    pub policy: Vec<u32>,
    pub iterations: usize,
    /// Span of the last update step.
    pub span_residual: f64,
}

/// Output of [`discounted_value_iteration`].
#[derive(Debug, Clone)]
pub struct DiscountedSolution {
    /// `(1 - alpha) * J_alpha(initial)`: the vanishing-discount estimate of
    /// the average cost.
    pub rho_estimate: f64,
    /// Discounted values normalized so `u[initial] = 0`.
    pub u: Vec<f64>,
    pub policy: Vec<u32>,
    pub iterations: usize,
    /// Sup-norm of the last update step.
    pub residual: f64,
}

/// One Bellman sweep: `out[s] = min_a (cost[s] + discount * w[next(s,a)])`,
/// optionally recording the first (lowest-index) argmin per state.
fn bellman_sweep(
    mdp: &MdpInstance,
    discount: f64,
    w: &[f64],
    out: &mut [f64],
    mut policy: Option<&mut [u32]>,
) {
    let na = mdp.num_actions();
    for s in 0..mdp.num_states() {
        let row = s * na;
        let mut best = f64::INFINITY;
        let mut arg = 0u32;
        for a in 0..na {
            let value = mdp.cost[s] + discount * w[mdp.next[row + a] as usize];
            if value < best {
                best = value;
                arg = a as u32;
            }
        }
        out[s] = best;
        if let Some(p) = policy.as_deref_mut() {
            p[s] = arg;
        }
    }
}

/// Damped relative value iteration for the average-cost problem.
///
/// Iterates `w <- (1 - damping) w + damping (T w - (T w)(s_ref))` with
/// `s_ref = mdp.initial` until the span of the update drops below the
/// resolved tolerance, then reports `rho* = (T w)(s_ref)` and the greedy
/// policy of the final `w`. The normalization keeps `w[s_ref]` pinned at
/// exactly zero throughout.
pub fn relative_value_iteration(mdp: &MdpInstance, opts: &SolverOptions) -> Result<Solution> {
    opts.validate()?;
    let ns = mdp.num_states();
    let tol = opts.effective_span_tol(mdp);
    let lambda = opts.damping;
    let sref = mdp.initial;

    let mut w = vec![0.0; ns];
    let mut tw = vec![0.0; ns];
    let mut span = f64::INFINITY;
    for iteration in 1..=opts.max_iters {
        bellman_sweep(mdp, 1.0, &w, &mut tw, None);
        let shift = tw[sref];
        let mut delta_min = f64::INFINITY;
        let mut delta_max = f64::NEG_INFINITY;
        for s in 0..ns {
            let updated = (1.0 - lambda) * w[s] + lambda * (tw[s] - shift);
            let delta = updated - w[s];
            delta_min = delta_min.min(delta);
            delta_max = delta_max.max(delta);
            w[s] = updated;
        }
        span = delta_max - delta_min;
        if !span.is_finite() {
            return Err(Error::MaxIterations { iterations: iteration, residual: span });
        }
        if span < tol {
            let mut policy = vec![0u32; ns];
            bellman_sweep(mdp, 1.0, &w, &mut tw, Some(&mut policy));
            let rho_star = tw[sref] - w[sref];
            let base = w[sref];
            let v = w.iter().map(|x| x - base).collect();
            return Ok(Solution { rho_star, v, policy, iterations: iteration, span_residual: span });
        }
    }
    Err(Error::MaxIterations { iterations: opts.max_iters, residual: span })
}

/// Discounted value iteration `u <- T_alpha u` from `u = 0`.
///
/// Stops once the sup-norm step is below
/// `span_tol * (1 - alpha) / (2 alpha)`, the classic bound that puts the
/// final iterate within `span_tol / 2` of the discounted fixed point.
/// Values are reported normalized to the reference state, which is how the
/// vanishing-discount limit connects them to the relative values of the
/// average-cost problem.
pub fn discounted_value_iteration(
    mdp: &MdpInstance,
    opts: &SolverOptions,
) -> Result<DiscountedSolution> {
    opts.validate()?;
    let ns = mdp.num_states();
    let alpha = opts.alpha;
    let tol = opts.effective_span_tol(mdp) * (1.0 - alpha) / (2.0 * alpha);
    let sref = mdp.initial;

    let mut u = vec![0.0; ns];
    let mut tu = vec![0.0; ns];
    let mut residual = f64::INFINITY;
    for iteration in 1..=opts.max_iters {
        bellman_sweep(mdp, alpha, &u, &mut tu, None);
        residual = u
            .iter()
            .zip(&tu)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        std::mem::swap(&mut u, &mut tu);
        if !residual.is_finite() {
            return Err(Error::MaxIterations { iterations: iteration, residual });
        }
        if residual < tol {
            let mut policy = vec![0u32; ns];
            bellman_sweep(mdp, alpha, &u, &mut tu, Some(&mut policy));
            let rho_estimate = (1.0 - alpha) * u[sref];
            let base = u[sref];
            let normalized = u.iter().map(|x| x - base).collect();
            return Ok(DiscountedSolution {
                rho_estimate,
                u: normalized,
                policy,
                iterations: iteration,
                residual,
            });
        }
    }
    Err(Error::MaxIterations { iterations: opts.max_iters, residual })
}

/// Karp's minimum mean cycle on the transition graph, where the edge
/// `s -> next(s, a)` carries weight `cost[s]`. Returns the minimum mean
/// and one cycle attaining it (as state indices in traversal order).
///
/// Runs the `F_k(v)` dynamic program twice with rolling rows so memory
/// stays O(states) even though the full table is O(states^2). The
/// attaining cycle is then recovered from the tight subgraph of the
/// residual weights `cost[s] - mean`: any cycle whose edges all satisfy
/// `p(s) + cost(s) - mean - p(t) <= delta` for shortest-walk potentials
/// `p` has mean within `delta` of the optimum, so the extraction tolerance
/// only has to clear floating-point noise, not make structural choices.
pub fn min_mean_cycle_oracle(mdp: &MdpInstance) -> (f64, Vec<usize>) {
    let ns = mdp.num_states();
    let na = mdp.num_actions();
    let source = mdp.initial;

    let relax_round = |prev: &[f64], cur: &mut [f64]| {
        cur.fill(f64::INFINITY);
        for s in 0..ns {
            let from = prev[s];
            if !from.is_finite() {
                continue;
            }
            let base = from + mdp.cost[s];
            let row = s * na;
            for a in 0..na {
                let t = mdp.next[row + a] as usize;
                if base < cur[t] {
                    cur[t] = base;
                }
            }
        }
    };

    // Pass 1: F_ns(v).
    let mut prev = vec![f64::INFINITY; ns];
    prev[source] = 0.0;
    let mut cur = vec![f64::INFINITY; ns];
    for _ in 0..ns {
        relax_round(&prev, &mut cur);
        std::mem::swap(&mut prev, &mut cur);
    }
    let f_full = prev.clone();

    // Pass 2: recompute F_k for k = 0..ns-1, folding the Karp ratio.
    let mut best_ratio = vec![f64::NEG_INFINITY; ns];
    prev.fill(f64::INFINITY);
    prev[source] = 0.0;
    for k in 0..ns {
        if k > 0 {
            relax_round(&prev, &mut cur);
            std::mem::swap(&mut prev, &mut cur);
        }
        let horizon = (ns - k) as f64;
        for v in 0..ns {
            if prev[v].is_finite() && f_full[v].is_finite() {
                let ratio = (f_full[v] - prev[v]) / horizon;
                if ratio > best_ratio[v] {
                    best_ratio[v] = ratio;
                }
            }
        }
    }
    let mean = (0..ns)
        .filter(|&v| f_full[v].is_finite() && best_ratio[v] > f64::NEG_INFINITY)
        .map(|v| best_ratio[v])
        .fold(f64::INFINITY, f64::min);

    let cycle = extract_tight_cycle(mdp, mean);
    (mean, cycle)
}

/// Finds a cycle whose edges are all tight for the residual weights
/// `cost[s] - mean`, widening the tolerance geometrically until one shows
/// up. See [`min_mean_cycle_oracle`] for why any such cycle is optimal up
/// to the tolerance used.
fn extract_tight_cycle(mdp: &MdpInstance, mean: f64) -> Vec<usize> {
    let ns = mdp.num_states();
    let na = mdp.num_actions();
    let source = mdp.initial;

    // Shortest-walk potentials under the residual weights; bounded
    // relaxation since zero-mean cycles can keep hair-thin improvements
    // alive indefinitely.
    let mut p = vec![f64::INFINITY; ns];
    p[source] = 0.0;
    for _ in 0..ns {
        let mut changed = false;
        for s in 0..ns {
            if !p[s].is_finite() {
                continue;
            }
            let base = p[s] + mdp.cost[s] - mean;
            let row = s * na;
            for a in 0..na {
                let t = mdp.next[row + a] as usize;
                if base < p[t] {
                    p[t] = base;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }

    // The most negative residual measures the floating-point noise floor;
    // start the tolerance ladder just above it.
    let mut noise: f64 = 0.0;
    for s in 0..ns {
        if !p[s].is_finite() {
            continue;
        }
        let base = p[s] + mdp.cost[s] - mean;
        let row = s * na;
        for a in 0..na {
            let t = mdp.next[row + a] as usize;
            if p[t].is_finite() {
                noise = noise.max(-(base - p[t]));
            }
        }
    }
    let scale = mean.abs().max(1.0);
    let mut delta = (2.0 * noise).max(1e-12 * scale);
    for _ in 0..24 {
        if let Some(cycle) = cycle_in_tight_subgraph(mdp, &p, mean, delta) {
            return cycle;
        }
        delta *= 10.0;
    }
    // Unreachable in practice: at a huge delta every edge is tight and the
    // walk below must close a cycle. Fall back to it explicitly.
    greedy_residual_cycle(mdp, &p, mean)
}

/// DFS for any cycle within the delta-tight subgraph.
fn cycle_in_tight_subgraph(
    mdp: &MdpInstance,
    p: &[f64],
    mean: f64,
    delta: f64,
) -> Option<Vec<usize>> {
    let ns = mdp.num_states();
    let na = mdp.num_actions();
    let tight = |s: usize, t: usize| -> bool {
        p[s].is_finite()
            && p[t].is_finite()
            && p[s] + mdp.cost[s] - mean - p[t] <= delta
    };

    // Iterative coloring DFS: 0 = unseen, 1 = on stack, 2 = done.
    let mut color = vec![0u8; ns];
    let mut stack: Vec<(usize, usize)> = Vec::new();
    let mut path: Vec<usize> = Vec::new();
    for root in 0..ns {
        if color[root] != 0 {
            continue;
        }
        stack.push((root, 0));
        color[root] = 1;
        path.push(root);
        while let Some(&mut (s, ref mut a)) = stack.last_mut() {
            if *a >= na {
                stack.pop();
                path.pop();
                color[s] = 2;
                continue;
            }
            let action = *a;
            *a += 1;
            let t = mdp.next[s * na + action] as usize;
            if !tight(s, t) {
                continue;
            }
            match color[t] {
                0 => {
                    color[t] = 1;
                    stack.push((t, 0));
                    path.push(t);
                }
                1 => {
                    let start = path.iter().position(|&x| x == t).unwrap();
                    return Some(path[start..].to_vec());
                }
                _ => {}
            }
        }
    }
    None
}

/// Totality fallback: follow the smallest-residual edge out of every state
/// until a state repeats.
fn greedy_residual_cycle(mdp: &MdpInstance, p: &[f64], mean: f64) -> Vec<usize> {
    let ns = mdp.num_states();
    let na = mdp.num_actions();
    let mut seen_at = vec![usize::MAX; ns];
    let mut path = Vec::new();
    let mut s = mdp.initial;
    loop {
        if seen_at[s] != usize::MAX {
            return path[seen_at[s]..].to_vec();
        }
        seen_at[s] = path.len();
        path.push(s);
        let row = s * na;
        let mut best = f64::INFINITY;
        let mut next = mdp.next[row] as usize;
        for a in 0..na {
            let t = mdp.next[row + a] as usize;
            let residual = if p[s].is_finite() && p[t].is_finite() {
                p[s] + mdp.cost[s] - mean - p[t]
            } else {
                f64::INFINITY
            };
            if residual < best {
                best = residual;
                next = t;
            }
        }
        s = next;
    }
}

/// Long-run average cost of a fixed policy and the cycle it settles into.
#[derive(Debug, Clone)]
pub struct PolicyEvaluation {
    pub rho: f64,
    /// States of the recurrent cycle reached from the initial state, in
    /// traversal order.
    pub recurrent: Vec<usize>,
}

/// Follows the deterministic trajectory of `policy` from the initial state
/// until it closes a cycle; the average cost is the cycle mean. Errors
/// with [`Error::TruncationTooTight`] if the cycle contains a clamped
/// state, since the truncated dynamics then dictate the long-run cost.
pub fn evaluate_policy(mdp: &MdpInstance, policy: &[u32]) -> Result<PolicyEvaluation> {
    if policy.len() != mdp.num_states() {
        return Err(Error::DimensionMismatch(format!(
            "policy covers {} states, instance has {}",
            policy.len(),
            mdp.num_states()
        )));
    }
    if let Some((s, &a)) = policy
        .iter()
        .enumerate()
        .find(|&(_, &a)| a as usize >= mdp.num_actions())
    {
        return Err(Error::InvalidAction(format!(
            "policy action {a} at state {s} out of range"
        )));
    }

    let mut first_seen = vec![usize::MAX; mdp.num_states()];
    let mut path = Vec::new();
    let mut s = mdp.initial;
    loop {
        if first_seen[s] != usize::MAX {
            let cycle = &path[first_seen[s]..];
            if let Some(&clamped) = cycle.iter().find(|&&v| mdp.clamped[v]) {
                return Err(Error::TruncationTooTight { state: clamped });
            }
            let total: f64 = cycle.iter().map(|&v| mdp.cost[v]).sum();
            let rho = total / cycle.len() as f64;
            return Ok(PolicyEvaluation { rho, recurrent: cycle.to_vec() });
        }
        first_seen[s] = path.len();
        path.push(s);
        s = mdp.next_of(s, policy[s] as usize);
    }
}

/// Worst-state violation of the average-cost optimality equation:
/// `max_s |min_a (c(s) + V(next)) - V(s) - rho*|`. A converged solution
/// keeps this within a small multiple of its span tolerance.
pub fn aoe_residual(mdp: &MdpInstance, solution: &Solution) -> f64 {
    let mut tv = vec![0.0; mdp.num_states()];
    bellman_sweep(mdp, 1.0, &solution.v, &mut tv, None);
    (0..mdp.num_states())
        .map(|s| (tv[s] - solution.v[s] - solution.rho_star).abs())
        .fold(0.0, f64::max)
}
