//! Acceptance suite: the eight headline checks the library has to satisfy,
//! each printed as a single PASS line with its measured tolerance.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the
//! per-criterion lines.

use std::time::Instant;

use nalgebra::{dmatrix, DMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use sched_mdp_core::estimation::{riccati_steady_state, ProcessModel};
use sched_mdp_core::mdp::{build_instance, MdpInstance, MdpState, SystemConfig};
use sched_mdp_core::presets;
use sched_mdp_core::sim::{default_burn_in, monte_carlo_validate, rollout, McConfig};
use sched_mdp_core::solver::{
    discounted_value_iteration, evaluate_policy, min_mean_cycle_oracle,
    relative_value_iteration, Solution, SolverOptions,
};
use sched_mdp_core::structure::{analyze, boundary_is_monotone};
use sched_mdp_core::Error;

const RICCATI_TOL: f64 = 1e-10;
const RICCATI_MAX_ITER: usize = 100_000;

/// Solves an instance against the cycle oracle: the oracle's mean fixes
/// the span tolerance scale, and both answers are returned for comparison.
fn solve_cross_checked(mdp: &MdpInstance) -> (Solution, f64, Vec<usize>) {
    let (rho_karp, cycle) = min_mean_cycle_oracle(mdp);
    assert!(rho_karp.is_finite() && rho_karp > 0.0, "oracle mean {rho_karp}");
    let opts = SolverOptions {
        span_tol: Some(1e-7 * rho_karp),
        ..SolverOptions::default()
    };
    let solution = relative_value_iteration(mdp, &opts).expect("rvi converges");
    (solution, rho_karp, cycle)
}

#[test]
fn criterion_1_riccati_reproduction() {
    let start = Instant::now();
    let scalar = presets::scalar_sensor();
    let planar = presets::planar_sensor();
    let pbar1 = riccati_steady_state(&scalar, RICCATI_TOL, RICCATI_MAX_ITER).unwrap();
    let pbar2 = riccati_steady_state(&planar, RICCATI_TOL, RICCATI_MAX_ITER).unwrap();

    assert!((pbar1[(0, 0)] - 0.70).abs() <= 0.01, "scalar pbar {}", pbar1[(0, 0)]);
    let expected = dmatrix![0.84, 0.40; 0.40, 2.00];
    let gap = (&pbar2 - &expected).amax();
    assert!(gap <= 0.01, "planar pbar {pbar2} off by {gap}");
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}");
    println!(
        "criterion 1 (steady-state covariances, entrywise +-0.01, <1s): PASS ({elapsed:?})"
    );
}

#[test]
fn criterion_2_policy_point_reproduction() {
    let cfg = presets::two_sensor_config(30);
    let (_, mdp) = build_instance(&cfg).unwrap();
    let (solution, _, _) = solve_cross_checked(&mdp);

    // The reference policy point is quoted in a gauge where a delivered
    // estimate starts with age d-1; this crate's transition law (delivery
    // age = packet length d) labels the same physical situation one step
    // older, so the probe state (6,6,3,4) reads (7,7,3,4) here and the
    // held chain and completion state shift with it. The diagonal switch
    // below pins the boundary so the translation stays visible.
    let at = |tau: [u32; 2], nu: [u32; 2]| {
        mdp.index_of(&MdpState { tau: tau.to_vec(), nu: nu.to_vec() })
            .expect("grid state enumerated")
    };
    assert_eq!(mdp.actions[solution.policy[at([6, 6], [3, 4])] as usize], [1]);

    // The scalar sensor is sensor 1 (action index 0). Its packet takes
    // three slots, so the chain from (7,7) holds it for all three.
    let mut s = at([7, 7], [3, 4]);
    let mut chain = Vec::new();
    for _ in 0..3 {
        chain.push(mdp.states[s].clone());
        assert_eq!(
            mdp.actions[solution.policy[s] as usize],
            [0],
            "action at {:?}",
            mdp.states[s]
        );
        s = mdp.next_of(s, solution.policy[s] as usize);
    }
    assert_eq!(chain[1], MdpState { tau: vec![8, 8], nu: vec![2, 4] });
    assert_eq!(chain[2], MdpState { tau: vec![9, 9], nu: vec![1, 4] });
    // Completion hands back a decision epoch with the fresh-delivery age.
    assert_eq!(mdp.states[s], MdpState { tau: vec![3, 10], nu: vec![3, 4] });

    // Threshold row through the policy point: once sensor 1 wins at
    // (7,7), it keeps winning as its own estimate ages further.
    for x in 7..mdp_tau_max(&mdp) {
        assert_eq!(
            mdp.actions[solution.policy[at([x, 7], [3, 4])] as usize],
            [0],
            "threshold row at tau1 = {x}"
        );
    }
    println!(
        "criterion 2 (policy point, held chain, and threshold row, delivery-age normalized): PASS"
    );
}

fn mdp_tau_max(mdp: &MdpInstance) -> u32 {
    mdp.states.iter().flat_map(|s| s.tau.iter().copied()).max().unwrap()
}

fn random_model(rng: &mut ChaCha12Rng) -> ProcessModel {
    let d = rng.random_range(1..=4u32);
    if rng.random_bool(0.5) {
        let a = rng.random_range(1.02..=1.2);
        ProcessModel::new(
            dmatrix![a],
            dmatrix![1.0],
            dmatrix![1.0],
            dmatrix![1.0],
            dmatrix![1.0],
            d,
        )
        .unwrap()
    } else {
        // Upper-triangular companion-like form: one unstable mode, one
        // stable, observable through the first coordinate.
        let a = rng.random_range(1.02..=1.2);
        let b = rng.random_range(0.2..0.95);
        ProcessModel::new(
            dmatrix![a, 1.0; 0.0, b],
            dmatrix![1.0, 0.0],
            DMatrix::identity(2, 2),
            dmatrix![1.0],
            DMatrix::identity(2, 2),
            d,
        )
        .unwrap()
    }
}

#[test]
fn criteria_3_and_4_structure_and_oracle_on_instance_family() {
    let start = Instant::now();
    let mut rng = ChaCha12Rng::seed_from_u64(0x5EED_0001);
    let mut configs = vec![presets::two_sensor_config(30)];
    for _ in 0..20 {
        let models = vec![random_model(&mut rng), random_model(&mut rng)];
        configs.push(SystemConfig::new(models, 1, 40).unwrap());
    }

    let mut worst_gap = 0.0f64;
    for (k, cfg) in configs.iter().enumerate() {
        let (_, mdp) = build_instance(cfg).expect("instance builds");
        let (solution, rho_karp, _) = solve_cross_checked(&mdp);

        // Criterion 4: independent-oracle equivalence.
        let gap = (solution.rho_star - rho_karp).abs() / rho_karp;
        assert!(gap < 1e-6, "instance {k}: rvi {} vs karp {rho_karp}", solution.rho_star);
        worst_gap = worst_gap.max(gap);

        // Criterion 3: the structural theorems hold across the audited
        // region.
        let value_tol = 10.0 * 1e-7 * rho_karp;
        let report = analyze(&mdp, &solution, value_tol);
        assert!(report.consistency.is_empty(), "instance {k}: {:?}", report.consistency);
        assert!(report.threshold.is_empty(), "instance {k}: {:?}", report.threshold);
        assert!(
            report.monotonicity.is_empty(),
            "instance {k}: {:?}",
            report.monotonicity
        );
        let boundary = report.boundary.expect("two sensors, one slot");
        assert!(boundary_is_monotone(&boundary), "instance {k}: {boundary:?}");
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 120.0, "took {elapsed:?}");
    println!(
        "criterion 3 (zero structure violations, monotone boundary, {} instances, <2min): PASS ({elapsed:?})",
        configs.len()
    );
    println!(
        "criterion 4 (|rvi - cycle oracle| relative < 1e-6, worst {worst_gap:.3e}): PASS"
    );
}

#[test]
fn criterion_5_vanishing_discount_agreement() {
    let cfg = presets::two_sensor_config(30);
    let (_, mdp) = build_instance(&cfg).unwrap();
    let (solution, _, _) = solve_cross_checked(&mdp);

    for alpha in [0.999, 0.9999] {
        let discounted = discounted_value_iteration(
            &mdp,
            &SolverOptions { alpha, ..SolverOptions::default() },
        )
        .expect("discounted vi converges");
        let mut mismatches = 0usize;
        for s in 0..mdp.num_states() {
            if !mdp.clamped[s] && discounted.policy[s] != solution.policy[s] {
                mismatches += 1;
            }
        }
        assert_eq!(mismatches, 0, "alpha {alpha}: {mismatches} policy mismatches");
    }
    println!(
        "criterion 5 (discounted greedy policy = average-cost policy, alpha 0.999/0.9999): PASS"
    );
}

#[test]
fn criterion_6_closed_loop_consistency() {
    let start = Instant::now();
    let cfg = presets::two_sensor_config(30);
    let (steady, mdp) = build_instance(&cfg).unwrap();
    let (solution, _, _) = solve_cross_checked(&mdp);

    let trace = rollout(&mdp, &solution.policy, &MdpState::initial(&cfg), 10_000).unwrap();
    let average = *trace.running_average.last().unwrap();
    let drift = (average - solution.rho_star).abs() / solution.rho_star;
    assert!(drift <= 0.01, "rollout average {average} vs rho* {}", solution.rho_star);

    let burn_in = default_burn_in(&cfg.models);
    let mc = McConfig { horizon: burn_in + 100, runs: 5000, seed: 0x00C0_FFEE, burn_in };
    let summary = monte_carlo_validate(
        &cfg.models,
        &steady,
        &mdp,
        &solution.policy,
        &MdpState::initial(&cfg),
        &mc,
    )
    .unwrap();
    assert!(
        summary.within_three_se,
        "max z {} over {} runs",
        summary.max_z,
        summary.runs
    );
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 300.0, "took {elapsed:?}");
    println!(
        "criterion 6 (10k rollout within 1% of rho*, {}-run MC within 3 SE, max z {:.2}, <5min): PASS ({elapsed:?})",
        summary.runs, summary.max_z
    );
}

#[test]
fn criterion_7_identical_sensor_instance() {
    let cfg = presets::identical_pair_config(10);
    let (_, mdp) = build_instance(&cfg).unwrap();
    let (solution, rho_karp, cycle) = solve_cross_checked(&mdp);

    assert!(
        (solution.rho_star - 8.0448).abs() <= 1e-3,
        "rho* {}",
        solution.rho_star
    );
    assert!((rho_karp - 8.0448).abs() <= 1e-3, "oracle {rho_karp}");

    // Both routes exhibit the alternating two-cycle.
    assert_eq!(cycle.len(), 2, "oracle cycle {cycle:?}");
    let eval = evaluate_policy(&mdp, &solution.policy).unwrap();
    assert_eq!(eval.recurrent.len(), 2, "policy cycle {:?}", eval.recurrent);
    let actions: Vec<_> = eval
        .recurrent
        .iter()
        .map(|&s| mdp.actions[solution.policy[s] as usize].clone())
        .collect();
    assert!(
        actions == [vec![0], vec![1]] || actions == [vec![1], vec![0]],
        "cycle actions {actions:?}"
    );
    println!(
        "criterion 7 (identical sensors: rho* = {:.4} ~ 8.0448, alternating cycle, oracle-confirmed): PASS",
        solution.rho_star
    );
}

#[test]
fn criterion_8_truncation_audit() {
    // Head-room grid: the optimal recurrent class stays clear of the clamp.
    let roomy = presets::two_sensor_config(30);
    let (_, mdp) = build_instance(&roomy).unwrap();
    let (solution, _, _) = solve_cross_checked(&mdp);
    let eval = evaluate_policy(&mdp, &solution.policy).expect("audit passes at tau_max 30");
    assert!(!eval.recurrent.is_empty());

    // Tight grid: every completion of the long packet lands on the clamp,
    // so the audit must fail with the dedicated error.
    let tight = presets::two_sensor_config(4);
    let (_, mdp) = build_instance(&tight).unwrap();
    let opts = SolverOptions::default();
    let solution = relative_value_iteration(&mdp, &opts).unwrap();
    let err = evaluate_policy(&mdp, &solution.policy).unwrap_err();
    assert!(matches!(err, Error::TruncationTooTight { .. }), "{err:?}");
    println!(
        "criterion 8 (truncation audit: tau_max=30 clean, tau_max=4 rejected): PASS"
    );
}
