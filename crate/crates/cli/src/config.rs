//! JSON run configuration: parsing, field-path validation, and conversion
//! into the core model types.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use sched_mdp_core::estimation::ProcessModel;
use sched_mdp_core::mdp::SystemConfig;
use sched_mdp_core::solver::{SolverMode, SolverOptions};

use crate::CliError;

/// Top-level configuration document.
///
/// The `solver` and `simulation` blocks are optional; omitted fields fall
/// back to the library defaults so a minimal config only describes the
/// system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemSpec,
    #[serde(default, skip_serializing_if = "SolverSpec::is_empty")]
    pub solver: SolverSpec,
    #[serde(default, skip_serializing_if = "SimulationSpec::is_empty")]
    pub simulation: SimulationSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub models: Vec<ModelSpec>,
    pub m: usize,
    pub tau_max: u32,
}

/// One sensor's process model, matrices as row-major nested arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub a: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    /// Initial filter covariance; defaults to `q` when omitted (the
    /// steady state does not depend on it).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pi0: Option<Vec<Vec<f64>>>,
    pub d: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<ModeSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub damping: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeSpec {
    RelativeVi,
    DiscountedVi,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    /// Rollout length for `simulate` and sampling horizon for
    /// `validate-mc`; the commands use different defaults when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<usize>,
}

impl SolverSpec {
    fn is_empty(&self) -> bool {
        *self == Self::default()
    }
}

impl SimulationSpec {
    fn is_empty(&self) -> bool {
        *self == Self::default()
    }
}

pub const DEFAULT_ROLLOUT_HORIZON: usize = 10_000;
pub const DEFAULT_MC_RUNS: usize = 5_000;
pub const DEFAULT_MC_SEED: u64 = 0x00C0_FFEE;

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text)
            .map_err(|e| CliError::validation(format!("config: {e}")))
    }

    /// Builds the validated system description, applying a `--tau-max`
    /// override if present. Errors carry the offending field path.
    pub fn system_config(&self, tau_max: Option<u32>) -> Result<SystemConfig, CliError> {
        let mut models = Vec::with_capacity(self.system.models.len());
        for (i, spec) in self.system.models.iter().enumerate() {
            models.push(spec.to_model(i)?);
        }
        SystemConfig::new(models, self.system.m, tau_max.unwrap_or(self.system.tau_max))
            .map_err(|e| CliError::at_field("system", e))
    }

    /// Solver mode plus options, applying an `--alpha` override.
    pub fn solver_options(
        &self,
        alpha: Option<f64>,
    ) -> Result<(SolverMode, SolverOptions), CliError> {
        let spec = &self.solver;
        let mut opts = SolverOptions::default();
        let mode = match spec.mode.unwrap_or(ModeSpec::RelativeVi) {
            ModeSpec::RelativeVi => SolverMode::RelativeVi,
            ModeSpec::DiscountedVi => SolverMode::DiscountedVi,
        };
        opts.mode = mode;
        if let Some(a) = spec.alpha {
            opts.alpha = a;
        }
        if let Some(a) = alpha {
            opts.alpha = a;
        }
        if spec.span_tol.is_some() {
            opts.span_tol = spec.span_tol;
        }
        if let Some(it) = spec.max_iters {
            opts.max_iters = it;
        }
        if let Some(l) = spec.damping {
            opts.damping = l;
        }
        opts.validate().map_err(|e| CliError::at_field("solver", e))?;
        Ok((mode, opts))
    }

    pub fn rollout_horizon(&self) -> usize {
        self.simulation.horizon.unwrap_or(DEFAULT_ROLLOUT_HORIZON)
    }
}

impl ModelSpec {
    fn to_model(&self, index: usize) -> Result<ProcessModel, CliError> {
        let path = |field: &str| format!("system.models[{index}].{field}");
        let a = to_matrix(&self.a, &path("a"))?;
        let c = to_matrix(&self.c, &path("c"))?;
        let q = to_matrix(&self.q, &path("q"))?;
        let r = to_matrix(&self.r, &path("r"))?;
        let pi0 = match &self.pi0 {
            Some(rows) => to_matrix(rows, &path("pi0"))?,
            None => q.clone(),
        };
        ProcessModel::new(a, c, q, r, pi0, self.d)
            .map_err(|e| CliError::at_field(&format!("system.models[{index}]"), e))
    }
}

fn to_matrix(rows: &[Vec<f64>], path: &str) -> Result<DMatrix<f64>, CliError> {
    if rows.is_empty() || rows[0].is_empty() {
        return Err(CliError::validation(format!("{path}: matrix is empty")));
    }
    let ncols = rows[0].len();
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(CliError::validation(format!(
            "{path}: rows have unequal lengths"
        )));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "system": {
            "models": [
                {"a": [[1.4]], "c": [[1.0]], "q": [[1.0]], "r": [[1.0]], "d": 1},
                {"a": [[1.3]], "c": [[1.0]], "q": [[1.0]], "r": [[1.0]], "d": 2}
            ],
            "m": 1,
            "tau_max": 8
        }
    }"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = RunConfig::parse(MINIMAL).unwrap();
        let sys = cfg.system_config(None).unwrap();
        assert_eq!(sys.models.len(), 2);
        assert_eq!(sys.tau_max, 8);
        let (mode, opts) = cfg.solver_options(None).unwrap();
        assert_eq!(mode, SolverMode::RelativeVi);
        assert_eq!(opts.damping, 0.5);
        assert_eq!(cfg.rollout_horizon(), DEFAULT_ROLLOUT_HORIZON);
    }

    #[test]
    fn round_trips_through_serialization() {
        let cfg = RunConfig::parse(MINIMAL).unwrap();
        let echoed = serde_json::to_string(&cfg).unwrap();
        assert_eq!(RunConfig::parse(&echoed).unwrap(), cfg);
    }

    #[test]
    fn errors_name_the_offending_field() {
        let bad = MINIMAL.replace("\"r\": [[1.0]], \"d\": 1", "\"r\": [[0.0]], \"d\": 1");
        let cfg = RunConfig::parse(&bad).unwrap();
        let err = cfg.system_config(None).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("system.models[0]"), "{msg}");
        assert!(msg.contains('r'), "{msg}");
    }

    #[test]
    fn ragged_matrices_are_rejected() {
        let bad = MINIMAL.replace("[[1.4]]", "[[1.4], [0.0, 1.0]]");
        let cfg = RunConfig::parse(&bad).unwrap();
        let err = cfg.system_config(None).unwrap_err().to_string();
        assert!(err.contains("system.models[0].a"), "{err}");
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let bad = MINIMAL.replace("\"m\": 1", "\"m\": 1, \"bandwidth\": 2");
        assert!(RunConfig::parse(&bad).is_err());
    }

    #[test]
    fn overrides_win_over_config_values() {
        let cfg = RunConfig::parse(MINIMAL).unwrap();
        assert_eq!(cfg.system_config(Some(12)).unwrap().tau_max, 12);
        let (_, opts) = cfg.solver_options(Some(0.9)).unwrap();
        assert_eq!(opts.alpha, 0.9);
    }
}
