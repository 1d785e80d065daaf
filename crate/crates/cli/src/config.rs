//! Run configuration: TOML schema, defaults and conversion to core models.

use std::path::{Path, PathBuf};

use aoii_core::{
    ChannelModel, Combining, Penalty, Policy, RateConfig, RviConfig, SeriesConfig, SolverConfig, SourceModel,
};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub source: SourceSection,
    pub channel: ChannelSection,
    #[serde(default = "Penalty::linear")]
    pub penalty: Penalty,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<BudgetSection>,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<PolicySection>,
    #[serde(default)]
    pub validate: ValidateSection,
}

/// Source given by `alpha` and either `n_states` or `mu`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSection {
    pub alpha: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_states: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
}

/// `r_max` as an integer or the string `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RMax {
    Finite(u32),
    Named(Unbounded),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Unbounded {
    Inf,
}

impl RMax {
    pub fn get(self) -> Option<u32> {
        match self {
            RMax::Finite(r) => Some(r),
            RMax::Named(Unbounded::Inf) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    pub p_e: f64,
    pub c: f64,
    pub r_max: RMax,
    #[serde(default = "soft")]
    pub combining: Combining,
}

fn soft() -> Combining {
    Combining::Soft
}

/// A single budget, a grid of budgets, or both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub epsilon: f64,
    pub weighted_epsilon: f64,
    pub l_cap: usize,
    pub lambda_tol: f64,
    pub tail_tol: f64,
    pub h_ceiling: usize,
    pub n0_ceiling: u64,
    pub max_doublings: u32,
}

impl Default for SolverSection {
    fn default() -> Self {
        let s = SolverConfig::default();
        Self {
            epsilon: s.series.epsilon,
            weighted_epsilon: s.series.weighted_epsilon,
            l_cap: s.series.l_cap,
            lambda_tol: s.lambda_tol,
            tail_tol: s.rate.tail_tol,
            h_ceiling: s.rate.h_ceiling,
            n0_ceiling: s.n0_ceiling,
            max_doublings: s.max_doublings,
        }
    }
}

impl SolverSection {
    pub fn to_core(&self) -> SolverConfig {
        SolverConfig {
            series: SeriesConfig {
                epsilon: self.epsilon,
                weighted_epsilon: self.weighted_epsilon,
                l_cap: self.l_cap,
            },
            rate: RateConfig {
                tail_tol: self.tail_tol,
                h_ceiling: self.h_ceiling,
            },
            lambda_tol: self.lambda_tol,
            max_doublings: self.max_doublings,
            n0_ceiling: self.n0_ceiling,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub horizon: u64,
    pub seed: u64,
    pub n_reps: u32,
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            horizon: 100_000,
            seed: 0,
            n_reps: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Toml,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// Destination file; standard output when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Overrides the per-command default format.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<Format>,
}

/// Policy for `simulate`; `optimal` solves for the configured budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PolicySection {
    Optimal,
    NeverTransmit,
    Threshold { n0: u64 },
    Mixed { n_low: u64, rho_high: f64 },
    Periodic { rate: f64 },
}

impl PolicySection {
    /// The fixed policy, or `None` for `optimal`.
    pub fn fixed(self) -> Option<Policy> {
        match self {
            PolicySection::Optimal => None,
            PolicySection::NeverTransmit => Some(Policy::NeverTransmit),
            PolicySection::Threshold { n0 } => Some(Policy::Threshold { n0 }),
            PolicySection::Mixed { n_low, rho_high } => Some(Policy::Mixed { n_low, rho_high }),
            PolicySection::Periodic { rate } => Some(Policy::Periodic { rate }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValidateGrid {
    /// The built-in cross-oracle grid.
    Default,
    /// Only the source and channel of this configuration.
    Config,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidateSection {
    pub grid: ValidateGrid,
    pub lambdas: Vec<f64>,
    pub delta_max: u64,
    pub span_tol: f64,
    /// Relative tolerance for the analytic and RVI average costs.
    pub g_tol: f64,
    /// Test hook: added to `p_e` on the analytic side only.
    pub perturb_p_e: f64,
}

impl Default for ValidateSection {
    fn default() -> Self {
        Self {
            grid: ValidateGrid::Default,
            lambdas: vec![0.0, 1.0, 5.0, 20.0],
            delta_max: 400,
            span_tol: 1e-10,
            g_tol: 1e-4,
            perturb_p_e: 0.0,
        }
    }
}

impl ValidateSection {
    pub fn rvi(&self) -> RviConfig {
        RviConfig {
            delta_max: self.delta_max,
            span_tol: self.span_tol,
            ..RviConfig::default()
        }
    }
}

/// Validated core models built from a [`RunConfig`].
#[derive(Debug, Clone)]
pub struct Models {
    pub source: SourceModel,
    pub channel: ChannelModel,
    pub penalty: Penalty,
    pub solver: SolverConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Fully resolved configuration as TOML, defaults included.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn models(&self) -> Result<Models, CliError> {
        let s = &self.source;
        let source = match (s.n_states, s.mu) {
            (Some(n), None) => SourceModel::symmetric(s.alpha, n),
            (None, Some(mu)) => SourceModel::new(s.alpha, mu),
            (Some(n), Some(mu)) => SourceModel::with_states(s.alpha, mu, n),
            (None, None) => {
                return Err(CliError::Config("source: one of n_states or mu is required".into()));
            }
        }?;
        let c = &self.channel;
        let channel = ChannelModel::new(c.p_e, c.c, c.r_max.get(), c.combining)?;
        let solver = self.solver.to_core();
        solver.validate()?;
        if self.sim.horizon == 0 {
            return Err(CliError::Config("sim.horizon: must be at least 1".into()));
        }
        if self.sim.n_reps == 0 {
            return Err(CliError::Config("sim.n_reps: must be at least 1".into()));
        }
        Ok(Models {
            source,
            channel,
            penalty: self.penalty.clone(),
            solver,
        })
    }

    pub fn budget_rate(&self) -> Result<f64, CliError> {
        let rate = self
            .budget
            .as_ref()
            .and_then(|b| b.rate)
            .ok_or_else(|| CliError::Config("budget.rate: required by this command".into()))?;
        check_budget("budget.rate", rate)?;
        Ok(rate)
    }

    pub fn budget_grid(&self) -> Result<Vec<f64>, CliError> {
        let grid = self
            .budget
            .as_ref()
            .and_then(|b| b.grid.clone())
            .ok_or_else(|| CliError::Config("budget.grid: required by this command".into()))?;
        if grid.is_empty() {
            return Err(CliError::Config("budget.grid: must not be empty".into()));
        }
        for &r in &grid {
            check_budget("budget.grid", r)?;
        }
        if grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(CliError::Config("budget.grid: values must be strictly increasing".into()));
        }
        Ok(grid)
    }
}

fn check_budget(field: &str, rate: f64) -> Result<(), CliError> {
    if rate > 0.0 && rate <= 1.0 {
        Ok(())
    } else {
        Err(CliError::Config(format!("{field}: {rate} is not in (0, 1]")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[source]
alpha = 0.5
n_states = 16

[channel]
p_e = 0.8
c = 0.5
r_max = 2
"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = RunConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.penalty, Penalty::linear());
        assert_eq!(cfg.sim, SimSection::default());
        assert_eq!(cfg.channel.combining, Combining::Soft);
        let m = cfg.models().unwrap();
        assert!((m.source.mu() - 0.5 / 15.0).abs() < 1e-15);
        assert_eq!(m.channel.r_max(), Some(2));
    }

    #[test]
    fn resolved_config_round_trips() {
        let cfg = RunConfig::from_toml(MINIMAL).unwrap();
        let again = RunConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn unbounded_retransmissions() {
        let text = MINIMAL.replace("r_max = 2", "r_max = \"inf\"");
        let cfg = RunConfig::from_toml(&text).unwrap();
        assert_eq!(cfg.models().unwrap().channel.r_max(), None);
        assert!(RunConfig::from_toml(&MINIMAL.replace("r_max = 2", "r_max = \"many\"")).is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("{MINIMAL}\n[sim]\nhorizon = 10\nsteps = 4\n");
        assert!(RunConfig::from_toml(&text).is_err());
        let text = MINIMAL.replace("c = 0.5", "c = 0.5\ncolour = 1");
        assert!(RunConfig::from_toml(&text).is_err());
    }

    #[test]
    fn physical_parameters_are_required() {
        assert!(RunConfig::from_toml(&MINIMAL.replace("p_e = 0.8\n", "")).is_err());
        assert!(RunConfig::from_toml(&MINIMAL.replace("alpha = 0.5\n", "")).is_err());
    }

    #[test]
    fn constructor_errors_name_the_field() {
        let cfg = RunConfig::from_toml(&MINIMAL.replace("p_e = 0.8", "p_e = 1.8")).unwrap();
        let err = cfg.models().unwrap_err().to_string();
        assert!(err.contains("channel.p_e"), "{err}");
    }

    #[test]
    fn penalty_kinds() {
        let text = format!("{MINIMAL}\n[penalty]\nkind = \"power\"\nexponent = 2.0\n");
        assert_eq!(RunConfig::from_toml(&text).unwrap().penalty, Penalty::power(2.0).unwrap());
        let text = format!("{MINIMAL}\n[penalty]\nkind = \"power\"\nexponent = 0.5\n");
        assert!(RunConfig::from_toml(&text).is_err());
        let text = format!("{MINIMAL}\n[penalty]\nkind = \"table\"\nvalues = [0.0, 1.0, 3.0]\n");
        assert!(RunConfig::from_toml(&text).is_ok());
    }

    #[test]
    fn budget_grid_rules() {
        let grid = |g: &str| {
            RunConfig::from_toml(&format!("{MINIMAL}\n[budget]\ngrid = {g}\n"))
                .unwrap()
                .budget_grid()
        };
        assert_eq!(grid("[0.1, 0.2]").unwrap(), vec![0.1, 0.2]);
        assert!(grid("[]").is_err());
        assert!(grid("[0.2, 0.1]").is_err());
        assert!(grid("[0.0, 0.1]").is_err());
    }
}
