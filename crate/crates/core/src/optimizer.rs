//! End-to-end solution of the rate-constrained problem: price search,
//! adjacent threshold pair and per-slot mixing weight.

use serde::{Deserialize, Serialize};

use crate::error::{AoiiError, Result};
use crate::lagrangian::{g_wait, LagrangianEvaluator, SeriesConfig, Threshold, DEFAULT_N0_CEILING};
use crate::model::{ChannelModel, Penalty, SourceModel};
use crate::rate::{mixed_chain_analysis, RateConfig, ThresholdRates};

/// Numerical settings for [`solve_cmdp`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub series: SeriesConfig,
    pub rate: RateConfig,
    /// Width of the final price bracket.
    pub lambda_tol: f64,
    /// Maximum number of doublings of the upper price bound.
    pub max_doublings: u32,
    pub n0_ceiling: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            series: SeriesConfig::default(),
            rate: RateConfig::default(),
            lambda_tol: 1e-6,
            max_doublings: 64,
            n0_ceiling: DEFAULT_N0_CEILING,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        self.series.validate()?;
        self.rate.validate()?;
        if !(self.lambda_tol > 0.0 && self.lambda_tol.is_finite()) {
            return Err(AoiiError::invalid("solver.lambda_tol", "must be a positive finite number"));
        }
        if self.n0_ceiling == 0 {
            return Err(AoiiError::invalid("solver.n0_ceiling", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    NeverTransmit,
    PureThreshold,
    Mixed,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::NeverTransmit => "never-transmit",
            Regime::PureThreshold => "pure-threshold",
            Regime::Mixed => "mixed",
        }
    }
}

/// One evaluation of the price search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub lambda: f64,
    pub n0: u64,
    pub rate: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Number of sigma terms kept.
    pub sigma_depth: usize,
    /// Number of `m(h, r)` layers kept.
    pub m_depth: usize,
    pub doublings: u32,
    pub bisections: u32,
    pub threshold_evaluations: u32,
    /// Stationary mass left out of the reported rate and AoII.
    pub truncation_mass: f64,
    pub trace: Vec<TracePoint>,
    pub notes: Vec<String>,
}

impl Diagnostics {
    /// True when, ordered by price, thresholds never decrease and rates never
    /// increase.
    pub fn trace_is_monotone(&self) -> bool {
        let mut points = self.trace.clone();
        points.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
        points
            .windows(2)
            .all(|w| w[1].n0 >= w[0].n0 && w[1].rate <= w[0].rate)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmdpSolution {
    pub regime: Regime,
    pub budget: f64,
    pub lambda_star: f64,
    /// Threshold used with probability `rho_high`; absent when never transmitting.
    pub n_high: Option<u64>,
    /// Mixed regime only.
    pub n_low: Option<u64>,
    pub rho_high: f64,
    pub rate_high: f64,
    pub rate_low: Option<f64>,
    /// Average AoII of the pure `n_high` policy.
    pub aoii_high: f64,
    /// Average AoII of the pure `n_low` policy.
    pub aoii_low: Option<f64>,
    pub predicted_rate: f64,
    pub predicted_aoii: f64,
    pub diagnostics: Diagnostics,
}

/// Rate of the convex combination of two threshold policies.
pub fn mixture_rate(rho_high: f64, rate_high: f64, rate_low: f64) -> f64 {
    rho_high * rate_high + (1.0 - rho_high) * rate_low
}

/// Weight `rho` solving `mixture_rate(rho, rate_high, rate_low) = budget`.
pub fn linear_mixing_weight(budget: f64, rate_high: f64, rate_low: f64) -> f64 {
    ((rate_low - budget) / (rate_low - rate_high)).clamp(0.0, 1.0)
}

/// Weight on the larger threshold that gives the per-slot randomized policy a
/// long-run rate of exactly `budget`.
///
/// Randomizing the action in the single state `(n_low, 0)` changes the
/// expected number of slots and transmissions per regeneration cycle
/// affinely, so the rate is a ratio of affine functions of the weight. Each
/// pure policy contributes with cycle length `1 / q00`.
pub fn exact_mixing_weight(budget: f64, rate_high: f64, q00_high: f64, rate_low: f64, q00_low: f64) -> f64 {
    let from_low = (rate_low - budget) / q00_low;
    let from_high = (budget - rate_high) / q00_high;
    if from_low + from_high <= 0.0 {
        return 1.0;
    }
    (from_low / (from_low + from_high)).clamp(0.0, 1.0)
}

struct PriceSearch<'a> {
    evaluator: LagrangianEvaluator,
    rates: &'a ThresholdRates,
    trace: Vec<TracePoint>,
    evaluations: u32,
}

impl PriceSearch<'_> {
    fn threshold(&mut self, lambda: f64) -> Result<(u64, f64)> {
        let solution = self.evaluator.optimal_threshold(lambda)?;
        self.evaluations += solution.evaluations;
        let n0 = match solution.n0_star {
            Threshold::At(n0) => n0,
            Threshold::Never => unreachable!("the waiting regime is handled before the search"),
        };
        let rate = self.rates.rate(n0);
        self.trace.push(TracePoint { lambda, n0, rate });
        Ok((n0, rate))
    }
}

/// Solves the rate-constrained AoII problem for budget `budget`.
pub fn solve_cmdp(
    budget: f64,
    source: &SourceModel,
    channel: &ChannelModel,
    penalty: &Penalty,
    cfg: &SolverConfig,
) -> Result<CmdpSolution> {
    if !(budget > 0.0 && budget <= 1.0) {
        return Err(AoiiError::invalid("budget.rate", format!("{budget} is not in (0, 1]")));
    }
    cfg.validate()?;

    if source.waiting_is_optimal() {
        let g = g_wait(source, penalty, &cfg.series)?;
        return Ok(CmdpSolution {
            regime: Regime::NeverTransmit,
            budget,
            lambda_star: 0.0,
            n_high: None,
            n_low: None,
            rho_high: 1.0,
            rate_high: 0.0,
            rate_low: None,
            aoii_high: g,
            aoii_low: None,
            predicted_rate: 0.0,
            predicted_aoii: g,
            diagnostics: Diagnostics::default(),
        });
    }

    let evaluator = LagrangianEvaluator::new(source, channel, penalty, &cfg.series)?.with_n0_ceiling(cfg.n0_ceiling);
    let rates = ThresholdRates::build(source, channel, &cfg.rate)?;
    let mut search = PriceSearch {
        evaluator,
        rates: &rates,
        trace: Vec::new(),
        evaluations: 0,
    };
    let mut diagnostics = Diagnostics {
        sigma_depth: search.evaluator.series().depth(),
        m_depth: rates.table().h_max(),
        ..Diagnostics::default()
    };

    let (n_free, rate_free) = search.threshold(0.0)?;
    if rate_free <= budget {
        let g = search.evaluator.g(n_free, 0.0)?;
        diagnostics.threshold_evaluations = search.evaluations;
        diagnostics.truncation_mass = rates.analyze(n_free)?.truncation_mass;
        diagnostics.trace = search.trace;
        return Ok(CmdpSolution {
            regime: Regime::PureThreshold,
            budget,
            lambda_star: 0.0,
            n_high: Some(n_free),
            n_low: None,
            rho_high: 1.0,
            rate_high: rate_free,
            rate_low: None,
            aoii_high: g,
            aoii_low: None,
            predicted_rate: rate_free,
            predicted_aoii: g,
            diagnostics,
        });
    }

    // Rates only change where the optimal threshold jumps, so the search
    // keeps the infeasible price in `lo` and the feasible one in `hi`.
    let mut lo = 0.0;
    let mut hi = 1.0;
    let (mut n_hi, mut rate_hi) = search.threshold(hi)?;
    while rate_hi > budget {
        if diagnostics.doublings >= cfg.max_doublings {
            return Err(AoiiError::LambdaBracket {
                doublings: diagnostics.doublings,
            });
        }
        diagnostics.doublings += 1;
        lo = hi;
        hi *= 2.0;
        (n_hi, rate_hi) = search.threshold(hi)?;
    }
    while hi - lo > cfg.lambda_tol {
        let mid = 0.5 * (lo + hi);
        diagnostics.bisections += 1;
        let (n_mid, rate_mid) = search.threshold(mid)?;
        if rate_mid <= budget {
            hi = mid;
            n_hi = n_mid;
            rate_hi = rate_mid;
        } else {
            lo = mid;
        }
    }

    let mut n_high = n_hi;
    let mut rate_high = rate_hi;
    while n_high > 1 && rates.rate(n_high - 1) <= budget {
        n_high -= 1;
        rate_high = rates.rate(n_high);
        diagnostics
            .notes
            .push(format!("threshold {} is already feasible; moved the pair down", n_high));
    }
    diagnostics.threshold_evaluations = search.evaluations;
    diagnostics.trace = search.trace;

    let mut evaluator = search.evaluator;
    let aoii_high = evaluator.g(n_high, 0.0)?;
    if n_high == 1 {
        diagnostics.notes.push("threshold 1 meets the budget on its own".into());
        diagnostics.truncation_mass = rates.analyze(1)?.truncation_mass;
        return Ok(CmdpSolution {
            regime: Regime::PureThreshold,
            budget,
            lambda_star: hi,
            n_high: Some(1),
            n_low: None,
            rho_high: 1.0,
            rate_high,
            rate_low: None,
            aoii_high,
            aoii_low: None,
            predicted_rate: rate_high,
            predicted_aoii: aoii_high,
            diagnostics,
        });
    }

    let n_low = n_high - 1;
    let rate_low = rates.rate(n_low);
    let aoii_low = evaluator.g(n_low, 0.0)?;
    let rho_high = exact_mixing_weight(budget, rate_high, rates.q00(n_high), rate_low, rates.q00(n_low));
    let mixed = mixed_chain_analysis(n_low, rho_high, source, channel, penalty, &cfg.rate)?;
    diagnostics.truncation_mass = mixed.truncation_mass;
    Ok(CmdpSolution {
        regime: Regime::Mixed,
        budget,
        lambda_star: hi,
        n_high: Some(n_high),
        n_low: Some(n_low),
        rho_high,
        rate_high,
        rate_low: Some(rate_low),
        aoii_high,
        aoii_low: Some(aoii_low),
        predicted_rate: mixed.rate,
        predicted_aoii: mixed.aoii,
        diagnostics,
    })
}
