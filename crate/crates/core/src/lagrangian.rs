//! Closed-form evaluation of the Lagrangian MDP under a threshold policy.
//!
//! Once the AoII reaches the threshold `n0` the optimal policy transmits until
//! the monitor is correct again. While transmitting, the AoII grows by one per
//! slot and the transmission count evolves on the sub-stochastic matrix
//!
//! ```text
//!     row r:  P[r][0] = gamma2(r),  P[r][r+1] = gamma1(r)
//! ```
//!
//! so every quantity of interest reduces to the survival masses
//! `sigma_l = sum_i P^l[0][i]`. Those are produced by propagating the row
//! vector `e_0 P^l`, which has at most `l + 1` non-zero entries.

use serde::{Deserialize, Serialize};

use crate::error::{AoiiError, Result};
use crate::model::{gamma, validate_boundedness, ChannelModel, GammaPair, Penalty, PenaltyKind, SourceModel};

/// Default ceiling for the threshold search.
pub const DEFAULT_N0_CEILING: u64 = 100_000;

/// Threshold-condition margins within this (scaled) distance of zero count as
/// "not yet satisfied".
const TIE_TOL: f64 = 1e-12;

/// Truncation rule for the infinite series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesConfig {
    /// Stop once `sigma_l` drops below this.
    pub epsilon: f64,
    /// ... and the penalty-weighted term drops below this.
    pub weighted_epsilon: f64,
    /// Hard ceiling on the number of terms.
    pub l_cap: usize,
}

impl Default for SeriesConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-12,
            weighted_epsilon: 1e-10,
            l_cap: 1_000_000,
        }
    }
}

impl SeriesConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(AoiiError::invalid("solver.epsilon", "must be positive"));
        }
        if !(self.weighted_epsilon > 0.0) {
            return Err(AoiiError::invalid("solver.weighted_epsilon", "must be positive"));
        }
        if self.l_cap == 0 {
            return Err(AoiiError::invalid("solver.l_cap", "must be at least 1"));
        }
        Ok(())
    }
}

/// Optimal threshold `n*_{0,lambda}`, or the never-transmit policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Threshold {
    Never,
    At(u64),
}

impl Threshold {
    pub fn value(self) -> Option<u64> {
        match self {
            Threshold::Never => None,
            Threshold::At(n) => Some(n),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagrangianSolution {
    pub lambda: f64,
    pub n0_star: Threshold,
    /// Optimal average Lagrangian cost.
    pub g: f64,
    /// `sum_l sigma_l`
    pub sigma_sum: f64,
    /// `sum_l f(n0 + l) sigma_l` at the returned threshold (0 when never transmitting).
    pub weighted_sum: f64,
    pub truncation_depth: usize,
    /// Number of threshold-condition evaluations the search made.
    pub evaluations: u32,
}

/// Survival masses `sigma_0, sigma_1, ...` of the transmission sub-kernel,
/// extensible on demand.
#[derive(Debug, Clone)]
pub struct SigmaSeries {
    source: SourceModel,
    channel: ChannelModel,
    gammas: Vec<GammaPair>,
    sigma: Vec<f64>,
    /// `e_0 P^L` for `L = sigma.len() - 1`, trailing zeros trimmed.
    mass: Vec<f64>,
    l_cap: usize,
}

impl SigmaSeries {
    fn start(source: &SourceModel, channel: &ChannelModel, l_cap: usize) -> Self {
        Self {
            source: *source,
            channel: *channel,
            gammas: Vec::new(),
            sigma: vec![1.0],
            mass: vec![1.0],
            l_cap,
        }
    }

    fn gamma_at(&mut self, r: usize) -> GammaPair {
        while self.gammas.len() <= r {
            let g = gamma(&self.source, &self.channel, self.gammas.len() as u64);
            self.gammas.push(g);
        }
        self.gammas[r]
    }

    fn step(&mut self) -> Result<()> {
        if self.sigma.len() > self.l_cap {
            return Err(AoiiError::TruncationFailure {
                series: "sigma series",
                depth: self.l_cap,
            });
        }
        let mut next = vec![0.0; self.mass.len() + 1];
        for r in 0..self.mass.len() {
            let m = self.mass[r];
            if m == 0.0 {
                continue;
            }
            let g = self.gamma_at(r);
            next[0] += m * g.gamma2;
            next[r + 1] = m * g.gamma1;
        }
        while next.len() > 1 && next[next.len() - 1] == 0.0 {
            next.pop();
        }
        self.sigma.push(next.iter().sum());
        self.mass = next;
        Ok(())
    }

    /// `sigma_0..=sigma_L`.
    pub fn values(&self) -> &[f64] {
        &self.sigma
    }

    /// Index `L` of the last computed term.
    pub fn depth(&self) -> usize {
        self.sigma.len() - 1
    }

    pub fn sum(&self) -> f64 {
        self.sigma.iter().sum()
    }

    /// `sum_l weight(l) sigma_l`, extending the series until both the plain
    /// and the weighted term of the last index are below their cutoffs.
    pub fn weighted_sum(&mut self, weight: impl Fn(u64) -> f64, cfg: &SeriesConfig) -> Result<f64> {
        loop {
            let last = self.depth();
            let tail = self.sigma[last];
            if tail < cfg.epsilon && weight(last as u64) * tail < cfg.weighted_epsilon {
                break;
            }
            self.step()?;
        }
        Ok(self
            .sigma
            .iter()
            .enumerate()
            .map(|(l, s)| weight(l as u64) * s)
            .sum())
    }
}

/// Computes `sigma_0..=sigma_L`, stopping at the first `L` with `sigma_L < epsilon`.
pub fn sigma_series(source: &SourceModel, channel: &ChannelModel, cfg: &SeriesConfig) -> Result<SigmaSeries> {
    cfg.validate()?;
    let mut series = SigmaSeries::start(source, channel, cfg.l_cap);
    while series.sigma[series.depth()] >= cfg.epsilon {
        series.step()?;
    }
    Ok(series)
}

/// Evaluates Table-I style quantities for many `(n0, lambda)` pairs while
/// sharing one sigma series and the finite waiting-phase sums.
#[derive(Debug, Clone)]
pub struct LagrangianEvaluator {
    source: SourceModel,
    channel: ChannelModel,
    penalty: Penalty,
    cfg: SeriesConfig,
    series: SigmaSeries,
    /// `wait_time[k] = sum_{i<k} (1-mu)^i`
    wait_time: Vec<f64>,
    /// `wait_cost[k] = sum_{i<k} (1-mu)^i f(i+1)`
    wait_cost: Vec<f64>,
    n0_ceiling: u64,
}

impl LagrangianEvaluator {
    /// Fails with [`AoiiError::Unbounded`] when the boundedness condition
    /// cannot be certified.
    pub fn new(source: &SourceModel, channel: &ChannelModel, penalty: &Penalty, cfg: &SeriesConfig) -> Result<Self> {
        cfg.validate()?;
        if !validate_boundedness(source, channel, penalty, cfg.epsilon, cfg.l_cap) {
            return Err(AoiiError::Unbounded);
        }
        Ok(Self {
            source: *source,
            channel: *channel,
            penalty: penalty.clone(),
            cfg: *cfg,
            series: sigma_series(source, channel, cfg)?,
            wait_time: vec![0.0],
            wait_cost: vec![0.0],
            n0_ceiling: DEFAULT_N0_CEILING,
        })
    }

    pub fn with_n0_ceiling(mut self, ceiling: u64) -> Self {
        self.n0_ceiling = ceiling.max(1);
        self
    }

    pub fn series(&self) -> &SigmaSeries {
        &self.series
    }

    pub fn channel(&self) -> &ChannelModel {
        &self.channel
    }

    pub fn source(&self) -> &SourceModel {
        &self.source
    }

    fn extend_wait_sums(&mut self, k: usize) {
        let keep = 1.0 - self.source.mu();
        while self.wait_time.len() <= k {
            let i = self.wait_time.len() - 1;
            let w = keep.powi(i as i32);
            let t = self.wait_time[i] + w;
            let c = self.wait_cost[i] + w * self.penalty.eval(i as u64 + 1);
            self.wait_time.push(t);
            self.wait_cost.push(c);
        }
    }

    /// `sum_l f(delta + l) sigma_l`
    fn penalty_weighted(&mut self, delta: u64) -> Result<f64> {
        let penalty = &self.penalty;
        self.series
            .weighted_sum(|l| penalty.eval(delta + l), &self.cfg)
    }

    /// Average Lagrangian cost `g_{n0}` of the threshold-`n0` policy.
    pub fn g(&mut self, n0: u64, lambda: f64) -> Result<f64> {
        check_threshold(n0)?;
        let k = (n0 - 1) as usize;
        self.extend_wait_sums(k);
        let weighted = self.penalty_weighted(n0)?;
        let sigma_sum = self.series.sum();
        let alpha = self.source.alpha();
        let reach = (1.0 - self.source.mu()).powf((n0 - 1) as f64);
        let at_zero = 1.0 / (1.0 - alpha);
        let numerator = self.penalty.eval(0) * at_zero + self.wait_cost[k] + reach * (weighted + lambda * sigma_sum);
        let denominator = at_zero + self.wait_time[k] + reach * sigma_sum;
        Ok(numerator / denominator)
    }

    /// Relative value `V(delta, 0)` of the threshold-`n0` policy whose
    /// average cost is `g`.
    pub fn value_at(&mut self, delta: u64, n0: u64, lambda: f64, g: f64) -> Result<f64> {
        check_threshold(n0)?;
        if delta == 0 {
            return Err(AoiiError::invalid("delta", "value_at needs delta >= 1"));
        }
        if delta >= n0 {
            let weighted = self.penalty_weighted(delta)?;
            return Ok(weighted + (lambda - g) * self.series.sum());
        }
        let keep = 1.0 - self.source.mu();
        let at_threshold = self.value_at(n0, n0, lambda, g)?;
        let mut discount = 1.0;
        let mut acc = 0.0;
        for i in 0..(n0 - delta) {
            acc += discount * (self.penalty.eval(delta + i) - g);
            discount *= keep;
        }
        Ok(acc + discount * at_threshold)
    }

    /// Left-hand side of the threshold condition,
    /// `(1-mu) V(n0+1,0) - V(n0,0) + f(n0) - g_{n0}`.
    pub fn threshold_margin(&mut self, n0: u64, lambda: f64) -> Result<f64> {
        let g = self.g(n0, lambda)?;
        let upper = self.value_at(n0 + 1, n0, lambda, g)?;
        let at = self.value_at(n0, n0, lambda, g)?;
        Ok((1.0 - self.source.mu()) * upper - at + self.penalty.eval(n0) - g)
    }

    /// Strict form of the threshold condition with the tie rule applied.
    pub fn threshold_holds(&mut self, n0: u64, lambda: f64) -> Result<bool> {
        let margin = self.threshold_margin(n0, lambda)?;
        let g = self.g(n0, lambda)?;
        let scale = 1.0 + g.abs() + self.penalty.eval(n0).abs();
        Ok(margin > TIE_TOL * scale)
    }

    /// Least `n0 >= 1` satisfying the threshold condition, found by
    /// exponential bracketing followed by bisection.
    pub fn optimal_threshold(&mut self, lambda: f64) -> Result<LagrangianSolution> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(AoiiError::invalid("lambda", format!("{lambda} is not a finite value >= 0")));
        }
        if self.source.waiting_is_optimal() {
            let g = g_wait(&self.source, &self.penalty, &self.cfg)?;
            return Ok(LagrangianSolution {
                lambda,
                n0_star: Threshold::Never,
                g,
                sigma_sum: self.series.sum(),
                weighted_sum: 0.0,
                truncation_depth: self.series.depth(),
                evaluations: 0,
            });
        }

        let mut evaluations = 0u32;
        let mut below = 0u64;
        let mut above = 1u64;
        loop {
            evaluations += 1;
            if self.threshold_holds(above, lambda)? {
                break;
            }
            below = above;
            if above >= self.n0_ceiling {
                return Err(AoiiError::ThresholdNotFound {
                    ceiling: self.n0_ceiling,
                });
            }
            above = (above * 2).min(self.n0_ceiling);
        }
        while above - below > 1 {
            let mid = below + (above - below) / 2;
            evaluations += 1;
            if self.threshold_holds(mid, lambda)? {
                above = mid;
            } else {
                below = mid;
            }
        }

        let g = self.g(above, lambda)?;
        let weighted_sum = self.penalty_weighted(above)?;
        Ok(LagrangianSolution {
            lambda,
            n0_star: Threshold::At(above),
            g,
            sigma_sum: self.series.sum(),
            weighted_sum,
            truncation_depth: self.series.depth(),
            evaluations,
        })
    }
}

fn check_threshold(n0: u64) -> Result<()> {
    if n0 == 0 {
        Err(AoiiError::invalid("n0", "thresholds start at 1"))
    } else {
        Ok(())
    }
}

/// Table-I average cost of the threshold-`n0` policy.
pub fn g_for_threshold(
    n0: u64,
    lambda: f64,
    source: &SourceModel,
    channel: &ChannelModel,
    penalty: &Penalty,
    cfg: &SeriesConfig,
) -> Result<f64> {
    LagrangianEvaluator::new(source, channel, penalty, cfg)?.g(n0, lambda)
}

/// `V(delta, 0)` of the threshold-`n0` policy with average cost `g`.
#[allow(clippy::too_many_arguments)]
pub fn value_at(
    delta: u64,
    n0: u64,
    lambda: f64,
    g: f64,
    source: &SourceModel,
    channel: &ChannelModel,
    penalty: &Penalty,
    cfg: &SeriesConfig,
) -> Result<f64> {
    LagrangianEvaluator::new(source, channel, penalty, cfg)?.value_at(delta, n0, lambda, g)
}

/// Lagrange-optimal threshold for price `lambda`.
pub fn optimal_threshold(
    lambda: f64,
    source: &SourceModel,
    channel: &ChannelModel,
    penalty: &Penalty,
    cfg: &SeriesConfig,
) -> Result<LagrangianSolution> {
    LagrangianEvaluator::new(source, channel, penalty, cfg)?.optimal_threshold(lambda)
}

/// Average AoII of the never-transmit policy.
///
/// Under waiting the AoII is a renewal process: from 0 it moves to 1 with
/// probability `1 - alpha` and from any `delta > 0` it returns to 0 with
/// probability `mu`. Solving the Bellman equation of that chain gives
///
/// ```text
///   g_wait = mu (f(0) + (1-alpha) S) / (mu + 1 - alpha),   S = sum_{i>=0} (1-mu)^i f(i+1)
/// ```
///
/// which is also the `n0 -> infinity` limit of [`g_for_threshold`].
pub fn g_wait(source: &SourceModel, penalty: &Penalty, cfg: &SeriesConfig) -> Result<f64> {
    let alpha = source.alpha();
    let mu = source.mu();
    let keep = 1.0 - mu;
    let series = match penalty.kind() {
        PenaltyKind::Linear => 1.0 / (mu * mu),
        _ => {
            let mut sum = 0.0;
            let mut discount = 1.0;
            let mut converged = false;
            for i in 0..cfg.l_cap as u64 {
                let term = discount * penalty.eval(i + 1);
                sum += term;
                if !sum.is_finite() {
                    break;
                }
                if term < cfg.weighted_epsilon && discount < cfg.epsilon {
                    converged = true;
                    break;
                }
                discount *= keep;
            }
            if !converged {
                return Err(AoiiError::Unbounded);
            }
            sum
        }
    };
    Ok(mu * (penalty.eval(0) + (1.0 - alpha) * series) / (mu + 1.0 - alpha))
}
