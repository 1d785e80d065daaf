//! Stationary analysis of threshold policies: achieved transmission rate,
//! stationary distribution and the chain of the one-state randomized mixture.

use serde::{Deserialize, Serialize};

use crate::error::{AoiiError, Result};
use crate::model::{gamma, ChannelModel, GammaPair, Penalty, SourceModel, State};

/// Truncation settings for the stationary computations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateConfig {
    /// Bound on the stationary mass left beyond the materialized support.
    pub tail_tol: f64,
    /// Maximum number of AoII layers past the threshold.
    pub h_ceiling: usize,
}

impl Default for RateConfig {
    fn default() -> Self {
        Self {
            tail_tol: 1e-12,
            h_ceiling: 1_000_000,
        }
    }
}

impl RateConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tail_tol > 0.0 && self.tail_tol < 1.0) {
            return Err(AoiiError::invalid("solver.tail_tol", "must be in (0, 1)"));
        }
        if self.h_ceiling == 0 {
            return Err(AoiiError::invalid("solver.h_ceiling", "must be at least 1"));
        }
        Ok(())
    }
}

/// Largest one-step survival probability of the transmission sub-kernel over
/// all `r`. Layer masses past the threshold shrink at least this fast.
fn survival_bound(source: &SourceModel, channel: &ChannelModel) -> f64 {
    gamma(source, channel, 0).survival().max(1.0 - source.alpha())
}

/// `Pi_{j<k} gamma1(j)` for increasing `k`, accumulated as a sum of logs and
/// cut at the first exact zero.
fn gamma1_prefix(gammas: &[GammaPair]) -> Vec<f64> {
    let mut out = vec![1.0];
    let mut log_acc = 0.0_f64;
    for g in gammas {
        if g.gamma1 <= 0.0 {
            break;
        }
        log_acc += g.gamma1.ln();
        let value = log_acc.exp();
        if value == 0.0 {
            break;
        }
        out.push(value);
    }
    out
}

/// `m(h, r)`: stationary mass of `(n0 + h, r)` relative to `(n0, 0)`.
#[derive(Debug, Clone)]
pub struct MTable {
    /// `m(h, 0)` for `h = 0..=h_max`
    m0: Vec<f64>,
    /// `prefix[k] = Pi_{j<k} gamma1(j)`; entries past the end are zero.
    prefix: Vec<f64>,
    gammas: Vec<GammaPair>,
    source: SourceModel,
    channel: ChannelModel,
}

impl MTable {
    fn new(source: &SourceModel, channel: &ChannelModel) -> Self {
        Self {
            m0: vec![1.0],
            prefix: vec![1.0],
            gammas: Vec::new(),
            source: *source,
            channel: *channel,
        }
    }

    fn ensure_gammas(&mut self, k: usize) {
        if self.gammas.len() >= k {
            return;
        }
        while self.gammas.len() < k {
            self.gammas.push(gamma(&self.source, &self.channel, self.gammas.len() as u64));
        }
        self.prefix = gamma1_prefix(&self.gammas);
    }

    /// Appends row `h = h_max + 1`.
    fn push_row(&mut self) {
        let h = self.m0.len();
        self.ensure_gammas(h);
        let terms = h.min(self.prefix.len());
        let mut acc = 0.0;
        for k in 0..terms {
            acc += self.gammas[k].gamma2 * self.prefix[k] * self.m0[h - k - 1];
        }
        self.m0.push(acc);
    }

    pub fn h_max(&self) -> usize {
        self.m0.len() - 1
    }

    pub fn get(&self, h: usize, r: usize) -> f64 {
        if r > h || h > self.h_max() {
            return 0.0;
        }
        self.prefix.get(r).map_or(0.0, |p| self.m0[h - r] * p)
    }

    /// `sum_r m(h, r)`
    pub fn layer(&self, h: usize) -> f64 {
        let top = h.min(self.prefix.len() - 1);
        (0..=top).map(|r| self.get(h, r)).sum()
    }

    /// Non-zero entries `m(h, 0..)` of row `h`.
    pub fn row(&self, h: usize) -> Vec<f64> {
        let top = h.min(self.prefix.len() - 1);
        (0..=top).map(|r| self.get(h, r)).collect()
    }
}

/// Builds `m(h, r)` for `0 <= r <= h <= h_max`.
pub fn m_table(source: &SourceModel, channel: &ChannelModel, h_max: usize) -> MTable {
    let mut table = MTable::new(source, channel);
    while table.h_max() < h_max {
        table.push_row();
    }
    table
}

/// Stationary distribution over a finite support, stored by AoII layer.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryDist {
    /// `layers[delta][r]`
    layers: Vec<Vec<f64>>,
}

impl StationaryDist {
    pub fn get(&self, delta: u64, r: u64) -> f64 {
        self.layers
            .get(delta as usize)
            .and_then(|layer| layer.get(r as usize))
            .copied()
            .unwrap_or(0.0)
    }

    /// Largest AoII with materialized mass.
    pub fn max_delta(&self) -> u64 {
        self.layers.len() as u64 - 1
    }

    pub fn total(&self) -> f64 {
        self.layers.iter().flatten().sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (State, f64)> + '_ {
        self.layers.iter().enumerate().flat_map(|(delta, layer)| {
            layer.iter().enumerate().filter_map(move |(r, p)| {
                State::new(delta as u64, r as u64).ok().map(|s| (s, *p))
            })
        })
    }

    /// `sum_{delta >= from} sum_r q(delta, r)`
    pub fn mass_from(&self, from: u64) -> f64 {
        self.layers.iter().skip(from as usize).flatten().sum()
    }

    /// Long-run average of `f(delta)`.
    pub fn expected_penalty(&self, penalty: &Penalty) -> f64 {
        self.layers
            .iter()
            .enumerate()
            .map(|(delta, layer)| penalty.eval(delta as u64) * layer.iter().sum::<f64>())
            .sum()
    }
}

/// Rate and stationary law of the pure threshold policy.
#[derive(Debug, Clone)]
pub struct RateAnalysis {
    pub n0: u64,
    pub q00: f64,
    /// Long-run fraction of slots with a transmission.
    pub rate: f64,
    pub stationary: StationaryDist,
    /// Bound on the mass beyond the materialized support.
    pub truncation_mass: f64,
    /// Number of post-threshold layers used.
    pub depth: usize,
}

impl RateAnalysis {
    /// Average AoII penalty of the policy.
    pub fn average_penalty(&self, penalty: &Penalty) -> f64 {
        self.stationary.expected_penalty(penalty)
    }
}

/// Transmission rates of threshold policies for any `n0`. The `m` table does
/// not depend on `n0`, so one truncated table serves every threshold.
#[derive(Debug, Clone)]
pub struct ThresholdRates {
    source: SourceModel,
    table: MTable,
    /// `sum_h sum_r m(h, r)` over the materialized rows.
    total: f64,
    /// Bound on the omitted part of `total`.
    tail: f64,
}

impl ThresholdRates {
    pub fn build(source: &SourceModel, channel: &ChannelModel, cfg: &RateConfig) -> Result<Self> {
        cfg.validate()?;
        let rho = survival_bound(source, channel);
        let scale = 1.0 - source.alpha();
        let mut table = MTable::new(source, channel);
        let mut total = 1.0;
        let mut layer = 1.0;
        // q00 and the (1-mu)^{n0-1} factor are both <= 1, so bounding the
        // unscaled tail bounds the stationary tail for every n0.
        while scale * layer * rho / (1.0 - rho) >= cfg.tail_tol {
            if table.h_max() >= cfg.h_ceiling {
                return Err(AoiiError::TruncationFailure {
                    series: "m(h, r) layers",
                    depth: cfg.h_ceiling,
                });
            }
            table.push_row();
            layer = table.layer(table.h_max());
            total += layer;
        }
        Ok(Self {
            source: *source,
            table,
            total,
            tail: layer * rho / (1.0 - rho),
        })
    }

    pub fn table(&self) -> &MTable {
        &self.table
    }

    /// `sum_h sum_{r<=h} m(h, r)`
    pub fn m_sum(&self) -> f64 {
        self.total
    }

    fn reach(&self, n0: u64) -> f64 {
        (1.0 - self.source.mu()).powf((n0 - 1) as f64)
    }

    /// Stationary probability of `(0, 0)` under threshold `n0`.
    pub fn q00(&self, n0: u64) -> f64 {
        let mu = self.source.mu();
        let reach = self.reach(n0);
        let waiting = (1.0 - reach) / mu;
        1.0 / (1.0 + (1.0 - self.source.alpha()) * (waiting + reach * self.total))
    }

    /// Achieved transmission rate `C` of threshold `n0`.
    pub fn rate(&self, n0: u64) -> f64 {
        self.q00(n0) * (1.0 - self.source.alpha()) * self.reach(n0) * self.total
    }

    fn tail_mass(&self, n0: u64) -> f64 {
        self.q00(n0) * (1.0 - self.source.alpha()) * self.reach(n0) * self.tail
    }

    /// Full analysis including the stationary distribution.
    pub fn analyze(&self, n0: u64) -> Result<RateAnalysis> {
        if n0 == 0 {
            return Err(AoiiError::invalid("n0", "thresholds start at 1"));
        }
        let q00 = self.q00(n0);
        let alpha = self.source.alpha();
        let keep = 1.0 - self.source.mu();
        let mut layers = Vec::with_capacity(n0 as usize + self.table.h_max() + 1);
        layers.push(vec![q00]);
        let mut below = (1.0 - alpha) * q00;
        for _ in 1..n0 {
            layers.push(vec![below]);
            below *= keep;
        }
        let entry = (1.0 - alpha) * self.reach(n0) * q00;
        for h in 0..=self.table.h_max() {
            layers.push(self.table.row(h).into_iter().map(|m| m * entry).collect());
        }
        Ok(RateAnalysis {
            n0,
            q00,
            rate: self.rate(n0),
            stationary: StationaryDist { layers },
            truncation_mass: self.tail_mass(n0),
            depth: self.table.h_max(),
        })
    }
}

/// Achieved rate and stationary distribution of the threshold-`n0` policy.
pub fn achieved_rate(n0: u64, source: &SourceModel, channel: &ChannelModel, cfg: &RateConfig) -> Result<RateAnalysis> {
    if n0 == 0 {
        return Err(AoiiError::invalid("n0", "thresholds start at 1"));
    }
    ThresholdRates::build(source, channel, cfg)?.analyze(n0)
}

/// Long-run behaviour of the per-slot randomized policy.
#[derive(Debug, Clone)]
pub struct MixedAnalysis {
    pub n_low: u64,
    pub rho_high: f64,
    pub rate: f64,
    /// Long-run average penalty `f(delta)`.
    pub aoii: f64,
    pub q00: f64,
    pub stationary: StationaryDist,
    pub truncation_mass: f64,
}

/// Stationary law of the policy that waits below `n_low`, transmits with
/// probability `1 - rho_high` at `(n_low, 0)` and always transmits from
/// `n_low + 1` on.
///
/// Solved by forward propagation of AoII layers from an unnormalized
/// `q(0,0) = 1`, independently of the `m(h, r)` recursion.
pub fn mixed_chain_analysis(
    n_low: u64,
    rho_high: f64,
    source: &SourceModel,
    channel: &ChannelModel,
    penalty: &Penalty,
    cfg: &RateConfig,
) -> Result<MixedAnalysis> {
    if n_low == 0 {
        return Err(AoiiError::invalid("n_low", "thresholds start at 1"));
    }
    if !(0.0..=1.0).contains(&rho_high) {
        return Err(AoiiError::invalid("rho_high", format!("{rho_high} is not in [0, 1]")));
    }
    cfg.validate()?;
    let transmit_prob = |delta: u64| -> f64 {
        if delta < n_low {
            0.0
        } else if delta == n_low {
            1.0 - rho_high
        } else {
            1.0
        }
    };

    let alpha = source.alpha();
    let mu = source.mu();
    let rho = survival_bound(source, channel);
    let mut gammas: Vec<GammaPair> = Vec::new();

    let mut layers: Vec<Vec<f64>> = vec![vec![1.0], vec![1.0 - alpha]];
    let mut total = 2.0 - alpha;
    loop {
        let delta = layers.len() as u64 - 1;
        let current = &layers[delta as usize];
        let layer_mass: f64 = current.iter().sum();
        if delta > n_low && layer_mass * rho / (1.0 - rho) < cfg.tail_tol * total {
            break;
        }
        if delta > n_low + cfg.h_ceiling as u64 {
            return Err(AoiiError::TruncationFailure {
                series: "randomized-policy layers",
                depth: cfg.h_ceiling,
            });
        }
        let t = transmit_prob(delta);
        let mut next = vec![0.0; current.len() + 1];
        for (r, &x) in current.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            while gammas.len() <= r {
                gammas.push(gamma(source, channel, gammas.len() as u64));
            }
            let g = gammas[r];
            next[0] += x * ((1.0 - t) * (1.0 - mu) + t * g.gamma2);
            next[r + 1] += x * t * g.gamma1;
        }
        while next.len() > 1 && next[next.len() - 1] == 0.0 {
            next.pop();
        }
        total += next.iter().sum::<f64>();
        layers.push(next);
    }

    let last_mass: f64 = layers.last().map_or(0.0, |l| l.iter().sum());
    for layer in &mut layers {
        for x in layer.iter_mut() {
            *x /= total;
        }
    }
    let stationary = StationaryDist { layers };
    let rate = stationary
        .layers
        .iter()
        .enumerate()
        .map(|(delta, layer)| transmit_prob(delta as u64) * layer.iter().sum::<f64>())
        .sum();
    Ok(MixedAnalysis {
        n_low,
        rho_high,
        rate,
        aoii: stationary.expected_penalty(penalty),
        q00: stationary.get(0, 0),
        truncation_mass: last_mass / total * rho / (1.0 - rho),
        stationary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lagrangian::{g_for_threshold, sigma_series, SeriesConfig};
    use crate::model::{transition_dist, Action};
    use proptest::prelude::*;

    fn models() -> Vec<(SourceModel, ChannelModel)> {
        vec![
            (SourceModel::symmetric(0.5, 16).unwrap(), ChannelModel::soft(0.5, 0.5, Some(2)).unwrap()),
            (SourceModel::symmetric(0.8, 128).unwrap(), ChannelModel::soft(0.9, 1.0, Some(2)).unwrap()),
            (SourceModel::symmetric(0.2, 16).unwrap(), ChannelModel::soft(0.1, 0.5, None).unwrap()),
            (SourceModel::new(0.6, 0.3).unwrap(), ChannelModel::soft(0.7, 0.3, Some(5)).unwrap()),
        ]
    }

    /// Brute-force enumeration of every transmission path of length `h` from
    /// `(n0, 0)`, tracking only paths that never hit `(0, 0)`.
    fn enumerate_paths(source: &SourceModel, channel: &ChannelModel, h: usize) -> Vec<f64> {
        let mut frontier = vec![(0u64, 1.0f64)];
        for _ in 0..h {
            let mut next = Vec::new();
            for (r, p) in frontier {
                let g = gamma(source, channel, r);
                next.push((r + 1, p * g.gamma1));
                next.push((0, p * g.gamma2));
            }
            frontier = next;
        }
        let mut out = vec![0.0; h + 1];
        for (r, p) in frontier {
            out[r as usize] += p;
        }
        out
    }

    #[test]
    fn m_table_head() {
        let (source, channel) = models()[0];
        let t = m_table(&source, &channel, 4);
        assert_eq!(t.get(0, 0), 1.0);
        let g0 = gamma(&source, &channel, 0);
        assert_eq!(t.get(1, 0), g0.gamma2);
        assert_eq!(t.get(1, 1), g0.gamma1);
        assert_eq!(t.get(1, 2), 0.0);
    }

    #[test]
    fn m_table_matches_path_enumeration() {
        for (source, channel) in models() {
            let t = m_table(&source, &channel, 12);
            for h in 0..=12 {
                let brute = enumerate_paths(&source, &channel, h);
                for (r, b) in brute.iter().enumerate() {
                    assert!((t.get(h, r) - b).abs() <= 1e-13 * b.max(1e-300), "h={h} r={r} {} {b}", t.get(h, r));
                }
            }
        }
    }

    #[test]
    fn m_table_under_perfect_decoding() {
        let source = SourceModel::new(0.35, 0.2).unwrap();
        let t = m_table(&source, &ChannelModel::error_free(), 20);
        for h in 0..=20 {
            assert!((t.get(h, 0) - 0.65f64.powi(h as i32)).abs() < 1e-15);
            for r in 1..=h {
                assert_eq!(t.get(h, r), 0.0);
            }
        }
    }

    #[test]
    fn m_layers_equal_sigma_series() {
        for (source, channel) in models() {
            let s = sigma_series(&source, &channel, &SeriesConfig::default()).unwrap();
            let t = m_table(&source, &channel, s.depth());
            for (h, sigma) in s.values().iter().enumerate() {
                assert!((t.layer(h) - sigma).abs() <= 1e-13 * sigma.max(1e-300), "h={h}");
            }
        }
    }

    #[test]
    fn perfect_decoding_always_transmit() {
        let alpha = 0.5;
        let source = SourceModel::new(alpha, 0.2).unwrap();
        let a = achieved_rate(1, &source, &ChannelModel::error_free(), &RateConfig::default()).unwrap();
        assert!((a.q00 - alpha).abs() < 1e-12);
        assert!((a.rate - (1.0 - alpha)).abs() < 1e-12);
    }

    #[test]
    fn stationary_identities() {
        for (source, channel) in models() {
            for n0 in [1u64, 2, 5, 10] {
                let a = achieved_rate(n0, &source, &channel, &RateConfig::default()).unwrap();
                let q = &a.stationary;
                assert!(a.truncation_mass <= 1e-12);
                assert!((q.total() + a.truncation_mass - 1.0).abs() < 1e-9);
                assert!((a.rate - q.mass_from(n0)).abs() < 1e-9);
                for k in 1..=n0 {
                    let expected = (1.0 - source.alpha()) * (1.0 - source.mu()).powi(k as i32 - 1) * a.q00;
                    assert!((q.get(k, 0) - expected).abs() < 1e-15);
                }
                // Flow balance at (0, 0) using the kernel itself.
                let mut inflow = 0.0;
                for (state, p) in q.iter() {
                    let action = if state.delta() >= n0 { Action::Transmit } else { Action::Wait };
                    for (next, prob) in transition_dist(state, action, &source, &channel).unwrap() {
                        if next == State::ANCHOR {
                            inflow += p * prob;
                        }
                    }
                }
                assert!((inflow - a.q00).abs() < 1e-9);
                assert!(q.iter().all(|(_, p)| p >= 0.0));
            }
        }
    }

    #[test]
    fn stationary_cost_matches_table_one() {
        let cfg = SeriesConfig::default();
        for (source, channel) in models() {
            for n0 in [1u64, 3, 8] {
                let a = achieved_rate(n0, &source, &channel, &RateConfig::default()).unwrap();
                let g = g_for_threshold(n0, 0.0, &source, &channel, &Penalty::linear(), &cfg).unwrap();
                assert!((a.average_penalty(&Penalty::linear()) - g).abs() < 1e-9 * g.max(1.0));
                // The price term of Table I is lambda times the rate.
                let g7 = g_for_threshold(n0, 7.0, &source, &channel, &Penalty::linear(), &cfg).unwrap();
                assert!((g7 - g - 7.0 * a.rate).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rate_vanishes_for_large_thresholds() {
        let (source, channel) = models()[1];
        let rates = ThresholdRates::build(&source, &channel, &RateConfig::default()).unwrap();
        assert!(rates.rate(20_000) < 1e-12);
    }

    #[test]
    fn rate_strictly_decreasing_in_threshold() {
        for (source, channel) in models() {
            let rates = ThresholdRates::build(&source, &channel, &RateConfig::default()).unwrap();
            for n0 in 1..20 {
                assert!(rates.rate(n0 + 1) < rates.rate(n0));
            }
        }
    }

    #[test]
    fn mixed_chain_degenerate_weights() {
        let cfg = RateConfig::default();
        let f = Penalty::linear();
        for (source, channel) in models() {
            let rates = ThresholdRates::build(&source, &channel, &cfg).unwrap();
            for n_low in [1u64, 4] {
                let all_high = mixed_chain_analysis(n_low, 1.0, &source, &channel, &f, &cfg).unwrap();
                let high = rates.analyze(n_low + 1).unwrap();
                assert!((all_high.rate - high.rate).abs() < 1e-10);
                assert!((all_high.aoii - high.average_penalty(&f)).abs() < 1e-9);
                let all_low = mixed_chain_analysis(n_low, 0.0, &source, &channel, &f, &cfg).unwrap();
                let low = rates.analyze(n_low).unwrap();
                assert!((all_low.rate - low.rate).abs() < 1e-10);
                assert!((all_low.aoii - low.average_penalty(&f)).abs() < 1e-9);
                let mid = mixed_chain_analysis(n_low, 0.4, &source, &channel, &f, &cfg).unwrap();
                assert!(mid.rate > high.rate && mid.rate < low.rate);
            }
        }
    }

    #[test]
    fn mixed_chain_rejects_bad_inputs() {
        let (source, channel) = models()[0];
        let f = Penalty::linear();
        let cfg = RateConfig::default();
        assert!(mixed_chain_analysis(0, 0.5, &source, &channel, &f, &cfg).is_err());
        assert!(mixed_chain_analysis(2, 1.5, &source, &channel, &f, &cfg).is_err());
    }

    #[test]
    fn layer_ceiling_is_reported() {
        let source = SourceModel::symmetric(0.2, 128).unwrap();
        let channel = ChannelModel::soft(0.9, 1.0, None).unwrap();
        let cfg = RateConfig {
            tail_tol: 1e-12,
            h_ceiling: 5,
        };
        assert!(matches!(
            achieved_rate(3, &source, &channel, &cfg),
            Err(AoiiError::TruncationFailure { .. })
        ));
    }

    proptest! {
        #[test]
        fn mixed_rate_monotone_in_weight(alpha in 0.3f64..0.95, p_e in 0.05f64..0.95, c in 0.2f64..1.0, n_low in 1u64..6, a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let source = SourceModel::new(alpha, (1.0 - alpha) / 15.0).unwrap();
            let channel = ChannelModel::soft(p_e, c, Some(2)).unwrap();
            let f = Penalty::linear();
            let cfg = RateConfig::default();
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let x = mixed_chain_analysis(n_low, lo, &source, &channel, &f, &cfg).unwrap();
            let y = mixed_chain_analysis(n_low, hi, &source, &channel, &f, &cfg).unwrap();
            prop_assert!(y.rate <= x.rate + 1e-12);
            prop_assert!((x.stationary.total() - 1.0).abs() < 1e-9);
        }
    }
}
