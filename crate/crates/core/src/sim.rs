//! Seeded slotted simulation of the source, the HARQ channel and a policy.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{AoiiError, Result};
use crate::model::{Action, ChannelModel, Penalty, SourceModel};

/// Number of batches used for batch-means standard errors.
pub const BATCHES: u64 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Policy {
    NeverTransmit,
    /// Transmit whenever the AoII is at least `n0`.
    Threshold { n0: u64 },
    /// Each slot use threshold `n_low + 1` with probability `rho_high`,
    /// otherwise `n_low`.
    Mixed { n_low: u64, rho_high: f64 },
    /// Transmit every `ceil(1 / rate)` slots regardless of the state.
    Periodic { rate: f64 },
}

impl Policy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Policy::NeverTransmit => Ok(()),
            Policy::Threshold { n0: 0 } => Err(AoiiError::invalid("policy.n0", "thresholds start at 1")),
            Policy::Threshold { .. } => Ok(()),
            Policy::Mixed { n_low: 0, .. } => {
                Err(AoiiError::invalid("policy.n_low", "thresholds start at 1"))
            }
            Policy::Mixed { rho_high, .. } if !(0.0..=1.0).contains(&rho_high) => {
                Err(AoiiError::invalid("policy.rho_high", format!("{rho_high} is not in [0, 1]")))
            }
            Policy::Mixed { .. } => Ok(()),
            Policy::Periodic { rate } if !(rate > 0.0 && rate <= 1.0) => {
                Err(AoiiError::invalid("policy.rate", format!("{rate} is not in (0, 1]")))
            }
            Policy::Periodic { .. } => Ok(()),
        }
    }

    /// Slot spacing of the periodic policy.
    pub fn period(rate: f64) -> u64 {
        (1.0 / rate - 1e-9).ceil().max(1.0) as u64
    }

    fn decide(&self, delta: u64, slot: u64, period: u64, rng: &mut ChaCha8Rng) -> Action {
        let send = match *self {
            Policy::NeverTransmit => false,
            Policy::Threshold { n0 } => delta >= n0,
            Policy::Mixed { n_low, rho_high } => {
                // Only the state at n_low depends on which threshold is drawn.
                if delta == n_low {
                    !rng.random_bool(rho_high)
                } else {
                    delta > n_low
                }
            }
            Policy::Periodic { .. } => slot.is_multiple_of(period),
        };
        if send {
            Action::Transmit
        } else {
            Action::Wait
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    /// Slots per replication.
    pub horizon: u64,
    pub seed: u64,
    pub replications: u32,
    pub avg_aoii: f64,
    pub avg_rate: f64,
    pub aoii_stderr: f64,
    pub rate_stderr: f64,
    pub max_delta_seen: u64,
    pub decode_successes: u64,
    pub transmissions: u64,
}

/// Generator for replication `stream` of `seed`. Stream 0 is the one used by
/// [`simulate`].
pub fn split(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Samples one slot of the kernel. A transmission is first decoded or lost,
/// then the source moves. Returns the next state and whether the packet was
/// decoded. Transmitting at `delta = 0` has no effect on the state.
fn step(
    delta: u64,
    r: u64,
    action: Action,
    source: &SourceModel,
    channel: &ChannelModel,
    rng: &mut ChaCha8Rng,
) -> ((u64, u64), bool) {
    let (alpha, mu) = (source.alpha(), source.mu());
    if delta == 0 {
        let next = if rng.random_bool(alpha) { (0, 0) } else { (1, 0) };
        return (next, false);
    }
    if action == Action::Wait {
        let next = if rng.random_bool(mu) { (0, 0) } else { (delta + 1, 0) };
        return (next, false);
    }
    let decoded = rng.random_bool(channel.p_success(r));
    let u: f64 = rng.random();
    let next = if decoded {
        if u < alpha {
            (0, 0)
        } else {
            (delta + 1, 0)
        }
    } else if u < alpha {
        (delta + 1, r + 1)
    } else if u < alpha + mu {
        (0, 0)
    } else {
        (delta + 1, 0)
    };
    (next, decoded)
}

fn mean_and_stderr(batches: &[f64]) -> (f64, f64) {
    let n = batches.len() as f64;
    let mean = batches.iter().sum::<f64>() / n;
    if batches.len() < 2 {
        return (mean, 0.0);
    }
    let var = batches.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn run(
    policy: &Policy,
    source: &SourceModel,
    channel: &ChannelModel,
    penalty: &Penalty,
    horizon: u64,
    seed: u64,
    mut rng: ChaCha8Rng,
) -> Result<SimReport> {
    if horizon == 0 {
        return Err(AoiiError::invalid("sim.horizon", "must be at least 1"));
    }
    policy.validate()?;
    let period = match *policy {
        Policy::Periodic { rate } => Policy::period(rate),
        _ => 1,
    };
    let batches = BATCHES.min(horizon);
    let mut aoii_batches = Vec::with_capacity(batches as usize);
    let mut rate_batches = Vec::with_capacity(batches as usize);

    let (mut delta, mut r) = (0u64, 0u64);
    let mut aoii_total = 0.0;
    let mut transmissions = 0u64;
    let mut decode_successes = 0u64;
    let mut max_delta_seen = 0u64;
    let mut slot = 0u64;
    for b in 0..batches {
        let end = (b + 1) * horizon / batches;
        let start = slot;
        let mut aoii_batch = 0.0;
        let mut sent_batch = 0u64;
        while slot < end {
            max_delta_seen = max_delta_seen.max(delta);
            aoii_batch += penalty.eval(delta);
            let action = policy.decide(delta, slot, period, &mut rng);
            if action == Action::Transmit {
                sent_batch += 1;
            }
            let (next, decoded) = step(delta, r, action, source, channel, &mut rng);
            decode_successes += u64::from(decoded);
            (delta, r) = next;
            slot += 1;
        }
        let len = (slot - start) as f64;
        aoii_total += aoii_batch;
        transmissions += sent_batch;
        aoii_batches.push(aoii_batch / len);
        rate_batches.push(sent_batch as f64 / len);
    }

    let (_, aoii_stderr) = mean_and_stderr(&aoii_batches);
    let (_, rate_stderr) = mean_and_stderr(&rate_batches);
    Ok(SimReport {
        horizon,
        seed,
        replications: 1,
        avg_aoii: aoii_total / horizon as f64,
        avg_rate: transmissions as f64 / horizon as f64,
        aoii_stderr,
        rate_stderr,
        max_delta_seen,
        decode_successes,
        transmissions,
    })
}

/// Simulates `horizon` slots from `(0, 0)`. The AoII average includes slot 0
/// and charges `f(delta_t)` before each transition.
pub fn simulate(
    policy: &Policy,
    source: &SourceModel,
    channel: &ChannelModel,
    penalty: &Penalty,
    horizon: u64,
    seed: u64,
) -> Result<SimReport> {
    run(policy, source, channel, penalty, horizon, seed, split(seed, 0))
}

/// Runs `n_reps` independent replications on streams `0..n_reps` of
/// `base_seed` and averages their means. With several replications the
/// standard errors come from the spread of the replication means.
pub fn replicate(
    policy: &Policy,
    source: &SourceModel,
    channel: &ChannelModel,
    penalty: &Penalty,
    horizon: u64,
    base_seed: u64,
    n_reps: u32,
) -> Result<SimReport> {
    if n_reps == 0 {
        return Err(AoiiError::invalid("sim.n_reps", "must be at least 1"));
    }
    let reports = (0..n_reps)
        .into_par_iter()
        .map(|i| run(policy, source, channel, penalty, horizon, base_seed, split(base_seed, i as u64)))
        .collect::<Result<Vec<_>>>()?;
    if n_reps == 1 {
        return Ok(reports.into_iter().next().expect("one replication"));
    }
    let aoii: Vec<f64> = reports.iter().map(|r| r.avg_aoii).collect();
    let rate: Vec<f64> = reports.iter().map(|r| r.avg_rate).collect();
    let (avg_aoii, aoii_stderr) = mean_and_stderr(&aoii);
    let (avg_rate, rate_stderr) = mean_and_stderr(&rate);
    Ok(SimReport {
        horizon,
        seed: base_seed,
        replications: n_reps,
        avg_aoii,
        avg_rate,
        aoii_stderr,
        rate_stderr,
        max_delta_seen: reports.iter().map(|r| r.max_delta_seen).max().unwrap_or(0),
        decode_successes: reports.iter().map(|r| r.decode_successes).sum(),
        transmissions: reports.iter().map(|r| r.transmissions).sum(),
    })
}

/// `(delta, r, action)` a transition starts from.
pub type Origin = (u64, u64, Action);

/// Counts of observed one-step transitions, for checking the sampler against
/// the kernel.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TransitionCounts {
    pub counts: std::collections::BTreeMap<(Origin, (u64, u64)), u64>,
}

/// Runs a simulation recording every transition out of states with
/// `delta <= delta_limit`.
pub fn transition_counts(
    policy: &Policy,
    source: &SourceModel,
    channel: &ChannelModel,
    horizon: u64,
    seed: u64,
    delta_limit: u64,
) -> Result<TransitionCounts> {
    policy.validate()?;
    let mut rng = split(seed, 0);
    let period = match *policy {
        Policy::Periodic { rate } => Policy::period(rate),
        _ => 1,
    };
    let mut out = TransitionCounts::default();
    let (mut delta, mut r) = (0u64, 0u64);
    for slot in 0..horizon {
        let action = policy.decide(delta, slot, period, &mut rng);
        let (next, _) = step(delta, r, action, source, channel, &mut rng);
        if delta <= delta_limit {
            *out.counts.entry(((delta, r, action), next)).or_default() += 1;
        }
        (delta, r) = next;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{transition_dist, State};

    fn model() -> (SourceModel, ChannelModel) {
        (
            SourceModel::symmetric(0.5, 16).unwrap(),
            ChannelModel::soft(0.5, 0.5, Some(2)).unwrap(),
        )
    }

    #[test]
    fn same_seed_same_report() {
        let (source, channel) = model();
        let f = Penalty::linear();
        let policy = Policy::Mixed { n_low: 3, rho_high: 0.4 };
        let a = simulate(&policy, &source, &channel, &f, 50_000, 7).unwrap();
        let b = simulate(&policy, &source, &channel, &f, 50_000, 7).unwrap();
        assert_eq!(a, b);
        let c = simulate(&policy, &source, &channel, &f, 50_000, 8).unwrap();
        assert_ne!(a.avg_aoii, c.avg_aoii);
    }

    #[test]
    fn never_transmit_matches_waiting_chain() {
        // Kernel-consistent average AoII for alpha = mu = 1/2 is 1.
        let source = SourceModel::new(0.5, 0.5).unwrap();
        let (_, channel) = model();
        let r = simulate(&Policy::NeverTransmit, &source, &channel, &Penalty::linear(), 1_000_000, 11).unwrap();
        assert_eq!(r.avg_rate, 0.0);
        assert!((r.avg_aoii - 1.0).abs() < 3.0 * r.aoii_stderr, "{r:?}");
    }

    #[test]
    fn always_transmit_with_perfect_decoding() {
        let alpha = 0.5;
        let source = SourceModel::new(alpha, 0.2).unwrap();
        let r = simulate(
            &Policy::Threshold { n0: 1 },
            &source,
            &ChannelModel::error_free(),
            &Penalty::linear(),
            1_000_000,
            3,
        )
        .unwrap();
        assert!((r.avg_rate - (1.0 - alpha)).abs() < 3.0 * r.rate_stderr, "{r:?}");
        assert_eq!(r.decode_successes, r.transmissions);
    }

    #[test]
    fn periodic_rate_is_exact() {
        let (source, channel) = model();
        let f = Penalty::linear();
        let r = simulate(&Policy::Periodic { rate: 0.5 }, &source, &channel, &f, 1_000_000, 1).unwrap();
        assert_eq!(r.avg_rate, 0.5);
        assert_eq!(Policy::period(0.1), 10);
        assert_eq!(Policy::period(1.0), 1);
        assert_eq!(Policy::period(0.3), 4);
    }

    #[test]
    fn single_replication_equals_simulate() {
        let (source, channel) = model();
        let f = Penalty::linear();
        let policy = Policy::Threshold { n0: 4 };
        let one = replicate(&policy, &source, &channel, &f, 20_000, 99, 1).unwrap();
        let direct = simulate(&policy, &source, &channel, &f, 20_000, 99).unwrap();
        assert_eq!(one, direct);
    }

    #[test]
    fn aggregation_is_plain_mean_and_deterministic() {
        let (source, channel) = model();
        let f = Penalty::linear();
        let policy = Policy::Threshold { n0: 4 };
        let agg = replicate(&policy, &source, &channel, &f, 10_000, 5, 8).unwrap();
        let means: Vec<f64> = (0..8)
            .map(|i| run(&policy, &source, &channel, &f, 10_000, 5, split(5, i)).unwrap().avg_aoii)
            .collect();
        let mean = means.iter().sum::<f64>() / 8.0;
        assert!((agg.avg_aoii - mean).abs() < 1e-12);
        let again = replicate(&policy, &source, &channel, &f, 10_000, 5, 8).unwrap();
        assert_eq!(agg, again);
        assert_eq!(agg.replications, 8);
    }

    #[test]
    fn spread_of_replication_means_shrinks() {
        let (source, channel) = model();
        let f = Penalty::linear();
        let policy = Policy::Threshold { n0: 3 };
        let groups = 64u64;
        let variance = |n_reps: u32| {
            let means: Vec<f64> = (0..groups)
                .map(|g| {
                    replicate(&policy, &source, &channel, &f, 2_000, 1_000 + g, n_reps)
                        .unwrap()
                        .avg_aoii
                })
                .collect();
            let m = means.iter().sum::<f64>() / groups as f64;
            means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (groups - 1) as f64
        };
        let v: Vec<f64> = [4, 16, 64].into_iter().map(variance).collect();
        // Each step quadruples the replications, so the variance ratio is about 4.
        for w in v.windows(2) {
            let ratio = w[0] / w[1];
            assert!((2.0..8.0).contains(&ratio), "{v:?}");
        }
    }

    #[test]
    fn sampled_transitions_follow_the_kernel() {
        let source = SourceModel::symmetric(0.6, 8).unwrap();
        let channel = ChannelModel::soft(0.7, 0.5, Some(3)).unwrap();
        let policy = Policy::Threshold { n0: 2 };
        let counts = transition_counts(&policy, &source, &channel, 10_000_000, 17, 20).unwrap();
        let mut totals: std::collections::BTreeMap<(u64, u64, Action), u64> = Default::default();
        for (&(from, _), &n) in &counts.counts {
            *totals.entry(from).or_default() += n;
        }
        let mut checked = 0;
        for (&(delta, r, action), &total) in &totals {
            let state = State::new(delta, r).unwrap();
            for (next, p) in transition_dist(state, action, &source, &channel).unwrap() {
                let seen = counts
                    .counts
                    .get(&((delta, r, action), (next.delta(), next.r())))
                    .copied()
                    .unwrap_or(0) as f64;
                let n = total as f64;
                let se = (p * (1.0 - p) / n).sqrt().max(1.0 / n);
                assert!((seen / n - p).abs() <= 4.0 * se, "({delta},{r},{action:?}) -> {next:?}");
                checked += 1;
            }
        }
        assert!(checked > 50);
    }

    #[test]
    fn rejects_bad_inputs() {
        let (source, channel) = model();
        let f = Penalty::linear();
        assert!(simulate(&Policy::NeverTransmit, &source, &channel, &f, 0, 1).is_err());
        assert!(simulate(&Policy::Threshold { n0: 0 }, &source, &channel, &f, 10, 1).is_err());
        assert!(simulate(&Policy::Periodic { rate: 0.0 }, &source, &channel, &f, 10, 1).is_err());
        assert!(simulate(&Policy::Mixed { n_low: 2, rho_high: 1.5 }, &source, &channel, &f, 10, 1).is_err());
        assert!(replicate(&Policy::NeverTransmit, &source, &channel, &f, 10, 1, 0).is_err());
    }
}
