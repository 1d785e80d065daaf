//! Source, channel and penalty models together with the one-step transition
//! kernel of the constrained MDP over states `(delta, r)`.
//!
//! `delta` is the current AoII and `r` the number of packets the receiver
//! already holds for the value being transmitted. Every quantity here is an
//! immutable value type; all operations are pure.

use arrayvec::ArrayVec;
use serde::{Deserialize, Serialize};

use crate::error::{AoiiError, Result};

/// Tolerance used when checking `(N - 1) mu + alpha = 1`.
const SYMMETRY_TOL: f64 = 1e-12;

/// N-ary symmetric Markov source: stay with probability `alpha`, jump to each
/// of the other states with probability `mu`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SourceModel {
    alpha: f64,
    mu: f64,
    n_states: Option<u32>,
}

impl SourceModel {
    /// Builds a source from `(alpha, mu)` directly. This also covers the
    /// countably-infinite limits where no finite `N` exists.
    pub fn new(alpha: f64, mu: f64) -> Result<Self> {
        check_open_unit("source.alpha", alpha)?;
        check_open_unit("source.mu", mu)?;
        if alpha + mu > 1.0 + SYMMETRY_TOL {
            return Err(AoiiError::invalid(
                "source.mu",
                format!("alpha + mu = {} exceeds 1", alpha + mu),
            ));
        }
        Ok(Self {
            alpha,
            mu,
            n_states: None,
        })
    }

    /// Builds the `N`-state source, deriving `mu = (1 - alpha) / (N - 1)`.
    pub fn symmetric(alpha: f64, n_states: u32) -> Result<Self> {
        if n_states < 2 {
            return Err(AoiiError::invalid("source.n_states", "must be at least 2"));
        }
        check_open_unit("source.alpha", alpha)?;
        let mu = (1.0 - alpha) / f64::from(n_states - 1);
        let mut source = Self::new(alpha, mu)?;
        source.n_states = Some(n_states);
        Ok(source)
    }

    /// Builds a source from all three parameters and checks they are
    /// consistent with a symmetric chain.
    pub fn with_states(alpha: f64, mu: f64, n_states: u32) -> Result<Self> {
        if n_states < 2 {
            return Err(AoiiError::invalid("source.n_states", "must be at least 2"));
        }
        let mut source = Self::new(alpha, mu)?;
        let residual = f64::from(n_states - 1) * mu + alpha - 1.0;
        if residual.abs() > SYMMETRY_TOL {
            return Err(AoiiError::invalid(
                "source.mu",
                format!("(N - 1) mu + alpha - 1 = {residual:e}, expected 0"),
            ));
        }
        source.n_states = Some(n_states);
        Ok(source)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn n_states(&self) -> Option<u32> {
        self.n_states
    }

    /// When `mu >= alpha` a transmission never raises the chance of the
    /// monitor becoming correct, and never transmitting is optimal.
    pub fn waiting_is_optimal(&self) -> bool {
        self.mu >= self.alpha
    }
}

/// Whether the decoder soft-combines retransmitted packets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Combining {
    Soft,
    None,
}

/// HARQ decoding law `p(r) = 1 - p_e c^(r mod (r_max + 1))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChannelModel {
    p_e: f64,
    c: f64,
    r_max: Option<u32>,
    combining: Combining,
}

impl ChannelModel {
    /// `r_max = None` means an unbounded number of retransmissions.
    pub fn new(p_e: f64, c: f64, r_max: Option<u32>, combining: Combining) -> Result<Self> {
        check_open_unit("channel.p_e", p_e)?;
        if !(c > 0.0 && c <= 1.0) {
            return Err(AoiiError::invalid("channel.c", format!("{c} is not in (0, 1]")));
        }
        Ok(Self {
            p_e,
            c,
            r_max,
            combining,
        })
    }

    /// Soft-combining HARQ channel.
    pub fn soft(p_e: f64, c: f64, r_max: Option<u32>) -> Result<Self> {
        Self::new(p_e, c, r_max, Combining::Soft)
    }

    /// The perfect-decoding limit `p(r) = 1`. It sits outside the `(0, 1)`
    /// range accepted by [`ChannelModel::new`] and exists for limit checks.
    pub fn error_free() -> Self {
        Self {
            p_e: 0.0,
            c: 1.0,
            r_max: Some(0),
            combining: Combining::None,
        }
    }

    pub fn p_e(&self) -> f64 {
        self.p_e
    }

    /// Decay constant as seen by the decoder; `combining = none` behaves as `c = 1`.
    pub fn c(&self) -> f64 {
        match self.combining {
            Combining::Soft => self.c,
            Combining::None => 1.0,
        }
    }

    pub fn r_max(&self) -> Option<u32> {
        self.r_max
    }

    pub fn combining(&self) -> Combining {
        self.combining
    }

    /// Probability that the packet sent with `r` packets already at the
    /// receiver is decoded.
    pub fn p_success(&self, r: u64) -> f64 {
        let c = self.c();
        if c == 1.0 {
            return 1.0 - self.p_e;
        }
        let exponent = match self.r_max {
            Some(max) => r % (u64::from(max) + 1),
            None => r,
        };
        // c^k underflows long before k reaches i32::MAX.
        let k = exponent.min(1 << 20) as i32;
        1.0 - self.p_e * c.powi(k)
    }

    /// Period of `r -> p_success(r)`, if any. States whose `r` agree modulo
    /// the period have identical dynamics.
    pub fn period(&self) -> Option<u64> {
        if self.c() == 1.0 || self.p_e == 0.0 {
            Some(1)
        } else {
            self.r_max.map(|m| u64::from(m) + 1)
        }
    }
}

/// Strictly increasing, unbounded AoII penalty `f`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PenaltyKind", into = "PenaltyKind")]
pub struct Penalty {
    kind: PenaltyKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum PenaltyKind {
    /// `f(delta) = delta`
    Linear,
    /// `f(delta) = delta^exponent`, `exponent >= 1`
    Power { exponent: f64 },
    /// `f(delta) = values[delta]`, continued linearly with the last
    /// difference past the end of the table.
    Table { values: Vec<f64> },
}

impl TryFrom<PenaltyKind> for Penalty {
    type Error = AoiiError;

    fn try_from(kind: PenaltyKind) -> Result<Self> {
        Self::from_kind(kind)
    }
}

impl From<Penalty> for PenaltyKind {
    fn from(p: Penalty) -> Self {
        p.kind
    }
}

impl Penalty {
    pub fn linear() -> Self {
        Self {
            kind: PenaltyKind::Linear,
        }
    }

    pub fn power(exponent: f64) -> Result<Self> {
        if !(exponent.is_finite() && exponent >= 1.0) {
            return Err(AoiiError::invalid(
                "penalty.exponent",
                format!("{exponent} is not a finite value >= 1"),
            ));
        }
        Ok(Self {
            kind: PenaltyKind::Power { exponent },
        })
    }

    pub fn table(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(AoiiError::invalid(
                "penalty.values",
                "need at least two entries to extrapolate",
            ));
        }
        if values.iter().any(|v| !v.is_finite()) || values[0] < 0.0 {
            return Err(AoiiError::invalid(
                "penalty.values",
                "entries must be finite and f(0) >= 0",
            ));
        }
        if let Some(i) = values.windows(2).position(|w| w[1] <= w[0]) {
            return Err(AoiiError::invalid(
                "penalty.values",
                format!("not strictly increasing at index {}", i + 1),
            ));
        }
        Ok(Self {
            kind: PenaltyKind::Table { values },
        })
    }

    /// Validating conversion from a deserialized kind.
    pub fn from_kind(kind: PenaltyKind) -> Result<Self> {
        match kind {
            PenaltyKind::Linear => Ok(Self::linear()),
            PenaltyKind::Power { exponent } => Self::power(exponent),
            PenaltyKind::Table { values } => Self::table(values),
        }
    }

    pub fn kind(&self) -> &PenaltyKind {
        &self.kind
    }

    pub fn eval(&self, delta: u64) -> f64 {
        match &self.kind {
            PenaltyKind::Linear => delta as f64,
            PenaltyKind::Power { exponent } => (delta as f64).powf(*exponent),
            PenaltyKind::Table { values } => {
                let last = values.len() - 1;
                match usize::try_from(delta) {
                    Ok(i) if i <= last => values[i],
                    _ => {
                        let slope = values[last] - values[last - 1];
                        values[last] + slope * (delta - last as u64) as f64
                    }
                }
            }
        }
    }
}

/// CMDP state `(delta, r)`. `r` is frozen at zero while the monitor is correct.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct State {
    delta: u64,
    r: u64,
}

impl State {
    /// The recurrent anchor `(0, 0)`.
    pub const ANCHOR: State = State { delta: 0, r: 0 };

    pub fn new(delta: u64, r: u64) -> Result<Self> {
        if delta == 0 && r > 0 {
            return Err(AoiiError::InvalidState {
                delta,
                r,
                reason: "r must be 0 when delta is 0",
            });
        }
        if r > delta {
            return Err(AoiiError::InvalidState {
                delta,
                r,
                reason: "r cannot exceed delta",
            });
        }
        Ok(Self { delta, r })
    }

    pub fn delta(&self) -> u64 {
        self.delta
    }

    pub fn r(&self) -> u64 {
        self.r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Wait,
    Transmit,
}

/// `gamma1` is the probability of a failed decode while the source keeps the
/// transmitted value; `gamma2` the probability the AoII still grows but the
/// transmission round restarts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaPair {
    pub gamma1: f64,
    pub gamma2: f64,
}

impl GammaPair {
    /// Probability that a transmission from `delta > 0` makes the monitor correct.
    pub fn reset(&self) -> f64 {
        1.0 - self.gamma1 - self.gamma2
    }

    /// Row sum of the transmission sub-kernel.
    pub fn survival(&self) -> f64 {
        self.gamma1 + self.gamma2
    }
}

pub fn gamma_for_success(source: &SourceModel, p: f64) -> GammaPair {
    let fail = 1.0 - p;
    GammaPair {
        gamma1: source.alpha * fail,
        gamma2: 1.0 - source.alpha - source.mu * fail,
    }
}

pub fn gamma(source: &SourceModel, channel: &ChannelModel, r: u64) -> GammaPair {
    gamma_for_success(source, channel.p_success(r))
}

/// Support of the next state with its probabilities (at most three entries).
pub type Transitions = ArrayVec<(State, f64), 3>;

/// Exact distribution of `S_{t+1}` given `S_t = state` and the action.
pub fn transition_dist(
    state: State,
    action: Action,
    source: &SourceModel,
    channel: &ChannelModel,
) -> Result<Transitions> {
    // Re-validate: `State` fields are private, but deserialized values bypass `new`.
    let state = State::new(state.delta, state.r)?;
    let mut out = Transitions::new();
    if state.delta == 0 {
        // The action is irrelevant while the monitor is correct.
        out.push((State::ANCHOR, source.alpha));
        out.push((State { delta: 1, r: 0 }, 1.0 - source.alpha));
        return Ok(out);
    }
    let older = state.delta + 1;
    match action {
        Action::Wait => {
            out.push((State { delta: older, r: 0 }, 1.0 - source.mu));
            out.push((State::ANCHOR, source.mu));
        }
        Action::Transmit => {
            let g = gamma(source, channel, state.r);
            out.push((
                State {
                    delta: older,
                    r: state.r + 1,
                },
                g.gamma1,
            ));
            out.push((State { delta: older, r: 0 }, g.gamma2));
            out.push((State::ANCHOR, g.reset()));
        }
    }
    Ok(out)
}

/// Numerically certifies that `sum_{l>=1} f(l+1) ratio^l` converges. The
/// series is accepted once a term is both below `tol` (relative to the
/// partial sum) and smaller than its predecessor; hitting `l_cap` first means
/// divergence is assumed.
pub fn penalty_series_converges(penalty: &Penalty, ratio: f64, tol: f64, l_cap: usize) -> bool {
    if !(ratio.is_finite() && ratio >= 0.0) {
        return false;
    }
    if ratio == 0.0 {
        return true;
    }
    let ln_ratio = ratio.ln();
    let mut sum = 0.0_f64;
    let mut prev = f64::INFINITY;
    for l in 1..=l_cap {
        let f = penalty.eval(l as u64 + 1);
        let term = (f.ln() + l as f64 * ln_ratio).exp();
        sum += term;
        if !sum.is_finite() {
            return false;
        }
        if term < prev && term <= tol * sum.max(1.0) {
            return true;
        }
        prev = term;
    }
    false
}

/// Checks that the always-transmit policy has finite average AoII, which the
/// analytic solver requires. Callers must refuse to solve when this is false.
pub fn validate_boundedness(
    source: &SourceModel,
    channel: &ChannelModel,
    penalty: &Penalty,
    tol: f64,
    l_cap: usize,
) -> bool {
    penalty_series_converges(penalty, gamma(source, channel, 0).survival(), tol, l_cap)
}

fn check_open_unit(field: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value < 1.0 {
        Ok(())
    } else {
        Err(AoiiError::invalid(field, format!("{value} is not in (0, 1)")))
    }
}
