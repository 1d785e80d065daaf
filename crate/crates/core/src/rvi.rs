//! Relative value iteration on a truncated state space, used as an
//! independent oracle for the analytic threshold solver.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{AoiiError, Result};
use crate::model::{gamma, Action, ChannelModel, GammaPair, Penalty, SourceModel};

/// Default retransmission-count cap for channels without a finite round.
pub const DEFAULT_R_CAP: u64 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RviConfig {
    /// Largest AoII kept; successors beyond it are held at the cap.
    pub delta_max: u64,
    /// Cap on `r` for channels whose success probability is not periodic.
    /// Periodic channels are reduced exactly to one round instead.
    pub r_cap: u64,
    pub max_iters: u64,
    /// Stop once the span of `TV - V` is below this.
    pub span_tol: f64,
}

impl Default for RviConfig {
    fn default() -> Self {
        Self {
            delta_max: 400,
            r_cap: DEFAULT_R_CAP,
            max_iters: 100_000,
            span_tol: 1e-10,
        }
    }
}

impl RviConfig {
    pub fn validate(&self) -> Result<()> {
        if self.delta_max < 2 {
            return Err(AoiiError::invalid("rvi.delta_max", "must be at least 2"));
        }
        if self.max_iters == 0 {
            return Err(AoiiError::invalid("rvi.max_iters", "must be at least 1"));
        }
        if !(self.span_tol > 0.0) {
            return Err(AoiiError::invalid("rvi.span_tol", "must be positive"));
        }
        Ok(())
    }
}

/// Relative tolerance below which the two actions are treated as tied; ties
/// resolve to waiting.
const ACTION_TIE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct RviSolution {
    pub lambda: f64,
    /// Average Lagrangian cost estimate.
    pub g: f64,
    pub iterations: u64,
    pub converged: bool,
    /// Final span of `TV - V`.
    pub span: f64,
    delta_max: u64,
    /// Number of distinct `r` rows on the grid.
    r_len: u64,
    /// Whether `r` wraps around (exact reduction of a periodic channel).
    periodic: bool,
    values: Vec<f64>,
    actions: Vec<Action>,
}

impl RviSolution {
    pub fn delta_max(&self) -> u64 {
        self.delta_max
    }

    /// Number of `r` values on the grid, `0..r_len`.
    pub fn r_len(&self) -> u64 {
        self.r_len
    }

    /// True when `r` is stored modulo the channel period.
    pub fn is_periodic(&self) -> bool {
        self.periodic
    }

    fn index(&self, delta: u64, r: u64) -> usize {
        let row = if self.periodic {
            r % self.r_len
        } else {
            r.min(self.r_len - 1)
        };
        (delta.min(self.delta_max) * self.r_len + row) as usize
    }

    pub fn value(&self, delta: u64, r: u64) -> f64 {
        self.values[self.index(delta, r)]
    }

    pub fn action(&self, delta: u64, r: u64) -> Action {
        self.actions[self.index(delta, r)]
    }
}

struct Grid {
    delta_max: u64,
    r_len: u64,
    periodic: bool,
    gammas: Vec<GammaPair>,
    costs: Vec<f64>,
}

impl Grid {
    fn at(&self, delta: u64, r: u64) -> usize {
        (delta * self.r_len + r) as usize
    }

    fn next_r(&self, r: u64) -> u64 {
        if self.periodic {
            (r + 1) % self.r_len
        } else {
            (r + 1).min(self.r_len - 1)
        }
    }
}

/// Runs anchored relative value iteration for price `lambda`, starting from
/// `V_0(delta, r) = f(delta)`.
pub fn rvi_solve(
    lambda: f64,
    source: &SourceModel,
    channel: &ChannelModel,
    penalty: &Penalty,
    cfg: &RviConfig,
) -> Result<RviSolution> {
    cfg.validate()?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(AoiiError::invalid("lambda", format!("{lambda} is not a finite value >= 0")));
    }
    let (r_len, periodic) = match channel.period() {
        Some(p) => (p, true),
        None => (cfg.r_cap.max(1) + 1, false),
    };
    let grid = Grid {
        delta_max: cfg.delta_max,
        r_len,
        periodic,
        gammas: (0..r_len).map(|r| gamma(source, channel, r)).collect(),
        costs: (0..=cfg.delta_max).map(|d| penalty.eval(d)).collect(),
    };
    let alpha = source.alpha();
    let mu = source.mu();
    let n = ((cfg.delta_max + 1) * r_len) as usize;

    let mut values: Vec<f64> = (0..n).map(|i| grid.costs[i / r_len as usize]).collect();
    let anchor_shift = values[0];
    values.iter_mut().for_each(|v| *v -= anchor_shift);
    let mut next = vec![0.0; n];
    let mut iterations = 0;
    let mut span = f64::INFINITY;
    let mut g = 0.0;

    while iterations < cfg.max_iters {
        iterations += 1;
        bellman(&grid, &values, &mut next, lambda, alpha, mu, None);
        let anchor = next[0];
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for (t, v) in next.iter_mut().zip(&values) {
            let diff = *t - v;
            lo = lo.min(diff);
            hi = hi.max(diff);
            *t -= anchor;
        }
        std::mem::swap(&mut values, &mut next);
        g = anchor;
        span = hi - lo;
        if span < cfg.span_tol {
            break;
        }
    }

    let mut actions = vec![Action::Wait; n];
    bellman(&grid, &values, &mut next, lambda, alpha, mu, Some(&mut actions));
    Ok(RviSolution {
        lambda,
        g,
        iterations,
        converged: span < cfg.span_tol,
        span,
        delta_max: cfg.delta_max,
        r_len,
        periodic,
        values,
        actions,
    })
}

/// One synchronous application of the Bellman operator.
fn bellman(
    grid: &Grid,
    values: &[f64],
    out: &mut [f64],
    lambda: f64,
    alpha: f64,
    mu: f64,
    mut actions: Option<&mut [Action]>,
) {
    let anchor = values[0];
    let from_zero = grid.costs[0] + alpha * anchor + (1.0 - alpha) * values[grid.at(1, 0)];
    for r in 0..grid.r_len {
        out[grid.at(0, r)] = from_zero;
    }
    for delta in 1..=grid.delta_max {
        let up = (delta + 1).min(grid.delta_max);
        let fresh = values[grid.at(up, 0)];
        let wait = (1.0 - mu) * fresh + mu * anchor;
        for r in 0..grid.r_len {
            let g = grid.gammas[r as usize];
            let stale = values[grid.at(up, grid.next_r(r))];
            let transmit = lambda + g.gamma1 * stale + g.gamma2 * fresh + g.reset() * anchor;
            let send = transmit < wait - ACTION_TIE * wait.abs().max(1.0);
            let i = grid.at(delta, r);
            out[i] = grid.costs[delta as usize] + if send { transmit } else { wait };
            if let Some(a) = actions.as_deref_mut() {
                a[i] = if send { Action::Transmit } else { Action::Wait };
            }
        }
    }
}

/// Least `delta >= 1` at which the greedy action transmits, for every `r` row
/// of the grid that transmits somewhere.
pub fn extract_thresholds(sol: &RviSolution) -> BTreeMap<u64, u64> {
    let mut out = BTreeMap::new();
    for r in 0..sol.r_len {
        if let Some(delta) = (1..=sol.delta_max).find(|&d| sol.action(d, r) == Action::Transmit) {
            out.insert(r, delta);
        }
    }
    out
}

/// Violations of the structural properties of an RVI solution.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StructureReport {
    /// `(delta, r)` where `V(delta + 1, r) <= V(delta, r)`.
    pub not_increasing_in_delta: Vec<(u64, u64)>,
    /// `(delta, r)` where `V(delta, r + 1)` moves the wrong way relative to `V(delta, r)`.
    pub wrong_order_in_r: Vec<(u64, u64)>,
    /// `r` where the threshold of row `r + 1` exceeds that of row `r`.
    pub thresholds_increasing_in_r: Vec<u64>,
    /// `r` rows whose greedy actions are not a single switch from wait to transmit.
    pub not_single_switch: Vec<u64>,
}

impl StructureReport {
    pub fn is_clean(&self) -> bool {
        self.not_increasing_in_delta.is_empty()
            && self.wrong_order_in_r.is_empty()
            && self.thresholds_increasing_in_r.is_empty()
            && self.not_single_switch.is_empty()
    }
}

/// Checks monotonicity of `V` in `delta` and `r`, the order of the per-row
/// thresholds and the switching structure of the greedy policy.
///
/// Only `delta <= delta_max / 2` is inspected so that the cap does not bias
/// the result. On a periodic grid `r` is compared within one round only.
/// `decreasing_in_r` selects the expected direction in `r`.
pub fn check_structure(sol: &RviSolution, decreasing_in_r: bool, slack: f64) -> StructureReport {
    let mut report = StructureReport::default();
    let top = sol.delta_max / 2;
    for r in 0..sol.r_len {
        for delta in 1..top {
            if sol.value(delta + 1, r) <= sol.value(delta, r) {
                report.not_increasing_in_delta.push((delta, r));
            }
        }
    }
    for r in 0..sol.r_len.saturating_sub(1) {
        for delta in 1..=top {
            let (a, b) = (sol.value(delta, r), sol.value(delta, r + 1));
            let wrong = if decreasing_in_r { b > a + slack } else { b < a - slack };
            if wrong {
                report.wrong_order_in_r.push((delta, r));
            }
        }
    }
    let thresholds = extract_thresholds(sol);
    for r in 0..sol.r_len.saturating_sub(1) {
        match (thresholds.get(&r), thresholds.get(&(r + 1))) {
            (Some(a), Some(b)) if b > a => report.thresholds_increasing_in_r.push(r),
            (Some(_), None) => report.thresholds_increasing_in_r.push(r),
            _ => {}
        }
    }
    for r in 0..sol.r_len {
        let switches = (1..top)
            .filter(|&d| sol.action(d, r) != sol.action(d + 1, r))
            .count();
        let ends_sending = sol.action(top, r) == Action::Transmit;
        if switches > 1 || (switches == 1 && !ends_sending) {
            report.not_single_switch.push(r);
        }
    }
    report
}
