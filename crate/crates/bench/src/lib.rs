//! Shared fixtures for the solver benchmarks.

use aoii_core::{ChannelModel, Penalty, SourceModel};

/// Moderately lossy channel with soft combining and two retransmissions.
pub fn fixture(alpha: f64, n_states: u32) -> (SourceModel, ChannelModel, Penalty) {
    (
        SourceModel::symmetric(alpha, n_states).expect("valid source"),
        ChannelModel::soft(0.8, 0.5, Some(2)).expect("valid channel"),
        Penalty::linear(),
    )
}
