//! Game server, HTTP client and command-line driver for peekaboom campaigns.

pub mod api;
pub mod cli;
pub mod client;
pub mod store;

use peekaboom_core::crowdgame::CampaignState;
use peekaboom_core::metrics::{crowd_accuracy_curve, AccuracyCurve, MetricsError, ScoreTable};

/// Crowd curves and scores of every method of a campaign, in config order.
pub fn crowd_report(state: &CampaignState) -> Result<(ScoreTable, Vec<AccuracyCurve>), MetricsError> {
    let config = state.config.as_ref().ok_or(MetricsError::NoTrials)?;
    let trials = state.completed_trials();
    if trials.is_empty() {
        return Err(MetricsError::NoTrials);
    }
    let curves = config
        .methods
        .iter()
        .map(|m| crowd_accuracy_curve(&trials, m, config.schedule.rates()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((ScoreTable::from_curves(&curves)?, curves))
}
