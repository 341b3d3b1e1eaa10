//! Outage-impact labels: the training signal for the scoring model.
//!
//! Each attackable line is removed in isolation (current switch state, base
//! dispatch) and the resulting shed fraction is recorded; a bus inherits the
//! worst fraction over its incident lines.

use crate::netmodel::Network;
use crate::powerflow::{evaluate_objectives, Dispatch, PfError};
use crate::F;

/// Per-bus impact targets in `[0, 1]`, aligned with `net.buses`.
pub fn impact_labels(net: &Network) -> Result<Vec<F>, PfError> {
    let index = net.bus_index();
    let total = net.total_load_kw();
    let dispatch = Dispatch::base_case(net);
    let sigma: Vec<bool> = net.tie_switches.iter().map(|t| t.closed).collect();
    let mut labels = vec![0.0; net.buses.len()];
    if total <= 0.0 {
        return Ok(labels);
    }
    for attack in net.attackable_assets() {
        let eval = evaluate_objectives(net, &dispatch, &sigma, Some(&attack))?;
        let fraction = (eval.objectives.f1 / total).clamp(0.0, 1.0);
        for bus in [attack.end_buses.0, attack.end_buses.1] {
            let pos = index[&bus];
            labels[pos] = labels[pos].max(fraction);
        }
    }
    Ok(labels)
}
