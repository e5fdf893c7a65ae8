//! Pilot-overhead discount applied to raw rates.

use super::config::OverheadModel;

/// `max(0, 1 - N_p T_p / T_s) * raw` for an array of `elements` elements.
pub fn effective_rate(raw_rate: f64, pilot_elements: usize, elements: usize, model: &OverheadModel) -> f64 {
    let fraction = pilot_elements as f64 * model.pilot_symbols / model.slot_symbols_for(elements);
    (1.0 - fraction).max(0.0) * raw_rate
}
