//! WebAssembly bindings for the browser demo: decode a latent into a
//! trajectory, classify the maneuver and run the latent watchdog.

use dvae::decoder::decode;
use dvae::latent::{classify, validate, ClassifierThresholds, WatchdogRuleSet};
use dvae::{LatentParams, TimeGrid};
use wasm_bindgen::prelude::*;

fn params(a_x: f64, lambda: f64, mu: f64) -> LatentParams {
    LatentParams { a_x, lambda, stretch: mu }
}

/// Predicted points as `[x_1..x_P, y_1..y_P]` on the default 5 s grid.
#[wasm_bindgen]
pub fn decode_trajectory(a_x: f64, lambda: f64, mu: f64, v0x: f64) -> Result<Vec<f64>, JsError> {
    if !(mu > 0.0) {
        return Err(JsError::new("stretch must be positive"));
    }
    Ok(decode(params(a_x, lambda, mu).to_latent(), v0x, &TimeGrid::default()).flatten())
}

/// Prediction timestamps in seconds.
#[wasm_bindgen]
pub fn prediction_times() -> Vec<f64> {
    TimeGrid::default().times()
}

/// `"LL"`, `"KL"` or `"LR"`.
#[wasm_bindgen]
pub fn classify_maneuver(lambda: f64, mu: f64, t_lambda: f64, t_mu: f64) -> Result<String, JsError> {
    let th = ClassifierThresholds { t_lambda, t_mu };
    th.validate().map_err(|e| JsError::new(&e.to_string()))?;
    Ok(classify(&params(0.0, lambda, mu), &th).to_string())
}

/// Empty when accepted, otherwise the violated rule names joined by `;`.
#[wasm_bindgen]
pub fn watchdog_violations(a_x: f64, lambda: f64, mu: f64, lambda_abs_max: f64) -> Result<String, JsError> {
    let rules = WatchdogRuleSet { lambda_abs_max, ..WatchdogRuleSet::default() };
    rules.validate().map_err(|e| JsError::new(&e.to_string()))?;
    Ok(validate(&params(a_x, lambda, mu), &rules).rules())
}
