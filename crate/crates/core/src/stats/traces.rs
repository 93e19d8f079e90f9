use crate::error::{PoscmError, Result};

/// Upward crossings of `threshold` per second; `dt` in milliseconds.
pub fn firing_rate(trace: &[f64], threshold: f64, dt: f64) -> Result<f64> {
    if trace.len() < 2 {
        return Err(PoscmError::InsufficientSamples("trace needs two samples".into()));
    }
    if !(dt > 0.0) {
        return Err(PoscmError::InvalidParameter(format!("dt {dt}")));
    }
    let crossings = trace.windows(2).filter(|w| w[0] < threshold && w[1] >= threshold).count();
    let seconds = (trace.len() - 1) as f64 * dt / 1000.0;
    Ok(crossings as f64 / seconds)
}

fn tail_mean(x: &[f64], window_frac: f64) -> f64 {
    let k = ((x.len() as f64 * window_frac).round() as usize).clamp(1, x.len());
    x[x.len() - k..].iter().sum::<f64>() / k as f64
}

/// Mean of the last `window_frac` of `intervened` minus that of `observed`.
pub fn steady_state_effect(intervened: &[f64], observed: &[f64], window_frac: f64) -> Result<f64> {
    if intervened.len() != observed.len() {
        return Err(PoscmError::InvalidParameter(format!(
            "trace lengths {} and {}",
            intervened.len(),
            observed.len()
        )));
    }
    if intervened.is_empty() || !(window_frac > 0.0 && window_frac <= 1.0) {
        return Err(PoscmError::InvalidParameter(format!("window {window_frac} on {} samples", intervened.len())));
    }
    Ok(tail_mean(intervened, window_frac) - tail_mean(observed, window_frac))
}
