use crate::error::{Error, Result};
use crate::sim::forcing::STEPS_PER_MONTH;

/// Means of consecutive 30-day months (120 six-hourly steps each).
pub fn aggregate_monthly(series: &[f64]) -> Result<Vec<f64>> {
    if series.len() % STEPS_PER_MONTH != 0 {
        return Err(Error::Range(format!(
            "series length {} is not a whole number of {STEPS_PER_MONTH}-step months",
            series.len()
        )));
    }
    Ok(series
        .chunks_exact(STEPS_PER_MONTH)
        .map(|m| m.iter().sum::<f64>() / STEPS_PER_MONTH as f64)
        .collect())
}
