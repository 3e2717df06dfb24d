use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::parallel_forward;
use crate::error::{Error, Result};
use crate::ptq::QuantModel;
use crate::tensor::FloatTensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub reps: usize,
    pub min_s: f64,
    pub median_s: f64,
    pub mean_s: f64,
    pub max_s: f64,
}

impl LatencyStats {
    pub fn from_samples(samples: &[f64]) -> Self {
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
        };
        LatencyStats {
            reps: n,
            min_s: sorted[0],
            median_s: median,
            mean_s: sorted.iter().sum::<f64>() / n as f64,
            max_s: sorted[n - 1],
        }
    }
}

/// Times `reps` calls of `f` after one untimed warm-up call.
pub fn time_runs<F>(reps: usize, mut f: F) -> Result<LatencyStats>
where
    F: FnMut() -> Result<()>,
{
    if reps < 3 {
        return Err(Error::InvalidArgument(format!(
            "latency measurement needs at least 3 repetitions, got {reps}"
        )));
    }
    f()?;
    let mut samples = Vec::with_capacity(reps);
    for _ in 0..reps {
        let start = Instant::now();
        f()?;
        samples.push(start.elapsed().as_secs_f64());
    }
    Ok(LatencyStats::from_samples(&samples))
}

pub fn measure_latency(
    m: &QuantModel,
    x: &FloatTensor,
    core_budget: usize,
    reps: usize,
) -> Result<LatencyStats> {
    time_runs(reps, || parallel_forward(m, x, core_budget).map(drop))
}
