use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnf::ModelGraph;
use crate::tensor::FloatTensor;

const HISTOGRAM_BINS: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SiteStats {
    pub min: f32,
    pub max: f32,
    pub count: u64,
}

impl SiteStats {
    fn observe(&mut self, t: &FloatTensor) {
        let (lo, hi) = t.minmax();
        if self.count == 0 {
            self.min = lo;
            self.max = hi;
        } else {
            self.min = self.min.min(lo);
            self.max = self.max.max(hi);
        }
        self.count += 1;
    }
}

/// Per-site activation ranges. Site 0 is the model input and site `i + 1`
/// is the output of layer `i`; a trailing softmax output is not a site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationStats {
    pub sites: Vec<SiteStats>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum CalibrationMethod {
    #[default]
    MinMax,
    /// Clip each site to the `[100 - p, p]` percentile band of a 2048-bin
    /// histogram over the min/max range. `p` must lie in `(50, 100]`.
    Percentile(f64),
}

/// Number of quantization sites for `g`.
pub fn site_count(g: &ModelGraph) -> usize {
    g.layers().len() + 1 - usize::from(g.ends_in_softmax())
}

fn check_samples(g: &ModelGraph, samples: &[FloatTensor]) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::NoCalibrationSamples);
    }
    if let Some(bad) = samples.iter().find(|s| s.shape() != g.input_shape()) {
        return Err(Error::InputShape {
            expected: g.input_shape().dims().to_vec(),
            actual: bad.shape().dims().to_vec(),
        });
    }
    g.validate()?;
    Ok(())
}

/// Folds elementwise min/max of every site over all samples.
pub fn calibrate(g: &ModelGraph, samples: &[FloatTensor]) -> Result<CalibrationStats> {
    check_samples(g, samples)?;
    let n = site_count(g);
    let mut sites = vec![
        SiteStats {
            min: 0.0,
            max: 0.0,
            count: 0,
        };
        n
    ];
    for sample in samples {
        let acts = g.forward_sites(sample)?;
        for (stats, act) in sites.iter_mut().zip(&acts) {
            stats.observe(act);
        }
    }
    Ok(CalibrationStats { sites })
}

pub fn calibrate_with(
    g: &ModelGraph,
    samples: &[FloatTensor],
    method: CalibrationMethod,
) -> Result<CalibrationStats> {
    let p = match method {
        CalibrationMethod::MinMax => return calibrate(g, samples),
        CalibrationMethod::Percentile(p) => p,
    };
    if !(p > 50.0 && p <= 100.0) {
        return Err(Error::InvalidArgument(format!(
            "percentile {p} outside (50, 100]"
        )));
    }
    let mut stats = calibrate(g, samples)?;
    let mut histograms = vec![[0u64; HISTOGRAM_BINS]; stats.sites.len()];
    for sample in samples {
        let acts = g.forward_sites(sample)?;
        for ((hist, site), act) in histograms.iter_mut().zip(&stats.sites).zip(&acts) {
            let width = (site.max - site.min) as f64;
            for &v in act.data() {
                let bin = if width > 0.0 {
                    (((v - site.min) as f64 / width) * HISTOGRAM_BINS as f64) as usize
                } else {
                    0
                };
                hist[bin.min(HISTOGRAM_BINS - 1)] += 1;
            }
        }
    }
    for (site, hist) in stats.sites.iter_mut().zip(&histograms) {
        let total: u64 = hist.iter().sum();
        let width = (site.max - site.min) as f64;
        if width == 0.0 || total == 0 {
            continue;
        }
        let bin_edge = |i: usize| site.min as f64 + width * i as f64 / HISTOGRAM_BINS as f64;
        let lower_target = ((100.0 - p) / 100.0 * total as f64).floor() as u64;
        let upper_target = (p / 100.0 * total as f64).ceil() as u64;
        let mut cumulative = 0u64;
        let mut lo = site.min as f64;
        let mut hi = site.max as f64;
        let mut lo_set = false;
        for (i, &count) in hist.iter().enumerate() {
            cumulative += count;
            if !lo_set && cumulative > lower_target {
                lo = bin_edge(i);
                lo_set = true;
            }
            if cumulative >= upper_target {
                hi = bin_edge(i + 1);
                break;
            }
        }
        site.min = (lo as f32).max(site.min);
        site.max = (hi as f32).min(site.max);
    }
    Ok(stats)
}
