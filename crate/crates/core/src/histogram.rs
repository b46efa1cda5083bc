//! Cross-correlation histograms and their reduction to visibilities.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optics::DENOMINATOR_FLOOR;

/// Binned coincidence counts versus delay.
///
/// Bin `b` is centred at delay `b * bin_width - t0_offset`, so `t0_offset` is
/// the time of the zero-delay bin centre measured from bin 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width: f64,
    pub counts: Vec<u64>,
    pub t0_offset: f64,
    pub pump_period: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestOptions {
    /// Half-width of each integration window as a fraction of the pump period.
    pub window_fraction: f64,
    /// Side peaks used on each side of the central peak.
    pub n_side_peaks: usize,
    /// Subtract a flat background estimated from the bins between windows.
    pub subtract_background: bool,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            window_fraction: 0.4,
            n_side_peaks: 5,
            subtract_background: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IngestedVisibility {
    pub value: f64,
    pub sigma: f64,
    pub central_area: f64,
    pub mean_side_area: f64,
}

impl Histogram {
    pub fn validate(&self) -> Result<()> {
        if !(self.bin_width > 0.0) || !(self.pump_period > self.bin_width) || !self.pump_period.is_finite() {
            return Err(Error::InvalidData("need pump_period > bin_width > 0".into()));
        }
        if !self.t0_offset.is_finite() {
            return Err(Error::InvalidData("t0_offset must be finite".into()));
        }
        let needed = 3.0 * self.pump_period / self.bin_width;
        if (self.counts.len() as f64) < needed {
            return Err(Error::InvalidData(format!(
                "{} bins, need at least {}",
                self.counts.len(),
                needed.ceil()
            )));
        }
        Ok(())
    }

    pub fn delay(&self, bin: usize) -> f64 {
        bin as f64 * self.bin_width - self.t0_offset
    }

    /// Sum of bins whose centre delay lies in [centre - half, centre + half).
    fn window_sum(&self, centre: f64, half: f64) -> (f64, usize) {
        let mut sum = 0.0;
        let mut bins = 0;
        for (b, &c) in self.counts.iter().enumerate() {
            let d = self.delay(b);
            if d >= centre - half && d < centre + half {
                sum += c as f64;
                bins += 1;
            }
        }
        (sum, bins)
    }

    /// Gaussian peaks of the given areas at delays kτ_p plus a flat
    /// background, Poisson sampled. `areas[n]` is the central peak for
    /// `areas.len() = 2n + 1`.
    pub fn synthetic<R: Rng + ?Sized>(
        areas: &[f64],
        bin_width: f64,
        pump_period: f64,
        peak_width: f64,
        background: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if areas.len().is_multiple_of(2) {
            return Err(Error::InvalidData("need an odd number of peak areas".into()));
        }
        let half = (areas.len() / 2) as f64;
        let span = (areas.len() as f64) * pump_period;
        let n_bins = (span / bin_width).round() as usize;
        let t0_offset = (half + 0.5) * pump_period;
        let mut counts = Vec::with_capacity(n_bins);
        for b in 0..n_bins {
            let d = b as f64 * bin_width - t0_offset;
            let mut mean = background;
            for (k, &a) in areas.iter().enumerate() {
                let c = (k as f64 - half) * pump_period;
                let z = (d - c) / peak_width;
                mean += a * bin_width * (-0.5 * z * z).exp() / (peak_width * (2.0 * std::f64::consts::PI).sqrt());
            }
            let draw = if mean > 0.0 {
                Poisson::new(mean).map_err(|e| Error::InvalidData(e.to_string()))?.sample(rng) as u64
            } else {
                0
            };
            counts.push(draw);
        }
        let h = Self {
            bin_width,
            counts,
            t0_offset,
            pump_period,
        };
        h.validate()?;
        Ok(h)
    }
}

/// V = A0 / ⟨A_k⟩ with Poisson uncertainty.
pub fn ingest_histogram(h: &Histogram, opts: &IngestOptions) -> Result<IngestedVisibility> {
    h.validate()?;
    let wf = opts.window_fraction;
    if !(wf > 0.0) {
        return Err(Error::InvalidWindow(format!("window_fraction {wf} must be > 0")));
    }
    if wf > 0.5 {
        return Err(Error::InvalidWindow(format!("window_fraction {wf} > 0.5 makes peak windows overlap")));
    }
    if opts.n_side_peaks < 2 {
        return Err(Error::InvalidWindow(format!("n_side_peaks {} must be >= 2", opts.n_side_peaks)));
    }
    let tau = h.pump_period;
    let half = wf * tau;
    let n = opts.n_side_peaks as f64;
    let lo = h.delay(0) - 0.5 * h.bin_width;
    let hi = h.delay(h.counts.len() - 1) + 0.5 * h.bin_width;
    if -n * tau - half < lo - 1e-9 * tau || n * tau + half > hi + 1e-9 * tau {
        return Err(Error::InsufficientData(format!(
            "histogram spans delays [{lo}, {hi}), need ±{}",
            n * tau + half
        )));
    }

    let background = if opts.subtract_background {
        let reach = (n + 0.5) * tau;
        let mut sum = 0.0;
        let mut bins = 0usize;
        for (b, &c) in h.counts.iter().enumerate() {
            let d = h.delay(b);
            if d.abs() > reach {
                continue;
            }
            let nearest = (d / tau).round();
            if (d - nearest * tau).abs() >= half {
                sum += c as f64;
                bins += 1;
            }
        }
        if bins == 0 {
            return Err(Error::InvalidWindow("no bins between windows to estimate the background".into()));
        }
        sum / bins as f64
    } else {
        0.0
    };

    let area = |centre: f64| {
        let (s, bins) = h.window_sum(centre, half);
        (s - background * bins as f64, s)
    };
    let (a0, a0_raw) = area(0.0);
    let mut side_sum = 0.0;
    let mut side_raw = 0.0;
    for k in 1..=opts.n_side_peaks {
        for sign in [-1.0, 1.0] {
            let (a, raw) = area(sign * k as f64 * tau);
            side_sum += a;
            side_raw += raw;
        }
    }
    let m = 2.0 * n;
    let mean_side = side_sum / m;
    if mean_side.abs() < DENOMINATOR_FLOOR {
        return Err(Error::UndefinedVisibility { denominator: mean_side });
    }
    let sigma_mean = side_raw.sqrt() / m;
    let value = a0 / mean_side;
    let sigma = ((a0_raw.sqrt() / mean_side).powi(2) + (a0 * sigma_mean / (mean_side * mean_side)).powi(2)).sqrt();
    Ok(IngestedVisibility {
        value,
        sigma,
        central_area: a0,
        mean_side_area: mean_side,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn delta_histogram(central: u64, side: u64, periods: usize) -> Histogram {
        let per = 10;
        let mut counts = vec![0u64; per * (2 * periods + 1)];
        for k in 0..(2 * periods + 1) {
            counts[k * per + per / 2] = if k == periods { central } else { side };
        }
        Histogram {
            bin_width: 1.0,
            counts,
            t0_offset: (periods * per + per / 2) as f64,
            pump_period: per as f64,
        }
    }

    #[test]
    fn delta_peaks() {
        let v = ingest_histogram(&delta_histogram(30, 60, 6), &IngestOptions::default()).unwrap();
        assert!((v.value - 0.5).abs() < 1e-15);
    }

    #[test]
    fn flat_background_gives_unity() {
        let h = Histogram {
            bin_width: 1.0,
            counts: vec![7; 200],
            t0_offset: 100.0,
            pump_period: 10.0,
        };
        let v = ingest_histogram(&h, &IngestOptions::default()).unwrap();
        assert!((v.value - 1.0).abs() < 1e-15);
    }

    #[test]
    fn background_subtraction_removes_flat_floor() {
        let mut h = delta_histogram(30, 60, 6);
        h.counts.iter_mut().for_each(|c| *c += 5);
        let opts = IngestOptions {
            window_fraction: 0.3,
            subtract_background: true,
            ..IngestOptions::default()
        };
        let v = ingest_histogram(&h, &opts).unwrap();
        assert!((v.value - 0.5).abs() < 1e-12, "{}", v.value);
    }

    #[test]
    fn scale_invariance() {
        let a = delta_histogram(31, 57, 6);
        let mut b = a.clone();
        b.counts.iter_mut().for_each(|c| *c *= 13);
        let va = ingest_histogram(&a, &IngestOptions::default()).unwrap();
        let vb = ingest_histogram(&b, &IngestOptions::default()).unwrap();
        assert!((va.value - vb.value).abs() < 1e-14);
        assert!(vb.sigma < va.sigma);
    }

    #[test]
    fn window_errors() {
        let h = delta_histogram(30, 60, 6);
        let bad = |wf, n| ingest_histogram(&h, &IngestOptions { window_fraction: wf, n_side_peaks: n, ..IngestOptions::default() });
        assert!(matches!(bad(0.6, 5), Err(Error::InvalidWindow(_))));
        assert!(matches!(bad(0.0, 5), Err(Error::InvalidWindow(_))));
        assert!(matches!(bad(0.4, 1), Err(Error::InvalidWindow(_))));
        assert!(matches!(bad(0.4, 7), Err(Error::InsufficientData(_))));
        let empty = Histogram { counts: vec![0; 130], ..h.clone() };
        assert!(matches!(ingest_histogram(&empty, &IngestOptions::default()), Err(Error::UndefinedVisibility { .. })));
    }

    #[test]
    fn synthetic_gaussian_peaks_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut areas = vec![4000.0; 13];
        areas[6] = 1000.0;
        let h = Histogram::synthetic(&areas, 0.1, 10.0, 0.5, 0.0, &mut rng).unwrap();
        let v = ingest_histogram(&h, &IngestOptions::default()).unwrap();
        assert!((v.value - 0.25).abs() < 3.0 * v.sigma, "{} ± {}", v.value, v.sigma);
    }
}
