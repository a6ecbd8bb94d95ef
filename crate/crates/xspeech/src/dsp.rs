//! Shared signal plumbing: a log-spaced band analyzer and autocorrelation
//! pitch estimation. Used by the codec front end and the oracle decoder.

use ndarray::Array2;

pub const SAMPLE_RATE: u32 = 8000;
pub const HOP: usize = 80; // 100 frames/s at 8 kHz

/// Band layout: a dense low region for the fundamental, coarser bands above
/// for timbre patterns.
pub const LOW_BANDS: usize = 14;
pub const TIMBRE_BANDS: usize = 6;
pub const NUM_BANDS: usize = LOW_BANDS + TIMBRE_BANDS;
pub const LOW_F_MIN: f64 = 70.0;
pub const LOW_F_MAX: f64 = 560.0;
pub const TIMBRE_F_MIN: f64 = 700.0;
pub const TIMBRE_F_MAX: f64 = 3800.0;

pub const DB_FLOOR: f64 = -80.0;
pub const FLOOR_AMP: f64 = 1e-4; // 10^(DB_FLOOR/20)

/// One analysis band: a Gaussian-windowed single-frequency DFT probe.
#[derive(Debug, Clone)]
pub struct Band {
    pub center_hz: f64,
    /// Gaussian spectral half-width.
    pub sigma_hz: f64,
    /// Window half-length in samples (truncated at ~3 sigma_t).
    pub half_len: usize,
    /// 1 / (sum of window / 2): unit response to a full-scale tone at center.
    norm: f64,
}

impl Band {
    /// Free-standing probe at an arbitrary frequency (tilt regression etc.).
    pub fn probe(center_hz: f64, sigma_hz: f64, sample_rate: f64) -> Self {
        Self::new(center_hz, sigma_hz, sample_rate)
    }

    fn new(center_hz: f64, sigma_hz: f64, sample_rate: f64) -> Self {
        let sigma_t = sample_rate / (2.0 * std::f64::consts::PI * sigma_hz);
        let half_len = ((3.0 * sigma_t).ceil() as usize).clamp(4, 240);
        let mut wsum = 0.0;
        for n in -(half_len as i64)..=(half_len as i64) {
            let t = n as f64 / sigma_t;
            wsum += (-0.5 * t * t).exp();
        }
        Self {
            center_hz,
            sigma_hz,
            half_len,
            norm: 2.0 / wsum,
        }
    }

    /// Amplitude of the band probe centered on sample `center`.
    pub fn amplitude(&self, x: &[f64], center: i64, sample_rate: f64) -> f64 {
        let sigma_t = sample_rate / (2.0 * std::f64::consts::PI * self.sigma_hz);
        let omega = 2.0 * std::f64::consts::PI * self.center_hz / sample_rate;
        let mut re = 0.0;
        let mut im = 0.0;
        for n in -(self.half_len as i64)..=(self.half_len as i64) {
            let idx = center + n;
            if idx < 0 || idx as usize >= x.len() {
                continue;
            }
            let t = n as f64 / sigma_t;
            let w = (-0.5 * t * t).exp();
            let s = w * x[idx as usize];
            let ph = omega * n as f64;
            re += s * ph.cos();
            im -= s * ph.sin();
        }
        (re * re + im * im).sqrt() * self.norm
    }
}

/// The fixed filterbank shared by analysis and oracle decoding.
#[derive(Debug, Clone)]
pub struct Filterbank {
    pub bands: Vec<Band>,
    pub sample_rate: f64,
}

impl Filterbank {
    pub fn new(sample_rate: f64) -> Self {
        let mut bands = Vec::with_capacity(NUM_BANDS);
        for k in 0..LOW_BANDS {
            let c = LOW_F_MIN
                * (LOW_F_MAX / LOW_F_MIN).powf(k as f64 / (LOW_BANDS - 1) as f64);
            let sigma = (0.10 * c).max(22.0);
            bands.push(Band::new(c, sigma, sample_rate));
        }
        for k in 0..TIMBRE_BANDS {
            let c = TIMBRE_F_MIN
                * (TIMBRE_F_MAX / TIMBRE_F_MIN).powf(k as f64 / (TIMBRE_BANDS - 1) as f64);
            let sigma = 0.25 * c;
            bands.push(Band::new(c, sigma, sample_rate));
        }
        Self {
            bands,
            sample_rate,
        }
    }

    pub fn num_bands(&self) -> usize {
        self.bands.len()
    }

    /// dB feature vector at an arbitrary sample position.
    pub fn analyze_at(&self, x: &[f64], center: i64) -> Vec<f64> {
        self.bands
            .iter()
            .map(|b| {
                let a = b.amplitude(x, center, self.sample_rate).max(FLOOR_AMP);
                20.0 * a.log10()
            })
            .collect()
    }

    /// Frame the signal at `hop` and analyze each frame center; returns
    /// `(ceil(len/hop), NUM_BANDS)`.
    pub fn analyze_frames(&self, x: &[f64], hop: usize) -> Array2<f64> {
        let n = x.len().div_ceil(hop);
        let mut out = Array2::zeros((n, self.num_bands()));
        for i in 0..n {
            let center = (i * hop + hop / 2) as i64;
            let feats = self.analyze_at(x, center);
            for (j, f) in feats.into_iter().enumerate() {
                out[(i, j)] = f;
            }
        }
        out
    }
}

/// Autocorrelation pitch estimate over `f0_min..f0_max`, with parabolic lag
/// refinement. Returns None for silent or aperiodic input.
pub fn estimate_f0(x: &[f64], sample_rate: f64, f0_min: f64, f0_max: f64) -> Option<f64> {
    let lag_min = (sample_rate / f0_max).floor() as usize;
    let lag_max = (sample_rate / f0_min).ceil() as usize;
    if x.len() < 2 * lag_max {
        return None;
    }
    let r0: f64 = x.iter().map(|v| v * v).sum();
    if r0 < 1e-8 {
        return None;
    }
    let corr = |lag: usize| -> f64 {
        let mut s = 0.0;
        for i in 0..x.len() - lag {
            s += x[i] * x[i + lag];
        }
        s / r0
    };
    let rs: Vec<f64> = (lag_min..=lag_max).map(corr).collect();
    let max_r = rs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max_r < 0.2 {
        return None;
    }
    // earliest local peak close to the global max avoids octave halving
    let mut best_lag = None;
    for (i, &r) in rs.iter().enumerate() {
        let left = if i == 0 { f64::NEG_INFINITY } else { rs[i - 1] };
        let right = if i + 1 == rs.len() {
            f64::NEG_INFINITY
        } else {
            rs[i + 1]
        };
        if r >= left && r >= right && r >= 0.95 * max_r {
            best_lag = Some(i);
            break;
        }
    }
    let i = best_lag?;
    let lag = (lag_min + i) as f64;
    // parabolic refinement on the correlation triple
    let refined = if i > 0 && i + 1 < rs.len() {
        let (a, b, c) = (rs[i - 1], rs[i], rs[i + 1]);
        let denom = a - 2.0 * b + c;
        if denom.abs() > 1e-12 {
            lag + 0.5 * (a - c) / denom
        } else {
            lag
        }
    } else {
        lag
    };
    Some(sample_rate / refined)
}

/// Root-mean-square of a signal.
pub fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}
