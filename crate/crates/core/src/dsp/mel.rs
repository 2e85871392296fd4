use std::f64::consts::PI;

use ndarray::Array2;

use super::{spectrogram, DspError, StftConfig};
use crate::audio::AudioBuffer;

/// Floor added to mel energies before the log, so silent frames stay finite.
pub const LOG_FLOOR: f64 = 1e-10;

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters on a mel-uniform grid, sampled at the centre
/// frequencies of the DC-less spectrogram bins. Each row peaks at exactly 1.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    pub weights: Array2<f64>,
    pub n_filters: usize,
    pub f_min: f64,
    pub f_max: f64,
}

impl MelFilterbank {
    pub fn bins(&self) -> usize {
        self.weights.ncols()
    }
}

pub fn make_mel_filterbank(
    n_filters: usize,
    n_fft: usize,
    sample_rate: u32,
    f_min: f64,
    f_max: f64,
) -> Result<MelFilterbank, DspError> {
    let nyquist = f64::from(sample_rate) / 2.0;
    if n_filters == 0 {
        return Err(DspError::InvalidRange("need at least one filter".into()));
    }
    if !(0.0 <= f_min && f_min < f_max && f_max <= nyquist) {
        return Err(DspError::InvalidRange(format!(
            "need 0 <= f_min ({f_min}) < f_max ({f_max}) <= {nyquist}"
        )));
    }
    if n_fft < 2 || !n_fft.is_power_of_two() {
        return Err(DspError::NotPowerOfTwo(n_fft));
    }
    let bins = n_fft / 2;
    let bin_hz = f64::from(sample_rate) / n_fft as f64;
    let (mel_lo, mel_hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
    let edges: Vec<f64> = (0..n_filters + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (n_filters + 1) as f64))
        .collect();

    let mut weights = Array2::zeros((n_filters, bins));
    for (i, mut row) in weights.rows_mut().into_iter().enumerate() {
        let (left, centre, right) = (edges[i], edges[i + 1], edges[i + 2]);
        for (j, w) in row.iter_mut().enumerate() {
            let f = (j + 1) as f64 * bin_hz;
            *w = if f > left && f <= centre {
                (f - left) / (centre - left)
            } else if f > centre && f < right {
                (right - f) / (right - centre)
            } else {
                0.0
            };
        }
        let peak = row.iter().copied().fold(0.0, f64::max);
        if peak <= 0.0 {
            return Err(DspError::InvalidRange(format!(
                "filter {i} ({left:.1}-{right:.1} Hz) covers no FFT bin; use fewer filters"
            )));
        }
        row.mapv_inplace(|w| w / peak);
    }
    Ok(MelFilterbank {
        weights,
        n_filters,
        f_min,
        f_max,
    })
}

/// Orthonormal DCT-II, `n x n`; row `k` is the `k`-th basis vector.
pub fn dct_matrix(n: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, n), |(k, i)| {
        let scale = if k == 0 {
            (1.0 / n as f64).sqrt()
        } else {
            (2.0 / n as f64).sqrt()
        };
        scale * (PI * (2 * i + 1) as f64 * k as f64 / (2 * n) as f64).cos()
    })
}

/// Power spectrogram -> mel energies -> `ln(x + 1e-10)` -> DCT-II, keeping
/// coefficients `0..n_coeffs` (c0 included).
pub fn mfcc(
    audio: &AudioBuffer,
    cfg: &StftConfig,
    fb: &MelFilterbank,
    n_coeffs: usize,
) -> Result<Array2<f64>, DspError> {
    if n_coeffs == 0 || n_coeffs > fb.n_filters {
        return Err(DspError::InvalidRange(format!(
            "n_coeffs {n_coeffs} must be in 1..={}",
            fb.n_filters
        )));
    }
    if fb.bins() != cfg.n_fft / 2 {
        return Err(DspError::InvalidRange(format!(
            "filterbank has {} bins, STFT produces {}",
            fb.bins(),
            cfg.n_fft / 2
        )));
    }
    let spec = spectrogram(audio, cfg)?;
    let log_mel = spec.data.dot(&fb.weights.t()).mapv(|e| (e + LOG_FLOOR).ln());
    let dct = dct_matrix(fb.n_filters);
    let basis = dct.slice(ndarray::s![..n_coeffs, ..]);
    Ok(log_mel.dot(&basis.t()))
}
