//! Framing, windowing, STFT, power spectrogram, mel filterbank and MFCC.

mod fft;
mod mel;

use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::AudioBuffer;

pub use fft::{fft, Fft};
pub use mel::{dct_matrix, hz_to_mel, make_mel_filterbank, mel_to_hz, mfcc, MelFilterbank, LOG_FLOOR};

#[derive(Debug, Error, PartialEq)]
pub enum DspError {
    #[error("signal has {len} samples, shorter than one {win}-sample frame")]
    SignalTooShort { len: usize, win: usize },
    #[error("FFT size {0} is not a power of two")]
    NotPowerOfTwo(usize),
    #[error("invalid STFT config: {0}")]
    InvalidConfig(String),
    #[error("invalid range: {0}")]
    InvalidRange(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    /// Periodic Hann, `0.5 - 0.5 cos(2 pi n / N)`.
    Hann,
    Rectangular,
}

impl Window {
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            Window::Rectangular => vec![1.0; len],
            Window::Hann => (0..len)
                .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
                .collect(),
        }
    }

    pub fn code(self) -> u32 {
        match self {
            Window::Hann => 0,
            Window::Rectangular => 1,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Window::Hann),
            1 => Some(Window::Rectangular),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StftConfig {
    pub win_length: usize,
    pub hop_length: usize,
    pub n_fft: usize,
    pub window: Window,
}

impl StftConfig {
    pub fn new(
        win_length: usize,
        hop_length: usize,
        n_fft: usize,
        window: Window,
    ) -> Result<Self, DspError> {
        let cfg = Self {
            win_length,
            hop_length,
            n_fft,
            window,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// 256-sample Hann window, 50-sample hop, 256-point FFT: 128 bins per
    /// frame, and 8 frames step through 25 ms of signal.
    pub fn vae() -> Self {
        Self {
            win_length: 256,
            hop_length: 50,
            n_fft: 256,
            window: Window::Hann,
        }
    }

    /// 25 ms window, 10 ms hop at 16 kHz, zero-padded to 512 points.
    pub fn mfcc() -> Self {
        Self {
            win_length: 400,
            hop_length: 160,
            n_fft: 512,
            window: Window::Hann,
        }
    }

    pub fn validate(&self) -> Result<(), DspError> {
        if !(0 < self.hop_length && self.hop_length <= self.win_length && self.win_length <= self.n_fft)
        {
            return Err(DspError::InvalidConfig(format!(
                "need 0 < hop_length ({}) <= win_length ({}) <= n_fft ({})",
                self.hop_length, self.win_length, self.n_fft
            )));
        }
        if !self.n_fft.is_power_of_two() {
            return Err(DspError::NotPowerOfTwo(self.n_fft));
        }
        Ok(())
    }

    pub fn num_frames(&self, signal_len: usize) -> Result<usize, DspError> {
        if signal_len < self.win_length {
            return Err(DspError::SignalTooShort {
                len: signal_len,
                win: self.win_length,
            });
        }
        Ok(1 + (signal_len - self.win_length) / self.hop_length)
    }

    /// Signal length that yields exactly `frames` frames.
    pub fn samples_for_frames(&self, frames: usize) -> usize {
        (frames.max(1) - 1) * self.hop_length + self.win_length
    }
}

/// Complex STFT with nonnegative-frequency bins `0..=n_fft/2`.
#[derive(Debug, Clone)]
pub struct Stft {
    pub data: Array2<Complex64>,
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop_length: usize,
}

/// Power spectrogram, frames x bins, DC bin removed: column `j` holds the
/// power at `(j + 1) * bin_hz`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub data: Array2<f64>,
    pub bin_hz: f64,
    pub frame_hop_s: f64,
}

impl Spectrogram {
    pub fn frames(&self) -> usize {
        self.data.nrows()
    }

    pub fn bins(&self) -> usize {
        self.data.ncols()
    }
}

/// Frame `k` starts at `k * hop_length`; a trailing partial frame is dropped.
pub fn frame_signal(audio: &AudioBuffer, cfg: &StftConfig) -> Result<Array2<f64>, DspError> {
    cfg.validate()?;
    let frames = cfg.num_frames(audio.samples.len())?;
    Ok(Array2::from_shape_fn((frames, cfg.win_length), |(k, n)| {
        audio.samples[k * cfg.hop_length + n]
    }))
}

pub fn stft(audio: &AudioBuffer, cfg: &StftConfig) -> Result<Stft, DspError> {
    let frames = frame_signal(audio, cfg)?;
    let plan = Fft::new(cfg.n_fft)?;
    let window = cfg.window.coefficients(cfg.win_length);
    let bins = cfg.n_fft / 2 + 1;
    let mut data = Array2::zeros((frames.nrows(), bins));
    let mut buf = vec![Complex64::default(); cfg.n_fft];
    for (frame, mut out) in frames.rows().into_iter().zip(data.rows_mut()) {
        buf.fill(Complex64::default());
        for ((slot, &x), &w) in buf.iter_mut().zip(frame.iter()).zip(&window) {
            slot.re = x * w;
        }
        plan.process(&mut buf);
        for (o, v) in out.iter_mut().zip(&buf[..bins]) {
            *o = *v;
        }
    }
    Ok(Stft {
        data,
        sample_rate: audio.sample_rate,
        n_fft: cfg.n_fft,
        hop_length: cfg.hop_length,
    })
}

/// `|X|^2` per bin with the DC column dropped (`n_fft/2` bins remain).
pub fn power_spectrogram(stft: &Stft) -> Spectrogram {
    let (frames, bins) = stft.data.dim();
    let kept = bins.saturating_sub(1);
    let data = Array2::from_shape_fn((frames, kept), |(f, j)| stft.data[[f, j + 1]].norm_sqr());
    Spectrogram {
        data,
        bin_hz: f64::from(stft.sample_rate) / stft.n_fft as f64,
        frame_hop_s: stft.hop_length as f64 / f64::from(stft.sample_rate),
    }
}

pub fn spectrogram(audio: &AudioBuffer, cfg: &StftConfig) -> Result<Spectrogram, DspError> {
    Ok(power_spectrogram(&stft(audio, cfg)?))
}
