//! WAV ingestion and flat-file matrix export.
//!
//! Only canonical RIFF/WAVE PCM16, little-endian, mono, 16 kHz is accepted.
//! Anything else is a load error; there is no resampling or downmixing.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use thiserror::Error;

pub const SAMPLE_RATE: u32 = 16_000;

const PCM_SCALE: f64 = 32_768.0;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("not a RIFF/WAVE file")]
    NotWav,
    #[error("unsupported {field}: found {found}, expected {expected}")]
    UnsupportedFormat {
        field: &'static str,
        found: u32,
        expected: u32,
    },
    #[error("missing `{0}` chunk")]
    MissingChunk(&'static str),
    #[error("truncated file: {0}")]
    TruncatedFile(String),
    #[error("audio contains no samples")]
    NoSamples,
    #[error("cannot write an empty matrix")]
    EmptyMatrix,
    #[error("malformed csv at line {line}: {reason}")]
    MalformedCsv { line: usize, reason: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> AudioError + '_ {
    move |source| AudioError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Mono samples normalized to `[-1, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn from_pcm16(pcm: &[i16], sample_rate: u32) -> Self {
        let samples = pcm.iter().map(|&s| f64::from(s) / PCM_SCALE).collect();
        Self::new(samples, sample_rate)
    }

    /// Quantize back to PCM16. Exact inverse of [`AudioBuffer::from_pcm16`].
    pub fn to_pcm16(&self) -> Vec<i16> {
        self.samples
            .iter()
            .map(|&s| (s * PCM_SCALE).round().clamp(-32_768.0, 32_767.0) as i16)
            .collect()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }
}

pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioBuffer, AudioError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(io_err(path))?;
    parse_wav(&bytes)
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

struct FmtChunk {
    format_code: u16,
    channels: u16,
    sample_rate: u32,
    bits: u16,
}

/// Parse an in-memory WAV image. Unknown chunks (LIST, fact, ...) are skipped.
pub fn parse_wav(bytes: &[u8]) -> Result<AudioBuffer, AudioError> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(AudioError::NotWav);
    }
    let mut fmt = None;
    let mut data = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body = pos + 8;
        match id {
            b"fmt " => {
                if size < 16 || body + 16 > bytes.len() {
                    return Err(AudioError::TruncatedFile("fmt chunk".into()));
                }
                fmt = Some(FmtChunk {
                    format_code: u16_at(bytes, body),
                    channels: u16_at(bytes, body + 2),
                    sample_rate: u32_at(bytes, body + 4),
                    bits: u16_at(bytes, body + 14),
                });
            }
            b"data" => {
                let available = bytes.len() - body;
                if size > available {
                    return Err(AudioError::TruncatedFile(format!(
                        "data chunk declares {size} bytes, {available} present"
                    )));
                }
                data = Some(&bytes[body..body + size]);
                break;
            }
            _ => {}
        }
        // chunks are word aligned
        pos = body.saturating_add(size).saturating_add(size & 1);
    }

    let fmt = fmt.ok_or(AudioError::MissingChunk("fmt "))?;
    let data = data.ok_or(AudioError::MissingChunk("data"))?;
    check_field("format code", fmt.format_code.into(), 1)?;
    check_field("channels", fmt.channels.into(), 1)?;
    check_field("bit depth", fmt.bits.into(), 16)?;
    check_field("sample rate", fmt.sample_rate, SAMPLE_RATE)?;
    if data.len() % 2 != 0 {
        return Err(AudioError::TruncatedFile("odd-length PCM16 data".into()));
    }
    if data.is_empty() {
        return Err(AudioError::NoSamples);
    }
    let pcm: Vec<i16> = data
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]))
        .collect();
    Ok(AudioBuffer::from_pcm16(&pcm, fmt.sample_rate))
}

fn check_field(field: &'static str, found: u32, expected: u32) -> Result<(), AudioError> {
    if found == expected {
        Ok(())
    } else {
        Err(AudioError::UnsupportedFormat {
            field,
            found,
            expected,
        })
    }
}

/// Canonical 44-byte-header PCM16 mono WAV image.
pub fn encode_wav(audio: &AudioBuffer) -> Vec<u8> {
    encode_pcm16_wav(&audio.to_pcm16(), audio.sample_rate)
}

pub fn encode_pcm16_wav(pcm: &[i16], sample_rate: u32) -> Vec<u8> {
    let data_len = (pcm.len() * 2) as u32;
    let mut out = Vec::with_capacity(44 + pcm.len() * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for s in pcm {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out
}

pub fn write_wav(audio: &AudioBuffer, path: impl AsRef<Path>) -> Result<(), AudioError> {
    let path = path.as_ref();
    fs::write(path, encode_wav(audio)).map_err(io_err(path))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixFormat {
    /// 8-bit binary greymap, min-max scaled.
    Pgm,
    Csv,
}

impl MatrixFormat {
    pub fn from_extension(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "pgm" => Some(Self::Pgm),
            "csv" => Some(Self::Csv),
            _ => None,
        }
    }
}

pub fn write_matrix(
    matrix: &Array2<f64>,
    path: impl AsRef<Path>,
    format: MatrixFormat,
) -> Result<(), AudioError> {
    let path = path.as_ref();
    let bytes = match format {
        MatrixFormat::Pgm => encode_pgm(matrix)?,
        MatrixFormat::Csv => encode_csv(matrix)?.into_bytes(),
    };
    fs::write(path, bytes).map_err(io_err(path))
}

/// Rows become image rows. A constant matrix maps to all-zero pixels.
pub fn encode_pgm(matrix: &Array2<f64>) -> Result<Vec<u8>, AudioError> {
    if matrix.is_empty() {
        return Err(AudioError::EmptyMatrix);
    }
    let (rows, cols) = matrix.dim();
    let lo = matrix.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = matrix.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.extend(matrix.iter().map(|&v| {
        if span > 0.0 {
            ((v - lo) / span * 255.0).round() as u8
        } else {
            0
        }
    }));
    Ok(out)
}

/// One line per row, LF endings, shortest round-tripping decimal form.
pub fn encode_csv(matrix: &Array2<f64>) -> Result<String, AudioError> {
    if matrix.is_empty() {
        return Err(AudioError::EmptyMatrix);
    }
    let mut out = String::new();
    for row in matrix.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    Ok(out)
}

pub fn parse_csv(text: &str) -> Result<Array2<f64>, AudioError> {
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| AudioError::MalformedCsv {
                line: i + 1,
                reason: e.to_string(),
            })?;
        match cols {
            None => cols = Some(row.len()),
            Some(c) if c != row.len() => {
                return Err(AudioError::MalformedCsv {
                    line: i + 1,
                    reason: format!("expected {c} fields, found {}", row.len()),
                })
            }
            _ => {}
        }
        values.extend(row);
        rows += 1;
    }
    let cols = cols.ok_or(AudioError::EmptyMatrix)?;
    Ok(Array2::from_shape_vec((rows, cols), values).expect("row lengths checked"))
}

pub fn read_csv_matrix(path: impl AsRef<Path>) -> Result<Array2<f64>, AudioError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_csv(&text)
}
