//! Trace files (CSV and the TWBM container) and curve/spectrum CSV output.
//!
//! TWBM layout: `b"TWBM"`, version (u32 LE), header length (u32 LE), a UTF-8
//! JSON header, then the payload. `u8` payloads hold quantizer codes,
//! `f64le` payloads hold raw samples.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dsp::SpectrumEstimate;
use crate::error::IoError;
use crate::trace::{Channel, DigitizerSpec, MiCurve, Trace, DEFAULT_SAMPLE_RATE};

pub const TWBM_MAGIC: &[u8; 4] = b"TWBM";
pub const TWBM_VERSION: u32 = 1;
/// Relative tolerance on time-column spacing.
pub const TIME_JITTER_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Encoding {
    #[serde(rename = "u8")]
    U8,
    #[serde(rename = "f64le")]
    F64Le,
}

impl Encoding {
    fn width(self) -> usize {
        match self {
            Encoding::U8 => 1,
            Encoding::F64Le => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TwbmHeader {
    sample_rate_hz: f64,
    n_samples: usize,
    encoding: Encoding,
    label: Channel,
    full_scale: f64,
    mean_level: f64,
    #[serde(default = "default_bit_depth")]
    bit_depth: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    shot_variance: Option<f64>,
}

fn default_bit_depth() -> u32 {
    8
}

fn u8_codes(trace: &Trace) -> Result<Vec<u8>, IoError> {
    let spec = trace.spec();
    if spec.bit_depth() > 8 {
        return Err(IoError::NotOnGrid(format!(
            "bit depth {} exceeds 8",
            spec.bit_depth()
        )));
    }
    let top = spec.levels() - 1;
    let step = spec.level_step();
    let half = 0.5 * spec.full_scale();
    trace
        .samples()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let k = ((v + half) / step).round();
            if !(0.0..=top as f64).contains(&k) || spec.level_value(k as u64) != v {
                return Err(IoError::NotOnGrid(format!(
                    "sample {i} = {v} is not a level value"
                )));
            }
            Ok(k as u8)
        })
        .collect()
}

/// Write `trace` as TWBM. `u8` requires every sample to sit exactly on the
/// digitizer's level grid.
pub fn write_twbm(path: &Path, trace: &Trace, encoding: Encoding) -> Result<(), IoError> {
    let spec = trace.spec();
    let header = TwbmHeader {
        sample_rate_hz: spec.sample_rate(),
        n_samples: trace.len(),
        encoding,
        label: trace.label(),
        full_scale: spec.full_scale(),
        mean_level: trace.mean_level(),
        bit_depth: spec.bit_depth(),
        shot_variance: trace.shot_variance(),
    };
    let payload: Vec<u8> = match encoding {
        Encoding::U8 => u8_codes(trace)?,
        Encoding::F64Le => trace
            .samples()
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(TWBM_MAGIC)?;
    w.write_all(&TWBM_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    w.write_all(&payload)?;
    w.flush()?;
    Ok(())
}

pub fn read_twbm(path: &Path) -> Result<Trace, IoError> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    parse_twbm(&bytes)
}

fn parse_twbm(bytes: &[u8]) -> Result<Trace, IoError> {
    if bytes.len() < 12 || &bytes[..4] != TWBM_MAGIC {
        return Err(IoError::BadMagic);
    }
    let word = |k: usize| u32::from_le_bytes(bytes[k..k + 4].try_into().expect("4 bytes"));
    let version = word(4);
    if version != TWBM_VERSION {
        return Err(IoError::UnsupportedVersion(version));
    }
    let header_len = word(8) as usize;
    let body = 12usize
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| IoError::Parse("header extends past end of file".into()))?;
    let header: TwbmHeader = serde_json::from_slice(&bytes[12..body])?;
    let payload = &bytes[body..];
    let declared = header.n_samples * header.encoding.width();
    if payload.len() != declared {
        return Err(IoError::HeaderMismatch {
            declared,
            actual: payload.len(),
        });
    }
    let spec = DigitizerSpec::new(
        header.sample_rate_hz,
        header.n_samples,
        header.bit_depth,
        header.full_scale,
    )?;
    let samples = match header.encoding {
        Encoding::U8 => {
            if header.bit_depth > 8 {
                return Err(IoError::Parse("u8 payload with bit depth above 8".into()));
            }
            let top = spec.levels() - 1;
            payload
                .iter()
                .map(|&c| {
                    if c as u64 > top {
                        Err(IoError::Parse(format!("code {c} above top level {top}")))
                    } else {
                        Ok(spec.level_value(c as u64))
                    }
                })
                .collect::<Result<Vec<f64>, IoError>>()?
        }
        Encoding::F64Le => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect(),
    };
    let mut trace = Trace::new(samples, spec, header.label, header.mean_level)?;
    if let Some(v) = header.shot_variance {
        trace = trace.with_shot_variance(v)?;
    }
    Ok(trace)
}

/// Digitizer and label settings for formats that do not carry them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CsvOptions {
    /// Used for single-column files; a time column overrides it.
    pub sample_rate: f64,
    pub bit_depth: u32,
    pub full_scale: f64,
    pub label: Channel,
}

impl Default for CsvOptions {
    fn default() -> Self {
        let d = DigitizerSpec::default();
        Self {
            sample_rate: DEFAULT_SAMPLE_RATE,
            bit_depth: d.bit_depth(),
            full_scale: d.full_scale(),
            label: Channel::Probe,
        }
    }
}

/// One column of values, or `time,value`. A non-numeric first row is taken
/// as a header. The time column must be uniform and only sets the rate.
pub fn read_csv_trace(path: &Path, opts: &CsvOptions) -> Result<Trace, IoError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        let parsed: Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(v) => rows.push(v),
            Err(_) if line == 0 => continue,
            Err(e) => return Err(IoError::Parse(format!("row {}: {e}", line + 1))),
        }
    }
    let width = rows
        .first()
        .map(Vec::len)
        .ok_or_else(|| IoError::Parse("no data rows".into()))?;
    if !(width == 1 || width == 2) || rows.iter().any(|r| r.len() != width) {
        return Err(IoError::Parse(
            "expected 1 or 2 columns on every row".into(),
        ));
    }
    let mut sample_rate = opts.sample_rate;
    if width == 2 {
        if rows.len() < 2 {
            return Err(IoError::Parse(
                "need two rows to infer the sample rate".into(),
            ));
        }
        let dt = rows[1][0] - rows[0][0];
        if !(dt > 0.0) {
            return Err(IoError::NonUniformTime {
                row: 1,
                jitter: f64::INFINITY,
            });
        }
        for (k, w) in rows.windows(2).enumerate() {
            let jitter = ((w[1][0] - w[0][0]) - dt).abs() / dt;
            if !(jitter <= TIME_JITTER_TOLERANCE) {
                return Err(IoError::NonUniformTime { row: k + 1, jitter });
            }
        }
        let span = rows[rows.len() - 1][0] - rows[0][0];
        sample_rate = (rows.len() - 1) as f64 / span;
    }
    let samples: Vec<f64> = rows.iter().map(|r| r[width - 1]).collect();
    let spec = DigitizerSpec::new(sample_rate, samples.len(), opts.bit_depth, opts.full_scale)?;
    Ok(Trace::new(samples, spec, opts.label, 0.0)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TraceFormat {
    #[default]
    Auto,
    Csv,
    Twbm,
}

impl std::str::FromStr for TraceFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "auto" => Ok(TraceFormat::Auto),
            "csv" => Ok(TraceFormat::Csv),
            "twbm" => Ok(TraceFormat::Twbm),
            other => Err(format!("unknown trace format {other:?}")),
        }
    }
}

/// Load a trace; `Auto` sniffs the TWBM magic and falls back to CSV.
pub fn load_trace(path: &Path, format: TraceFormat, opts: &CsvOptions) -> Result<Trace, IoError> {
    match format {
        TraceFormat::Twbm => read_twbm(path),
        TraceFormat::Csv => read_csv_trace(path, opts),
        TraceFormat::Auto => {
            let mut head = [0u8; 4];
            let n = File::open(path)?.read(&mut head)?;
            if n == 4 && &head == TWBM_MAGIC {
                read_twbm(path)
            } else {
                read_csv_trace(path, opts)
            }
        }
    }
}

/// `delay_ns,mi,spread`; spread is 0 when the curve has none.
pub fn write_curve_csv(path: &Path, curve: &MiCurve) -> Result<(), IoError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["delay_ns", "mi", "spread"])?;
    for (i, (d, m)) in curve.delays().iter().zip(curve.mi()).enumerate() {
        let s = curve.spread().map_or(0.0, |s| s[i]);
        w.write_record(&[
            format!("{:.6}", d * 1e9),
            format!("{m:e}"),
            format!("{s:e}"),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Inverse of [`write_curve_csv`]. The spread column is optional.
pub fn read_curve_csv(path: &Path, normalized: bool) -> Result<MiCurve, IoError> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let (mut delays, mut mi, mut spread) = (Vec::new(), Vec::new(), Vec::new());
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let field = |k: usize| -> Result<f64, IoError> {
            rec.get(k)
                .ok_or_else(|| IoError::Parse(format!("row {}: missing column {k}", line + 2)))?
                .parse::<f64>()
                .map_err(|e| IoError::Parse(format!("row {}: {e}", line + 2)))
        };
        delays.push(field(0)? * 1e-9);
        mi.push(field(1)?);
        if rec.len() > 2 {
            spread.push(field(2)?);
        }
    }
    let spread = (spread.len() == mi.len()).then_some(spread);
    Ok(MiCurve::new(delays, mi, spread, 1, normalized)?)
}

/// `frequency_hz,psd,reference_psd,squeezing_db`.
pub fn write_spectrum_csv(path: &Path, s: &SpectrumEstimate) -> Result<(), IoError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["frequency_hz", "psd", "reference_psd", "squeezing_db"])?;
    for i in 0..s.frequencies.len() {
        w.write_record(&[
            format!("{}", s.frequencies[i]),
            format!("{:e}", s.psd[i]),
            format!("{:e}", s.reference_psd[i]),
            format!("{:.6}", s.squeezing_db_curve[i]),
        ])?;
    }
    w.flush()?;
    Ok(())
}
