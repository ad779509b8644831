//! Traces, trace pairs and mutual-information curves.
//!
//! Samples are real-valued in digitizer units (one unit per quantization level
//! with the default full scale). Quantization is a separate step, see
//! [`crate::source::quantize`]. All times are seconds, all rates hertz.

use serde::{Deserialize, Serialize};

use crate::error::TraceError;

pub const DEFAULT_SAMPLE_RATE: f64 = 2.0e9;
pub const DEFAULT_N_SAMPLES: usize = 4_000_000;
pub const DEFAULT_BIT_DEPTH: u32 = 8;
/// Peak-to-peak span of the default 8-bit grid: 255 units, one per level step.
pub const DEFAULT_FULL_SCALE: f64 = 255.0;

/// Sampling clock and quantizer of one oscilloscope channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDigitizerSpec", into = "RawDigitizerSpec")]
pub struct DigitizerSpec {
    sample_rate: f64,
    n_samples: usize,
    bit_depth: u32,
    full_scale: f64,
}

#[derive(Serialize, Deserialize)]
struct RawDigitizerSpec {
    sample_rate: f64,
    n_samples: usize,
    bit_depth: u32,
    full_scale: f64,
}

impl TryFrom<RawDigitizerSpec> for DigitizerSpec {
    type Error = TraceError;
    fn try_from(r: RawDigitizerSpec) -> Result<Self, Self::Error> {
        DigitizerSpec::new(r.sample_rate, r.n_samples, r.bit_depth, r.full_scale)
    }
}

impl From<DigitizerSpec> for RawDigitizerSpec {
    fn from(s: DigitizerSpec) -> Self {
        RawDigitizerSpec {
            sample_rate: s.sample_rate,
            n_samples: s.n_samples,
            bit_depth: s.bit_depth,
            full_scale: s.full_scale,
        }
    }
}

impl DigitizerSpec {
    pub fn new(
        sample_rate: f64,
        n_samples: usize,
        bit_depth: u32,
        full_scale: f64,
    ) -> Result<Self, TraceError> {
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return Err(TraceError::InvalidSpec(format!(
                "sample rate must be positive, got {sample_rate}"
            )));
        }
        if n_samples == 0 {
            return Err(TraceError::InvalidSpec("n_samples must be > 0".into()));
        }
        if !(1..=32).contains(&bit_depth) {
            return Err(TraceError::InvalidSpec(format!(
                "bit depth must be in 1..=32, got {bit_depth}"
            )));
        }
        if !(full_scale.is_finite() && full_scale > 0.0) {
            return Err(TraceError::InvalidSpec(format!(
                "full scale must be positive, got {full_scale}"
            )));
        }
        Ok(Self {
            sample_rate,
            n_samples,
            bit_depth,
            full_scale,
        })
    }

    /// Same digitizer with a different record length.
    pub fn with_samples(&self, n_samples: usize) -> Result<Self, TraceError> {
        Self::new(self.sample_rate, n_samples, self.bit_depth, self.full_scale)
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn bit_depth(&self) -> u32 {
        self.bit_depth
    }

    pub fn full_scale(&self) -> f64 {
        self.full_scale
    }

    pub fn sample_period(&self) -> f64 {
        1.0 / self.sample_rate
    }

    pub fn duration(&self) -> f64 {
        self.n_samples as f64 / self.sample_rate
    }

    pub fn levels(&self) -> u64 {
        1u64 << self.bit_depth
    }

    /// Spacing between adjacent quantization levels.
    pub fn level_step(&self) -> f64 {
        self.full_scale / (self.levels() - 1) as f64
    }

    /// Value of quantization level `code`; the grid is centered on zero.
    pub fn level_value(&self, code: u64) -> f64 {
        -0.5 * self.full_scale + code as f64 * self.level_step()
    }
}

impl Default for DigitizerSpec {
    fn default() -> Self {
        Self {
            sample_rate: DEFAULT_SAMPLE_RATE,
            n_samples: DEFAULT_N_SAMPLES,
            bit_depth: DEFAULT_BIT_DEPTH,
            full_scale: DEFAULT_FULL_SCALE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Channel {
    Probe,
    Conjugate,
    #[serde(rename = "coherent-A")]
    CoherentA,
    #[serde(rename = "coherent-B")]
    CoherentB,
}

impl std::fmt::Display for Channel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Channel::Probe => "probe",
            Channel::Conjugate => "conjugate",
            Channel::CoherentA => "coherent-A",
            Channel::CoherentB => "coherent-B",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Channel {
    type Err = TraceError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "probe" => Ok(Channel::Probe),
            "conjugate" => Ok(Channel::Conjugate),
            "coherent-A" | "coherent-a" => Ok(Channel::CoherentA),
            "coherent-B" | "coherent-b" => Ok(Channel::CoherentB),
            other => Err(TraceError::InvalidParams(format!(
                "unknown channel label {other:?}"
            ))),
        }
    }
}

/// One channel's uniformly sampled intensity-fluctuation record.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    samples: Vec<f64>,
    spec: DigitizerSpec,
    label: Channel,
    mean_level: f64,
    shot_variance: Option<f64>,
}

impl Trace {
    pub fn new(
        samples: Vec<f64>,
        spec: DigitizerSpec,
        label: Channel,
        mean_level: f64,
    ) -> Result<Self, TraceError> {
        if samples.len() != spec.n_samples() {
            return Err(TraceError::LengthMismatch {
                expected: spec.n_samples(),
                actual: samples.len(),
            });
        }
        if let Some(i) = samples.iter().position(|x| !x.is_finite()) {
            return Err(TraceError::NonFinite(i));
        }
        if !mean_level.is_finite() {
            return Err(TraceError::InvalidParams(
                "mean level must be finite".into(),
            ));
        }
        Ok(Self {
            samples,
            spec,
            label,
            mean_level,
            shot_variance: None,
        })
    }

    /// Attach the per-sample shot-noise variance at this trace's mean power.
    pub fn with_shot_variance(mut self, variance: f64) -> Result<Self, TraceError> {
        if !(variance.is_finite() && variance >= 0.0) {
            return Err(TraceError::InvalidParams(format!(
                "shot variance must be finite and >= 0, got {variance}"
            )));
        }
        self.shot_variance = Some(variance);
        Ok(self)
    }

    pub(crate) fn set_shot_variance(&mut self, variance: Option<f64>) {
        self.shot_variance = variance;
    }

    pub(crate) fn set_mean_level(&mut self, mean_level: f64) {
        self.mean_level = mean_level;
    }

    /// Replace the samples, keeping all metadata. Length and finiteness are rechecked.
    pub fn with_samples(&self, samples: Vec<f64>) -> Result<Self, TraceError> {
        let mut t = Trace::new(samples, self.spec, self.label, self.mean_level)?;
        t.shot_variance = self.shot_variance;
        Ok(t)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn spec(&self) -> &DigitizerSpec {
        &self.spec
    }

    pub fn label(&self) -> Channel {
        self.label
    }

    pub fn mean_level(&self) -> f64 {
        self.mean_level
    }

    pub fn shot_variance(&self) -> Option<f64> {
        self.shot_variance
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.samples.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / self.samples.len() as f64
    }

    /// Subtract the sample mean and fold it into `mean_level`.
    pub fn remove_dc(&self) -> Trace {
        let m = self.mean();
        let mut t = self.clone();
        t.samples.iter_mut().for_each(|x| *x -= m);
        t.mean_level += m;
        t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    TwinUnobstructed,
    TwinChannel,
    SplitThermal,
    SplitCoherent,
    ScattererOnly,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [
        Scenario::TwinUnobstructed,
        Scenario::TwinChannel,
        Scenario::SplitThermal,
        Scenario::SplitCoherent,
        Scenario::ScattererOnly,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Scenario::TwinUnobstructed => "twin-unobstructed",
            Scenario::TwinChannel => "twin-channel",
            Scenario::SplitThermal => "split-thermal",
            Scenario::SplitCoherent => "split-coherent",
            Scenario::ScattererOnly => "scatterer-only",
        }
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Scenario {
    type Err = TraceError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scenario::ALL
            .iter()
            .copied()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| TraceError::InvalidParams(format!("unknown scenario {s:?}")))
    }
}

/// Checks that two traces share a sample clock, length and digitizer.
pub fn validate_pair(a: &Trace, b: &Trace) -> Result<(), TraceError> {
    let (sa, sb) = (a.spec(), b.spec());
    if sa.sample_rate() != sb.sample_rate() {
        return Err(TraceError::MismatchedClock {
            a: sa.sample_rate(),
            b: sb.sample_rate(),
        });
    }
    if sa.n_samples() != sb.n_samples() || a.len() != b.len() {
        return Err(TraceError::MismatchedLength {
            a: a.len(),
            b: b.len(),
        });
    }
    if sa != sb {
        return Err(TraceError::MismatchedDigitizer);
    }
    Ok(())
}

/// Two time-aligned traces sharing one sample clock.
#[derive(Debug, Clone, PartialEq)]
pub struct TracePair {
    a: Trace,
    b: Trace,
    scenario: Scenario,
}

impl TracePair {
    pub fn new(a: Trace, b: Trace, scenario: Scenario) -> Result<Self, TraceError> {
        validate_pair(&a, &b)?;
        Ok(Self { a, b, scenario })
    }

    pub fn a(&self) -> &Trace {
        &self.a
    }

    pub fn b(&self) -> &Trace {
        &self.b
    }

    pub fn scenario(&self) -> Scenario {
        self.scenario
    }

    pub fn spec(&self) -> &DigitizerSpec {
        self.a.spec()
    }

    pub fn into_parts(self) -> (Trace, Trace, Scenario) {
        (self.a, self.b, self.scenario)
    }

    /// Arms exchanged; the delay axis of any MI scan flips sign.
    pub fn swapped(&self) -> TracePair {
        TracePair {
            a: self.b.clone(),
            b: self.a.clone(),
            scenario: self.scenario,
        }
    }

    /// Apply `f` to both arms, keeping the scenario tag.
    pub fn map<E>(&self, mut f: impl FnMut(&Trace) -> Result<Trace, E>) -> Result<TracePair, E>
    where
        E: From<TraceError>,
    {
        let a = f(&self.a)?;
        let b = f(&self.b)?;
        Ok(TracePair::new(a, b, self.scenario)?)
    }
}

/// Mutual information in bits versus relative delay.
///
/// Positive delay means arm `a` lags arm `b`: the value at delay `d` pairs
/// `a(t)` with `b(t - d)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCurve", into = "RawCurve")]
pub struct MiCurve {
    delays: Vec<f64>,
    mi: Vec<f64>,
    spread: Option<Vec<f64>>,
    n_repeats: usize,
    normalized: bool,
}

#[derive(Serialize, Deserialize)]
struct RawCurve {
    delays: Vec<f64>,
    mi: Vec<f64>,
    spread: Option<Vec<f64>>,
    n_repeats: usize,
    normalized: bool,
}

impl TryFrom<RawCurve> for MiCurve {
    type Error = TraceError;
    fn try_from(r: RawCurve) -> Result<Self, Self::Error> {
        MiCurve::new(r.delays, r.mi, r.spread, r.n_repeats, r.normalized)
    }
}

impl From<MiCurve> for RawCurve {
    fn from(c: MiCurve) -> Self {
        RawCurve {
            delays: c.delays,
            mi: c.mi,
            spread: c.spread,
            n_repeats: c.n_repeats,
            normalized: c.normalized,
        }
    }
}

/// Relative tolerance on the spacing of a "uniform" delay grid.
const GRID_TOLERANCE: f64 = 1e-6;

impl MiCurve {
    pub fn new(
        delays: Vec<f64>,
        mi: Vec<f64>,
        spread: Option<Vec<f64>>,
        n_repeats: usize,
        normalized: bool,
    ) -> Result<Self, TraceError> {
        let bad = |m: &str| Err(TraceError::InvalidCurve(m.to_string()));
        if delays.len() < 2 {
            return bad("need at least two delay points");
        }
        if delays.len() != mi.len() {
            return bad("delays and mi differ in length");
        }
        if let Some(s) = &spread {
            if s.len() != mi.len() {
                return bad("spread and mi differ in length");
            }
            if s.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return bad("spread must be finite and nonnegative");
            }
        }
        if delays.iter().any(|d| !d.is_finite()) {
            return bad("delays must be finite");
        }
        let step = (delays[delays.len() - 1] - delays[0]) / (delays.len() - 1) as f64;
        if !(step > 0.0) {
            return bad("delays must be strictly increasing");
        }
        for w in delays.windows(2) {
            let d = w[1] - w[0];
            if !(d > 0.0) || ((d - step) / step).abs() > GRID_TOLERANCE {
                return bad("delays must be strictly increasing with a uniform step");
            }
        }
        if mi.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return bad("mutual information must be finite and nonnegative");
        }
        if n_repeats == 0 {
            return bad("n_repeats must be >= 1");
        }
        Ok(Self {
            delays,
            mi,
            spread,
            n_repeats,
            normalized,
        })
    }

    pub fn delays(&self) -> &[f64] {
        &self.delays
    }

    pub fn mi(&self) -> &[f64] {
        &self.mi
    }

    pub fn spread(&self) -> Option<&[f64]> {
        self.spread.as_deref()
    }

    pub fn n_repeats(&self) -> usize {
        self.n_repeats
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn len(&self) -> usize {
        self.mi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mi.is_empty()
    }

    pub fn step(&self) -> f64 {
        (self.delays[self.delays.len() - 1] - self.delays[0]) / (self.delays.len() - 1) as f64
    }

    /// Index of the first global maximum.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, v) in self.mi.iter().enumerate() {
            if *v > self.mi[best] {
                best = i;
            }
        }
        best
    }

    pub fn peak(&self) -> f64 {
        self.mi[self.argmax()]
    }

    pub fn peak_delay(&self) -> f64 {
        self.delays[self.argmax()]
    }

    /// Same grid and flags, new values.
    pub fn with_values(&self, mi: Vec<f64>, spread: Option<Vec<f64>>) -> Result<Self, TraceError> {
        MiCurve::new(
            self.delays.clone(),
            mi,
            spread,
            self.n_repeats,
            self.normalized,
        )
    }

    pub(crate) fn set_normalized(&mut self, normalized: bool) {
        self.normalized = normalized;
    }
}
