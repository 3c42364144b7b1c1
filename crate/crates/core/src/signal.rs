//! Recording ingestion types, Butterworth low-pass filtering, differencing and
//! fixed-duration segmentation.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One session of samples for one participant.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecording {
    pub participant_id: String,
    pub session_id: String,
    pub sample_rate_hz: f64,
    pub samples: Vec<f64>,
}

impl RawRecording {
    pub fn new(
        participant_id: impl Into<String>,
        session_id: impl Into<String>,
        sample_rate_hz: f64,
        samples: Vec<f64>,
    ) -> Result<Self> {
        if !(sample_rate_hz > 0.0 && sample_rate_hz.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "sample rate must be positive, got {sample_rate_hz}"
            )));
        }
        if samples.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "recording needs at least 2 samples, got {}",
                samples.len()
            )));
        }
        Ok(RawRecording {
            participant_id: participant_id.into(),
            session_id: session_id.into(),
            sample_rate_hz,
            samples,
        })
    }
}

/// How the filter cascade is applied to a signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterPhase {
    /// Forward then backward pass with reflected-edge padding.
    #[default]
    ZeroPhase,
    /// Single forward pass.
    Causal,
}

impl FilterPhase {
    pub fn as_str(self) -> &'static str {
        match self {
            FilterPhase::ZeroPhase => "zero-phase",
            FilterPhase::Causal => "causal",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "zero-phase" => Some(FilterPhase::ZeroPhase),
            "causal" => Some(FilterPhase::Causal),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterSpec {
    pub order: usize,
    pub cutoff_hz: f64,
    pub sample_rate_hz: f64,
    pub phase: FilterPhase,
}

impl FilterSpec {
    pub const DEFAULT_ORDER: usize = 5;
    pub const DEFAULT_CUTOFF_HZ: f64 = 30.0;

    pub fn new(order: usize, cutoff_hz: f64, sample_rate_hz: f64) -> Self {
        FilterSpec {
            order,
            cutoff_hz,
            sample_rate_hz,
            phase: FilterPhase::ZeroPhase,
        }
    }

    /// Order 5, 30 Hz cutoff at the given sample rate.
    pub fn default_at(sample_rate_hz: f64) -> Self {
        Self::new(Self::DEFAULT_ORDER, Self::DEFAULT_CUTOFF_HZ, sample_rate_hz)
    }

    pub fn with_phase(mut self, phase: FilterPhase) -> Self {
        self.phase = phase;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.order == 0 {
            return Err(Error::InvalidSpec("filter order must be positive".into()));
        }
        if !(self.sample_rate_hz > 0.0 && self.sample_rate_hz.is_finite()) {
            return Err(Error::InvalidSpec(format!(
                "sample rate must be positive, got {}",
                self.sample_rate_hz
            )));
        }
        let nyquist = self.sample_rate_hz / 2.0;
        if !(self.cutoff_hz > 0.0 && self.cutoff_hz < nyquist) {
            return Err(Error::InvalidSpec(format!(
                "cutoff {} Hz must lie in (0, {nyquist}) Hz",
                self.cutoff_hz
            )));
        }
        Ok(())
    }
}

/// One biquad: `b` feedforward, `a` feedback with `a[0] == 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SecondOrderSection {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl SecondOrderSection {
    fn response(&self, z_inv: Complex64) -> Complex64 {
        let z_inv2 = z_inv * z_inv;
        let num = self.b[0] + z_inv * self.b[1] + z_inv2 * self.b[2];
        let den = self.a[0] + z_inv * self.a[1] + z_inv2 * self.a[2];
        num / den
    }

    /// Roots of `z^2 + a1 z + a2` (a single root for first-order sections).
    pub fn poles(&self) -> Vec<Complex64> {
        let (a1, a2) = (self.a[1], self.a[2]);
        if a2 == 0.0 {
            return vec![Complex64::new(-a1, 0.0)];
        }
        let disc = Complex64::new(a1 * a1 - 4.0 * a2, 0.0).sqrt();
        vec![(-a1 + disc) / 2.0, (-a1 - disc) / 2.0]
    }

    /// Transposed direct-form II state that holds a constant unit input in steady state.
    fn unit_steady_state(&self) -> [f64; 2] {
        let gain = (self.b[0] + self.b[1] + self.b[2]) / (self.a[0] + self.a[1] + self.a[2]);
        let z2 = self.b[2] - self.a[2] * gain;
        let z1 = self.b[1] - self.a[1] * gain + z2;
        [z1, z2]
    }
}

/// Designed cascade of second-order sections.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterCoefficients {
    pub sections: Vec<SecondOrderSection>,
    pub order: usize,
    pub sample_rate_hz: f64,
}

impl FilterCoefficients {
    /// Complex frequency response at `freq_hz`.
    pub fn response(&self, freq_hz: f64) -> Complex64 {
        let w = 2.0 * PI * freq_hz / self.sample_rate_hz;
        let z_inv = Complex64::from_polar(1.0, -w);
        self.sections
            .iter()
            .fold(Complex64::new(1.0, 0.0), |acc, s| acc * s.response(z_inv))
    }

    pub fn magnitude(&self, freq_hz: f64) -> f64 {
        self.response(freq_hz).norm()
    }

    pub fn max_pole_radius(&self) -> f64 {
        self.sections
            .iter()
            .flat_map(|s| s.poles())
            .map(|p| p.norm())
            .fold(0.0, f64::max)
    }

    /// Edge padding used by the zero-phase path: at least `3 * (2 * order + 1)`,
    /// extended until the slowest pole's transient has decayed below 1e-12.
    pub fn padding_len(&self) -> usize {
        let base = 3 * (2 * self.order + 1);
        let r = self.max_pole_radius();
        let decay = if r > 0.0 && r < 1.0 {
            ((1e-12f64).ln() / r.ln()).ceil() as usize
        } else {
            0
        };
        base.max(decay)
    }

    fn run_forward(&self, data: &mut [f64]) {
        let Some(&first) = data.first() else { return };
        for section in &self.sections {
            let [u1, u2] = section.unit_steady_state();
            let (mut z1, mut z2) = (u1 * first, u2 * first);
            let [b0, b1, b2] = section.b;
            let [_, a1, a2] = section.a;
            for x in data.iter_mut() {
                let input = *x;
                let y = b0 * input + z1;
                z1 = b1 * input - a1 * y + z2;
                z2 = b2 * input - a2 * y;
                *x = y;
            }
        }
    }
}

/// Butterworth low-pass of the given order: analog prototype poles, cutoff
/// prewarped, mapped through the bilinear transform, grouped into biquads
/// normalized to unit DC gain.
pub fn design_butterworth_lowpass(spec: &FilterSpec) -> Result<FilterCoefficients> {
    spec.validate()?;
    let n = spec.order;
    let fs = spec.sample_rate_hz;
    let warped = 2.0 * fs * (PI * spec.cutoff_hz / fs).tan();
    let two_fs = 2.0 * fs;

    let bilinear = |s: Complex64| (two_fs + s) / (two_fs - s);
    let mut sections = Vec::with_capacity(n.div_ceil(2));
    // Upper-half-plane poles pair with their conjugates; odd orders add one real pole.
    for m in 0..n / 2 {
        let theta = PI * (2 * m + n + 1) as f64 / (2 * n) as f64;
        let s_pole = Complex64::from_polar(warped, theta);
        let z = bilinear(s_pole);
        let a1 = -2.0 * z.re;
        let a2 = z.norm_sqr();
        let g = (1.0 + a1 + a2) / 4.0;
        sections.push(SecondOrderSection {
            b: [g, 2.0 * g, g],
            a: [1.0, a1, a2],
        });
    }
    if n % 2 == 1 {
        let z = bilinear(Complex64::new(-warped, 0.0));
        let a1 = -z.re;
        let g = (1.0 + a1) / 2.0;
        sections.push(SecondOrderSection {
            b: [g, g, 0.0],
            a: [1.0, a1, 0.0],
        });
    }

    let coeffs = FilterCoefficients {
        sections,
        order: n,
        sample_rate_hz: fs,
    };
    if coeffs.max_pole_radius() >= 1.0 {
        return Err(Error::InvalidSpec(format!(
            "designed filter is unstable (pole radius {})",
            coeffs.max_pole_radius()
        )));
    }
    Ok(coeffs)
}

/// Forward-backward application with odd reflected padding at both ends.
/// Output has the input's length and no phase shift.
pub fn filter_zero_phase(coeffs: &FilterCoefficients, samples: &[f64]) -> Result<Vec<f64>> {
    let min_len = 3 * coeffs.order;
    if samples.len() <= min_len {
        return Err(Error::InvalidInput(format!(
            "zero-phase filtering needs more than {min_len} samples, got {}",
            samples.len()
        )));
    }
    let n = samples.len();
    let pad = coeffs.padding_len().min(n - 1);
    let (first, last) = (samples[0], samples[n - 1]);

    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * first - samples[i]));
    ext.extend_from_slice(samples);
    ext.extend((1..=pad).map(|i| 2.0 * last - samples[n - 1 - i]));

    coeffs.run_forward(&mut ext);
    ext.reverse();
    coeffs.run_forward(&mut ext);
    ext.reverse();

    Ok(ext[pad..pad + n].to_vec())
}

/// Single causal pass, state initialized to the steady state of the first sample.
pub fn filter_causal(coeffs: &FilterCoefficients, samples: &[f64]) -> Vec<f64> {
    let mut out = samples.to_vec();
    coeffs.run_forward(&mut out);
    out
}

/// A designed filter bound to its phase mode.
#[derive(Debug, Clone)]
pub struct Filter {
    spec: FilterSpec,
    coeffs: FilterCoefficients,
}

impl Filter {
    pub fn new(spec: &FilterSpec) -> Result<Self> {
        Ok(Filter {
            spec: *spec,
            coeffs: design_butterworth_lowpass(spec)?,
        })
    }

    pub fn spec(&self) -> &FilterSpec {
        &self.spec
    }

    pub fn coefficients(&self) -> &FilterCoefficients {
        &self.coeffs
    }

    pub fn apply(&self, samples: &[f64]) -> Result<Vec<f64>> {
        match self.spec.phase {
            FilterPhase::ZeroPhase => filter_zero_phase(&self.coeffs, samples),
            FilterPhase::Causal => Ok(filter_causal(&self.coeffs, samples)),
        }
    }
}

/// First differences of a signal.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeSeries {
    pub values: Vec<f64>,
    pub source_len: usize,
}

pub fn differentiate(samples: &[f64]) -> Result<DerivativeSeries> {
    if samples.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "differencing needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    Ok(DerivativeSeries {
        values: samples.windows(2).map(|w| w[1] - w[0]).collect(),
        source_len: samples.len(),
    })
}

/// Number of samples in one window of `seconds` at `sample_rate_hz`.
pub fn window_len(seconds: f64, sample_rate_hz: f64) -> Result<usize> {
    let len = (seconds * sample_rate_hz).floor();
    if !(len >= 1.0 && len.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "segment of {seconds} s at {sample_rate_hz} Hz holds no samples"
        )));
    }
    Ok(len as usize)
}

/// Consecutive non-overlapping windows; a trailing partial window is dropped.
pub fn segment(samples: &[f64], seconds: f64, sample_rate_hz: f64) -> Result<Vec<&[f64]>> {
    let len = window_len(seconds, sample_rate_hz)?;
    Ok(samples.chunks_exact(len).collect())
}
