//! Seeded disturbance sources: additive Gaussian channel noise and the
//! unbiased random (dithered) quantizer.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NoiseError {
    #[error("invalid noise spec `{spec}`: {reason}")]
    Spec { spec: String, reason: String },
}

/// Where a stream's draws are consumed inside one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum UpdateSite {
    Dual = 0,
    Aux = 1,
}

/// Identifies one independent random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamId {
    pub trial: u32,
    pub agent: u32,
    pub site: UpdateSite,
}

impl StreamId {
    fn word(&self) -> u64 {
        (u64::from(self.trial) << 32) | (u64::from(self.agent) << 8) | self.site as u64
    }
}

/// A deterministic random stream keyed by `(seed, trial, agent, site)`.
///
/// Every stream is a distinct ChaCha8 stream under the key derived from the
/// base seed, so adding agents or trials never perturbs existing streams.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    id: StreamId,
    rng: ChaCha8Rng,
    draws: u64,
}

impl RngStream {
    pub fn new(seed: u64, id: StreamId) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(id.word());
        Self { seed, id, rng, draws: 0 }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn id(&self) -> StreamId {
        self.id
    }

    /// Number of scalar draws taken so far.
    pub fn draw_index(&self) -> u64 {
        self.draws
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.draws += 1;
        self.rng.sample(StandardNormal)
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.draws += 1;
        self.rng.random::<f64>()
    }
}

/// `dim` independent draws from `N(0, sigma^2)`.
pub fn draw_gaussian(dim: usize, sigma: f64, rng: &mut RngStream) -> Vec<f64> {
    (0..dim)
        .map(|_| {
            let z = rng.standard_normal();
            if sigma == 0.0 {
                0.0
            } else {
                sigma * z
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quantized {
    pub value: f64,
    /// Input fell outside `[lower, upper]` and was clamped first.
    pub clamped: bool,
}

/// Grid spacing `(upper - lower) / (2^bits - 1)`.
pub fn quantizer_step(lower: f64, upper: f64, bits: u32) -> f64 {
    (upper - lower) / ((1u64 << bits) - 1) as f64
}

/// Random quantization onto `2^bits` evenly spaced levels in
/// `[lower, upper]`: rounds up with probability equal to the fractional
/// position inside the bin, so `E[Q(x)] = x`.
pub fn quantize(x: f64, lower: f64, upper: f64, bits: u32, rng: &mut RngStream) -> Quantized {
    let clamped = !(lower..=upper).contains(&x);
    let x = x.clamp(lower, upper);
    let step = quantizer_step(lower, upper, bits);
    let top = (1u64 << bits) - 1;
    let bin = (((x - lower) / step).floor() as u64).min(top);
    let tau = lower + bin as f64 * step;
    let frac = (x - tau) / step;
    // always draw so stream positions do not depend on the payload
    let coin = rng.uniform();
    let value = if bin < top && coin < frac { lower + (bin + 1) as f64 * step } else { tau };
    Quantized { value, clamped }
}

/// Additive disturbance model for one update site.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseModel {
    None,
    Gaussian { sigma: f64 },
    Quantizer { lower: f64, upper: f64, bits: u32 },
    Composite(Vec<NoiseModel>),
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel::Gaussian { sigma: 1.0 }
    }
}

impl NoiseModel {
    pub fn validate(&self) -> Result<(), NoiseError> {
        let bad = |reason: &str| Err(NoiseError::Spec { spec: self.to_string(), reason: reason.into() });
        match self {
            NoiseModel::None => Ok(()),
            NoiseModel::Gaussian { sigma } if !(sigma.is_finite() && *sigma >= 0.0) => bad("sigma must be >= 0"),
            NoiseModel::Gaussian { .. } => Ok(()),
            NoiseModel::Quantizer { lower, upper, bits } => {
                if !(lower.is_finite() && upper.is_finite() && lower < upper) {
                    bad("quantizer range needs lower < upper")
                } else if !(1..=52).contains(bits) {
                    bad("bits must be in 1..=52")
                } else {
                    Ok(())
                }
            }
            NoiseModel::Composite(parts) => parts.iter().try_for_each(NoiseModel::validate),
        }
    }

    pub fn is_silent(&self) -> bool {
        match self {
            NoiseModel::None => true,
            NoiseModel::Gaussian { sigma } => *sigma == 0.0,
            NoiseModel::Quantizer { .. } => false,
            NoiseModel::Composite(parts) => parts.iter().all(NoiseModel::is_silent),
        }
    }

    /// Upper bound on the per-coordinate disturbance variance.
    pub fn variance_bound(&self) -> f64 {
        match self {
            NoiseModel::None => 0.0,
            NoiseModel::Gaussian { sigma } => sigma * sigma,
            NoiseModel::Quantizer { lower, upper, bits } => quantizer_step(*lower, *upper, *bits).powi(2) / 4.0,
            NoiseModel::Composite(parts) => parts.iter().map(NoiseModel::variance_bound).sum(),
        }
    }

    /// Fills `out` with the disturbance `delta` so the receiver sees
    /// `payload + delta`. Returns how many quantizer inputs were clamped.
    pub fn sample_disturbance(&self, payload: &[f64], rng: &mut RngStream, out: &mut [f64]) -> u64 {
        out.iter_mut().for_each(|d| *d = 0.0);
        self.accumulate(payload, rng, out)
    }

    fn accumulate(&self, payload: &[f64], rng: &mut RngStream, out: &mut [f64]) -> u64 {
        match self {
            NoiseModel::None => 0,
            NoiseModel::Gaussian { sigma } => {
                for (d, z) in out.iter_mut().zip(draw_gaussian(payload.len(), *sigma, rng)) {
                    *d += z;
                }
                0
            }
            NoiseModel::Quantizer { lower, upper, bits } => {
                let mut clamps = 0;
                for (d, &x) in out.iter_mut().zip(payload) {
                    let q = quantize(x, *lower, *upper, *bits, rng);
                    clamps += u64::from(q.clamped);
                    *d += q.value - x;
                }
                clamps
            }
            NoiseModel::Composite(parts) => parts.iter().map(|m| m.accumulate(payload, rng, out)).sum(),
        }
    }
}

/// Textual form used by configs and CLI flags: `none`, `gaussian:SIGMA`,
/// `quantizer:LOWER:UPPER:BITS`, and `+`-joined composites.
impl fmt::Display for NoiseModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NoiseModel::None => write!(f, "none"),
            NoiseModel::Gaussian { sigma } => write!(f, "gaussian:{sigma}"),
            NoiseModel::Quantizer { lower, upper, bits } => write!(f, "quantizer:{lower}:{upper}:{bits}"),
            NoiseModel::Composite(parts) => {
                let joined: Vec<String> = parts.iter().map(ToString::to_string).collect();
                write!(f, "{}", joined.join("+"))
            }
        }
    }
}

impl FromStr for NoiseModel {
    type Err = NoiseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = |reason: &str| NoiseError::Spec { spec: s.to_string(), reason: reason.to_string() };
        let s = s.trim();
        if s.contains('+') {
            let parts = s.split('+').map(str::parse).collect::<Result<Vec<_>, _>>()?;
            let model = NoiseModel::Composite(parts);
            model.validate()?;
            return Ok(model);
        }
        let fields: Vec<&str> = s.split(':').collect();
        let num = |v: &str| v.trim().parse::<f64>().map_err(|_| err("expected a number"));
        let model = match fields.as_slice() {
            ["none"] => NoiseModel::None,
            ["gaussian", sigma] => NoiseModel::Gaussian { sigma: num(sigma)? },
            ["quantizer", lower, upper, bits] => NoiseModel::Quantizer {
                lower: num(lower)?,
                upper: num(upper)?,
                bits: bits.trim().parse().map_err(|_| err("bits must be a positive integer"))?,
            },
            _ => return Err(err("expected none | gaussian:SIGMA | quantizer:L:U:BITS")),
        };
        model.validate()?;
        Ok(model)
    }
}

impl Serialize for NoiseModel {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for NoiseModel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stream(seed: u64, agent: u32) -> RngStream {
        RngStream::new(seed, StreamId { trial: 0, agent, site: UpdateSite::Dual })
    }

    fn mean_var(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, v)
    }

    #[test]
    fn zero_sigma_gives_zero_vector() {
        assert_eq!(draw_gaussian(5, 0.0, &mut stream(1, 0)), vec![0.0; 5]);
    }

    #[test]
    fn gaussian_moments() {
        let draws = draw_gaussian(100_000, 1.0, &mut stream(11, 0));
        let (m, v) = mean_var(&draws);
        assert!(m.abs() < 4.0 / (1e5f64).sqrt(), "mean {m}");
        assert!((v - 1.0).abs() < 0.05, "variance {v}");
    }

    #[test]
    fn streams_are_deterministic_and_distinct() {
        let a = draw_gaussian(8, 1.0, &mut stream(5, 3));
        let b = draw_gaussian(8, 1.0, &mut stream(5, 3));
        let c = draw_gaussian(8, 1.0, &mut stream(5, 4));
        assert_eq!(a, b);
        assert_ne!(a, c);
        let mut s = stream(5, 3);
        draw_gaussian(3, 1.0, &mut s);
        assert_eq!(s.draw_index(), 3);
    }

    #[test]
    fn grid_points_are_exact() {
        let mut rng = stream(2, 0);
        for k in 0..8 {
            let x = k as f64 / 7.0 * 7.0;
            let q = quantize(x, 0.0, 7.0, 3, &mut rng);
            assert_eq!(q.value, x);
            assert!(!q.clamped);
        }
        let mut out = [1.0; 2];
        let model = NoiseModel::Quantizer { lower: 0.0, upper: 7.0, bits: 3 };
        model.sample_disturbance(&[2.0, 7.0], &mut rng, &mut out);
        assert_eq!(out, [0.0, 0.0]);
    }

    #[test]
    fn one_bit_quantizer_probabilities() {
        let mut rng = stream(3, 0);
        let draws: Vec<f64> = (0..100_000).map(|_| quantize(0.25, 0.0, 1.0, 1, &mut rng).value).collect();
        assert!(draws.iter().all(|&v| v == 0.0 || v == 1.0));
        let (m, _) = mean_var(&draws);
        let tol = 4.0 * (0.25f64 * 0.75).sqrt() / (1e5f64).sqrt();
        assert!((m - 0.25).abs() < tol, "mean {m}");
    }

    #[test]
    fn out_of_range_inputs_are_clamped_and_counted() {
        let model = NoiseModel::Quantizer { lower: -1.0, upper: 1.0, bits: 4 };
        let mut out = [0.0; 3];
        let clamps = model.sample_disturbance(&[-3.0, 0.1, 2.0], &mut stream(4, 0), &mut out);
        assert_eq!(clamps, 2);
        assert_eq!(out[0], -1.0 - -3.0);
        assert_eq!(out[2], 1.0 - 2.0);
    }

    #[test]
    fn none_and_gaussian_disturbances() {
        let mut out = [7.0; 4];
        NoiseModel::None.sample_disturbance(&[1.0; 4], &mut stream(9, 0), &mut out);
        assert_eq!(out, [0.0; 4]);
        NoiseModel::Gaussian { sigma: 1.0 }.sample_disturbance(&[3.0; 4], &mut stream(9, 1), &mut out);
        assert_eq!(out.to_vec(), draw_gaussian(4, 1.0, &mut stream(9, 1)));
    }

    #[test]
    fn composite_sums_components() {
        let model: NoiseModel = "gaussian:0.5+quantizer:0:1:2".parse().unwrap();
        assert_eq!(model.to_string(), "gaussian:0.5+quantizer:0:1:2");
        let mut out = [0.0; 1];
        model.sample_disturbance(&[0.4], &mut stream(6, 0), &mut out);
        let mut rng = stream(6, 0);
        let g = draw_gaussian(1, 0.5, &mut rng)[0];
        let q = quantize(0.4, 0.0, 1.0, 2, &mut rng).value - 0.4;
        assert_eq!(out[0], 0.0 + g + q);
        assert!((model.variance_bound() - (0.25 + (1.0f64 / 3.0).powi(2) / 4.0)).abs() < 1e-15);
    }

    #[test]
    fn spec_parsing() {
        assert_eq!("none".parse::<NoiseModel>().unwrap(), NoiseModel::None);
        assert_eq!("gaussian:1.0".parse::<NoiseModel>().unwrap(), NoiseModel::Gaussian { sigma: 1.0 });
        assert!("gaussian:-1".parse::<NoiseModel>().is_err());
        assert!("quantizer:1:0:3".parse::<NoiseModel>().is_err());
        assert!("quantizer:0:1:0".parse::<NoiseModel>().is_err());
        assert!("laplace:1".parse::<NoiseModel>().is_err());
    }
}
