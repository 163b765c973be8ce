//! Noise priors `mu(z) ~ exp(-nu(z))` and the counter-based streams that
//! draw from them.

use core::fmt;
use core::str::FromStr;

use rand_core::RngCore;
use rand_distr::{Distribution, StandardNormal};

use crate::math::{self, mix64, PI};
use crate::{Error, Result};

/// Standard (location 0, scale 1) noise distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NoisePrior {
    Gaussian,
    Cauchy,
    Logistic,
    Gumbel,
    Uniform,
}

impl NoisePrior {
    pub const ALL: [NoisePrior; 5] = [
        NoisePrior::Gaussian,
        NoisePrior::Cauchy,
        NoisePrior::Logistic,
        NoisePrior::Gumbel,
        NoisePrior::Uniform,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NoisePrior::Gaussian => "gaussian",
            NoisePrior::Cauchy => "cauchy",
            NoisePrior::Logistic => "logistic",
            NoisePrior::Gumbel => "gumbel",
            NoisePrior::Uniform => "uniform",
        }
    }

    pub fn is_symmetric(self) -> bool {
        !matches!(self, NoisePrior::Gumbel)
    }

    /// Whether the score-function estimators (which need `grad nu`) apply.
    ///
    /// Uniform has no density of the exponential form and Gumbel is only
    /// used through its closed-form softmax.
    pub fn supports_score_function(self) -> bool {
        matches!(
            self,
            NoisePrior::Gaussian | NoisePrior::Cauchy | NoisePrior::Logistic
        )
    }

    /// One draw, fully determined by the stream identity.
    pub fn sample(self, stream: &NoiseStream) -> f64 {
        let mut rng = stream.rng();
        match self {
            NoisePrior::Gaussian => StandardNormal.sample(&mut rng),
            NoisePrior::Cauchy => math::tan(PI * (open_unit(&mut rng) - 0.5)),
            NoisePrior::Logistic => {
                let u = open_unit(&mut rng);
                math::ln(u / (1.0 - u))
            }
            NoisePrior::Gumbel => -math::ln(-math::ln(open_unit(&mut rng))),
            NoisePrior::Uniform => open_unit(&mut rng) - 0.5,
        }
    }

    /// `nu'(z)`, the derivative of the negative log-density.
    pub fn nu_grad(self, z: f64) -> Result<f64> {
        match self {
            NoisePrior::Gaussian => Ok(z),
            NoisePrior::Cauchy => Ok(2.0 * z / (1.0 + z * z)),
            NoisePrior::Logistic => Ok(math::tanh(0.5 * z)),
            other => Err(Error::UnsupportedPrior(other)),
        }
    }

    pub fn cdf(self, x: f64) -> f64 {
        match self {
            NoisePrior::Gaussian => math::normal_cdf(x),
            NoisePrior::Cauchy => 0.5 + math::atan(x) / PI,
            NoisePrior::Logistic => math::sigmoid(x),
            NoisePrior::Gumbel => math::exp(-math::exp(-x)),
            NoisePrior::Uniform => (x + 0.5).clamp(0.0, 1.0),
        }
    }

    /// `P(x + Z > 0) = 1 - F(-x)`, the Heaviside smoothed at unit scale.
    /// Equal to the CDF for the symmetric priors.
    pub fn step(self, x: f64) -> f64 {
        match self {
            NoisePrior::Gumbel => -math::expm1(-math::exp(x)),
            other => other.cdf(x),
        }
    }

    /// Derivative of [`step`](Self::step), the density at `-x`.
    pub fn step_density(self, x: f64) -> f64 {
        self.pdf(-x)
    }

    pub fn pdf(self, x: f64) -> f64 {
        match self {
            NoisePrior::Gaussian => math::normal_pdf(x),
            NoisePrior::Cauchy => 1.0 / (PI * (1.0 + x * x)),
            NoisePrior::Logistic => {
                let e = math::exp(-x.abs());
                e / ((1.0 + e) * (1.0 + e))
            }
            NoisePrior::Gumbel => {
                let e = math::exp(-x);
                if e.is_infinite() {
                    0.0
                } else {
                    math::exp(-x - e)
                }
            }
            NoisePrior::Uniform => {
                if x.abs() < 0.5 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

impl fmt::Display for NoisePrior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NoisePrior {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        NoisePrior::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or(Error::InvalidConfig("unknown noise prior"))
    }
}

/// Uniform draw in the open interval (0, 1); every value is exactly
/// representable and `1 - u` never rounds to zero.
fn open_unit(rng: &mut CounterRng) -> f64 {
    ((rng.next_u64() >> 12) as f64 + 0.5) * (1.0 / (1u64 << 52) as f64)
}

/// Pipeline stage a draw belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    Raster,
    Aggregate,
    Custom(u32),
}

impl Stage {
    fn tag(self) -> u64 {
        match self {
            Stage::Raster => 1,
            Stage::Aggregate => 2,
            Stage::Custom(t) => 0x1_0000_0000 | u64::from(t),
        }
    }
}

/// Identity of one noise draw: `(seed, sample, pixel, face, stage)`.
///
/// The same identity always yields the same value, so a backward pass can
/// regenerate exactly the noise its forward pass used without storing it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NoiseStream {
    pub seed: u64,
    pub sample: u32,
    pub pixel: u32,
    pub face: u32,
    pub stage: Stage,
}

impl NoiseStream {
    pub fn new(seed: u64, stage: Stage) -> Self {
        Self {
            seed,
            sample: 0,
            pixel: 0,
            face: 0,
            stage,
        }
    }

    pub fn at(self, sample: u32, pixel: u32, face: u32) -> Self {
        Self {
            sample,
            pixel,
            face,
            ..self
        }
    }

    pub fn with_pixel(self, pixel: u32) -> Self {
        Self { pixel, ..self }
    }

    fn key(&self) -> u64 {
        let lo = (u64::from(self.sample) << 32) | u64::from(self.pixel);
        let hi = (u64::from(self.face) << 32) ^ self.stage.tag();
        mix64(self.seed ^ mix64(lo ^ mix64(hi ^ 0xD134_2543_DE82_EF95)))
    }

    /// SplitMix64 generator positioned at the start of this stream.
    pub fn rng(&self) -> CounterRng {
        CounterRng {
            state: self.key(),
        }
    }
}

/// SplitMix64 over a stream key; a few words per draw at most.
#[derive(Debug, Clone)]
pub struct CounterRng {
    state: u64,
}

impl RngCore for CounterRng {
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        mix64(self.state)
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let bytes = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;

    fn draws(prior: NoisePrior, n: u32, seed: u64) -> Vec<f64> {
        let base = NoiseStream::new(seed, Stage::Custom(7));
        (0..n).map(|i| prior.sample(&base.at(i, 0, 0))).collect()
    }

    #[test]
    fn gaussian_moments() {
        let xs = draws(NoisePrior::Gaussian, 1_000_000, 11);
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 4e-3, "mean {mean}");
        assert!((var - 1.0).abs() < 0.01, "var {var}");
    }

    #[test]
    fn uniform_support_is_open() {
        for x in draws(NoisePrior::Uniform, 100_000, 3) {
            assert!(x > -0.5 && x < 0.5);
        }
    }

    #[test]
    fn same_identity_same_draw() {
        let s = NoiseStream::new(99, Stage::Raster).at(4, 17, 2);
        for p in NoisePrior::ALL {
            assert_eq!(p.sample(&s).to_bits(), p.sample(&s).to_bits());
        }
        let t = s.at(4, 17, 3);
        assert_ne!(
            NoisePrior::Gaussian.sample(&s),
            NoisePrior::Gaussian.sample(&t)
        );
    }

    #[test]
    fn stages_are_distinct_streams() {
        let a = NoiseStream::new(5, Stage::Raster).at(0, 0, 0);
        let b = NoiseStream::new(5, Stage::Aggregate).at(0, 0, 0);
        assert_ne!(a.rng().next_u64(), b.rng().next_u64());
    }

    #[test]
    fn nu_grad_values() {
        assert_eq!(NoisePrior::Gaussian.nu_grad(1.5).unwrap(), 1.5);
        assert_eq!(NoisePrior::Cauchy.nu_grad(1.0).unwrap(), 1.0);
        assert!(NoisePrior::Cauchy.nu_grad(1e12).unwrap().abs() < 1e-11);
        assert!((NoisePrior::Logistic.nu_grad(2.0).unwrap() - math::tanh(1.0)).abs() < 1e-16);
        assert_eq!(
            NoisePrior::Uniform.nu_grad(0.1),
            Err(Error::UnsupportedPrior(NoisePrior::Uniform))
        );
        assert!(NoisePrior::Gumbel.nu_grad(0.1).is_err());
    }

    #[test]
    fn cdf_values() {
        assert!((NoisePrior::Cauchy.cdf(1.0) - 0.75).abs() < 1e-15);
        assert!((NoisePrior::Uniform.cdf(0.25) - 0.75).abs() < 1e-15);
        for p in NoisePrior::ALL.into_iter().filter(|p| p.is_symmetric()) {
            assert!((p.cdf(0.0) - 0.5).abs() < 1e-15, "{p}");
        }
        for p in NoisePrior::ALL {
            assert_eq!(p.cdf(f64::NEG_INFINITY), 0.0, "{p}");
            assert_eq!(p.cdf(f64::INFINITY), 1.0, "{p}");
        }
    }

    #[test]
    fn cdf_is_monotone_and_pdf_is_its_derivative() {
        for p in NoisePrior::ALL {
            let mut prev = 0.0;
            for i in -400..=400 {
                let x = i as f64 * 0.025 + 0.0125;
                let c = p.cdf(x);
                assert!(c >= prev, "{p} at {x}");
                prev = c;
                let h = 1e-6;
                if p == NoisePrior::Uniform && ((x.abs() - 0.5).abs() < 2.0 * h) {
                    continue;
                }
                let fd = (p.cdf(x + h) - p.cdf(x - h)) / (2.0 * h);
                assert!((fd - p.pdf(x)).abs() < 1e-7, "{p} at {x}: {fd} vs {}", p.pdf(x));
            }
        }
    }

    /// One-sample Kolmogorov-Smirnov distance against the closed-form CDF.
    #[test]
    fn empirical_cdf_matches_closed_form() {
        for p in NoisePrior::ALL {
            let mut xs = draws(p, 100_000, 21);
            xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let n = xs.len() as f64;
            let ks = xs
                .iter()
                .enumerate()
                .map(|(i, &x)| {
                    let c = p.cdf(x);
                    (c - i as f64 / n).abs().max(((i + 1) as f64 / n - c).abs())
                })
                .fold(0.0, f64::max);
            assert!(ks < 0.01, "{p}: KS {ks}");
        }
    }

    #[test]
    fn step_is_the_exceedance_probability() {
        for p in NoisePrior::ALL {
            let zs = draws(p, 100_000, 22);
            for x in [-1.5, -0.4, 0.0, 0.3, 1.2] {
                let freq = zs.iter().filter(|&&z| x + z > 0.0).count() as f64 / zs.len() as f64;
                let q = p.step(x);
                let se = (q * (1.0 - q) / zs.len() as f64).sqrt().max(1e-5);
                assert!((freq - q).abs() < 4.0 * se, "{p} at {x}: {freq} vs {q}");
                let h = 1e-6;
                let fd = (p.step(x + h) - p.step(x - h)) / (2.0 * h);
                assert!((fd - p.step_density(x)).abs() < 1e-6, "{p} at {x}");
            }
        }
    }

    #[test]
    fn score_has_zero_mean_for_gaussian_and_cauchy() {
        for p in [NoisePrior::Gaussian, NoisePrior::Cauchy] {
            let g: Vec<f64> = draws(p, 1_000_000, 8)
                .into_iter()
                .map(|z| p.nu_grad(z).unwrap())
                .collect();
            let n = g.len() as f64;
            let mean = g.iter().sum::<f64>() / n;
            let var = g.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
            let se = math::sqrt(var / n);
            assert!(mean.abs() < 4.0 * se, "{p}: mean {mean}, se {se}");
        }
    }

    #[test]
    fn parses_names() {
        assert_eq!("Gaussian".parse::<NoisePrior>().unwrap(), NoisePrior::Gaussian);
        assert!("laplace".parse::<NoisePrior>().is_err());
    }
}
