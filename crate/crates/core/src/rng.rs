//! Random streams and the handful of distributions the sampler needs.
//!
//! Every chain owns a ChaCha20 stream selected by `(seed, stream)`.
//! ChaCha is counter based, so a stream is reproducible bit for bit on any
//! platform. Normals come from `rand_distr::StandardNormal` (ziggurat) and
//! gamma variates from `rand_distr::Gamma` (Marsaglia-Tsang); both consume
//! the stream in a fixed order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};

pub type SamplerRng = ChaCha20Rng;

/// Deterministic generator for substream `stream` of master seed `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> SamplerRng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[inline]
pub fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

pub fn fill_std_normal<R: Rng + ?Sized>(rng: &mut R, out: &mut [f64]) {
    for v in out {
        *v = std_normal(rng);
    }
}

/// Draw from the inverse-gamma distribution with density
/// `b^a / Gamma(a) x^{-a-1} exp(-b/x)`.
pub fn inverse_gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64, rate: f64) -> Result<f64> {
    if !(shape > 0.0 && shape.is_finite()) || !(rate > 0.0 && rate.is_finite()) {
        return Err(Error::Numerical(format!(
            "inverse-gamma parameters must be positive and finite (shape={shape}, rate={rate})"
        )));
    }
    let gamma = Gamma::new(shape, 1.0 / rate)
        .map_err(|e| Error::Numerical(format!("gamma({shape}, 1/{rate}): {e}")))?;
    let g: f64 = gamma.sample(rng);
    Ok(1.0 / g)
}
