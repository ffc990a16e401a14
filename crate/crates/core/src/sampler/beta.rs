use serde::{Deserialize, Serialize};

use crate::rng::Rng;

use super::SamplerError;

/// Shape parameters of a Beta distribution on `(0, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaParams {
    pub a: f64,
    pub b: f64,
}

impl BetaParams {
    pub fn new(a: f64, b: f64) -> Result<Self, SamplerError> {
        let p = Self { a, b };
        p.validate()?;
        Ok(p)
    }

    /// `(0.5, 1)`: density `z^-0.5 / 2`, most mass near mild degradations.
    pub fn mild() -> Self {
        Self { a: 0.5, b: 1.0 }
    }

    pub fn validate(&self) -> Result<(), SamplerError> {
        if self.a > 0.0 && self.b > 0.0 && self.a.is_finite() && self.b.is_finite() {
            Ok(())
        } else {
            Err(SamplerError::InvalidShape { a: self.a, b: self.b })
        }
    }

    pub fn ln_beta_fn(&self) -> f64 {
        libm::lgamma(self.a) + libm::lgamma(self.b) - libm::lgamma(self.a + self.b)
    }
}

impl Default for BetaParams {
    fn default() -> Self {
        Self::mild()
    }
}

/// `z^(a-1) (1-z)^(b-1) / B(a, b)` with `B` evaluated through log-gamma.
pub fn beta_pdf(z: f64, params: BetaParams) -> Result<f64, SamplerError> {
    params.validate()?;
    if !(z > 0.0 && z < 1.0) {
        return Err(SamplerError::OutsideSupport(z));
    }
    let BetaParams { a, b } = params;
    Ok(((a - 1.0) * z.ln() + (b - 1.0) * (-z).ln_1p() - params.ln_beta_fn()).exp())
}

/// Gamma(shape, 1) by Marsaglia & Tsang's squeeze/rejection method.
///
/// For `shape < 1` a Gamma(shape + 1) draw is scaled by `U^(1/shape)`.
fn gamma_sample(rng: &mut Rng, shape: f64) -> f64 {
    if shape < 1.0 {
        let u = rng.uniform_open();
        return gamma_sample(rng, shape + 1.0) * u.powf(1.0 / shape);
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x = rng.normal();
        let v = 1.0 + c * x;
        if v <= 0.0 {
            continue;
        }
        let v = v * v * v;
        let u = rng.uniform_open();
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 || u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
            return d * v;
        }
    }
}

/// One Beta(a, b) variate in the open interval `(0, 1)`.
///
/// `b == 1` uses the inverse CDF `u^(1/a)`. Otherwise `X / (X + Y)` with
/// `X ~ Gamma(a)`, `Y ~ Gamma(b)` drawn by rejection; draws that round to an
/// endpoint are rejected.
pub fn beta_sample(rng: &mut Rng, params: BetaParams) -> f64 {
    loop {
        let z = if params.b == 1.0 {
            rng.uniform_open().powf(1.0 / params.a)
        } else {
            let x = gamma_sample(rng, params.a);
            let y = gamma_sample(rng, params.b);
            x / (x + y)
        };
        if z > 0.0 && z < 1.0 {
            return z;
        }
    }
}
