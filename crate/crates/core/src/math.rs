//! Scalar math kernels shared by the forward ops and their backward rules.

pub(crate) const SQRT_2: f64 = std::f64::consts::SQRT_2;
pub(crate) const INV_SQRT_2PI: f64 = 0.3989422804014327;

/// Numerically stable logistic sigmoid.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// softplus(x) = ln(1 + e^x), computed as max(x, 0) + ln(1 + e^{-|x|})
/// so that large positive inputs do not overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Standard normal CDF via the error function.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / SQRT_2))
}

/// Standard normal PDF.
pub fn norm_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Exact-erf GELU: x * Phi(x).
pub fn gelu(x: f64) -> f64 {
    x * norm_cdf(x)
}

/// d/dx gelu(x) = Phi(x) + x * phi(x).
pub fn gelu_grad(x: f64) -> f64 {
    norm_cdf(x) + x * norm_pdf(x)
}
