//! Small numeric helpers shared by the detector and stability nets.

/// Numerically stable logistic sigmoid.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + exp(x)) without overflow for large x.
pub fn ln_1p_exp(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Softplus with curvature scale: beta * ln(1 + exp(x / beta)). Always positive.
pub fn softplus_scaled(x: f64, beta: f64) -> f64 {
    beta * ln_1p_exp(x / beta)
}

/// Derivative of `softplus_scaled` with respect to x.
pub fn softplus_scaled_dx(x: f64, beta: f64) -> f64 {
    sigmoid(x / beta)
}

/// Derivative of `softplus_scaled` with respect to beta.
pub fn softplus_scaled_dbeta(x: f64, beta: f64) -> f64 {
    let z = x / beta;
    ln_1p_exp(z) - z * sigmoid(z)
}

/// Unit-scale softplus, used for strictly positive decay rates.
pub fn softplus(x: f64) -> f64 {
    ln_1p_exp(x)
}

/// Kahan-compensated sum. Keeps loss sums reproducible to the last ulp,
/// which the finite-difference gradient check depends on.
pub fn kahan_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let y = v - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    sum
}
