//! Convex surrogates that are tight at a reference point.

/// Affine map `a * u + b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine {
    pub slope: f64,
    pub intercept: f64,
}

impl Affine {
    pub fn eval(&self, u: f64) -> f64 {
        self.slope * u + self.intercept
    }
}

/// First-order minorant of `u^2` around `u_ref`.
pub fn taylor_lower_square(u_ref: f64) -> Affine {
    Affine {
        slope: 2.0 * u_ref,
        intercept: -u_ref * u_ref,
    }
}

/// Coefficients `(c, d)` of the minorant `c - d / theta` of `ln(1 + theta)`
/// around `theta_ref`.
pub fn log_bound_coeffs(theta_ref: f64) -> (f64, f64) {
    let r = theta_ref;
    (r.ln_1p() + r / (1.0 + r), r * r / (1.0 + r))
}

/// Lower bound of `ln(1 + theta)`, convex in `theta` and tight at `theta_ref`.
pub fn log_lower_bound(theta: f64, theta_ref: f64) -> Option<f64> {
    if !(theta > 0.0 && theta_ref > 0.0) {
        return None;
    }
    let (c, d) = log_bound_coeffs(theta_ref);
    Some(c - d / theta)
}

/// Convex upper bound of `eta * lambda`, tight at `(eta_ref, lambda_ref)`.
pub fn amgm_upper_bilinear(eta: f64, lambda: f64, eta_ref: f64, lambda_ref: f64) -> f64 {
    0.5 * (lambda_ref / eta_ref) * eta * eta + 0.5 * (eta_ref / lambda_ref) * lambda * lambda
}
