//! Fuzzy logic structure used to approximate model mismatch.
//!
//! Nine rules over the six-dimensional input `x = [theta; theta_dot]`. The
//! edge rules (first and last) use sigmoid memberships `1/(1 + e^{5(x-k)})`,
//! the interior rules Gaussians `e^{-(x-k)^2/psi^2}`; the normalized rule
//! firing strengths form a partition of unity. The mismatch estimate is the
//! linear-in-weights form `vartheta^T phi(x) + eps`.

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Membership centers, widths and rule layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlsConfig {
    /// Number of rules `l`.
    pub rule_count: usize,
    /// Input dimension `p`.
    pub input_dim: usize,
    /// Gaussian width.
    pub psi: f64,
    /// Centers per input, `input_dim` rows of `rule_count` entries.
    pub centers: Vec<Vec<f64>>,
}

impl Default for FlsConfig {
    fn default() -> Self {
        // Center lists of the reference controller, taken verbatim (the first
        // two lists are non-monotone in the source; kept as published).
        let kappa_rate = vec![-1.0, -0.7, -0.4, -0.1, 0.0, 0.1, 0.4, 0.7, 1.0];
        Self {
            rule_count: 9,
            input_dim: 6,
            psi: std::f64::consts::SQRT_2,
            centers: vec![
                vec![-0.3, -0.25, -0.2, -0.15, -0.1, -0.05, 0.0, -0.01, 0.05],
                vec![-0.2, -0.15, -0.1, -0.05, -0.03, -0.01, 0.0, -0.01, 0.05],
                vec![-0.15, -0.05, 0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3],
                kappa_rate.clone(),
                kappa_rate.clone(),
                kappa_rate,
            ],
        }
    }
}

impl FlsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rule_count < 2 {
            return Err(Error::Config(format!(
                "rule_count must be >= 2, got {}",
                self.rule_count
            )));
        }
        if !(self.psi > 0.0) {
            return Err(Error::Config(format!(
                "psi must be positive, got {}",
                self.psi
            )));
        }
        if self.centers.len() != self.input_dim {
            return Err(Error::Config(format!(
                "expected {} center lists, got {}",
                self.input_dim,
                self.centers.len()
            )));
        }
        for (i, row) in self.centers.iter().enumerate() {
            if row.len() != self.rule_count {
                return Err(Error::Config(format!(
                    "center list {i} has {} entries, expected {}",
                    row.len(),
                    self.rule_count
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config(format!(
                    "center list {i} contains non-finite values"
                )));
            }
        }
        Ok(())
    }

    /// Membership of input `x_i` in rule `j` for input dimension `i`.
    fn membership(&self, dim: usize, rule: usize, x: f64) -> f64 {
        let kappa = self.centers[dim][rule];
        if rule == 0 || rule == self.rule_count - 1 {
            // Both edge rules share the published sigmoid orientation.
            1.0 / (1.0 + (5.0 * (x - kappa)).exp())
        } else {
            (-((x - kappa) / self.psi).powi(2)).exp()
        }
    }
}

/// Normalized fuzzy basis vector `phi(x)`; nonnegative, sums to one.
pub fn basis(config: &FlsConfig, x: &DVector<f64>) -> Result<DVector<f64>> {
    debug_assert_eq!(x.len(), config.input_dim);
    let l = config.rule_count;
    let mut products = DVector::zeros(l);
    for j in 0..l {
        let mut prod = 1.0;
        for i in 0..config.input_dim {
            prod *= config.membership(i, j, x[i]);
        }
        products[j] = prod;
    }
    let den: f64 = products.sum();
    if !(den > 1e-300) || !den.is_finite() {
        return Err(Error::DegenerateBasis);
    }
    Ok(products / den)
}

/// Basis for the controller input `[theta; theta_dot]`.
pub fn basis_from_state(
    config: &FlsConfig,
    theta: &Vector3<f64>,
    theta_dot: &Vector3<f64>,
) -> Result<DVector<f64>> {
    let x = DVector::from_iterator(6, theta.iter().chain(theta_dot.iter()).copied());
    basis(config, &x)
}

/// Weight matrix and approximation-error estimate with their saturation bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct FlsWeights {
    /// `rule_count x 3` weight matrix (N m).
    pub vartheta_hat: DMatrix<f64>,
    /// Approximation-error estimate per joint (N m).
    pub eps_hat: Vector3<f64>,
    pub vartheta_min: f64,
    pub vartheta_max: f64,
}

/// Default symmetric saturation bound, roughly 10x the injected-mismatch
/// torque scale so saturation stays inactive in nominal runs.
pub const DEFAULT_VARTHETA_BOUND: f64 = 50.0;

impl FlsWeights {
    pub fn zeros(rule_count: usize) -> Self {
        Self {
            vartheta_hat: DMatrix::zeros(rule_count, 3),
            eps_hat: Vector3::zeros(),
            vartheta_min: -DEFAULT_VARTHETA_BOUND,
            vartheta_max: DEFAULT_VARTHETA_BOUND,
        }
    }
}

/// Mismatch estimate `vartheta_hat^T phi(x) + eps_hat`.
pub fn approximate(weights: &FlsWeights, phi: &DVector<f64>) -> Vector3<f64> {
    let prod = weights.vartheta_hat.transpose() * phi;
    Vector3::new(prod[0], prod[1], prod[2]) + weights.eps_hat
}

/// Componentwise clamp to `[min, max]`.
pub fn saturate(raw: &DVector<f64>, min: f64, max: f64) -> DVector<f64> {
    raw.map(|v| v.clamp(min, max))
}

/// Left side of the saturation inequality
/// `(vartheta - sat(raw))^T Gamma^{-1} (raw - sat(raw))`, which is
/// nonpositive whenever the true weights lie within the bounds.
pub fn saturation_inequality_lhs(
    vartheta: &DVector<f64>,
    raw: &DVector<f64>,
    gamma_diag: &DVector<f64>,
    min: f64,
    max: f64,
) -> f64 {
    let sat = saturate(raw, min, max);
    let mut lhs = 0.0;
    for i in 0..raw.len() {
        lhs += (vartheta[i] - sat[i]) * (raw[i] - sat[i]) / gamma_diag[i];
    }
    lhs
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn default_config_is_valid() {
        FlsConfig::default().validate().unwrap();
    }

    #[test]
    fn partition_of_unity() {
        let cfg = FlsConfig::default();
        let mut rng = StdRng::seed_from_u64(5);
        for _ in 0..2000 {
            let x = DVector::from_fn(6, |i, _| {
                if i < 3 {
                    rng.random_range(-0.6..0.6)
                } else {
                    rng.random_range(-1.5..1.5)
                }
            });
            let phi = basis(&cfg, &x).unwrap();
            assert!((phi.sum() - 1.0).abs() < 1e-12);
            assert!(phi.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn gaussian_center_dominates_nearby_rules() {
        // Narrow Gaussians, with the edge sigmoids saturated low at the
        // evaluation point (both sigmoids are high only below their centers).
        let cfg = FlsConfig {
            rule_count: 5,
            input_dim: 1,
            psi: 0.1,
            centers: vec![vec![-6.0, -1.0, 3.0, 7.0, -5.0]],
        };
        let phi = basis(&cfg, &DVector::from_element(1, 3.0)).unwrap();
        let (jmax, _) = phi.iter().enumerate().fold(
            (0, 0.0),
            |acc, (j, &v)| {
                if v > acc.1 {
                    (j, v)
                } else {
                    acc
                }
            },
        );
        assert_eq!(jmax, 2);
        assert!(phi[2] > 0.9, "phi = {phi:?}");
    }

    #[test]
    fn basis_at_origin_matches_direct_evaluation() {
        // Independent re-evaluation of the published membership formulas at
        // x = 0 for the default centers.
        let cfg = FlsConfig::default();
        let x = DVector::zeros(6);
        let phi = basis(&cfg, &x).unwrap();
        let mu = |dim: usize, rule: usize| -> f64 {
            let k = cfg.centers[dim][rule];
            if rule == 0 || rule == 8 {
                1.0 / (1.0 + (5.0 * (0.0 - k)).exp())
            } else {
                (-(0.0 - k) * (0.0 - k) / 2.0).exp()
            }
        };
        let mut prods = [0.0; 9];
        for (j, p) in prods.iter_mut().enumerate() {
            *p = (0..6).map(|i| mu(i, j)).product();
        }
        let den: f64 = prods.iter().sum();
        for j in 0..9 {
            assert!((phi[j] - prods[j] / den).abs() < 1e-14);
        }
    }

    #[test]
    fn memberships_bounded_and_shaped() {
        let cfg = FlsConfig::default();
        for dim in 0..6 {
            for rule in 0..9 {
                for i in 0..100 {
                    let x = -2.0 + 4.0 * i as f64 / 99.0;
                    let m = cfg.membership(dim, rule, x);
                    assert!(m > 0.0 && m <= 1.0);
                }
            }
            // Gaussian rules symmetric about their centers.
            let k = cfg.centers[dim][4];
            for d in [0.1, 0.3, 0.7] {
                let lo = cfg.membership(dim, 4, k - d);
                let hi = cfg.membership(dim, 4, k + d);
                assert!((lo - hi).abs() < 1e-14);
            }
            // Sigmoid rules monotone.
            let mut prev = cfg.membership(dim, 0, -3.0);
            for i in 1..50 {
                let m = cfg.membership(dim, 0, -3.0 + 6.0 * i as f64 / 49.0);
                assert!(m <= prev);
                prev = m;
            }
        }
    }

    #[test]
    fn degenerate_basis_raised_on_underflow() {
        // A Gaussian-only structure (no full-support edge rules) underflows
        // far from all centers.
        let cfg = FlsConfig {
            rule_count: 3,
            input_dim: 1,
            psi: 1e-3,
            centers: vec![vec![0.0, 0.1, 0.2]],
        };
        // rule 0 and 2 are sigmoids by construction; push x where the
        // sigmoids saturate to ~0 as well.
        let far = DVector::from_element(1, 1e6);
        match basis(&cfg, &far) {
            Err(Error::DegenerateBasis) => {}
            Ok(phi) => {
                // If the sigmoid tail still resolves, the basis must stay
                // normalized; either outcome is acceptable numerically, but
                // normalization must never silently break.
                assert!((phi.sum() - 1.0).abs() < 1e-9);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn approximate_is_linear_in_weights() {
        let cfg = FlsConfig::default();
        let phi = basis(&cfg, &DVector::zeros(6)).unwrap();
        let mut w = FlsWeights::zeros(9);
        assert_eq!(approximate(&w, &phi), Vector3::zeros());

        let mut rng = StdRng::seed_from_u64(8);
        w.vartheta_hat = DMatrix::from_fn(9, 3, |_, _| rng.random_range(-5.0..5.0));
        w.eps_hat = Vector3::new(0.1, -0.2, 0.3);
        let y1 = approximate(&w, &phi);
        let mut w2 = w.clone();
        w2.vartheta_hat *= 2.0;
        let y2 = approximate(&w2, &phi);
        let lin = 2.0 * (y1 - w.eps_hat) + w.eps_hat;
        assert!((y2 - lin).amax() < 1e-12);

        w.vartheta_hat = DMatrix::zeros(9, 3);
        assert_eq!(approximate(&w, &phi), w.eps_hat);
    }

    #[test]
    fn saturation_inequality_holds_on_random_draws() {
        let mut rng = StdRng::seed_from_u64(13);
        let l = 9;
        for _ in 0..1000 {
            let min = -rng.random_range(1.0..20.0);
            let max = rng.random_range(1.0..20.0);
            let vartheta = DVector::from_fn(l, |_, _| rng.random_range(min..max));
            let raw = DVector::from_fn(l, |_, _| rng.random_range(-40.0..40.0));
            let gamma = DVector::from_fn(l, |_, _| rng.random_range(0.1..10.0));
            let lhs = saturation_inequality_lhs(&vartheta, &raw, &gamma, min, max);
            assert!(lhs <= 1e-12, "saturation inequality violated: {lhs}");
        }
    }

    #[test]
    fn saturation_boundary_cases() {
        let gamma = DVector::from_element(3, 1.0);
        // Raw inside bounds: unchanged, inequality exactly zero.
        let raw = DVector::from_vec(vec![0.5, -0.5, 0.0]);
        let vt = DVector::from_vec(vec![1.0, -1.0, 0.2]);
        assert_eq!(saturate(&raw, -2.0, 2.0), raw);
        assert_eq!(saturation_inequality_lhs(&vt, &raw, &gamma, -2.0, 2.0), 0.0);
        // Raw above max with true weight at the bound: LHS still zero.
        let raw = DVector::from_vec(vec![3.0, 0.0, 0.0]);
        let vt = DVector::from_vec(vec![2.0, 0.0, 0.0]);
        assert_eq!(saturation_inequality_lhs(&vt, &raw, &gamma, -2.0, 2.0), 0.0);
    }
}
