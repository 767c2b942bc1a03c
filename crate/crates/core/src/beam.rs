//! Euler-Bernoulli 3D frame element with consistent mass.
//!
//! Two nodes, six DOF each in the order `[ux, uy, uz, rx, ry, rz]`, local x
//! along the element axis. Axial and torsional terms are the standard rod
//! matrices; bending uses the Hermitian consistent-mass and stiffness blocks.

use nalgebra::{Matrix3, SMatrix, Vector3};

use crate::kinematics::RobotParams;

pub type ElementMatrix = SMatrix<f64, 12, 12>;

#[derive(Debug, Clone)]
pub struct BeamElement {
    pub length: f64,
    pub area: f64,
    /// Bending second moment of area (axisymmetric section).
    pub i_bend: f64,
    /// Polar second moment of area.
    pub j_polar: f64,
    pub rho: f64,
    pub e_modulus: f64,
    pub g_modulus: f64,
    /// Local-to-global rotation; columns are the local axes in global
    /// coordinates, local x along the element.
    pub rotation: Matrix3<f64>,
}

impl BeamElement {
    /// Lower-arm tube element along `axis` (unit vector root -> tip).
    pub fn lower_arm(params: &RobotParams, axis: &Vector3<f64>) -> Self {
        Self {
            length: params.l2,
            area: params.area_lower(),
            i_bend: params.i_bend_lower(),
            j_polar: params.j_polar_lower(),
            rho: params.rho,
            e_modulus: params.e_modulus,
            g_modulus: params.g_modulus(),
            rotation: frame_from_axis(axis),
        }
    }

    /// Consistent mass matrix in the local frame.
    pub fn mass_local(&self) -> ElementMatrix {
        let mut m = ElementMatrix::zeros();
        let l = self.length;
        let ral = self.rho * self.area * l;
        let rjl = self.rho * self.j_polar * l;

        // Axial (ux1, ux2) and torsion (rx1, rx2) rod terms.
        for (block, coef) in [((0usize, 6usize), ral / 6.0), ((3, 9), rjl / 6.0)] {
            let (i, j) = block;
            m[(i, i)] += 2.0 * coef;
            m[(j, j)] += 2.0 * coef;
            m[(i, j)] += coef;
            m[(j, i)] += coef;
        }

        // Bending in the x-y plane: (uy1, rz1, uy2, rz2).
        let c = ral / 420.0;
        let b_xy = [
            [156.0, 22.0 * l, 54.0, -13.0 * l],
            [22.0 * l, 4.0 * l * l, 13.0 * l, -3.0 * l * l],
            [54.0, 13.0 * l, 156.0, -22.0 * l],
            [-13.0 * l, -3.0 * l * l, -22.0 * l, 4.0 * l * l],
        ];
        let idx_xy = [1usize, 5, 7, 11];
        // Bending in the x-z plane: (uz1, ry1, uz2, ry2), rotation signs flip.
        let b_xz = [
            [156.0, -22.0 * l, 54.0, 13.0 * l],
            [-22.0 * l, 4.0 * l * l, -13.0 * l, -3.0 * l * l],
            [54.0, -13.0 * l, 156.0, 22.0 * l],
            [13.0 * l, -3.0 * l * l, 22.0 * l, 4.0 * l * l],
        ];
        let idx_xz = [2usize, 4, 8, 10];
        for a in 0..4 {
            for b in 0..4 {
                m[(idx_xy[a], idx_xy[b])] += c * b_xy[a][b];
                m[(idx_xz[a], idx_xz[b])] += c * b_xz[a][b];
            }
        }
        m
    }

    /// Stiffness matrix in the local frame.
    pub fn stiffness_local(&self) -> ElementMatrix {
        let mut k = ElementMatrix::zeros();
        let l = self.length;
        let ea = self.e_modulus * self.area / l;
        let gj = self.g_modulus * self.j_polar / l;
        for (i, j, coef) in [(0usize, 6usize, ea), (3, 9, gj)] {
            k[(i, i)] += coef;
            k[(j, j)] += coef;
            k[(i, j)] -= coef;
            k[(j, i)] -= coef;
        }

        let ei = self.e_modulus * self.i_bend / (l * l * l);
        let b_xy = [
            [12.0, 6.0 * l, -12.0, 6.0 * l],
            [6.0 * l, 4.0 * l * l, -6.0 * l, 2.0 * l * l],
            [-12.0, -6.0 * l, 12.0, -6.0 * l],
            [6.0 * l, 2.0 * l * l, -6.0 * l, 4.0 * l * l],
        ];
        let idx_xy = [1usize, 5, 7, 11];
        let b_xz = [
            [12.0, -6.0 * l, -12.0, -6.0 * l],
            [-6.0 * l, 4.0 * l * l, 6.0 * l, 2.0 * l * l],
            [-12.0, 6.0 * l, 12.0, 6.0 * l],
            [-6.0 * l, 2.0 * l * l, 6.0 * l, 4.0 * l * l],
        ];
        let idx_xz = [2usize, 4, 8, 10];
        for a in 0..4 {
            for b in 0..4 {
                k[(idx_xy[a], idx_xy[b])] += ei * b_xy[a][b];
                k[(idx_xz[a], idx_xz[b])] += ei * b_xz[a][b];
            }
        }
        k
    }

    fn transform(&self) -> ElementMatrix {
        let mut t = ElementMatrix::zeros();
        for blk in 0..4 {
            t.fixed_view_mut::<3, 3>(3 * blk, 3 * blk)
                .copy_from(&self.rotation);
        }
        t
    }

    /// Consistent mass in the global frame.
    pub fn mass_global(&self) -> ElementMatrix {
        let t = self.transform();
        t * self.mass_local() * t.transpose()
    }

    /// Stiffness in the global frame.
    pub fn stiffness_global(&self) -> ElementMatrix {
        let t = self.transform();
        t * self.stiffness_local() * t.transpose()
    }
}

/// Orthonormal frame with local x along `axis`; the transverse axes are an
/// arbitrary completion (the section is axisymmetric).
pub fn frame_from_axis(axis: &Vector3<f64>) -> Matrix3<f64> {
    let x = axis.normalize();
    let helper = if x.x.abs() < 0.9 {
        Vector3::x()
    } else {
        Vector3::y()
    };
    let y = x.cross(&helper).normalize();
    let z = x.cross(&y);
    Matrix3::from_columns(&[x, y, z])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn element() -> BeamElement {
        BeamElement::lower_arm(&RobotParams::default(), &Vector3::new(0.3, -0.2, -0.9))
    }

    #[test]
    fn consistent_mass_closed_form_entries() {
        let e = element();
        let m = e.mass_local();
        let ral = e.rho * e.area * e.length;
        let l = e.length;
        assert!((m[(1, 1)] - 13.0 * ral / 35.0).abs() < 1e-12 * ral);
        assert!((m[(1, 5)] - 11.0 * ral * l / 210.0).abs() < 1e-12 * ral);
        assert!((m[(1, 7)] - 9.0 * ral / 70.0).abs() < 1e-12 * ral);
        assert!((m[(1, 11)] + 13.0 * ral * l / 420.0).abs() < 1e-12 * ral);
        assert!((m[(5, 5)] - ral * l * l / 105.0).abs() < 1e-12 * ral);
        assert!((m[(0, 0)] - ral / 3.0).abs() < 1e-12 * ral);
        assert!((m[(0, 6)] - ral / 6.0).abs() < 1e-12 * ral);
    }

    #[test]
    fn matrices_symmetric() {
        let e = element();
        for mat in [
            e.mass_local(),
            e.stiffness_local(),
            e.mass_global(),
            e.stiffness_global(),
        ] {
            assert!((mat - mat.transpose()).norm() < 1e-9 * mat.norm());
        }
    }

    #[test]
    fn stiffness_has_exactly_six_rigid_modes() {
        let e = element();
        let k = e.stiffness_global();
        let eig = nalgebra::SymmetricEigen::new(k);
        let scale = eig.eigenvalues.amax();
        let zero_modes = eig
            .eigenvalues
            .iter()
            .filter(|&&v| v.abs() < 1e-9 * scale)
            .count();
        assert_eq!(zero_modes, 6);
        assert!(eig.eigenvalues.iter().all(|&v| v > -1e-9 * scale));
    }

    #[test]
    fn mass_positive_definite() {
        let e = element();
        assert!(nalgebra::Cholesky::new(e.mass_global()).is_some());
    }

    #[test]
    fn stiffness_linear_in_elastic_modulus() {
        let mut a = element();
        let k1 = a.stiffness_local();
        a.e_modulus *= 2.0;
        a.g_modulus *= 2.0;
        let k2 = a.stiffness_local();
        assert!((k2 - 2.0 * k1).norm() < 1e-9 * k1.norm());
    }

    #[test]
    fn global_eigenvalues_invariant_under_orientation() {
        let p = RobotParams::default();
        let a = BeamElement::lower_arm(&p, &Vector3::new(1.0, 0.0, 0.0));
        let b = BeamElement::lower_arm(&p, &Vector3::new(-0.4, 0.7, 0.2));
        let ka = nalgebra::SymmetricEigen::new(a.stiffness_global()).eigenvalues;
        let kb = nalgebra::SymmetricEigen::new(b.stiffness_global()).eigenvalues;
        let mut va: Vec<f64> = ka.iter().copied().collect();
        let mut vb: Vec<f64> = kb.iter().copied().collect();
        va.sort_by(|x, y| x.total_cmp(y));
        vb.sort_by(|x, y| x.total_cmp(y));
        for (x, y) in va.iter().zip(vb.iter()) {
            assert!((x - y).abs() < 1e-6 * va.last().unwrap());
        }
    }
}
