//! Voigt-notation helpers and rotations.
//!
//! Order is `(11, 22, 33, 23, 13, 12)`. Strain-like vectors carry engineering
//! shear components (`γ = 2ε` in slots 3..6), stress-like vectors carry plain
//! tensor components. A 6×6 stiffness maps engineering strain to stress; its
//! inverse maps stress to engineering strain.

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};

/// Voigt slot -> (i, j) tensor index pairs.
pub const VOIGT_PAIRS: [(usize, usize); 6] = [(0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1)];

/// Map a (symmetric) tensor index pair to its Voigt slot.
pub fn voigt_slot(i: usize, j: usize) -> usize {
    match (i, j) {
        (0, 0) => 0,
        (1, 1) => 1,
        (2, 2) => 2,
        (1, 2) | (2, 1) => 3,
        (0, 2) | (2, 0) => 4,
        (0, 1) | (1, 0) => 5,
        _ => unreachable!("tensor index out of range"),
    }
}

/// Symmetric 3×3 tensor from a stress-like Voigt vector (tensor shears).
pub fn stress_to_matrix(v: &Vector6<f64>) -> Matrix3<f64> {
    Matrix3::new(
        v[0], v[5], v[4], //
        v[5], v[1], v[3], //
        v[4], v[3], v[2],
    )
}

/// Stress-like Voigt vector from a symmetric 3×3 tensor.
pub fn matrix_to_stress(m: &Matrix3<f64>) -> Vector6<f64> {
    Vector6::new(m[(0, 0)], m[(1, 1)], m[(2, 2)], m[(1, 2)], m[(0, 2)], m[(0, 1)])
}

/// Symmetric 3×3 tensor from a strain-like Voigt vector (engineering shears).
pub fn strain_to_matrix(v: &Vector6<f64>) -> Matrix3<f64> {
    Matrix3::new(
        v[0],
        0.5 * v[5],
        0.5 * v[4],
        0.5 * v[5],
        v[1],
        0.5 * v[3],
        0.5 * v[4],
        0.5 * v[3],
        v[2],
    )
}

/// Strain-like Voigt vector (engineering shears) from a symmetric 3×3 tensor.
pub fn matrix_to_strain(m: &Matrix3<f64>) -> Vector6<f64> {
    Vector6::new(
        m[(0, 0)],
        m[(1, 1)],
        m[(2, 2)],
        2.0 * m[(1, 2)],
        2.0 * m[(0, 2)],
        2.0 * m[(0, 1)],
    )
}

/// Rotation matrix from Bunge Z-X-Z Euler angles (radians).
///
/// Returns the matrix whose columns are the crystal axes expressed in the
/// sample frame, i.e. it maps crystal-frame vectors to the sample frame.
pub fn rotation_from_bunge(phi1: f64, cap_phi: f64, phi2: f64) -> Matrix3<f64> {
    let (s1, c1) = phi1.sin_cos();
    let (s2, c2) = cap_phi.sin_cos();
    let (s3, c3) = phi2.sin_cos();
    // Passive Bunge matrix g maps sample to crystal; we return its transpose.
    let g = Matrix3::new(
        c1 * c3 - s1 * s3 * c2,
        s1 * c3 + c1 * s3 * c2,
        s3 * s2,
        -c1 * s3 - s1 * c3 * c2,
        -s1 * s3 + c1 * c3 * c2,
        c3 * s2,
        s1 * s2,
        -c1 * s2,
        c2,
    );
    g.transpose()
}

/// Rotate a 6×6 stiffness (engineering-shear convention) by `r`,
/// taking crystal-frame moduli to the sample frame.
pub fn rotate_stiffness(c: &Matrix6<f64>, r: &Matrix3<f64>) -> Matrix6<f64> {
    // Work through the full fourth-order tensor; the factor bookkeeping for
    // engineering shear is easy to get wrong in a 6x6 Bond matrix.
    let mut c4 = [[[[0.0f64; 3]; 3]; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                for l in 0..3 {
                    // The engineering 6x6 satisfies sigma_I = C_IJ eps^eng_J, so the
                    // tensor entries on shear columns are C_IJ / (1 + (k != l)) ... but
                    // with symmetric storage the plain identification works:
                    //   sigma_ij = c4_ijkl eps_kl (full sum over kl)
                    // with c4_ijkl = C[I][J] when J is a shear slot counted twice.
                    let big_i = voigt_slot(i, j);
                    let big_j = voigt_slot(k, l);
                    c4[i][j][k][l] = c[(big_i, big_j)];
                }
            }
        }
    }
    let mut out = [[[[0.0f64; 3]; 3]; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                for l in 0..3 {
                    let mut s = 0.0;
                    for a in 0..3 {
                        for b in 0..3 {
                            let rab = r[(i, a)] * r[(j, b)];
                            if rab == 0.0 {
                                continue;
                            }
                            for p in 0..3 {
                                for q in 0..3 {
                                    s += rab * r[(k, p)] * r[(l, q)] * c4[a][b][p][q];
                                }
                            }
                        }
                    }
                    out[i][j][k][l] = s;
                }
            }
        }
    }
    let mut m = Matrix6::zeros();
    for (bi, &(i, j)) in VOIGT_PAIRS.iter().enumerate() {
        for (bj, &(k, l)) in VOIGT_PAIRS.iter().enumerate() {
            m[(bi, bj)] = out[i][j][k][l];
        }
    }
    m
}

/// Rotate a symmetric 3×3 tensor: `r * t * rᵀ`.
pub fn rotate_sym(t: &Matrix3<f64>, r: &Matrix3<f64>) -> Matrix3<f64> {
    r * t * r.transpose()
}

/// Von Mises equivalent of a stress-like Voigt vector.
pub fn von_mises(s: &Vector6<f64>) -> f64 {
    let t1 = (s[0] - s[1]).powi(2) + (s[1] - s[2]).powi(2) + (s[2] - s[0]).powi(2);
    let t2 = 6.0 * (s[3] * s[3] + s[4] * s[4] + s[5] * s[5]);
    ((t1 + t2) / 2.0).sqrt()
}

/// Equivalent plastic strain `sqrt(2/3 e:e)` of a strain-like Voigt vector.
///
/// Engineering shears are halved back to tensor components before the
/// contraction.
pub fn eq_strain(e: &Vector6<f64>) -> f64 {
    let n = e[0] * e[0]
        + e[1] * e[1]
        + e[2] * e[2]
        + 2.0 * ((0.5 * e[3]).powi(2) + (0.5 * e[4]).powi(2) + (0.5 * e[5]).powi(2));
    (2.0 / 3.0 * n).sqrt()
}

/// 6×6 identity.
pub fn identity6() -> Matrix6<f64> {
    Matrix6::identity()
}

/// Unit vector helper.
pub fn unit(v: Vector3<f64>) -> Vector3<f64> {
    v / v.norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn bunge_identity_and_determinant() {
        let r = rotation_from_bunge(0.0, 0.0, 0.0);
        assert_relative_eq!(r, Matrix3::identity(), epsilon = 1e-14);
        let r = rotation_from_bunge(0.3, 1.1, -2.0);
        assert_relative_eq!(r.determinant(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(r * r.transpose(), Matrix3::identity(), epsilon = 1e-12);
    }

    #[test]
    fn stiffness_rotation_preserves_isotropy() {
        // Isotropic stiffness is invariant under any rotation.
        let (lam, mu) = (52.0e3, 26.3e3);
        let mut c = Matrix6::zeros();
        for i in 0..3 {
            for j in 0..3 {
                c[(i, j)] = lam;
            }
            c[(i, i)] = lam + 2.0 * mu;
            c[(i + 3, i + 3)] = mu;
        }
        let r = rotation_from_bunge(0.7, 0.9, 1.3);
        let cr = rotate_stiffness(&c, &r);
        assert_relative_eq!(cr, c, epsilon = 1e-8);
    }

    #[test]
    fn strain_roundtrip_and_eq_strain() {
        let e = Vector6::new(0.01, -0.005, -0.005, 0.002, -0.001, 0.004);
        let m = strain_to_matrix(&e);
        assert_relative_eq!(matrix_to_strain(&m), e, epsilon = 1e-15);
        // diag(p, -p/2, -p/2) has equivalent strain p
        let p = 0.0123;
        let ev = Vector6::new(p, -p / 2.0, -p / 2.0, 0.0, 0.0, 0.0);
        assert_relative_eq!(eq_strain(&ev), p, epsilon = 1e-15);
    }

    #[test]
    fn von_mises_uniaxial() {
        let s = Vector6::new(100.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        assert_relative_eq!(von_mises(&s), 100.0, epsilon = 1e-12);
    }
}
