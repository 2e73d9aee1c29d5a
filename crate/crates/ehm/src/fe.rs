//! Periodic voxel finite elements: trilinear hexahedra on a wrapped grid,
//! sparse SPD assembly and direct factorization.
//!
//! Periodicity is enforced by indexing nodes on the torus (the slave nodes of
//! each periodic face pair are eliminated by wrapping), and rigid translation
//! is removed by pinning all three displacement components of node 0.

use crate::error::EhmError;
use crate::Result;
use faer::prelude::SpSolver;
use faer::sparse::SparseColMat;
use nalgebra::{Matrix6, SMatrix, Vector6};

type B6x24 = SMatrix<f64, 6, 24>;

/// Wrapped voxel grid; one trilinear element per voxel.
#[derive(Debug, Clone)]
pub struct PeriodicGrid {
    pub dims: [usize; 3],
    pub spacing: f64,
}

impl PeriodicGrid {
    pub fn new(dims: [usize; 3], spacing: f64) -> PeriodicGrid {
        PeriodicGrid { dims, spacing }
    }

    pub fn n_elems(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    /// Under periodic wrap the node grid coincides with the voxel grid.
    pub fn n_nodes(&self) -> usize {
        self.n_elems()
    }

    pub fn n_dofs(&self) -> usize {
        3 * self.n_nodes()
    }

    #[inline]
    pub fn node_id(&self, ix: usize, iy: usize, iz: usize) -> usize {
        let [nx, ny, _] = self.dims;
        ((iz % self.dims[2]) * ny + (iy % ny)) * nx + (ix % nx)
    }

    /// The eight nodes of element `e`, standard counterclockwise-bottom then
    /// top ordering.
    pub fn elem_nodes(&self, e: usize) -> [usize; 8] {
        let [nx, ny, _] = self.dims;
        let ix = e % nx;
        let iy = (e / nx) % ny;
        let iz = e / (nx * ny);
        [
            self.node_id(ix, iy, iz),
            self.node_id(ix + 1, iy, iz),
            self.node_id(ix + 1, iy + 1, iz),
            self.node_id(ix, iy + 1, iz),
            self.node_id(ix, iy, iz + 1),
            self.node_id(ix + 1, iy, iz + 1),
            self.node_id(ix + 1, iy + 1, iz + 1),
            self.node_id(ix, iy + 1, iz + 1),
        ]
    }

    pub fn elem_dofs(&self, e: usize) -> [usize; 24] {
        let nodes = self.elem_nodes(e);
        let mut dofs = [0usize; 24];
        for (a, n) in nodes.iter().enumerate() {
            dofs[3 * a] = 3 * n;
            dofs[3 * a + 1] = 3 * n + 1;
            dofs[3 * a + 2] = 3 * n + 2;
        }
        dofs
    }
}

/// Shape-function machinery of the trilinear hexahedron on a cube of edge
/// `h`, with 2×2×2 Gauss quadrature.
#[derive(Debug, Clone)]
pub struct Hex8Basis {
    /// Strain-displacement matrices at the 8 Gauss points (engineering
    /// shear rows, Voigt order 11,22,33,23,13,12).
    pub b: Vec<B6x24>,
    /// Integration weight × Jacobian determinant per Gauss point.
    pub w_detj: f64,
    /// Element volume.
    pub volume: f64,
    /// Volume-averaged B; integrates element-average strain exactly.
    pub b_mean: B6x24,
}

const CORNER: [[f64; 3]; 8] = [
    [-1.0, -1.0, -1.0],
    [1.0, -1.0, -1.0],
    [1.0, 1.0, -1.0],
    [-1.0, 1.0, -1.0],
    [-1.0, -1.0, 1.0],
    [1.0, -1.0, 1.0],
    [1.0, 1.0, 1.0],
    [-1.0, 1.0, 1.0],
];

impl Hex8Basis {
    pub fn new(h: f64) -> Hex8Basis {
        let g = 1.0 / 3.0f64.sqrt();
        let det_j = (h / 2.0).powi(3);
        let scale = 2.0 / h; // d/dx = (2/h) d/dxi
        let mut bs = Vec::with_capacity(8);
        let mut b_mean = B6x24::zeros();
        for gp in 0..8 {
            let (xi, eta, zeta) = (CORNER[gp][0] * g, CORNER[gp][1] * g, CORNER[gp][2] * g);
            let mut b = B6x24::zeros();
            for a in 0..8 {
                let [xa, ya, za] = CORNER[a];
                let dnx = 0.125 * xa * (1.0 + ya * eta) * (1.0 + za * zeta) * scale;
                let dny = 0.125 * (1.0 + xa * xi) * ya * (1.0 + za * zeta) * scale;
                let dnz = 0.125 * (1.0 + xa * xi) * (1.0 + ya * eta) * za * scale;
                let c = 3 * a;
                b[(0, c)] = dnx;
                b[(1, c + 1)] = dny;
                b[(2, c + 2)] = dnz;
                b[(3, c + 1)] = dnz;
                b[(3, c + 2)] = dny;
                b[(4, c)] = dnz;
                b[(4, c + 2)] = dnx;
                b[(5, c)] = dny;
                b[(5, c + 1)] = dnx;
            }
            b_mean += b / 8.0;
            bs.push(b);
        }
        Hex8Basis {
            b: bs,
            w_detj: det_j,
            volume: h * h * h,
            b_mean,
        }
    }

    /// Element stiffness for 6×6 moduli `c`.
    pub fn stiffness(&self, c: &Matrix6<f64>) -> SMatrix<f64, 24, 24> {
        let mut ke = SMatrix::<f64, 24, 24>::zeros();
        for b in &self.b {
            ke += b.transpose() * c * b * self.w_detj;
        }
        ke
    }

    /// Consistent nodal load of a uniform element stress: `∫ Bᵀ σ dV`.
    pub fn stress_load(&self, sigma: &Vector6<f64>) -> SMatrix<f64, 24, 1> {
        // uniform sigma integrates through b_mean
        self.b_mean.transpose() * sigma * self.volume
    }

    /// Element-average strain from element displacements.
    pub fn avg_strain(&self, u_e: &SMatrix<f64, 24, 1>) -> Vector6<f64> {
        self.b_mean * u_e
    }
}

/// Assembled periodic problem with a per-element material table.
///
/// `elem_mat[e]` indexes into `materials`; voxels of one grain share an
/// entry.
#[derive(Debug, Clone)]
pub struct PeriodicFeProblem {
    pub grid: PeriodicGrid,
    pub basis: Hex8Basis,
    pub elem_mat: Vec<u32>,
    pub materials: Vec<Matrix6<f64>>,
}

impl PeriodicFeProblem {
    pub fn new(grid: PeriodicGrid, elem_mat: Vec<u32>, materials: Vec<Matrix6<f64>>) -> Self {
        let basis = Hex8Basis::new(grid.spacing);
        PeriodicFeProblem {
            grid,
            basis,
            elem_mat,
            materials,
        }
    }

    pub fn n_eq(&self) -> usize {
        self.grid.n_dofs() - 3
    }

    #[inline]
    fn eq_of_dof(dof: usize) -> Option<usize> {
        // node 0 fully pinned
        if dof < 3 {
            None
        } else {
            Some(dof - 3)
        }
    }

    /// Assembles and factorizes the pinned SPD system.
    pub fn factorize(&self) -> Result<FactorizedSystem> {
        let n_eq = self.n_eq();
        let kes: Vec<SMatrix<f64, 24, 24>> = self
            .materials
            .iter()
            .map(|c| self.basis.stiffness(c))
            .collect();
        let mut trips: Vec<(usize, usize, f64)> =
            Vec::with_capacity(self.grid.n_elems() * 24 * 24);
        for e in 0..self.grid.n_elems() {
            let ke = &kes[self.elem_mat[e] as usize];
            let dofs = self.grid.elem_dofs(e);
            for (i, &di) in dofs.iter().enumerate() {
                let Some(ri) = Self::eq_of_dof(di) else { continue };
                for (j, &dj) in dofs.iter().enumerate() {
                    let Some(cj) = Self::eq_of_dof(dj) else { continue };
                    trips.push((ri, cj, ke[(i, j)]));
                }
            }
        }
        let k = SparseColMat::<usize, f64>::try_new_from_triplets(n_eq, n_eq, &trips)
            .map_err(|e| EhmError::SingularSystem(format!("assembly failed: {e:?}")))?;
        let chol = k
            .sp_cholesky(faer::Side::Lower)
            .map_err(|e| EhmError::SingularSystem(format!("Cholesky failed: {e:?}")))?;
        Ok(FactorizedSystem { n_eq, chol })
    }

    /// Right-hand side for a unit macro strain `eps_bar`: the fluctuation
    /// problem `K u = −∫ Bᵀ C ε̄`.
    pub fn rhs_macro_strain(&self, eps_bar: &Vector6<f64>) -> Vec<f64> {
        let mut rhs = vec![0.0; self.n_eq()];
        for e in 0..self.grid.n_elems() {
            let c = &self.materials[self.elem_mat[e] as usize];
            let fe = self.basis.stress_load(&(c * eps_bar));
            self.scatter(e, &(-fe), &mut rhs);
        }
        rhs
    }

    /// Right-hand side for a uniform eigenstrain `lambda` applied on the
    /// listed elements: `K u = +∫ Bᵀ C λ` over those elements.
    pub fn rhs_eigenstrain(&self, elems: &[usize], lambda: &Vector6<f64>) -> Vec<f64> {
        let mut rhs = vec![0.0; self.n_eq()];
        for &e in elems {
            let c = &self.materials[self.elem_mat[e] as usize];
            let fe = self.basis.stress_load(&(c * lambda));
            self.scatter(e, &fe, &mut rhs);
        }
        rhs
    }

    /// Right-hand side for a per-element eigenstrain field.
    pub fn rhs_eigenstrain_field(&self, lambda_of_elem: &[Vector6<f64>]) -> Vec<f64> {
        let mut rhs = vec![0.0; self.n_eq()];
        for e in 0..self.grid.n_elems() {
            let c = &self.materials[self.elem_mat[e] as usize];
            let fe = self.basis.stress_load(&(c * lambda_of_elem[e]));
            self.scatter(e, &fe, &mut rhs);
        }
        rhs
    }

    fn scatter(&self, e: usize, fe: &SMatrix<f64, 24, 1>, rhs: &mut [f64]) {
        for (i, &d) in self.grid.elem_dofs(e).iter().enumerate() {
            if let Some(r) = Self::eq_of_dof(d) {
                rhs[r] += fe[i];
            }
        }
    }

    /// Gathers a full-dof displacement vector (pinned node zero) from an
    /// equation-space solution column.
    pub fn expand(&self, x: &[f64]) -> Vec<f64> {
        let mut u = vec![0.0; self.grid.n_dofs()];
        u[3..].copy_from_slice(x);
        u
    }

    /// Element displacement gather.
    pub fn elem_u(&self, u: &[f64], e: usize) -> SMatrix<f64, 24, 1> {
        let mut ue = SMatrix::<f64, 24, 1>::zeros();
        for (i, &d) in self.grid.elem_dofs(e).iter().enumerate() {
            ue[i] = u[d];
        }
        ue
    }

    /// Per-part average of the strain field `B u` (engineering shear).
    pub fn part_average_strains(
        &self,
        u: &[f64],
        part_of_elem: &[u32],
        n_parts: usize,
    ) -> Vec<Vector6<f64>> {
        let mut sums = vec![Vector6::zeros(); n_parts];
        let mut counts = vec![0usize; n_parts];
        for e in 0..self.grid.n_elems() {
            let eps = self.basis.avg_strain(&self.elem_u(u, e));
            sums[part_of_elem[e] as usize] += eps;
            counts[part_of_elem[e] as usize] += 1;
        }
        for (s, c) in sums.iter_mut().zip(counts) {
            if c > 0 {
                *s /= c as f64;
            }
        }
        sums
    }
}

/// Factorized SPD operator; the factorization is computed once and reused
/// across all right-hand sides of one temperature.
pub struct FactorizedSystem {
    n_eq: usize,
    chol: faer::sparse::linalg::solvers::Cholesky<usize, f64>,
}

impl FactorizedSystem {
    /// Solves a block of right-hand sides; returns equation-space columns.
    pub fn solve_block(&self, rhs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let k = rhs.len();
        let mut m = faer::Mat::<f64>::zeros(self.n_eq, k);
        for (j, col) in rhs.iter().enumerate() {
            for (i, v) in col.iter().enumerate() {
                m[(i, j)] = *v;
            }
        }
        let x = self.chol.solve(&m);
        (0..k)
            .map(|j| (0..self.n_eq).map(|i| x[(i, j)]).collect())
            .collect()
    }

    pub fn solve_one(&self, rhs: &[f64]) -> Vec<f64> {
        self.solve_block(std::slice::from_ref(&rhs.to_vec())).remove(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Vector6;

    fn iso_stiffness(e: f64, nu: f64) -> Matrix6<f64> {
        let lam = e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
        let mu = e / (2.0 * (1.0 + nu));
        let mut c = Matrix6::zeros();
        for i in 0..3 {
            for j in 0..3 {
                c[(i, j)] = lam;
            }
            c[(i, i)] = lam + 2.0 * mu;
            c[(i + 3, i + 3)] = mu;
        }
        c
    }

    #[test]
    fn element_stiffness_annihilates_rigid_motion() {
        let basis = Hex8Basis::new(0.5);
        let ke = basis.stiffness(&iso_stiffness(1000.0, 0.3));
        // translation modes
        for k in 0..3 {
            let mut u = SMatrix::<f64, 24, 1>::zeros();
            for a in 0..8 {
                u[3 * a + k] = 1.0;
            }
            assert!((ke * u).norm() < 1e-10);
        }
        // symmetric, nonnegative
        assert_relative_eq!(ke, ke.transpose(), epsilon = 1e-10);
    }

    #[test]
    fn uniform_strain_recovered_by_b_mean() {
        // impose u = eps * x at the corners; b_mean must return eps exactly
        let h = 0.25;
        let basis = Hex8Basis::new(h);
        let eps = Vector6::new(0.01, -0.003, 0.002, 0.004, -0.001, 0.005);
        let em = crate::voigt::strain_to_matrix(&eps);
        let mut u = SMatrix::<f64, 24, 1>::zeros();
        for a in 0..8 {
            let x = nalgebra::Vector3::new(
                0.5 * h * (1.0 + CORNER[a][0]),
                0.5 * h * (1.0 + CORNER[a][1]),
                0.5 * h * (1.0 + CORNER[a][2]),
            );
            let ux = em * x;
            // engineering-shear strain matrix is symmetric; displacement field
            // u_i = eps_ij x_j reproduces it
            u[3 * a] = ux[0];
            u[3 * a + 1] = ux[1];
            u[3 * a + 2] = ux[2];
        }
        let got = basis.avg_strain(&u);
        assert_relative_eq!(got, eps, epsilon = 1e-12);
    }

    #[test]
    fn homogeneous_patch_has_zero_fluctuation() {
        // a uniform material under any macro strain has zero fluctuation:
        // the rhs must vanish identically
        let grid = PeriodicGrid::new([3, 3, 3], 1.0 / 3.0);
        let n = grid.n_elems();
        let prob = PeriodicFeProblem::new(grid, vec![0; n], vec![iso_stiffness(1.0e5, 0.3)]);
        let rhs = prob.rhs_macro_strain(&Vector6::new(0.01, 0.0, 0.0, 0.002, 0.0, 0.0));
        let max = rhs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max < 1e-10, "max rhs {max}");
    }

    #[test]
    fn factorization_solves_a_known_load() {
        let grid = PeriodicGrid::new([4, 4, 4], 0.25);
        let n = grid.n_elems();
        // two-material laminate along x to make the problem nontrivial
        let mats = vec![iso_stiffness(1.0e5, 0.3), iso_stiffness(3.0e5, 0.25)];
        let elem_mat: Vec<u32> = (0..n).map(|e| ((e % 4) / 2) as u32).collect();
        let prob = PeriodicFeProblem::new(grid, elem_mat, mats);
        let fact = prob.factorize().unwrap();
        let rhs = prob.rhs_macro_strain(&Vector6::new(0.01, 0.0, 0.0, 0.0, 0.0, 0.0));
        let x = fact.solve_one(&rhs);
        // residual check through a fresh matrix-vector product via stiffness
        let u = prob.expand(&x);
        let mut resid = vec![0.0; prob.n_eq()];
        for e in 0..prob.grid.n_elems() {
            let ke = prob.basis.stiffness(&prob.materials[prob.elem_mat[e] as usize]);
            let fe = ke * prob.elem_u(&u, e);
            for (i, &d) in prob.grid.elem_dofs(e).iter().enumerate() {
                if d >= 3 {
                    resid[d - 3] += fe[i];
                }
            }
        }
        for (r, f) in resid.iter().zip(rhs.iter()) {
            assert!((r - f).abs() < 1e-7_f64.max(1e-10 * f.abs()), "residual mismatch");
        }
    }
}
