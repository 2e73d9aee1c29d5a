//! Reduced-order material-point integrator.
//!
//! One macroscale point carries the part-wise state of its RVE. Each
//! increment solves the backward-Euler form of the reduced microscale system
//!
//! `Δε^(β) − Σ_α P^(βα) Δμ^(α) = A^(β) Δε̄ + 𝒜^(β) ΔT`
//!
//! with part stresses recovered algebraically through the part-average
//! compliance, `σ^(α) = (M^(α))⁻¹ (ε^(α) − μ^(α) − α_th^(α)(T − T₀))`, and a
//! Newton iteration on the stacked eigenstrain increments.

use crate::constitutive::{GrainKernel, SlipState};
use crate::error::EhmError;
use crate::influence::{CoefficientTensorSet, TensorSlab};
use crate::material::MaterialDb;
use crate::microstructure::GrainRecord;
use crate::voigt;
use crate::Result;
use nalgebra::{DMatrix, DVector, Matrix6, Vector6};

/// Per-part mechanical state.
#[derive(Debug, Clone)]
pub struct PartState {
    /// Total strain, engineering shear.
    pub eps: Vector6<f64>,
    /// Inelastic strain, engineering shear.
    pub mu: Vector6<f64>,
    /// Stress, MPa.
    pub sigma: Vector6<f64>,
    pub slip: SlipState,
}

/// State of one macroscale material point.
#[derive(Debug, Clone)]
pub struct PointState {
    pub parts: Vec<PartState>,
    pub eps_bar: Vector6<f64>,
    pub sigma_bar: Vector6<f64>,
    pub t_kelvin: f64,
    pub time: f64,
}

/// Per-component increment control.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ComponentControl {
    /// Prescribed strain increment.
    Strain(f64),
    /// Prescribed end-of-increment stress, MPa.
    Stress(f64),
}

/// One mixed-control increment.
#[derive(Debug, Clone)]
pub struct IncrementControl {
    pub dt: f64,
    pub control: [ComponentControl; 6],
    pub d_t_kelvin: f64,
}

/// Iteration diagnostics of one increment.
#[derive(Debug, Clone, Copy, Default)]
pub struct StepStats {
    pub newton_iters: usize,
    pub bisections: usize,
    pub outer_iters: usize,
    pub clamp_hits: usize,
}

/// Immutable per-RVE data driving a material point.
pub struct PointModel<'a> {
    pub db: &'a MaterialDb,
    pub set: &'a CoefficientTensorSet,
    pub kernels: Vec<GrainKernel>,
    pub alpha_dual: Vec<Vector6<f64>>,
    pub fractions: Vec<f64>,
}

const NEWTON_MAX: usize = 50;
const BISECT_MAX: usize = 4;
const REL_TOL: f64 = 1.0e-8;
const ABS_TOL_MPA: f64 = 1.0e-10;

impl<'a> PointModel<'a> {
    pub fn new(
        db: &'a MaterialDb,
        set: &'a CoefficientTensorSet,
        grains: &[GrainRecord],
    ) -> PointModel<'a> {
        assert_eq!(grains.len(), set.n_parts(), "tensor set and grain list disagree");
        let kernels: Vec<GrainKernel> = grains
            .iter()
            .map(|g| GrainKernel::new(g.phase, &g.rotation()))
            .collect();
        let alpha_dual = grains
            .iter()
            .map(|g| db.expansion_dual(g.phase, &g.rotation()))
            .collect();
        PointModel {
            db,
            set,
            kernels,
            alpha_dual,
            fractions: set.fractions.clone(),
        }
    }

    pub fn n_parts(&self) -> usize {
        self.kernels.len()
    }

    /// Virgin state at temperature `t0`.
    pub fn initial_state(&self, t0: f64) -> PointState {
        PointState {
            parts: self
                .kernels
                .iter()
                .map(|k| PartState {
                    eps: Vector6::zeros(),
                    mu: Vector6::zeros(),
                    sigma: Vector6::zeros(),
                    slip: k.initial_state(self.db),
                })
                .collect(),
            eps_bar: Vector6::zeros(),
            sigma_bar: Vector6::zeros(),
            t_kelvin: t0,
            time: 0.0,
        }
    }

    /// Fully strain-controlled increment with automatic step bisection.
    pub fn step(
        &self,
        state: &PointState,
        dt: f64,
        d_eps_bar: Vector6<f64>,
        d_t_kelvin: f64,
    ) -> Result<(PointState, StepStats)> {
        self.step_bisect(state, dt, d_eps_bar, d_t_kelvin, 0)
    }

    fn step_bisect(
        &self,
        state: &PointState,
        dt: f64,
        d_eps: Vector6<f64>,
        d_t: f64,
        depth: usize,
    ) -> Result<(PointState, StepStats)> {
        match self.step_once(state, dt, d_eps, d_t) {
            Ok(out) => Ok(out),
            Err(EhmError::NoConvergence(_)) if depth < BISECT_MAX => {
                let (s1, st1) =
                    self.step_bisect(state, 0.5 * dt, d_eps * 0.5, 0.5 * d_t, depth + 1)?;
                let (s2, st2) = self.step_bisect(&s1, 0.5 * dt, d_eps * 0.5, 0.5 * d_t, depth + 1)?;
                Ok((
                    s2,
                    StepStats {
                        newton_iters: st1.newton_iters + st2.newton_iters,
                        bisections: st1.bisections + st2.bisections + 1,
                        outer_iters: 0,
                        clamp_hits: st1.clamp_hits + st2.clamp_hits,
                    },
                ))
            }
            Err(e) => Err(e),
        }
    }

    /// Assembles the stacked residual (and optionally the Jacobian) at a
    /// trial `Δμ` stack. Public so the Jacobian can be checked against
    /// finite differences.
    #[allow(clippy::too_many_arguments)]
    pub fn residual_and_jacobian(
        &self,
        state: &PointState,
        slab: &TensorSlab,
        strengths: &[Vec<f64>],
        dt: f64,
        d_eps_bar: &Vector6<f64>,
        d_t_kelvin: f64,
        dmu: &DVector<f64>,
        want_jacobian: bool,
    ) -> (DVector<f64>, Option<DMatrix<f64>>, Increments, bool) {
        let n = self.n_parts();
        let t_end = state.t_kelvin + d_t_kelvin;
        let dtheta = t_end - self.db.global.t0;
        let mut r = DVector::zeros(6 * n);
        let mut jac = want_jacobian.then(|| DMatrix::zeros(6 * n, 6 * n));
        let mut incs = Increments {
            d_eps: vec![Vector6::zeros(); n],
            sigma: vec![Vector6::zeros(); n],
            dgamma: Vec::with_capacity(n),
        };
        let mut clamp_any = false;

        // part stiffness: inverse of the part-average compliance
        let minv: Vec<Matrix6<f64>> = (0..n)
            .map(|b| {
                slab.m[b]
                    .try_inverse()
                    .expect("part compliance is positive definite")
            })
            .collect();

        for beta in 0..n {
            let mut d_eps = slab.a[beta] * d_eps_bar + slab.athermal[beta] * d_t_kelvin;
            for alpha in 0..n {
                let dmu_a = dmu.fixed_rows::<6>(6 * alpha).into_owned();
                d_eps += slab.p_of(beta, alpha) * dmu_a;
            }
            let dmu_b = dmu.fixed_rows::<6>(6 * beta).into_owned();
            let part = &state.parts[beta];
            let elastic = part.eps + d_eps - part.mu - dmu_b - self.alpha_dual[beta] * dtheta;
            let sigma = minv[beta] * elastic;
            let inc = self.kernels[beta].plastic_increment(
                self.db,
                &strengths[beta],
                &sigma,
                t_end,
                dt,
            );
            clamp_any |= inc.clamp_hit;
            let res_b = dmu_b - inc.dmu;
            r.fixed_rows_mut::<6>(6 * beta).copy_from(&res_b);
            incs.d_eps[beta] = d_eps;
            incs.sigma[beta] = sigma;
            incs.dgamma.push(inc.dgamma);

            if let Some(j) = jac.as_mut() {
                // ∂σ^β/∂Δμ^α = Minv^β (P^βα − δ_βα I)
                let dm = inc.ddmu_dsigma * minv[beta];
                for alpha in 0..n {
                    let mut block = -(dm * slab.p_of(beta, alpha));
                    if alpha == beta {
                        block += dm;
                        block += Matrix6::identity();
                    }
                    for i in 0..6 {
                        for k in 0..6 {
                            j[(6 * beta + i, 6 * alpha + k)] = block[(i, k)];
                        }
                    }
                }
            }
        }
        (r, jac, incs, clamp_any)
    }

    /// One backward-Euler increment at full strain control.
    fn step_once(
        &self,
        state: &PointState,
        dt: f64,
        d_eps_bar: Vector6<f64>,
        d_t_kelvin: f64,
    ) -> Result<(PointState, StepStats)> {
        let n = self.n_parts();
        let t_end = state.t_kelvin + d_t_kelvin;
        let slab = self.set.interpolate(t_end)?;
        let strengths: Vec<Vec<f64>> = (0..n)
            .map(|b| self.kernels[b].strengths(self.db, &state.parts[b].slip, t_end))
            .collect::<Result<_>>()?;

        let mut dmu = DVector::<f64>::zeros(6 * n);
        let mut stats = StepStats::default();
        let (mut r, mut jac, mut incs, mut clamp) = self.residual_and_jacobian(
            state,
            &slab,
            &strengths,
            dt,
            &d_eps_bar,
            d_t_kelvin,
            &dmu,
            true,
        );
        for it in 0..NEWTON_MAX {
            stats.newton_iters = it + 1;
            stats.clamp_hits += clamp as usize;
            let rnorm = r.norm();
            // stress-units residual: the strain mismatch mapped through the
            // part stiffness
            let mut abs_mpa = 0.0f64;
            for beta in 0..n {
                let rb = r.fixed_rows::<6>(6 * beta).into_owned();
                let minv = slab.m[beta].try_inverse().unwrap();
                abs_mpa = abs_mpa.max((minv * rb).amax());
            }
            let rel = rnorm / dmu.norm().max(1.0e-16);
            if rel < REL_TOL || abs_mpa < ABS_TOL_MPA {
                return Ok((
                    self.commit(state, dt, d_eps_bar, d_t_kelvin, &incs)?,
                    stats,
                ));
            }
            let j = jac.take().expect("jacobian requested");
            let lu = j.lu();
            let delta = lu
                .solve(&r)
                .ok_or_else(|| EhmError::SingularSystem("point Newton".into()))?;
            // line halving against residual growth; the exponential flow rule
            // overshoots violently near yield
            let mut step_len = 1.0;
            let mut accepted = false;
            for _ in 0..20 {
                let trial = &dmu - &delta * step_len;
                let (rt, jt, t_incs, cl) = self.residual_and_jacobian(
                    state,
                    &slab,
                    &strengths,
                    dt,
                    &d_eps_bar,
                    d_t_kelvin,
                    &trial,
                    true,
                );
                if rt.norm() < rnorm || rt.norm() < 1e-16 {
                    dmu = trial;
                    r = rt;
                    jac = jt;
                    incs = t_incs;
                    clamp = cl;
                    accepted = true;
                    break;
                }
                step_len *= 0.5;
            }
            if !accepted {
                return Err(EhmError::NoConvergence(format!(
                    "point Newton stalled at |r| = {rnorm:.3e}"
                )));
            }
        }
        Err(EhmError::NoConvergence(format!(
            "point Newton: {NEWTON_MAX} iterations exhausted"
        )))
    }

    fn commit(
        &self,
        state: &PointState,
        dt: f64,
        d_eps_bar: Vector6<f64>,
        d_t_kelvin: f64,
        incs: &Increments,
    ) -> Result<PointState> {
        let n = self.n_parts();
        let t_end = state.t_kelvin + d_t_kelvin;
        let mut parts = Vec::with_capacity(n);
        let mut sigma_bar = Vector6::zeros();
        for beta in 0..n {
            let old = &state.parts[beta];
            let dmu_b: Vector6<f64> = incs.dgamma[beta]
                .iter()
                .zip(&self.kernels[beta].z_dual)
                .map(|(&dg, z)| z * dg)
                .sum();
            let slip = self.kernels[beta].commit(
                self.db,
                &old.slip,
                &incs.dgamma[beta],
                &incs.sigma[beta],
                t_end,
                dt,
            )?;
            let part = PartState {
                eps: old.eps + incs.d_eps[beta],
                mu: old.mu + dmu_b,
                sigma: incs.sigma[beta],
                slip,
            };
            sigma_bar += part.sigma * self.fractions[beta];
            parts.push(part);
        }
        Ok(PointState {
            parts,
            eps_bar: state.eps_bar + d_eps_bar,
            sigma_bar,
            t_kelvin: t_end,
            time: state.time + dt,
        })
    }

    /// Mixed strain/stress-controlled increment: unknown strain components
    /// are iterated until the stress-controlled components reach their
    /// targets within `1e-6 · max(1 MPa, |σ̄|)`.
    pub fn solve_mixed_control(
        &self,
        state: &PointState,
        ctrl: &IncrementControl,
    ) -> Result<(PointState, StepStats)> {
        let free: Vec<usize> = (0..6)
            .filter(|&i| matches!(ctrl.control[i], ComponentControl::Stress(_)))
            .collect();
        let d_eps_fixed = Vector6::from_fn(|i, _| match ctrl.control[i] {
            ComponentControl::Strain(d) => d,
            ComponentControl::Stress(_) => 0.0,
        });
        if free.is_empty() {
            return self.step(state, ctrl.dt, d_eps_fixed, ctrl.d_t_kelvin);
        }
        let targets: Vec<f64> = free
            .iter()
            .map(|&i| match ctrl.control[i] {
                ComponentControl::Stress(t) => t,
                _ => unreachable!(),
            })
            .collect();

        let m = free.len();
        let mut x = DVector::<f64>::zeros(m);
        let mut outer = 0;
        for it in 0..40 {
            outer = it + 1;
            let mut d_eps = d_eps_fixed;
            for (k, &i) in free.iter().enumerate() {
                d_eps[i] = x[k];
            }
            let (trial, mut stats) = self.step(state, ctrl.dt, d_eps, ctrl.d_t_kelvin)?;
            let resid: DVector<f64> = DVector::from_iterator(
                m,
                free.iter()
                    .zip(&targets)
                    .map(|(&i, &t)| trial.sigma_bar[i] - t),
            );
            let scale = trial.sigma_bar.amax().max(1.0);
            if resid.amax() < 1.0e-6 * scale {
                stats.outer_iters = outer;
                return Ok((trial, stats));
            }
            // finite-difference Jacobian of the controlled stresses
            let mut j = DMatrix::<f64>::zeros(m, m);
            let h = 1.0e-9;
            for col in 0..m {
                let mut d_eps_h = d_eps;
                d_eps_h[free[col]] += h;
                let (pert, _) = self.step(state, ctrl.dt, d_eps_h, ctrl.d_t_kelvin)?;
                for (row, &i) in free.iter().enumerate() {
                    j[(row, col)] = (pert.sigma_bar[i] - trial.sigma_bar[i]) / h;
                }
            }
            let delta = j
                .lu()
                .solve(&resid)
                .ok_or_else(|| EhmError::SingularSystem("mixed-control Newton".into()))?;
            x -= delta;
        }
        Err(EhmError::NoConvergence(format!(
            "mixed control: {outer} outer iterations"
        )))
    }

    /// Macroscale observables: homogenized stress, averaged plastic strain
    /// and equivalent plastic strain.
    pub fn homogenize(&self, state: &PointState) -> (Vector6<f64>, Vector6<f64>, f64) {
        homogenize(state, &self.fractions)
    }

    /// Consistency check `Σ C^β ε^β = ε̄`; returns the max deviation.
    pub fn strain_consistency_error(&self, state: &PointState) -> f64 {
        let mut sum = Vector6::<f64>::zeros();
        for (p, &c) in state.parts.iter().zip(&self.fractions) {
            sum += p.eps * c;
        }
        (sum - state.eps_bar).amax()
    }
}

/// Intermediate per-part quantities of one increment.
pub struct Increments {
    pub d_eps: Vec<Vector6<f64>>,
    pub sigma: Vec<Vector6<f64>>,
    pub dgamma: Vec<Vec<f64>>,
}

/// Volume-fraction homogenization of a point state: returns
/// `(σ̄, ε̄^p, ε̄^eqp)`.
pub fn homogenize(state: &PointState, fractions: &[f64]) -> (Vector6<f64>, Vector6<f64>, f64) {
    let mut sigma = Vector6::zeros();
    let mut eps_p = Vector6::zeros();
    for (p, &c) in state.parts.iter().zip(fractions) {
        sigma += p.sigma * c;
        eps_p += p.mu * c;
    }
    (sigma, eps_p, voigt::eq_strain(&eps_p))
}
