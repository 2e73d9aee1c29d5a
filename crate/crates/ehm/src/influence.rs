//! Influence-function problems on the voxel RVE and the coefficient-tensor
//! sets they produce.
//!
//! Three linear periodic problems are solved per base temperature on one
//! factorization: unit macro strains (concentration tensors `A`), unit part
//! eigenstrains (interaction tensors `P`), and the thermal-expansion field
//! (thermal concentration vectors `𝒜`). Part averages are normalized by part
//! volume; with RVE volume 1 the consistency sums `Σ C A = I`, `Σ C P = 0`
//! and `Σ C 𝒜 = 0` hold at every temperature.

use crate::error::EhmError;
use crate::fe::{PeriodicFeProblem, PeriodicGrid};
use crate::material::MaterialDb;
use crate::microstructure::{GrainRecord, VoxelRve};
use crate::voigt;
use crate::Result;
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::{Matrix6, Vector6};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

/// Base temperatures used for the shipped tensor sets, K.
pub const DEFAULT_BASE_TEMPS: [f64; 8] = [295.0, 373.0, 473.0, 589.0, 700.0, 811.0, 873.0, 923.0];

/// Coefficient tensors at one temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorSlab {
    /// Concentration tensors, one 6×6 per part.
    pub a: Vec<Matrix6<f64>>,
    /// Interaction tensors, `p[beta * n + alpha]`.
    pub p: Vec<Matrix6<f64>>,
    /// Part-average compliances.
    pub m: Vec<Matrix6<f64>>,
    /// Thermal concentration vectors.
    pub athermal: Vec<Vector6<f64>>,
}

impl TensorSlab {
    pub fn n_parts(&self) -> usize {
        self.a.len()
    }

    pub fn p_of(&self, beta: usize, alpha: usize) -> &Matrix6<f64> {
        &self.p[beta * self.n_parts() + alpha]
    }

    /// Linear combination `(1−w)·self + w·other`, entrywise.
    fn lerp(&self, other: &TensorSlab, w: f64) -> TensorSlab {
        let mix6 = |x: &[Matrix6<f64>], y: &[Matrix6<f64>]| {
            x.iter()
                .zip(y)
                .map(|(a, b)| a * (1.0 - w) + b * w)
                .collect::<Vec<_>>()
        };
        TensorSlab {
            a: mix6(&self.a, &other.a),
            p: mix6(&self.p, &other.p),
            m: mix6(&self.m, &other.m),
            athermal: self
                .athermal
                .iter()
                .zip(&other.athermal)
                .map(|(a, b)| a * (1.0 - w) + b * w)
                .collect(),
        }
    }
}

/// Per-base-temperature coefficient tensors plus part volume fractions.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientTensorSet {
    pub t_base: Vec<f64>,
    pub slabs: Vec<TensorSlab>,
    pub fractions: Vec<f64>,
}

impl CoefficientTensorSet {
    pub fn n_parts(&self) -> usize {
        self.fractions.len()
    }

    /// Component-wise piecewise-linear interpolation between bracketing base
    /// temperatures. Exact slabs are returned at the nodes.
    pub fn interpolate(&self, t: f64) -> Result<TensorSlab> {
        let lo = *self.t_base.first().expect("nonempty set");
        let hi = *self.t_base.last().expect("nonempty set");
        if t < lo || t > hi {
            return Err(EhmError::OutOfRangeTemperature { t, lo, hi });
        }
        if let Some(i) = self.t_base.iter().position(|&b| b == t) {
            return Ok(self.slabs[i].clone());
        }
        let hi_idx = self.t_base.iter().position(|&b| b > t).unwrap();
        let (t0, t1) = (self.t_base[hi_idx - 1], self.t_base[hi_idx]);
        let w = (t - t0) / (t1 - t0);
        Ok(self.slabs[hi_idx - 1].lerp(&self.slabs[hi_idx], w))
    }

    /// Maximum deviations of the three consistency sums for one slab.
    pub fn consistency_errors(slab: &TensorSlab, fractions: &[f64]) -> (f64, f64, f64) {
        let n = fractions.len();
        let mut a_sum = Matrix6::<f64>::zeros();
        for (beta, frac) in fractions.iter().enumerate() {
            a_sum += slab.a[beta] * *frac;
        }
        let e_a = (a_sum - Matrix6::identity()).abs().max();
        let mut e_p = 0.0f64;
        for alpha in 0..n {
            let mut p_sum = Matrix6::<f64>::zeros();
            for (beta, frac) in fractions.iter().enumerate() {
                p_sum += slab.p_of(beta, alpha) * *frac;
            }
            e_p = e_p.max(p_sum.abs().max());
        }
        let mut th = Vector6::<f64>::zeros();
        for (beta, frac) in fractions.iter().enumerate() {
            th += slab.athermal[beta] * *frac;
        }
        let e_t = th.abs().max();
        (e_a, e_p, e_t)
    }

    /// Homogenized stiffness `Σ C_β (M^β)⁻¹ A^β`.
    pub fn homogenized_stiffness(slab: &TensorSlab, fractions: &[f64]) -> Result<Matrix6<f64>> {
        let mut l = Matrix6::<f64>::zeros();
        for (beta, frac) in fractions.iter().enumerate() {
            let inv = slab.m[beta]
                .try_inverse()
                .ok_or_else(|| EhmError::SingularSystem("part compliance".into()))?;
            l += inv * slab.a[beta] * *frac;
        }
        Ok(l)
    }
}

/// One RVE with per-part materials, ready for the three influence problems
/// at a fixed temperature.
pub struct InfluenceProblem {
    pub fe: PeriodicFeProblem,
    pub part_of_elem: Vec<u32>,
    pub n_parts: usize,
    pub fractions: Vec<f64>,
    elems_of_part: Vec<Vec<usize>>,
}

impl InfluenceProblem {
    /// Builds a problem from per-part 6×6 sample-frame stiffnesses; part IDs
    /// per element follow `part_of_elem`.
    pub fn new(
        grid: PeriodicGrid,
        part_of_elem: Vec<u32>,
        materials: Vec<Matrix6<f64>>,
    ) -> InfluenceProblem {
        let n_parts = materials.len();
        let n_elems = grid.n_elems();
        let mut elems_of_part = vec![Vec::new(); n_parts];
        for (e, &p) in part_of_elem.iter().enumerate() {
            elems_of_part[p as usize].push(e);
        }
        let fractions = elems_of_part
            .iter()
            .map(|v| v.len() as f64 / n_elems as f64)
            .collect();
        let fe = PeriodicFeProblem::new(grid, part_of_elem.clone(), materials);
        InfluenceProblem {
            fe,
            part_of_elem,
            n_parts,
            fractions,
            elems_of_part,
        }
    }

    /// Solves all three influence problems on one factorization and returns
    /// the coefficient slab at this temperature.
    ///
    /// `alpha_dual[p]` is the part thermal-expansion tensor in the sample
    /// frame as an engineering-shear Voigt vector.
    pub fn solve_slab(&self, alpha_dual: &[Vector6<f64>]) -> Result<TensorSlab> {
        let fact = self.fe.factorize()?;
        let n = self.n_parts;

        // Right-hand sides: 6 macro strains, 6 eigenstrains per part, 1 thermal.
        let mut rhs: Vec<Vec<f64>> = Vec::with_capacity(6 * n + 7);
        for k in 0..6 {
            let mut unit = Vector6::zeros();
            unit[k] = 1.0;
            rhs.push(self.fe.rhs_macro_strain(&unit));
        }
        for alpha in 0..n {
            for k in 0..6 {
                let mut unit = Vector6::zeros();
                unit[k] = 1.0;
                rhs.push(self.fe.rhs_eigenstrain(&self.elems_of_part[alpha], &unit));
            }
        }
        let lam: Vec<Vector6<f64>> = self
            .part_of_elem
            .iter()
            .map(|&p| alpha_dual[p as usize])
            .collect();
        rhs.push(self.fe.rhs_eigenstrain_field(&lam));

        // Factor once, sweep right-hand sides in blocks.
        let mut averages: Vec<Vec<Vector6<f64>>> = Vec::with_capacity(rhs.len());
        for chunk in rhs.chunks(96) {
            let sols = fact.solve_block(chunk);
            for x in sols {
                let u = self.fe.expand(&x);
                averages.push(self.fe.part_average_strains(&u, &self.part_of_elem, n));
            }
        }

        let mut a = vec![Matrix6::<f64>::zeros(); n];
        for k in 0..6 {
            for beta in 0..n {
                let col = averages[k][beta];
                for i in 0..6 {
                    a[beta][(i, k)] = col[i] + if i == k { 1.0 } else { 0.0 };
                }
            }
        }
        let mut p = vec![Matrix6::<f64>::zeros(); n * n];
        for alpha in 0..n {
            for k in 0..6 {
                let avg = &averages[6 + alpha * 6 + k];
                for beta in 0..n {
                    for i in 0..6 {
                        p[beta * n + alpha][(i, k)] = avg[beta][i];
                    }
                }
            }
        }
        let thermal = &averages[6 + 6 * n];
        let athermal: Vec<Vector6<f64>> = (0..n).map(|beta| thermal[beta]).collect();

        let m = (0..n)
            .map(|i| {
                self.fe.materials[i]
                    .try_inverse()
                    .ok_or_else(|| EhmError::SingularSystem(format!("part {i} stiffness")))
            })
            .collect::<Result<Vec<_>>>()?;

        Ok(TensorSlab {
            a,
            p,
            m,
            athermal,
        })
    }
}

/// Builds the influence problem for an RVE at temperature `t`.
pub fn problem_at(
    rve: &VoxelRve,
    grains: &[GrainRecord],
    db: &MaterialDb,
    t: f64,
) -> Result<(InfluenceProblem, Vec<Vector6<f64>>)> {
    let mut mats = Vec::with_capacity(grains.len());
    let mut alpha_dual = Vec::with_capacity(grains.len());
    for g in grains {
        let r = g.rotation();
        let c_crystal = db.elastic(g.phase).stiffness_at(t)?;
        mats.push(voigt::rotate_stiffness(&c_crystal, &r));
        alpha_dual.push(db.expansion_dual(g.phase, &r));
    }
    let grid = PeriodicGrid::new(rve.dims, rve.spacing);
    Ok((
        InfluenceProblem::new(grid, rve.grain_id.clone(), mats),
        alpha_dual,
    ))
}

/// Precomputes coefficient tensors at every base temperature.
///
/// `t_base` must be sorted ascending and lie inside the elastic validity
/// range of every phase present.
pub fn assemble_set(
    rve: &VoxelRve,
    grains: &[GrainRecord],
    db: &MaterialDb,
    t_base: &[f64],
) -> Result<CoefficientTensorSet> {
    if t_base.is_empty() || t_base.windows(2).any(|w| w[0] >= w[1]) {
        return Err(EhmError::Invalid("base temperatures must be sorted ascending".into()));
    }
    let mut slabs = Vec::with_capacity(t_base.len());
    let mut fractions = None;
    for &t in t_base {
        let (prob, alpha_dual) = problem_at(rve, grains, db, t)?;
        slabs.push(prob.solve_slab(&alpha_dual)?);
        fractions.get_or_insert(prob.fractions);
    }
    Ok(CoefficientTensorSet {
        t_base: t_base.to_vec(),
        slabs,
        fractions: fractions.unwrap(),
    })
}

const CACHE_MAGIC: &[u8; 4] = b"EHMC";
const CACHE_VERSION: u32 = 1;

/// Writes the binary tensor cache.
///
/// Layout: magic `EHMC`, version u32, n_parts u32, n_temps u32, the
/// temperature list as f64, then per temperature the slabs `A` (n×36), `P`
/// (n×n×36, β-major), `M` (n×36), `𝒜` (n×6), and finally the volume
/// fractions (n). All values little-endian f64, matrices row-major, Voigt
/// order (11, 22, 33, 23, 13, 12).
pub fn write_cache(path: &Path, set: &CoefficientTensorSet) -> Result<()> {
    let mut f = BufWriter::new(std::fs::File::create(path)?);
    f.write_all(CACHE_MAGIC)?;
    f.write_u32::<LittleEndian>(CACHE_VERSION)?;
    f.write_u32::<LittleEndian>(set.n_parts() as u32)?;
    f.write_u32::<LittleEndian>(set.t_base.len() as u32)?;
    for &t in &set.t_base {
        f.write_f64::<LittleEndian>(t)?;
    }
    let write_mat = |f: &mut BufWriter<std::fs::File>, m: &Matrix6<f64>| -> Result<()> {
        for i in 0..6 {
            for j in 0..6 {
                f.write_f64::<LittleEndian>(m[(i, j)])?;
            }
        }
        Ok(())
    };
    for slab in &set.slabs {
        for m in &slab.a {
            write_mat(&mut f, m)?;
        }
        for m in &slab.p {
            write_mat(&mut f, m)?;
        }
        for m in &slab.m {
            write_mat(&mut f, m)?;
        }
        for v in &slab.athermal {
            for i in 0..6 {
                f.write_f64::<LittleEndian>(v[i])?;
            }
        }
    }
    for &c in &set.fractions {
        f.write_f64::<LittleEndian>(c)?;
    }
    Ok(())
}

/// Reads a cache written by [`write_cache`]; round-trips bit-exact.
pub fn read_cache(path: &Path) -> Result<CoefficientTensorSet> {
    let origin = path.display().to_string();
    let mut f = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    f.read_exact(&mut magic)?;
    if &magic != CACHE_MAGIC {
        return Err(EhmError::parse(&origin, "bad magic, not an EHMC cache"));
    }
    let version = f.read_u32::<LittleEndian>()?;
    if version != CACHE_VERSION {
        return Err(EhmError::parse(&origin, format!("unsupported cache version {version}")));
    }
    let n = f.read_u32::<LittleEndian>()? as usize;
    let nt = f.read_u32::<LittleEndian>()? as usize;
    let mut t_base = Vec::with_capacity(nt);
    for _ in 0..nt {
        t_base.push(f.read_f64::<LittleEndian>()?);
    }
    let read_mat = |f: &mut BufReader<std::fs::File>| -> Result<Matrix6<f64>> {
        let mut m = Matrix6::zeros();
        for i in 0..6 {
            for j in 0..6 {
                m[(i, j)] = f.read_f64::<LittleEndian>()?;
            }
        }
        Ok(m)
    };
    let mut slabs = Vec::with_capacity(nt);
    for _ in 0..nt {
        let mut a = Vec::with_capacity(n);
        for _ in 0..n {
            a.push(read_mat(&mut f)?);
        }
        let mut p = Vec::with_capacity(n * n);
        for _ in 0..n * n {
            p.push(read_mat(&mut f)?);
        }
        let mut m = Vec::with_capacity(n);
        for _ in 0..n {
            m.push(read_mat(&mut f)?);
        }
        let mut athermal = Vec::with_capacity(n);
        for _ in 0..n {
            let mut v = Vector6::zeros();
            for i in 0..6 {
                v[i] = f.read_f64::<LittleEndian>()?;
            }
            athermal.push(v);
        }
        slabs.push(TensorSlab {
            a,
            p,
            m,
            athermal,
        });
    }
    let mut fractions = Vec::with_capacity(n);
    for _ in 0..n {
        fractions.push(f.read_f64::<LittleEndian>()?);
    }
    Ok(CoefficientTensorSet {
        t_base,
        slabs,
        fractions,
    })
}
