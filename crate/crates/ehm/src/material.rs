//! Material database: temperature-dependent elasticity, thermal expansion,
//! slip-system geometry and slip-family parameters.

use crate::error::EhmError;
use crate::voigt;
use crate::Result;
use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
use serde::Deserialize;
use std::collections::BTreeMap;
use std::path::Path;

/// HCP c/a ratio used for the pyramidal geometry (titanium).
pub const HCP_C_OVER_A: f64 = 1.587;

/// Crystal phase of a grain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Phase {
    HcpAlpha,
    BccBeta,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::HcpAlpha => "HCP_alpha",
            Phase::BccBeta => "BCC_beta",
        }
    }

    pub fn parse(s: &str) -> Result<Phase> {
        match s {
            "HCP_alpha" => Ok(Phase::HcpAlpha),
            "BCC_beta" => Ok(Phase::BccBeta),
            other => Err(EhmError::Invalid(format!("unknown phase `{other}`"))),
        }
    }
}

/// Slip family labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SlipFamily {
    Basal,
    Prismatic,
    PyramidalA,
    PyramidalCA,
    Bcc110,
    Bcc112,
    Bcc123,
}

impl SlipFamily {
    pub fn as_str(&self) -> &'static str {
        match self {
            SlipFamily::Basal => "basal",
            SlipFamily::Prismatic => "prismatic",
            SlipFamily::PyramidalA => "pyramidal_a",
            SlipFamily::PyramidalCA => "pyramidal_ca",
            SlipFamily::Bcc110 => "bcc110",
            SlipFamily::Bcc112 => "bcc112",
            SlipFamily::Bcc123 => "bcc123",
        }
    }

    pub fn parse(s: &str) -> Result<SlipFamily> {
        Ok(match s {
            "basal" => SlipFamily::Basal,
            "prismatic" => SlipFamily::Prismatic,
            "pyramidal_a" => SlipFamily::PyramidalA,
            "pyramidal_ca" => SlipFamily::PyramidalCA,
            "bcc110" => SlipFamily::Bcc110,
            "bcc112" => SlipFamily::Bcc112,
            "bcc123" => SlipFamily::Bcc123,
            other => return Err(EhmError::Invalid(format!("unknown slip family `{other}`"))),
        })
    }

    pub const ALL: [SlipFamily; 7] = [
        SlipFamily::Basal,
        SlipFamily::Prismatic,
        SlipFamily::PyramidalA,
        SlipFamily::PyramidalCA,
        SlipFamily::Bcc110,
        SlipFamily::Bcc112,
        SlipFamily::Bcc123,
    ];
}

/// Linear-in-temperature anisotropic elasticity in the crystal frame.
#[derive(Debug, Clone)]
pub struct ElasticLaw {
    /// 6×6 stiffness at the 298 K reference, MPa.
    pub c_ref: Matrix6<f64>,
    /// 6×6 slope, MPa/K.
    pub dc_dt: Matrix6<f64>,
    /// Validity range in kelvin.
    pub valid_range: (f64, f64),
}

/// Reference temperature for the elastic law.
pub const T_REF_ELASTIC: f64 = 298.0;

impl ElasticLaw {
    /// Hexagonal stiffness from the five independent constants (MPa).
    pub fn hexagonal(c11: f64, c12: f64, c13: f64, c33: f64, c44: f64) -> Matrix6<f64> {
        let c66 = 0.5 * (c11 - c12);
        let mut c = Matrix6::zeros();
        c[(0, 0)] = c11;
        c[(1, 1)] = c11;
        c[(2, 2)] = c33;
        c[(0, 1)] = c12;
        c[(1, 0)] = c12;
        c[(0, 2)] = c13;
        c[(2, 0)] = c13;
        c[(1, 2)] = c13;
        c[(2, 1)] = c13;
        c[(3, 3)] = c44;
        c[(4, 4)] = c44;
        c[(5, 5)] = c66;
        c
    }

    /// Cubic stiffness from the three independent constants (MPa).
    pub fn cubic(c11: f64, c12: f64, c44: f64) -> Matrix6<f64> {
        let mut c = Matrix6::zeros();
        for i in 0..3 {
            for j in 0..3 {
                c[(i, j)] = c12;
            }
            c[(i, i)] = c11;
            c[(i + 3, i + 3)] = c44;
        }
        c
    }

    /// Stiffness at temperature `t`, crystal frame.
    pub fn stiffness_at(&self, t: f64) -> Result<Matrix6<f64>> {
        let (lo, hi) = self.valid_range;
        if !(lo..=hi).contains(&t) {
            return Err(EhmError::OutOfRangeTemperature { t, lo, hi });
        }
        Ok(self.c_ref + self.dc_dt * (t - T_REF_ELASTIC))
    }

    /// Checks positive definiteness at both ends of the validity range.
    pub fn validate(&self) -> Result<()> {
        for t in [self.valid_range.0, self.valid_range.1] {
            let c = self.c_ref + self.dc_dt * (t - T_REF_ELASTIC);
            if c.cholesky().is_none() {
                return Err(EhmError::Invalid(format!(
                    "elastic stiffness not positive definite at {t} K"
                )));
            }
        }
        Ok(())
    }
}

/// Symmetric thermal-expansion tensor in the crystal frame, 1/K.
#[derive(Debug, Clone)]
pub struct ThermalExpansion {
    pub alpha: Matrix3<f64>,
}

impl ThermalExpansion {
    pub fn hcp(alpha_a: f64, alpha_c: f64) -> Self {
        ThermalExpansion {
            alpha: Matrix3::from_diagonal(&Vector3::new(alpha_a, alpha_a, alpha_c)),
        }
    }

    pub fn isotropic(alpha: f64) -> Self {
        ThermalExpansion {
            alpha: Matrix3::identity() * alpha,
        }
    }
}

/// One slip system: unit slip direction `n`, unit plane normal `m`, both in
/// the crystal frame, with the Schmid tensor `Z = n ⊗ m`.
#[derive(Debug, Clone)]
pub struct SlipSystem {
    pub family: SlipFamily,
    pub n: Vector3<f64>,
    pub m: Vector3<f64>,
}

impl SlipSystem {
    /// Schmid tensor `Z_ij = n_i m_j` in the crystal frame.
    pub fn schmid(&self) -> Matrix3<f64> {
        self.n * self.m.transpose()
    }

    /// Symmetrized Schmid tensor rotated to the sample frame, packed as the
    /// Voigt "dual" vector `(Z11, Z22, Z33, 2Z23, 2Z13, 2Z12)`.
    ///
    /// With this packing, `τ = σ_voigt · z` and an engineering-shear slip
    /// increment is `Δμ_voigt = Δγ · z`.
    pub fn schmid_dual(&self, r: &Matrix3<f64>) -> Vector6<f64> {
        let z = voigt::rotate_sym(&(0.5 * (self.schmid() + self.schmid().transpose())), r);
        Vector6::new(
            z[(0, 0)],
            z[(1, 1)],
            z[(2, 2)],
            2.0 * z[(1, 2)],
            2.0 * z[(0, 2)],
            2.0 * z[(0, 1)],
        )
    }
}

/// Resolved shear stress `τ = σ_ij Z_ij` from a stress-like Voigt vector and
/// a sample-frame Schmid dual vector.
pub fn resolved_shear(z_dual: &Vector6<f64>, sigma: &Vector6<f64>) -> f64 {
    z_dual.dot(sigma)
}

// Hexagonal crystallography with the x axis along a1 = [2 -1 -1 0]
// and z along [0001].
fn hex_direction(u: f64, v: f64, t: f64, w: f64) -> Vector3<f64> {
    let a1 = Vector3::new(1.0, 0.0, 0.0);
    let a2 = Vector3::new(-0.5, 3f64.sqrt() / 2.0, 0.0);
    let a3 = -(a1 + a2);
    let c = Vector3::new(0.0, 0.0, HCP_C_OVER_A);
    voigt::unit(u * a1 + v * a2 + t * a3 + w * c)
}

fn hex_plane_normal(h: f64, k: f64, l: f64) -> Vector3<f64> {
    // Reciprocal basis of {a1, a2, c}; the redundant index i = -(h+k) is dropped.
    let a1 = Vector3::new(1.0, 0.0, 0.0);
    let a2 = Vector3::new(-0.5, 3f64.sqrt() / 2.0, 0.0);
    let c = Vector3::new(0.0, 0.0, HCP_C_OVER_A);
    let vol = a1.dot(&a2.cross(&c));
    let b1 = a2.cross(&c) / vol;
    let b2 = c.cross(&a1) / vol;
    let b3 = a1.cross(&a2) / vol;
    voigt::unit(h * b1 + k * b2 + l * b3)
}

/// Builds the slip systems of a phase.
///
/// HCP yields 24 systems (3 basal ⟨a⟩, 3 prismatic ⟨a⟩, 6 pyramidal ⟨a⟩,
/// 12 pyramidal ⟨c+a⟩ on first-order pyramidal planes); BCC yields 48
/// (12 {110}, 12 {112}, 24 {123}, all ⟨111⟩).
pub fn build_slip_systems(phase: Phase) -> Vec<SlipSystem> {
    match phase {
        Phase::HcpAlpha => hcp_systems(),
        Phase::BccBeta => bcc_systems(),
    }
}

fn hcp_systems() -> Vec<SlipSystem> {
    let mut out = Vec::with_capacity(24);
    let a_dirs = [
        (2.0, -1.0, -1.0, 0.0),
        (-1.0, 2.0, -1.0, 0.0),
        (-1.0, -1.0, 2.0, 0.0),
    ];
    let basal_normal = hex_plane_normal(0.0, 0.0, 1.0);
    for d in a_dirs {
        out.push(SlipSystem {
            family: SlipFamily::Basal,
            n: hex_direction(d.0, d.1, d.2, d.3),
            m: basal_normal,
        });
    }
    let prism_planes = [(1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (-1.0, 1.0, 0.0)];
    for p in prism_planes {
        let m = hex_plane_normal(p.0, p.1, p.2);
        let n = a_dirs
            .iter()
            .map(|d| hex_direction(d.0, d.1, d.2, d.3))
            .find(|n| n.dot(&m).abs() < 1e-10)
            .expect("prismatic plane must contain one a direction");
        out.push(SlipSystem {
            family: SlipFamily::Prismatic,
            n,
            m,
        });
    }
    let pyr_planes = [
        (1.0, 0.0, 1.0),
        (0.0, 1.0, 1.0),
        (-1.0, 1.0, 1.0),
        (-1.0, 0.0, 1.0),
        (0.0, -1.0, 1.0),
        (1.0, -1.0, 1.0),
    ];
    for p in pyr_planes {
        let m = hex_plane_normal(p.0, p.1, p.2);
        let n = a_dirs
            .iter()
            .map(|d| hex_direction(d.0, d.1, d.2, d.3))
            .find(|n| n.dot(&m).abs() < 1e-10)
            .expect("first-order pyramidal plane must contain one a direction");
        out.push(SlipSystem {
            family: SlipFamily::PyramidalA,
            n,
            m,
        });
    }
    let ca_dirs = [
        (2.0, -1.0, -1.0, 3.0),
        (-1.0, 2.0, -1.0, 3.0),
        (-1.0, -1.0, 2.0, 3.0),
        (-2.0, 1.0, 1.0, 3.0),
        (1.0, -2.0, 1.0, 3.0),
        (1.0, 1.0, -2.0, 3.0),
    ];
    for p in pyr_planes {
        let m = hex_plane_normal(p.0, p.1, p.2);
        for d in ca_dirs {
            let n = hex_direction(d.0, d.1, d.2, d.3);
            if n.dot(&m).abs() < 1e-10 {
                out.push(SlipSystem {
                    family: SlipFamily::PyramidalCA,
                    n,
                    m,
                });
            }
        }
    }
    debug_assert_eq!(out.len(), 24);
    out
}

fn bcc_systems() -> Vec<SlipSystem> {
    let dirs: Vec<Vector3<f64>> = [(1, 1, 1), (-1, 1, 1), (1, -1, 1), (1, 1, -1)]
        .iter()
        .map(|&(a, b, c)| voigt::unit(Vector3::new(a as f64, b as f64, c as f64)))
        .collect();
    let mut out = Vec::with_capacity(48);
    let mut add = |planes: &[(i32, i32, i32)], family: SlipFamily| {
        for &(h, k, l) in planes {
            let m = voigt::unit(Vector3::new(h as f64, k as f64, l as f64));
            for n in &dirs {
                if n.dot(&m).abs() < 1e-10 {
                    out.push(SlipSystem { family, n: *n, m });
                }
            }
        }
    };
    add(
        &[(0, 1, -1), (0, 1, 1), (1, 0, -1), (1, 0, 1), (1, -1, 0), (1, 1, 0)],
        SlipFamily::Bcc110,
    );
    add(
        &[
            (1, 1, 2),
            (-1, 1, 2),
            (1, -1, 2),
            (1, 1, -2),
            (1, 2, 1),
            (-1, 2, 1),
            (1, 2, -1),
            (1, -2, 1),
            (2, 1, 1),
            (2, -1, 1),
            (2, 1, -1),
            (-2, 1, 1),
        ],
        SlipFamily::Bcc112,
    );
    add(
        &[
            (1, 2, 3),
            (-1, 2, 3),
            (1, -2, 3),
            (1, 2, -3),
            (1, 3, 2),
            (-1, 3, 2),
            (1, -3, 2),
            (1, 3, -2),
            (2, 1, 3),
            (-2, 1, 3),
            (2, -1, 3),
            (2, 1, -3),
            (2, 3, 1),
            (-2, 3, 1),
            (2, -3, 1),
            (2, 3, -1),
            (3, 1, 2),
            (-3, 1, 2),
            (3, -1, 2),
            (3, 1, -2),
            (3, 2, 1),
            (-3, 2, 1),
            (3, -2, 1),
            (3, 2, -1),
        ],
        SlipFamily::Bcc123,
    );
    debug_assert_eq!(out.len(), 48);
    out
}

/// Per-family constitutive parameters.
///
/// Units follow the parameter file: `d_f` J, `d_v` m³, `rho_m` 1/m²,
/// `nu_id` Hz, `b` μm, strengths MPa, `k1` 1/m, `d_drag` MPa, temperatures K.
#[derive(Debug, Clone, Deserialize)]
pub struct SlipFamilyParams {
    pub d_f: f64,
    pub d_v: f64,
    pub k_b: f64,
    pub rho_m: f64,
    pub nu_id: f64,
    pub b: f64,
    pub s0_ini: f64,
    pub s_298k: f64,
    pub k1: f64,
    pub d_drag: f64,
    pub t_ref_s: f64,
    pub t_hat: f64,
    pub q: f64,
    pub p: f64,
    pub m_hat: f64,
    pub chi: f64,
    pub k_deb: f64,
    pub rho_for0: f64,
    pub rho_deb0: f64,
}

impl SlipFamilyParams {
    /// Burgers magnitude in meters.
    pub fn b_m(&self) -> f64 {
        self.b * 1.0e-6
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        let positives = [
            ("d_f", self.d_f),
            ("d_v", self.d_v),
            ("k_b", self.k_b),
            ("rho_m", self.rho_m),
            ("nu_id", self.nu_id),
            ("b", self.b),
            ("s_298k", self.s_298k),
            ("k1", self.k1),
            ("d_drag", self.d_drag),
            ("t_ref_s", self.t_ref_s),
            ("t_hat", self.t_hat),
            ("chi", self.chi),
            ("k_deb", self.k_deb),
        ];
        for (key, v) in positives {
            if !(v > 0.0) {
                return Err(EhmError::Invalid(format!(
                    "family `{name}`: `{key}` must be strictly positive, got {v}"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.p) {
            return Err(EhmError::Invalid(format!("family `{name}`: p must be in [0,1]")));
        }
        if !(self.m_hat > 0.0 && self.m_hat <= 1.0) {
            return Err(EhmError::Invalid(format!("family `{name}`: m_hat must be in (0,1]")));
        }
        if self.rho_for0 < 0.0 || self.rho_deb0 < 0.0 {
            return Err(EhmError::NonPhysicalDensity(format!(
                "family `{name}`: initial densities must be nonnegative"
            )));
        }
        Ok(())
    }
}

/// Temperature-linear shear modulus used by the forest/debris strength terms.
#[derive(Debug, Clone, Deserialize)]
pub struct ShearModulus {
    /// MPa at 298 K.
    pub mu_ref: f64,
    /// MPa/K.
    pub dmu_dt: f64,
}

impl ShearModulus {
    pub fn at(&self, t: f64) -> f64 {
        self.mu_ref + self.dmu_dt * (t - T_REF_ELASTIC)
    }
}

/// Global constants that are not per-family.
#[derive(Debug, Clone, Deserialize)]
pub struct GlobalParams {
    /// Stress-free reference temperature, K.
    pub t0: f64,
    /// Normalized activation energy in the drag-stress closure for k2.
    pub g_norm: f64,
    /// Reference strain rate in the k2 closure, 1/s.
    pub eps_dot_ref: f64,
}

/// Immutable material database shared by all solvers.
#[derive(Debug, Clone)]
pub struct MaterialDb {
    pub elastic: BTreeMap<Phase, ElasticLaw>,
    pub expansion: BTreeMap<Phase, ThermalExpansion>,
    pub shear: BTreeMap<Phase, ShearModulus>,
    pub families: BTreeMap<SlipFamily, SlipFamilyParams>,
    pub global: GlobalParams,
}

impl MaterialDb {
    pub fn elastic(&self, phase: Phase) -> &ElasticLaw {
        &self.elastic[&phase]
    }

    pub fn expansion(&self, phase: Phase) -> &ThermalExpansion {
        &self.expansion[&phase]
    }

    pub fn shear_modulus(&self, phase: Phase, t: f64) -> f64 {
        self.shear[&phase].at(t)
    }

    pub fn family(&self, f: SlipFamily) -> &SlipFamilyParams {
        &self.families[&f]
    }

    /// Thermal expansion tensor rotated to the sample frame, as an
    /// engineering-shear Voigt vector.
    pub fn expansion_dual(&self, phase: Phase, r: &Matrix3<f64>) -> Vector6<f64> {
        let a = voigt::rotate_sym(&self.expansion(phase).alpha, r);
        voigt::matrix_to_strain(&a)
    }

    /// The shipped Ti-6242S database.
    pub fn ti6242s() -> MaterialDb {
        MaterialDb::from_toml_str(DEFAULT_TI6242S, "<builtin ti6242s>")
            .expect("builtin material file must parse")
    }

    pub fn load(path: &Path) -> Result<MaterialDb> {
        let text = std::fs::read_to_string(path)?;
        MaterialDb::from_toml_str(&text, &path.display().to_string())
    }

    pub fn from_toml_str(text: &str, origin: &str) -> Result<MaterialDb> {
        let raw: RawMaterialFile =
            toml::from_str(text).map_err(|e| EhmError::parse(origin, e.to_string()))?;
        raw.build(origin)
    }
}

#[derive(Debug, Deserialize)]
struct RawElastic {
    // hexagonal constants
    c11: f64,
    c12: f64,
    c13: Option<f64>,
    c33: Option<f64>,
    c44: f64,
    dc11_dt: f64,
    dc12_dt: f64,
    dc13_dt: Option<f64>,
    dc33_dt: Option<f64>,
    dc44_dt: f64,
    t_min: f64,
    t_max: f64,
    mu_ref: f64,
    dmu_dt: f64,
}

#[derive(Debug, Deserialize)]
struct RawExpansion {
    alpha_a: Option<f64>,
    alpha_c: Option<f64>,
    alpha: Option<f64>,
}

#[derive(Debug, Deserialize)]
struct RawMaterialFile {
    schema: String,
    global: GlobalParams,
    elastic: BTreeMap<String, RawElastic>,
    thermal_expansion: BTreeMap<String, RawExpansion>,
    family: BTreeMap<String, SlipFamilyParams>,
}

fn phase_key(key: &str, origin: &str) -> Result<Phase> {
    match key {
        "hcp_alpha" => Ok(Phase::HcpAlpha),
        "bcc_beta" => Ok(Phase::BccBeta),
        other => Err(EhmError::parse(origin, format!("unknown phase section `{other}`"))),
    }
}

impl RawMaterialFile {
    fn build(self, origin: &str) -> Result<MaterialDb> {
        if self.schema != "ehm-material-v1" {
            return Err(EhmError::parse(
                origin,
                format!("unsupported schema `{}`", self.schema),
            ));
        }
        let mut elastic = BTreeMap::new();
        let mut shear = BTreeMap::new();
        for (key, raw) in &self.elastic {
            let phase = phase_key(key, origin)?;
            let (c_ref, dc_dt) = match phase {
                Phase::HcpAlpha => {
                    let c13 = raw.c13.ok_or_else(|| EhmError::parse(origin, "hcp needs c13"))?;
                    let c33 = raw.c33.ok_or_else(|| EhmError::parse(origin, "hcp needs c33"))?;
                    let d13 =
                        raw.dc13_dt.ok_or_else(|| EhmError::parse(origin, "hcp needs dc13_dt"))?;
                    let d33 =
                        raw.dc33_dt.ok_or_else(|| EhmError::parse(origin, "hcp needs dc33_dt"))?;
                    (
                        ElasticLaw::hexagonal(raw.c11, raw.c12, c13, c33, raw.c44),
                        ElasticLaw::hexagonal(raw.dc11_dt, raw.dc12_dt, d13, d33, raw.dc44_dt),
                    )
                }
                Phase::BccBeta => (
                    ElasticLaw::cubic(raw.c11, raw.c12, raw.c44),
                    ElasticLaw::cubic(raw.dc11_dt, raw.dc12_dt, raw.dc44_dt),
                ),
            };
            let law = ElasticLaw {
                c_ref,
                dc_dt,
                valid_range: (raw.t_min, raw.t_max),
            };
            law.validate()?;
            elastic.insert(phase, law);
            shear.insert(
                phase,
                ShearModulus {
                    mu_ref: raw.mu_ref,
                    dmu_dt: raw.dmu_dt,
                },
            );
        }
        let mut expansion = BTreeMap::new();
        for (key, raw) in &self.thermal_expansion {
            let phase = phase_key(key, origin)?;
            let exp = match phase {
                Phase::HcpAlpha => {
                    let a = raw
                        .alpha_a
                        .ok_or_else(|| EhmError::parse(origin, "hcp expansion needs alpha_a"))?;
                    let c = raw
                        .alpha_c
                        .ok_or_else(|| EhmError::parse(origin, "hcp expansion needs alpha_c"))?;
                    ThermalExpansion::hcp(a, c)
                }
                Phase::BccBeta => {
                    let a = raw
                        .alpha
                        .ok_or_else(|| EhmError::parse(origin, "bcc expansion needs alpha"))?;
                    ThermalExpansion::isotropic(a)
                }
            };
            expansion.insert(phase, exp);
        }
        let mut families = BTreeMap::new();
        for (key, params) in self.family {
            let fam = SlipFamily::parse(&key)
                .map_err(|_| EhmError::parse(origin, format!("unknown family `{key}`")))?;
            params.validate(&key)?;
            families.insert(fam, params);
        }
        for fam in SlipFamily::ALL {
            if !families.contains_key(&fam) {
                return Err(EhmError::parse(
                    origin,
                    format!("missing [family.{}] section", fam.as_str()),
                ));
            }
        }
        for phase in [Phase::HcpAlpha, Phase::BccBeta] {
            if !elastic.contains_key(&phase) || !expansion.contains_key(&phase) {
                return Err(EhmError::parse(
                    origin,
                    format!("missing elastic or expansion data for {}", phase.as_str()),
                ));
            }
        }
        Ok(MaterialDb {
            elastic,
            expansion,
            shear,
            families,
            global: self.global,
        })
    }
}

/// The shipped Ti-6242S parameter file (also installed at `data/ti6242s.toml`).
pub const DEFAULT_TI6242S: &str = include_str!("../../../data/ti6242s.toml");

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Vector6;

    #[test]
    fn slip_system_counts_and_geometry() {
        let hcp = build_slip_systems(Phase::HcpAlpha);
        assert_eq!(hcp.len(), 24);
        let count =
            |f: SlipFamily| hcp.iter().filter(|s| s.family == f).count();
        assert_eq!(count(SlipFamily::Basal), 3);
        assert_eq!(count(SlipFamily::Prismatic), 3);
        assert_eq!(count(SlipFamily::PyramidalA), 6);
        assert_eq!(count(SlipFamily::PyramidalCA), 12);
        let bcc = build_slip_systems(Phase::BccBeta);
        assert_eq!(bcc.len(), 48);
        for s in hcp.iter().chain(bcc.iter()) {
            assert_relative_eq!(s.n.norm(), 1.0, epsilon = 1e-12);
            assert_relative_eq!(s.m.norm(), 1.0, epsilon = 1e-12);
            assert!(s.n.dot(&s.m).abs() < 1e-12, "n not in plane for {:?}", s.family);
        }
    }

    #[test]
    fn basal_sees_no_c_axis_tension() {
        // pure tension along the c axis resolves to zero on basal systems
        let r = nalgebra::Matrix3::identity();
        let sigma = Vector6::new(0.0, 0.0, 100.0, 0.0, 0.0, 0.0);
        for s in build_slip_systems(Phase::HcpAlpha) {
            if s.family == SlipFamily::Basal {
                let tau = resolved_shear(&s.schmid_dual(&r), &sigma);
                assert!(tau.abs() < 1e-10);
            }
        }
    }

    #[test]
    fn schmid_factor_45_degrees() {
        // n and m at 45 degrees in the 1-2 plane, uniaxial 100 MPa -> tau = 50
        let s = SlipSystem {
            family: SlipFamily::Basal,
            n: voigt::unit(Vector3::new(1.0, 1.0, 0.0)),
            m: voigt::unit(Vector3::new(1.0, -1.0, 0.0)),
        };
        let sigma = Vector6::new(100.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        let tau = resolved_shear(&s.schmid_dual(&nalgebra::Matrix3::identity()), &sigma);
        assert_relative_eq!(tau, 50.0, epsilon = 1e-12);
    }

    #[test]
    fn resolved_shear_matches_nine_term_sum() {
        // random symmetric stress, full double contraction with sym(Z)
        let s = &build_slip_systems(Phase::HcpAlpha)[17];
        let r = voigt::rotation_from_bunge(0.4, 0.8, 1.9);
        let sigma_v = Vector6::new(12.0, -34.0, 7.0, 3.0, -9.0, 21.0);
        let sig = voigt::stress_to_matrix(&sigma_v);
        let z = voigt::rotate_sym(&(0.5 * (s.schmid() + s.schmid().transpose())), &r);
        let mut tau_ref = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                tau_ref += sig[(i, j)] * z[(i, j)];
            }
        }
        let tau = resolved_shear(&s.schmid_dual(&r), &sigma_v);
        assert_relative_eq!(tau, tau_ref, epsilon = 1e-12);
    }

    #[test]
    fn rotation_invariance_of_resolved_shear() {
        // rotating slip system and stress together leaves tau unchanged
        let sys = build_slip_systems(Phase::BccBeta);
        let r = voigt::rotation_from_bunge(1.0, 0.6, -0.4);
        let sigma_v = Vector6::new(80.0, -20.0, 5.0, 14.0, -3.0, 9.0);
        let sig_rot = voigt::matrix_to_stress(&voigt::rotate_sym(
            &voigt::stress_to_matrix(&sigma_v),
            &r,
        ));
        for s in sys.iter().step_by(7) {
            let t0 = resolved_shear(&s.schmid_dual(&nalgebra::Matrix3::identity()), &sigma_v);
            let t1 = resolved_shear(&s.schmid_dual(&r), &sig_rot);
            assert_relative_eq!(t0, t1, epsilon = 1e-10);
        }
    }

    #[test]
    fn stiffness_affine_in_temperature() {
        let db = MaterialDb::ti6242s();
        let law = db.elastic(Phase::HcpAlpha);
        let (t1, t2) = (350.0, 800.0);
        let mid = law.stiffness_at(0.5 * (t1 + t2)).unwrap();
        let avg = (law.stiffness_at(t1).unwrap() + law.stiffness_at(t2).unwrap()) * 0.5;
        assert_relative_eq!(mid, avg, epsilon = 1e-9);
        // anchor point and zero-slope behavior
        let c298 = law.stiffness_at(298.0).unwrap();
        assert_relative_eq!(c298, law.c_ref, epsilon = 1e-12);
    }

    #[test]
    fn stiffness_out_of_range_rejected() {
        let db = MaterialDb::ti6242s();
        let law = db.elastic(Phase::BccBeta);
        assert!(matches!(
            law.stiffness_at(10.0),
            Err(EhmError::OutOfRangeTemperature { .. })
        ));
    }

    #[test]
    fn stiffness_positive_definite_at_923() {
        let db = MaterialDb::ti6242s();
        for phase in [Phase::HcpAlpha, Phase::BccBeta] {
            let c = db.elastic(phase).stiffness_at(923.0).unwrap();
            assert!(c.cholesky().is_some(), "{} not SPD at 923 K", phase.as_str());
        }
    }

    #[test]
    fn default_file_carries_reference_values() {
        let db = MaterialDb::ti6242s();
        let basal = db.family(SlipFamily::Basal);
        assert_relative_eq!(basal.s_298k, 245.0);
        assert_relative_eq!(basal.k1, 1.80e7);
        assert_relative_eq!(basal.d_drag, 300.0);
        assert_relative_eq!(basal.b, 2.94e-4);
        assert_relative_eq!(basal.rho_for0, 1.0e12);
        assert_relative_eq!(basal.rho_deb0, 1.0e10);
        assert_relative_eq!(basal.p, 0.8);
        assert_relative_eq!(basal.m_hat, 0.4);
        assert_relative_eq!(basal.chi, 0.9);
        assert_relative_eq!(basal.k_deb, 0.086);
        let prism = db.family(SlipFamily::Prismatic);
        assert_relative_eq!(prism.s_298k, 200.0);
        for f in [SlipFamily::Bcc110, SlipFamily::Bcc112, SlipFamily::Bcc123] {
            assert_relative_eq!(db.family(f).s_298k, 300.0);
        }
        // thermal expansion constants
        let a = db.expansion(Phase::HcpAlpha).alpha;
        assert_relative_eq!(a[(0, 0)], 1.8e-5);
        assert_relative_eq!(a[(2, 2)], 1.1e-5);
        let b = db.expansion(Phase::BccBeta).alpha;
        assert_relative_eq!(b[(0, 0)], 0.9e-5);
        assert_relative_eq!(b[(1, 1)], 0.9e-5);
    }
}
