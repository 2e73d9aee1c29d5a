//! Voxelized polycrystal RVEs: synthesis, texture transforms, adjacency and
//! file I/O.

use crate::error::EhmError;
use crate::material::Phase;
use crate::voigt;
use crate::Result;
use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

/// Periodic voxel grid with one grain ID per voxel.
///
/// The voxel spacing is normalized so the total RVE volume is 1; part
/// averages are then plain sums over voxels divided by voxel counts.
#[derive(Debug, Clone)]
pub struct VoxelRve {
    pub dims: [usize; 3],
    pub spacing: f64,
    /// Grain ID per voxel, x-fastest ordering.
    pub grain_id: Vec<u32>,
    pub n_grains: usize,
    /// Seed recorded at generation time (zero for loaded/constructed RVEs).
    pub seed: u64,
}

impl VoxelRve {
    pub fn new(dims: [usize; 3], grain_id: Vec<u32>, n_grains: usize, seed: u64) -> Result<Self> {
        let nv = dims[0] * dims[1] * dims[2];
        if grain_id.len() != nv {
            return Err(EhmError::Invalid(format!(
                "grain map has {} entries for {} voxels",
                grain_id.len(),
                nv
            )));
        }
        if nv == 0 {
            return Err(EhmError::Invalid("empty voxel grid".into()));
        }
        let mut seen = vec![false; n_grains];
        for &g in &grain_id {
            let g = g as usize;
            if g >= n_grains {
                return Err(EhmError::Invalid(format!("grain ID {g} out of range 0..{n_grains}")));
            }
            seen[g] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(EhmError::Invalid("some grain IDs appear in no voxel".into()));
        }
        let spacing = (nv as f64).powf(-1.0 / 3.0);
        Ok(VoxelRve {
            dims,
            spacing,
            grain_id,
            n_grains,
            seed,
        })
    }

    pub fn n_voxels(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn voxel_index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (iz * self.dims[1] + iy) * self.dims[0] + ix
    }

    /// Grain volume fractions; sum to 1 by construction.
    pub fn volume_fractions(&self) -> Vec<f64> {
        let mut counts = vec![0usize; self.n_grains];
        for &g in &self.grain_id {
            counts[g as usize] += 1;
        }
        let nv = self.n_voxels() as f64;
        counts.into_iter().map(|c| c as f64 / nv).collect()
    }

    /// Voxel counts per grain.
    pub fn grain_sizes(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.n_grains];
        for &g in &self.grain_id {
            counts[g as usize] += 1;
        }
        counts
    }
}

/// Orientation and phase of one grain.
#[derive(Debug, Clone, PartialEq)]
pub struct GrainRecord {
    /// Bunge Z-X-Z Euler angles, radians.
    pub orientation: [f64; 3],
    pub phase: Phase,
}

impl GrainRecord {
    /// Crystal-to-sample rotation matrix.
    pub fn rotation(&self) -> Matrix3<f64> {
        voigt::rotation_from_bunge(self.orientation[0], self.orientation[1], self.orientation[2])
    }
}

/// Symmetric grain-neighbor lists (no self loops).
#[derive(Debug, Clone)]
pub struct AdjacencyGraph {
    pub neighbors: Vec<Vec<u32>>,
}

impl AdjacencyGraph {
    pub fn n_grains(&self) -> usize {
        self.neighbors.len()
    }

    /// Total number of unordered adjacent pairs.
    pub fn n_pairs(&self) -> usize {
        self.neighbors.iter().map(|n| n.len()).sum::<usize>() / 2
    }
}

/// Texture prescription for synthetic RVEs.
#[derive(Debug, Clone)]
pub enum TextureSpec {
    /// Uniform random orientations; `beta_fraction` of grains get the BCC
    /// phase, the rest HCP.
    RandomUniform { beta_fraction: f64 },
}

impl Default for TextureSpec {
    fn default() -> Self {
        TextureSpec::RandomUniform { beta_fraction: 0.1 }
    }
}

/// Builds a periodic Voronoi-seeded voxel RVE with per-grain orientations.
///
/// Deterministic for a fixed seed. If a draw leaves some grain without a
/// voxel, the seed is advanced and the tessellation redrawn until every
/// grain is nonempty.
pub fn build_synthetic_rve(
    dims: [usize; 3],
    n_grains: usize,
    seed: u64,
    texture: &TextureSpec,
) -> Result<(VoxelRve, Vec<GrainRecord>)> {
    let nv = dims[0] * dims[1] * dims[2];
    if n_grains == 0 {
        return Err(EhmError::Invalid("n_grains must be positive".into()));
    }
    if n_grains > nv {
        return Err(EhmError::InfeasiblePartition {
            n_grains,
            voxels: nv,
        });
    }

    let mut draw_seed = seed;
    let grain_id = loop {
        let mut rng = ChaCha8Rng::seed_from_u64(draw_seed);
        // Voronoi seed points in the unit cell (periodic metric).
        let pts: Vec<[f64; 3]> = (0..n_grains)
            .map(|_| [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()])
            .collect();
        let mut ids = Vec::with_capacity(nv);
        let inv = [
            1.0 / dims[0] as f64,
            1.0 / dims[1] as f64,
            1.0 / dims[2] as f64,
        ];
        for iz in 0..dims[2] {
            for iy in 0..dims[1] {
                for ix in 0..dims[0] {
                    let x = [
                        (ix as f64 + 0.5) * inv[0],
                        (iy as f64 + 0.5) * inv[1],
                        (iz as f64 + 0.5) * inv[2],
                    ];
                    let mut best = 0u32;
                    let mut best_d = f64::INFINITY;
                    for (gi, p) in pts.iter().enumerate() {
                        let mut d = 0.0;
                        for k in 0..3 {
                            let mut dk = (x[k] - p[k]).abs();
                            if dk > 0.5 {
                                dk = 1.0 - dk;
                            }
                            d += dk * dk;
                        }
                        if d < best_d {
                            best_d = d;
                            best = gi as u32;
                        }
                    }
                    ids.push(best);
                }
            }
        }
        let mut seen = vec![false; n_grains];
        for &g in &ids {
            seen[g as usize] = true;
        }
        if seen.iter().all(|&s| s) {
            break ids;
        }
        draw_seed = draw_seed.wrapping_add(0x9E37_79B9_7F4A_7C15);
    };

    // Orientations come from a stream independent of the tessellation retries
    // so the texture is reproducible from the caller's seed alone.
    let mut orng = ChaCha8Rng::seed_from_u64(seed ^ 0xA076_1D64_78BD_642F);
    let records = match texture {
        TextureSpec::RandomUniform { beta_fraction } => (0..n_grains)
            .map(|_| {
                let phi1 = orng.gen::<f64>() * std::f64::consts::TAU;
                let cos_phi = orng.gen::<f64>() * 2.0 - 1.0;
                let cap_phi = cos_phi.acos();
                let phi2 = orng.gen::<f64>() * std::f64::consts::TAU;
                let phase = if orng.gen::<f64>() < *beta_fraction {
                    Phase::BccBeta
                } else {
                    Phase::HcpAlpha
                };
                GrainRecord {
                    orientation: [phi1, cap_phi, phi2],
                    phase,
                }
            })
            .collect(),
    };

    let rve = VoxelRve::new(dims, grain_id, n_grains, seed)?;
    Ok((rve, records))
}

/// Returns new grain records with each Euler angle shifted by the matching
/// component of `euler_shift` (radians).
pub fn rotate_texture(grains: &[GrainRecord], euler_shift: [f64; 3]) -> Vec<GrainRecord> {
    grains
        .iter()
        .map(|g| GrainRecord {
            orientation: [
                g.orientation[0] + euler_shift[0],
                g.orientation[1] + euler_shift[1],
                g.orientation[2] + euler_shift[2],
            ],
            phase: g.phase,
        })
        .collect()
}

/// Face adjacency (6-connectivity) under periodic wraparound.
pub fn adjacency(rve: &VoxelRve) -> AdjacencyGraph {
    let [nx, ny, nz] = rve.dims;
    let mut sets: Vec<std::collections::BTreeSet<u32>> = vec![Default::default(); rve.n_grains];
    let mut link = |a: u32, b: u32| {
        if a != b {
            sets[a as usize].insert(b);
            sets[b as usize].insert(a);
        }
    };
    for iz in 0..nz {
        for iy in 0..ny {
            for ix in 0..nx {
                let g = rve.grain_id[rve.voxel_index(ix, iy, iz)];
                let gx = rve.grain_id[rve.voxel_index((ix + 1) % nx, iy, iz)];
                let gy = rve.grain_id[rve.voxel_index(ix, (iy + 1) % ny, iz)];
                let gz = rve.grain_id[rve.voxel_index(ix, iy, (iz + 1) % nz)];
                link(g, gx);
                link(g, gy);
                link(g, gz);
            }
        }
    }
    AdjacencyGraph {
        neighbors: sets.into_iter().map(|s| s.into_iter().collect()).collect(),
    }
}

/// Writes an RVE plus grain records in the plain-text interchange format:
/// header lines (`dims`, `n_grains`, `seed`, `convention BUNGE-ZXZ`), the
/// grain-ID map one integer per voxel in x-fastest order, then one
/// `grain <id> <phase> <phi1> <Phi> <phi2>` line per grain.
pub fn write_rve(path: &Path, rve: &VoxelRve, grains: &[GrainRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "dims {} {} {}", rve.dims[0], rve.dims[1], rve.dims[2])?;
    writeln!(f, "n_grains {}", rve.n_grains)?;
    writeln!(f, "seed {}", rve.seed)?;
    writeln!(f, "convention BUNGE-ZXZ")?;
    for (i, g) in rve.grain_id.iter().enumerate() {
        if i > 0 && i % 16 == 0 {
            writeln!(f)?;
        } else if i > 0 {
            write!(f, " ")?;
        }
        write!(f, "{g}")?;
    }
    writeln!(f)?;
    for (id, g) in grains.iter().enumerate() {
        writeln!(
            f,
            "grain {id} {} {:.17e} {:.17e} {:.17e}",
            g.phase.as_str(),
            g.orientation[0],
            g.orientation[1],
            g.orientation[2]
        )?;
    }
    Ok(())
}

/// Reads the format written by [`write_rve`].
pub fn read_rve(path: &Path) -> Result<(VoxelRve, Vec<GrainRecord>)> {
    let origin = path.display().to_string();
    let f = BufReader::new(std::fs::File::open(path)?);
    let mut dims: Option<[usize; 3]> = None;
    let mut n_grains: Option<usize> = None;
    let mut seed = 0u64;
    let mut ids: Vec<u32> = Vec::new();
    let mut grains: Vec<(usize, GrainRecord)> = Vec::new();
    let mut convention_seen = false;
    for line in f.lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut tok = line.split_whitespace();
        let head = tok.next().unwrap();
        let parse_f = |s: Option<&str>, what: &str| -> Result<f64> {
            s.ok_or_else(|| EhmError::parse(&origin, format!("missing {what}")))?
                .parse::<f64>()
                .map_err(|e| EhmError::parse(&origin, format!("bad {what}: {e}")))
        };
        match head {
            "dims" => {
                let mut d = [0usize; 3];
                for slot in &mut d {
                    *slot = tok
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| EhmError::parse(&origin, "bad dims line"))?;
                }
                dims = Some(d);
            }
            "n_grains" => {
                n_grains = Some(
                    tok.next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| EhmError::parse(&origin, "bad n_grains line"))?,
                );
            }
            "seed" => {
                seed = tok
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| EhmError::parse(&origin, "bad seed line"))?;
            }
            "convention" => {
                let c = tok.next().unwrap_or("");
                if c != "BUNGE-ZXZ" {
                    return Err(EhmError::parse(&origin, format!("unsupported convention `{c}`")));
                }
                convention_seen = true;
            }
            "grain" => {
                let id: usize = tok
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| EhmError::parse(&origin, "bad grain id"))?;
                let phase = Phase::parse(
                    tok.next()
                        .ok_or_else(|| EhmError::parse(&origin, "missing phase"))?,
                )?;
                let phi1 = parse_f(tok.next(), "phi1")?;
                let cap_phi = parse_f(tok.next(), "Phi")?;
                let phi2 = parse_f(tok.next(), "phi2")?;
                grains.push((
                    id,
                    GrainRecord {
                        orientation: [phi1, cap_phi, phi2],
                        phase,
                    },
                ));
            }
            _ => {
                // grain-ID map rows
                let first: u32 = head
                    .parse()
                    .map_err(|e| EhmError::parse(&origin, format!("bad grain map entry: {e}")))?;
                ids.push(first);
                for t in tok {
                    ids.push(
                        t.parse()
                            .map_err(|e| EhmError::parse(&origin, format!("bad grain map entry: {e}")))?,
                    );
                }
            }
        }
    }
    if !convention_seen {
        return Err(EhmError::parse(&origin, "missing convention line"));
    }
    let dims = dims.ok_or_else(|| EhmError::parse(&origin, "missing dims"))?;
    let n = n_grains.ok_or_else(|| EhmError::parse(&origin, "missing n_grains"))?;
    grains.sort_by_key(|(id, _)| *id);
    if grains.len() != n || grains.iter().enumerate().any(|(i, (id, _))| i != *id) {
        return Err(EhmError::parse(&origin, "grain lines do not cover 0..n_grains"));
    }
    let rve = VoxelRve::new(dims, ids, n, seed)?;
    Ok((rve, grains.into_iter().map(|(_, g)| g).collect()))
}
