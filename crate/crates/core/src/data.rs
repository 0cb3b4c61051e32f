//! Pose datasets: a seeded synthetic generator and a CSV loader.
//!
//! Synthetic features are a fixed random linear image of the flattened
//! rotation matrix plus Gaussian noise. With symmetry order `s > 1` the
//! features are computed from a canonical member of the orbit
//! `{R · S^j}` (`S` = rotation by `2π/s` about z) while the label stays the
//! true `R`, so one feature vector corresponds to `s` distinct poses.

use std::cmp::Ordering;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::so3::{self, AxisAngle, RotationMatrix, Vec3};

/// Poses with `‖y‖` up to `π` plus this slack are accepted by the loader.
pub const LOAD_ANGLE_SLACK: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PoseDistribution {
    /// Haar-uniform rotations.
    Uniform,
    /// Rotations scattered around `components` Haar-random centers by a
    /// Gaussian tangent perturbation with standard deviation `spread` (rad).
    Mixture { components: usize, spread: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n_samples: usize,
    pub feature_dim: usize,
    pub noise_std: f64,
    pub symmetry_order: u32,
    pub distribution: PoseDistribution,
    pub seed: u64,
    #[serde(default)]
    pub category: u32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_samples: 6000,
            feature_dim: 64,
            noise_std: 0.01,
            symmetry_order: 1,
            distribution: PoseDistribution::Uniform,
            seed: 0,
            category: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(invalid("n_samples must be at least 1"));
        }
        if self.feature_dim < 9 {
            return Err(invalid("feature_dim must be at least 9"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(invalid("noise_std must be a non-negative number"));
        }
        if self.symmetry_order == 0 {
            return Err(invalid("symmetry_order must be at least 1"));
        }
        if let PoseDistribution::Mixture { components, spread } = self.distribution {
            if components == 0 || !(spread >= 0.0 && spread.is_finite()) {
                return Err(invalid("mixture needs ≥ 1 component and a non-negative spread"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub pose: AxisAngle,
    pub category: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Synthetic,
    File,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, provenance: Provenance) -> Result<Self> {
        if let Some(first) = samples.first() {
            let d = first.features.len();
            if let Some(i) = samples.iter().position(|s| s.features.len() != d) {
                return Err(invalid(format!(
                    "sample {i} has {} features, expected {d}",
                    samples[i].features.len()
                )));
            }
        }
        Ok(Dataset {
            samples,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.samples.first().map(|s| s.features.len())
    }

    pub fn poses(&self) -> Vec<AxisAngle> {
        self.samples.iter().map(|s| s.pose).collect()
    }

    /// Distinct category ids, ascending.
    pub fn categories(&self) -> Vec<u32> {
        let mut c: Vec<u32> = self.samples.iter().map(|s| s.category).collect();
        c.sort_unstable();
        c.dedup();
        c
    }

    pub fn filter_category(&self, category: u32) -> Dataset {
        Dataset {
            samples: self
                .samples
                .iter()
                .filter(|s| s.category == category)
                .cloned()
                .collect(),
            provenance: self.provenance,
        }
    }

    /// CSV rows `category, y1, y2, y3, f1, …, fD`. Floats use the shortest
    /// representation that parses back to the same value.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# category,y1,y2,y3,features...");
        for s in &self.samples {
            let _ = write!(out, "{},{},{},{}", s.category, s.pose.0.x, s.pose.0.y, s.pose.0.z);
            for f in &s.features {
                let _ = write!(out, ",{f}");
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Rotation by `2π/s` about z.
pub fn symmetry_generator(s: u32) -> RotationMatrix {
    RotationMatrix::from_raw(so3::rodrigues(&(Vec3::z() * (2.0 * PI / s as f64))))
}

/// `{R · S^j : j < s}`.
pub fn symmetry_orbit(r: &RotationMatrix, s: u32) -> Vec<RotationMatrix> {
    let gen = symmetry_generator(s);
    let mut out = Vec::with_capacity(s as usize);
    let mut cur = *r;
    for _ in 0..s {
        out.push(cur);
        cur = cur.compose(&gen);
    }
    out
}

fn lex_cmp(a: &AxisAngle, b: &AxisAngle) -> Ordering {
    a.0.x
        .total_cmp(&b.0.x)
        .then(a.0.y.total_cmp(&b.0.y))
        .then(a.0.z.total_cmp(&b.0.z))
}

/// Orbit member whose logarithm is lexicographically smallest.
pub fn canonical_representative(r: &RotationMatrix, s: u32) -> RotationMatrix {
    symmetry_orbit(r, s)
        .into_iter()
        .map(|m| (so3::log_map(&m), m))
        .min_by(|a, b| lex_cmp(&a.0, &b.0))
        .map(|(_, m)| m)
        .unwrap_or(*r)
}

/// The fixed feature projection `A` (`feature_dim × 9`, row-major).
fn feature_projection(cfg: &SynthConfig) -> Vec<[f64; 9]> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_f00d_0000_0001);
    let normal = Normal::new(0.0, 1.0 / 3.0).expect("valid normal");
    (0..cfg.feature_dim)
        .map(|_| std::array::from_fn(|_| normal.sample(&mut rng)))
        .collect()
}

fn sample_pose<R: Rng>(
    cfg: &SynthConfig,
    centers: &[RotationMatrix],
    rng: &mut R,
) -> RotationMatrix {
    match cfg.distribution {
        PoseDistribution::Uniform => so3::sample_uniform_rotation(rng),
        PoseDistribution::Mixture { spread, .. } => {
            let c = centers[rng.random_range(0..centers.len())];
            let normal = Normal::new(0.0, spread.max(f64::MIN_POSITIVE)).expect("valid normal");
            let eps = Vec3::new(
                normal.sample(rng),
                normal.sample(rng),
                normal.sample(rng),
            );
            c.compose(&RotationMatrix::from_raw(so3::rodrigues(&eps)))
        }
    }
}

pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let projection = feature_projection(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let centers: Vec<RotationMatrix> = match cfg.distribution {
        PoseDistribution::Uniform => Vec::new(),
        PoseDistribution::Mixture { components, .. } => (0..components)
            .map(|_| so3::sample_uniform_rotation(&mut rng))
            .collect(),
    };
    let noise = Normal::new(0.0, cfg.noise_std.max(f64::MIN_POSITIVE)).expect("valid normal");

    let mut samples = Vec::with_capacity(cfg.n_samples);
    for _ in 0..cfg.n_samples {
        let r = sample_pose(cfg, &centers, &mut rng);
        let seen = if cfg.symmetry_order > 1 {
            canonical_representative(&r, cfg.symmetry_order)
        } else {
            r
        };
        let v = seen.to_row_major();
        let features = projection
            .iter()
            .map(|row| {
                let clean: f64 = row.iter().zip(&v).map(|(a, b)| a * b).sum();
                if cfg.noise_std > 0.0 {
                    clean + noise.sample(&mut rng)
                } else {
                    clean
                }
            })
            .collect();
        samples.push(Sample {
            features,
            pose: so3::log_map(&r),
            category: cfg.category,
        });
    }
    Dataset::new(samples, Provenance::Synthetic)
}

fn parse_err(row: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        row,
        message: message.into(),
    }
}

/// Parses CSV text; see [`load_csv`].
pub fn parse_csv(text: &str, feature_dim: Option<usize>) -> Result<Dataset> {
    let mut samples = Vec::new();
    let mut expected_cols = feature_dim.map(|d| d + 4);
    for (i, line) in text.lines().enumerate() {
        let row = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        match expected_cols {
            Some(n) if cols.len() != n => {
                return Err(parse_err(
                    row,
                    format!("expected {n} columns, found {}", cols.len()),
                ))
            }
            None if cols.len() < 5 => {
                return Err(parse_err(row, "need a category, 3 pose values and features"))
            }
            None => expected_cols = Some(cols.len()),
            _ => {}
        }
        let category: u32 = cols[0]
            .parse()
            .map_err(|e| parse_err(row, format!("category '{}': {e}", cols[0])))?;
        let mut values = Vec::with_capacity(cols.len() - 1);
        for c in &cols[1..] {
            let v: f64 = c
                .parse()
                .map_err(|e| parse_err(row, format!("value '{c}': {e}")))?;
            if !v.is_finite() {
                return Err(parse_err(row, format!("non-finite value '{c}'")));
            }
            values.push(v);
        }
        let pose = AxisAngle::new(values[0], values[1], values[2]);
        let angle = pose.angle();
        if angle >= PI + LOAD_ANGLE_SLACK {
            return Err(parse_err(
                row,
                format!("pose angle {angle} exceeds π"),
            ));
        }
        let pose = if angle > PI { so3::canonicalize(&pose) } else { pose };
        samples.push(Sample {
            features: values[3..].to_vec(),
            pose,
            category,
        });
    }
    Dataset::new(samples, Provenance::File)
}

/// Reads rows `category_id, y1, y2, y3, f1 … fD`; `#` starts a comment line.
pub fn load_csv(path: &Path, feature_dim: Option<usize>) -> Result<Dataset> {
    parse_csv(&std::fs::read_to_string(path)?, feature_dim)
}

/// Seeded shuffle, then the first `round(n · val_fraction)` samples become
/// the validation split.
pub fn split(ds: &Dataset, val_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(invalid(format!(
            "val_fraction must lie in (0, 1), got {val_fraction}"
        )));
    }
    let mut idx: Vec<usize> = (0..ds.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = (ds.len() as f64 * val_fraction).round() as usize;
    let pick = |ids: &[usize]| Dataset {
        samples: ids.iter().map(|&i| ds.samples[i].clone()).collect(),
        provenance: ds.provenance,
    };
    Ok((pick(&idx[n_val..]), pick(&idx[..n_val])))
}
