//! Discretization of the pose space into a dictionary of key poses.
//!
//! Key poses are K-means centroids of axis-angle annotations under the plain
//! Euclidean metric on the 3-vectors. Labels, soft assignments and delta
//! targets are all expressed relative to a [`PoseDictionary`].

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::eval::median_lower;
use crate::so3::{self, AxisAngle};

/// Lloyd iterations are capped here.
pub const MAX_LLOYD_ITERATIONS: usize = 300;

/// How a key pose and a delta combine into a final pose.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Composition {
    /// `y = z + δ`
    #[default]
    Additive,
    /// `y = log(exp(z) · exp(δ))`
    Riemannian,
}

impl FromStr for Composition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "additive" => Ok(Composition::Additive),
            "riemannian" => Ok(Composition::Riemannian),
            other => Err(invalid(format!("unknown composition mode '{other}'"))),
        }
    }
}

impl fmt::Display for Composition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Composition::Additive => f.write_str("additive"),
            Composition::Riemannian => f.write_str("riemannian"),
        }
    }
}

/// K key poses produced by [`kmeans_fit`].
#[derive(Clone, Debug, PartialEq)]
pub struct PoseDictionary {
    key_poses: Vec<AxisAngle>,
    seed: u64,
    counts: Vec<usize>,
    rms_distance: f64,
}

#[derive(Serialize, Deserialize)]
struct DictionaryFile {
    #[serde(rename = "K")]
    k: usize,
    seed: u64,
    key_poses: Vec<[f64; 3]>,
    #[serde(default)]
    counts: Vec<usize>,
    #[serde(default)]
    rms_distance: f64,
}

impl PoseDictionary {
    /// Builds a dictionary from explicit key poses (no fitting).
    pub fn from_key_poses(key_poses: Vec<AxisAngle>, seed: u64) -> Result<Self> {
        if key_poses.is_empty() {
            return Err(invalid("a pose dictionary needs at least one key pose"));
        }
        if let Some(z) = key_poses.iter().find(|z| !z.is_finite()) {
            return Err(invalid(format!("key pose {z} is not finite")));
        }
        let k = key_poses.len();
        Ok(PoseDictionary {
            key_poses,
            seed,
            counts: vec![0; k],
            rms_distance: 0.0,
        })
    }

    pub fn k(&self) -> usize {
        self.key_poses.len()
    }

    pub fn key_poses(&self) -> &[AxisAngle] {
        &self.key_poses
    }

    pub fn key_pose(&self, k: usize) -> &AxisAngle {
        &self.key_poses[k]
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Training points assigned to each key pose at the end of fitting.
    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    /// Root-mean-square distance of the training points to their centroid.
    pub fn rms_distance(&self) -> f64 {
        self.rms_distance
    }

    /// `γ = 1 / (2σ²)` with `σ` the RMS point-to-centroid distance.
    pub fn default_gamma(&self) -> f64 {
        let sigma = self.rms_distance.max(1e-6);
        1.0 / (2.0 * sigma * sigma)
    }

    pub fn to_json(&self) -> Result<String> {
        let file = DictionaryFile {
            k: self.k(),
            seed: self.seed,
            key_poses: self.key_poses.iter().map(AxisAngle::to_array).collect(),
            counts: self.counts.clone(),
            rms_distance: self.rms_distance,
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: DictionaryFile = serde_json::from_str(s)?;
        if file.k != file.key_poses.len() {
            return Err(invalid(format!(
                "dictionary declares K = {} but lists {} key poses",
                file.k,
                file.key_poses.len()
            )));
        }
        let mut dict = Self::from_key_poses(
            file.key_poses.into_iter().map(AxisAngle::from_array).collect(),
            file.seed,
        )?;
        if file.counts.len() == dict.k() {
            dict.counts = file.counts;
        }
        dict.rms_distance = file.rms_distance;
        Ok(dict)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn sq_dist(a: &AxisAngle, b: &AxisAngle) -> f64 {
    (a.0 - b.0).norm_squared()
}

fn nearest(y: &AxisAngle, centers: &[AxisAngle]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, z) in centers.iter().enumerate() {
        let d = sq_dist(y, z);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

/// Per-iteration record of a K-means fit.
#[derive(Clone, Debug)]
pub struct KMeansTrace {
    /// Sum of squared distances after each assignment step.
    pub objective: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// K-means (k-means++ seeding, Lloyd iterations) over axis-angle vectors.
pub fn kmeans_fit(poses: &[AxisAngle], k: usize, seed: u64) -> Result<PoseDictionary> {
    kmeans_fit_traced(poses, k, seed).map(|(dict, _)| dict)
}

pub fn kmeans_fit_traced(
    poses: &[AxisAngle],
    k: usize,
    seed: u64,
) -> Result<(PoseDictionary, KMeansTrace)> {
    if k == 0 {
        return Err(invalid("K must be at least 1"));
    }
    if poses.len() < k {
        return Err(invalid(format!(
            "cannot fit K = {k} key poses to {} poses",
            poses.len()
        )));
    }
    if poses.iter().any(|y| !y.is_finite()) {
        return Err(invalid("poses must be finite"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = kmeans_plus_plus(poses, k, &mut rng);
    let mut labels = vec![usize::MAX; poses.len()];
    let mut dists = vec![0.0; poses.len()];
    let mut trace = KMeansTrace {
        objective: Vec::new(),
        iterations: 0,
        converged: false,
    };

    for _ in 0..MAX_LLOYD_ITERATIONS {
        let mut changed = false;
        let mut objective = 0.0;
        for (i, y) in poses.iter().enumerate() {
            let (l, d) = nearest(y, &centers);
            if labels[i] != l {
                labels[i] = l;
                changed = true;
            }
            dists[i] = d;
            objective += d;
        }
        trace.objective.push(objective);
        if !changed {
            trace.converged = true;
            break;
        }
        trace.iterations += 1;
        update_centers(poses, &labels, &mut dists, &mut centers);
    }

    let mut counts = vec![0usize; k];
    let mut total = 0.0;
    for y in poses {
        let (l, d) = nearest(y, &centers);
        counts[l] += 1;
        total += d;
    }
    let dict = PoseDictionary {
        key_poses: centers,
        seed,
        counts,
        rms_distance: (total / poses.len() as f64).sqrt(),
    };
    Ok((dict, trace))
}

fn kmeans_plus_plus<R: Rng>(poses: &[AxisAngle], k: usize, rng: &mut R) -> Vec<AxisAngle> {
    let mut centers = Vec::with_capacity(k);
    centers.push(poses[rng.random_range(0..poses.len())]);
    let mut d2: Vec<f64> = poses.iter().map(|y| sq_dist(y, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = poses.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 && target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            // rounding can leave `chosen` on a zero-weight point
            if d2[chosen] == 0.0 {
                chosen = d2
                    .iter()
                    .enumerate()
                    .rev()
                    .find(|(_, &w)| w > 0.0)
                    .map(|(i, _)| i)
                    .unwrap_or(chosen);
            }
            chosen
        } else {
            rng.random_range(0..poses.len())
        };
        let c = poses[idx];
        for (y, d) in poses.iter().zip(d2.iter_mut()) {
            *d = d.min(sq_dist(y, &c));
        }
        centers.push(c);
    }
    centers
}

fn update_centers(
    poses: &[AxisAngle],
    labels: &[usize],
    dists: &mut [f64],
    centers: &mut [AxisAngle],
) {
    let k = centers.len();
    let mut sums = vec![so3::Vec3::zeros(); k];
    let mut counts = vec![0usize; k];
    for (y, &l) in poses.iter().zip(labels) {
        sums[l] += y.0;
        counts[l] += 1;
    }
    for c in 0..k {
        if counts[c] > 0 {
            centers[c] = AxisAngle(sums[c] / counts[c] as f64);
        } else {
            // Empty cluster: take over the point farthest from its centroid.
            let (far, _) = dists
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &d)| {
                    if d > best.1 {
                        (i, d)
                    } else {
                        best
                    }
                });
            centers[c] = poses[far];
            dists[far] = 0.0;
        }
    }
}

/// Index of the Euclidean-nearest key pose; ties go to the lowest index.
pub fn assign_hard(y: &AxisAngle, dict: &PoseDictionary) -> usize {
    nearest(y, &dict.key_poses).0
}

/// Probabilistic label `p_k ∝ exp(−γ ‖y − z_k‖²)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftAssignment {
    pub p: Vec<f64>,
    pub gamma: f64,
}

impl SoftAssignment {
    pub fn argmax(&self) -> usize {
        argmax(&self.p)
    }
}

/// First index of the maximum (lowest index wins ties).
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub fn assign_soft(y: &AxisAngle, dict: &PoseDictionary, gamma: f64) -> Result<SoftAssignment> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(invalid(format!("gamma must be positive, got {gamma}")));
    }
    let logits: Vec<f64> = dict
        .key_poses
        .iter()
        .map(|z| -gamma * sq_dist(y, z))
        .collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = p.iter().sum();
    for v in &mut p {
        *v /= total;
    }
    Ok(SoftAssignment { p, gamma })
}

/// Residual between `y` and key pose `label`.
///
/// Additive mode returns `y − z`; Riemannian mode returns the tangent-space
/// residual `log(exp(z)ᵀ exp(y))`.
pub fn delta_target(
    y: &AxisAngle,
    dict: &PoseDictionary,
    label: usize,
    mode: Composition,
) -> Result<AxisAngle> {
    let z = dict.key_poses.get(label).ok_or_else(|| {
        invalid(format!(
            "label {label} out of range for dictionary with K = {}",
            dict.k()
        ))
    })?;
    Ok(match mode {
        Composition::Additive => AxisAngle(y.0 - z.0),
        Composition::Riemannian => {
            let rz = so3::exp_map(z)?;
            let ry = so3::exp_map(y)?;
            so3::log_map(&rz.transpose().compose(&ry))
        }
    })
}

/// Error incurred by predicting only key poses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FloorStats {
    pub median_deg: f64,
    pub mean_deg: f64,
    pub n: usize,
}

/// Geodesic distance from each pose to its nearest key pose, summarized.
pub fn quantization_floor(dict: &PoseDictionary, poses: &[AxisAngle]) -> Result<FloorStats> {
    if poses.is_empty() {
        return Err(invalid("quantization floor needs at least one pose"));
    }
    let key_rotations = dict
        .key_poses
        .iter()
        .map(so3::exp_map)
        .collect::<Result<Vec<_>>>()?;
    let mut errors = Vec::with_capacity(poses.len());
    for y in poses {
        let l = assign_hard(y, dict);
        let r = so3::exp_map(y)?;
        errors.push(so3::geodesic_distance(&r, &key_rotations[l]).to_degrees());
    }
    let mean = errors.iter().sum::<f64>() / errors.len() as f64;
    Ok(FloorStats {
        median_deg: median_lower(&mut errors),
        mean_deg: mean,
        n: poses.len(),
    })
}
