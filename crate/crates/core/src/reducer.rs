//! Contact reduction by k-means clustering under the axis-weighted metric.
//!
//! Each contact is the 6-vector `[n, p]`. Centers start from a deterministic
//! farthest-point variant of k-means++ and are refined by Lloyd iterations.
//! Ties anywhere are broken by the lowest index, so the result depends only on
//! the input order.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::contact::{feature_distance, ContactPoint, ContactSet};
use crate::error::{Error, Result};

pub type Feature = [f64; 6];

/// Normals whose cluster mean is shorter than this fall back to a member normal.
pub const DEGENERATE_NORMAL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReductionConfig {
    pub k: usize,
    /// Position weight of the metric (1/m²).
    pub c: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

fn default_max_iters() -> usize {
    50
}

fn default_tol() -> f64 {
    1e-8
}

impl ReductionConfig {
    pub fn new(k: usize, c: f64) -> Self {
        Self {
            k,
            c,
            max_iters: default_max_iters(),
            tol: default_tol(),
        }
    }

    /// `c = 1/L²` for a scene whose bounding box has diagonal `L`.
    pub fn for_scene_diagonal(k: usize, diagonal: f64) -> Self {
        Self::new(k, 1.0 / (diagonal * diagonal))
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("reduction k must be >= 1"));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("reduction max_iters must be >= 1"));
        }
        if !(self.c >= 0.0) || !self.c.is_finite() {
            return Err(Error::invalid(format!("reduction c = {} must be >= 0", self.c)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::invalid(format!("reduction tol = {} must be > 0", self.tol)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    /// Cluster index of every input contact.
    pub labels: Vec<usize>,
    /// Final `[n, p]` centers; the normal part is not renormalized.
    pub centers: Vec<Feature>,
    pub iterations: usize,
    /// True when center movement dropped below `tol`, false when `max_iters` hit.
    pub converged: bool,
    /// Objective `Σ d(x_i, center(label_i))` after each assignment pass.
    pub objective_history: Vec<f64>,
}

impl ClusterAssignment {
    pub fn k(&self) -> usize {
        self.centers.len()
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k()];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }
}

fn check_size(set: &ContactSet, cfg: &ReductionConfig) -> Result<()> {
    cfg.validate()?;
    if set.len() < cfg.k {
        return Err(Error::InsufficientPoints {
            needed: cfg.k,
            got: set.len(),
        });
    }
    Ok(())
}

/// Deterministic k-means++ seeding.
///
/// The first center is the lowest-index point among those farthest from the
/// centroid of all points; every further center is the not-yet-chosen point
/// farthest from its nearest chosen center.
pub fn kmeanspp_init(set: &ContactSet, cfg: &ReductionConfig) -> Result<Vec<Feature>> {
    check_size(set, cfg)?;
    let features: Vec<Feature> = set.points.iter().map(ContactPoint::feature).collect();
    Ok(seed_indices(&features, cfg.k, cfg.c)
        .into_iter()
        .map(|i| features[i])
        .collect())
}

fn seed_indices(features: &[Feature], k: usize, c: f64) -> Vec<usize> {
    let n = features.len();
    let centroid = mean_of(features.iter());
    let mut chosen = vec![false; n];
    let mut picks = Vec::with_capacity(k);

    let first = argmax_unchosen(features.iter().map(|f| feature_distance(f, &centroid, c)), &chosen);
    chosen[first] = true;
    picks.push(first);

    let mut nearest: Vec<f64> = features
        .iter()
        .map(|f| feature_distance(f, &features[first], c))
        .collect();
    while picks.len() < k {
        let next = argmax_unchosen(nearest.iter().copied(), &chosen);
        chosen[next] = true;
        picks.push(next);
        let center = features[next];
        for (d, f) in nearest.iter_mut().zip(features) {
            let dn = feature_distance(f, &center, c);
            if dn < *d {
                *d = dn;
            }
        }
    }
    picks
}

fn argmax_unchosen(values: impl Iterator<Item = f64>, chosen: &[bool]) -> usize {
    let mut best = usize::MAX;
    let mut best_val = f64::NEG_INFINITY;
    for (i, v) in values.enumerate() {
        if !chosen[i] && v > best_val {
            best = i;
            best_val = v;
        }
    }
    best
}

fn mean_of<'a>(features: impl Iterator<Item = &'a Feature>) -> Feature {
    let mut acc = [0.0; 6];
    let mut count = 0usize;
    for f in features {
        for (a, v) in acc.iter_mut().zip(f) {
            *a += v;
        }
        count += 1;
    }
    if count > 0 {
        let inv = count as f64;
        for a in &mut acc {
            *a /= inv;
        }
    }
    acc
}

/// Lloyd iterations from [`kmeanspp_init`] until the largest center move
/// (in the metric) is below `tol` or `max_iters` passes have run.
pub fn kmeans_cluster(set: &ContactSet, cfg: &ReductionConfig) -> Result<ClusterAssignment> {
    check_size(set, cfg)?;
    let features: Vec<Feature> = set.points.iter().map(ContactPoint::feature).collect();
    let seeds = seed_indices(&features, cfg.k, cfg.c);
    let centers = seeds.iter().map(|&i| features[i]).collect();
    Ok(lloyd(&features, centers, cfg))
}

fn lloyd(features: &[Feature], mut centers: Vec<Feature>, cfg: &ReductionConfig) -> ClusterAssignment {
    let k = centers.len();
    let mut labels = vec![0usize; features.len()];
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iters {
        iterations += 1;
        let objective = assign(features, &mut centers, &mut labels, cfg.c);
        debug_assert!(
            history
                .last()
                .map_or(true, |&prev: &f64| objective <= prev + 1e-12 * (1.0 + prev)),
            "k-means objective increased"
        );
        history.push(objective);

        let mut sums = vec![[0.0; 6]; k];
        let mut counts = vec![0usize; k];
        for (f, &l) in features.iter().zip(&labels) {
            for (s, v) in sums[l].iter_mut().zip(f) {
                *s += v;
            }
            counts[l] += 1;
        }
        let mut movement: f64 = 0.0;
        for ((center, sum), &count) in centers.iter_mut().zip(&sums).zip(&counts) {
            let mut updated = *sum;
            for v in &mut updated {
                *v /= count as f64;
            }
            movement = movement.max(feature_distance(center, &updated, cfg.c));
            *center = updated;
        }
        if movement < cfg.tol {
            converged = true;
            break;
        }
    }

    // Labels must be nearest to the centers that are returned.
    let objective = assign(features, &mut centers, &mut labels, cfg.c);
    history.push(objective);

    ClusterAssignment {
        labels,
        centers,
        iterations,
        converged,
        objective_history: history,
    }
}

/// Nearest-center assignment followed by empty-cluster repair. Returns the
/// objective against the (possibly repaired) centers.
fn assign(features: &[Feature], centers: &mut [Feature], labels: &mut [usize], c: f64) -> f64 {
    let k = centers.len();
    let mut dist = vec![0.0; features.len()];
    let mut counts = vec![0usize; k];
    for (i, f) in features.iter().enumerate() {
        let mut best = 0;
        let mut best_d = feature_distance(f, &centers[0], c);
        for (j, center) in centers.iter().enumerate().skip(1) {
            let d = feature_distance(f, center, c);
            if d < best_d {
                best = j;
                best_d = d;
            }
        }
        labels[i] = best;
        dist[i] = best_d;
        counts[best] += 1;
    }

    // Reseed each empty cluster with the point farthest from its own center,
    // taken only from clusters that keep at least one member.
    for j in 0..k {
        if counts[j] > 0 {
            continue;
        }
        let mut donor = usize::MAX;
        let mut donor_d = f64::NEG_INFINITY;
        for (i, &l) in labels.iter().enumerate() {
            if counts[l] >= 2 && dist[i] > donor_d {
                donor = i;
                donor_d = dist[i];
            }
        }
        counts[labels[donor]] -= 1;
        labels[donor] = j;
        counts[j] = 1;
        dist[donor] = 0.0;
        centers[j] = features[donor];
    }

    dist.iter().sum()
}

/// One contact per cluster, in ascending cluster order: centroid position,
/// normalized mean normal, deepest member depth, scale 1.
pub fn representative_contacts(set: &ContactSet, assign: &ClusterAssignment) -> Result<ContactSet> {
    if assign.labels.len() != set.len() {
        return Err(Error::LengthMismatch {
            expected: set.len(),
            got: assign.labels.len(),
        });
    }
    let k = assign.k();
    let mut pos = vec![Vector3::zeros(); k];
    let mut nrm = vec![Vector3::zeros(); k];
    let mut depth = vec![f64::NEG_INFINITY; k];
    let mut deepest = vec![usize::MAX; k];
    let mut count = vec![0usize; k];
    for (i, (p, &l)) in set.points.iter().zip(&assign.labels).enumerate() {
        if l >= k {
            return Err(Error::invalid(format!("label {l} out of range for k = {k}")));
        }
        pos[l] += p.position;
        nrm[l] += p.normal;
        count[l] += 1;
        if p.depth > depth[l] {
            depth[l] = p.depth;
            deepest[l] = i;
        }
    }

    let mut points = Vec::with_capacity(k);
    for j in 0..k {
        if count[j] == 0 {
            return Err(Error::invalid(format!("cluster {j} has no members")));
        }
        let mean_n = nrm[j] / count[j] as f64;
        let normal = if mean_n.norm() < DEGENERATE_NORMAL {
            set.points[deepest[j]].normal
        } else {
            mean_n.normalize()
        };
        points.push(ContactPoint::new(pos[j] / count[j] as f64, normal, depth[j]));
    }
    Ok(ContactSet::with_points(points, set.stiffness, set.damping))
}

/// Reduce to `min(|set|, k)` contacts; sets already small enough pass through.
pub fn reduce(set: &ContactSet, cfg: &ReductionConfig) -> Result<ContactSet> {
    cfg.validate()?;
    if set.len() <= cfg.k {
        return Ok(set.clone());
    }
    let assignment = kmeans_cluster(set, cfg)?;
    representative_contacts(set, &assignment)
}
