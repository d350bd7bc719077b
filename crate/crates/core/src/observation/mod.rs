//! Observation sequence: outlier rejection on stereo matching costs,
//! pixel-space clustering, and ordering along the thread.

pub mod synth;

use std::cmp::Ordering;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_CLUSTER_RADIUS_PX: f64 = 4.0;
/// A cluster with this many or more neighbors inside `CHAIN_FACTOR` times its
/// nearest-neighbor distance (capped at the median one) marks a branching
/// (self-crossing) chain.
pub const CHAIN_FACTOR: f64 = 1.5;
const BRANCH_NEIGHBORS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawPoint {
    pub position: Vector3<f64>,
    /// Best stereo matching cost.
    pub cost_best: f64,
    /// Second-best matching cost.
    pub cost_second: f64,
    pub pixel: Vector2<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub position: Vector3<f64>,
    pub index: usize,
    pub pixel: Vector2<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutlierParams {
    pub eps1: f64,
    pub eps2: f64,
    pub eps3: f64,
    pub eps4: f64,
}

impl Default for OutlierParams {
    /// Keeps a point iff its second-best cost strictly exceeds its best.
    fn default() -> Self {
        Self {
            eps1: 1.0,
            eps2: 1.0,
            eps3: 0.0,
            eps4: 0.5,
        }
    }
}

impl OutlierParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps1 > 0.0) {
            return Err(Error::InvalidParameter("eps1 must be positive".into()));
        }
        if !(self.eps4 > 0.0 && self.eps4 < 1.0) {
            return Err(Error::InvalidParameter("eps4 must lie in (0, 1)".into()));
        }
        Ok(())
    }

    /// Peak-similarity score in (0, 1).
    pub fn score(&self, cost_best: f64, cost_second: f64) -> Option<f64> {
        let den = self.eps2 * cost_best - self.eps3;
        if !(den > 0.0) {
            return None;
        }
        let t = self.eps1 * (cost_second - cost_best) / den;
        Some(1.0 / (1.0 + (-t).exp()))
    }
}

/// Inliers in input order. A point whose score denominator
/// `eps2 * E1 - eps3` is not positive is reported as an error.
pub fn peak_similarity_filter(points: &[RawPoint], params: &OutlierParams) -> Result<Vec<RawPoint>> {
    params.validate()?;
    let mut kept = Vec::with_capacity(points.len());
    for (index, p) in points.iter().enumerate() {
        let score = params
            .score(p.cost_best, p.cost_second)
            .ok_or(Error::DegenerateDenominator { index })?;
        if score > params.eps4 {
            kept.push(p.clone());
        }
    }
    Ok(kept)
}

fn cmp_pixel(a: &Vector2<f64>, b: &Vector2<f64>) -> Ordering {
    a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y))
}

fn cmp_point(a: &RawPoint, b: &RawPoint) -> Ordering {
    cmp_pixel(&a.pixel, &b.pixel)
        .then(a.position.x.total_cmp(&b.position.x))
        .then(a.position.y.total_cmp(&b.position.y))
        .then(a.position.z.total_cmp(&b.position.z))
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

struct Cluster {
    position: Vector3<f64>,
    pixel: Vector2<f64>,
}

/// Single-linkage clusters, each reduced to its 3D and pixel centroids.
/// The result does not depend on input order.
fn single_linkage(points: &[RawPoint], radius: f64) -> Vec<Cluster> {
    let mut sorted = points.to_vec();
    sorted.sort_by(cmp_point);
    let n = sorted.len();
    let mut sets = DisjointSet::new(n);
    for i in 0..n {
        for j in i + 1..n {
            if (sorted[i].pixel - sorted[j].pixel).norm() <= radius {
                sets.union(i, j);
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; n];
    for i in 0..n {
        let root = sets.find(i);
        if slot[root] == usize::MAX {
            slot[root] = groups.len();
            groups.push(Vec::new());
        }
        groups[slot[root]].push(i);
    }
    groups
        .iter()
        .map(|members| {
            let k = members.len() as f64;
            let (pos, px) = members.iter().fold(
                (Vector3::zeros(), Vector2::zeros()),
                |(p, q), &i| (p + sorted[i].position, q + sorted[i].pixel),
            );
            Cluster {
                position: pos / k,
                pixel: px / k,
            }
        })
        .collect()
}

/// Cluster inliers in pixel space and chain the clusters into an ordered
/// observation sequence.
///
/// The chain starts at the cluster farthest (in pixels) from the centroid of
/// all points and repeatedly steps to the nearest unvisited cluster.
pub fn cluster_and_order(points: &[RawPoint], cluster_radius_px: f64) -> Result<Vec<Observation>> {
    if !(cluster_radius_px > 0.0) {
        return Err(Error::InvalidParameter(
            "cluster radius must be positive".into(),
        ));
    }
    if points.len() < 2 {
        return Err(Error::TooFewObservations {
            needed: 2,
            got: points.len(),
        });
    }
    let clusters = single_linkage(points, cluster_radius_px);
    let n = clusters.len();
    if n < 2 {
        return Err(Error::TooFewObservations { needed: 2, got: n });
    }

    let dist = |a: usize, b: usize| (clusters[a].pixel - clusters[b].pixel).norm();
    // Compare against the smaller of the local and the typical spacing: a
    // hole left by dropped points does not read as a junction, and neither
    // does a foreshortened stretch.
    let nearest: Vec<f64> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| j != i)
                .map(|j| dist(i, j))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let mut spacing = nearest.clone();
    spacing.sort_by(f64::total_cmp);
    let typical = spacing[n / 2];
    for i in 0..n {
        let reach = CHAIN_FACTOR * nearest[i].min(typical);
        let neighbors = (0..n).filter(|&j| j != i && dist(i, j) <= reach).count();
        if neighbors >= BRANCH_NEIGHBORS {
            return Err(Error::AmbiguousOrdering {
                cluster: i,
                neighbors,
            });
        }
    }

    let mut sorted_points = points.to_vec();
    sorted_points.sort_by(cmp_point);
    let centroid = sorted_points
        .iter()
        .fold(Vector2::zeros(), |acc, p| acc + p.pixel)
        / points.len() as f64;
    let farther = |a: usize, b: usize| {
        let da = (clusters[a].pixel - centroid).norm();
        let db = (clusters[b].pixel - centroid).norm();
        da.total_cmp(&db)
            .then(cmp_pixel(&clusters[b].pixel, &clusters[a].pixel))
    };
    let start = (0..n).max_by(|&a, &b| farther(a, b)).unwrap();

    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut current = start;
    visited[current] = true;
    order.push(current);
    while order.len() < n {
        let next = (0..n)
            .filter(|&j| !visited[j])
            .min_by(|&a, &b| {
                dist(current, a)
                    .total_cmp(&dist(current, b))
                    .then(cmp_pixel(&clusters[a].pixel, &clusters[b].pixel))
            })
            .unwrap();
        visited[next] = true;
        order.push(next);
        current = next;
    }

    Ok(order
        .into_iter()
        .enumerate()
        .map(|(index, c)| Observation {
            position: clusters[c].position,
            index,
            pixel: clusters[c].pixel,
        })
        .collect())
}

/// Filter, cluster and order in one step.
pub fn observe(
    points: &[RawPoint],
    outliers: &OutlierParams,
    cluster_radius_px: f64,
) -> Result<Vec<Observation>> {
    let inliers = peak_similarity_filter(points, outliers)?;
    cluster_and_order(&inliers, cluster_radius_px)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn raw(px: (f64, f64), pos: (f64, f64, f64)) -> RawPoint {
        RawPoint {
            position: Vector3::new(pos.0, pos.1, pos.2),
            cost_best: 1.0,
            cost_second: 2.0,
            pixel: Vector2::new(px.0, px.1),
        }
    }

    fn with_costs(e1: f64, e2: f64) -> RawPoint {
        RawPoint {
            cost_best: e1,
            cost_second: e2,
            ..raw((0.0, 0.0), (0.0, 0.0, 0.1))
        }
    }

    #[test]
    fn ambiguous_match_rejected() {
        let params = OutlierParams {
            eps4: 0.6,
            ..Default::default()
        };
        let kept = peak_similarity_filter(&[with_costs(1.0, 1.0)], &params).unwrap();
        assert!(kept.is_empty());
    }

    #[test]
    fn filter_direct_evaluations() {
        let keep = OutlierParams {
            eps1: 1.0,
            eps2: 1.0,
            eps3: 0.0,
            eps4: 0.6,
        };
        // sigmoid(2) = 0.8808 > 0.6
        assert!((keep.score(1.0, 3.0).unwrap() - 0.8807970779778823).abs() < 1e-15);
        assert_eq!(peak_similarity_filter(&[with_costs(1.0, 3.0)], &keep).unwrap().len(), 1);
        let strict = OutlierParams { eps4: 0.9, ..keep };
        // sigmoid(0.5) = 0.6225 < 0.9
        assert!((strict.score(1.0, 1.5).unwrap() - 0.6224593312018546).abs() < 1e-15);
        assert!(peak_similarity_filter(&[with_costs(1.0, 1.5)], &strict)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn degenerate_denominator_reported() {
        let pts = [with_costs(1.0, 2.0), with_costs(0.0, 2.0)];
        let err = peak_similarity_filter(&pts, &OutlierParams::default()).unwrap_err();
        assert_eq!(err, Error::DegenerateDenominator { index: 1 });
    }

    #[test]
    fn coincident_pixels_form_one_cluster() {
        let pts = [raw((10.0, 10.0), (0.0, 0.0, 0.1)), raw((10.0, 10.0), (0.0, 0.0, 0.2))];
        let err = cluster_and_order(&pts, 4.0).unwrap_err();
        assert_eq!(err, Error::TooFewObservations { needed: 2, got: 1 });
        let mut more = pts.to_vec();
        more.push(raw((40.0, 10.0), (0.01, 0.0, 0.1)));
        let obs = cluster_and_order(&more, 4.0).unwrap();
        assert_eq!(obs.len(), 2);
        let merged = obs.iter().find(|o| o.pixel.x == 10.0).unwrap();
        assert!((merged.position - Vector3::new(0.0, 0.0, 0.15)).norm() < 1e-15);
    }

    #[test]
    fn line_is_ordered_end_to_end() {
        let pts: Vec<_> = [3, 0, 4, 1, 2]
            .iter()
            .map(|&i| raw((10.0 * i as f64, 5.0), (0.01 * i as f64, 0.0, 0.1)))
            .collect();
        let obs = cluster_and_order(&pts, 4.0).unwrap();
        let xs: Vec<f64> = obs.iter().map(|o| o.pixel.x).collect();
        assert!(xs == vec![0.0, 10.0, 20.0, 30.0, 40.0] || xs == vec![40.0, 30.0, 20.0, 10.0, 0.0]);
        assert!(obs.iter().enumerate().all(|(i, o)| o.index == i));
    }

    #[test]
    fn crossing_is_ambiguous() {
        let mut pts = Vec::new();
        for i in -3..=3 {
            let t = 10.0 * i as f64;
            pts.push(raw((t, 0.0), (t, 0.0, 0.1)));
            if i != 0 {
                pts.push(raw((0.0, t), (0.0, t, 0.1)));
            }
        }
        assert!(matches!(
            cluster_and_order(&pts, 4.0),
            Err(Error::AmbiguousOrdering { .. })
        ));
    }

    fn arc_points(n: usize) -> Vec<RawPoint> {
        (0..n)
            .map(|i| {
                let t = i as f64 / (n - 1) as f64;
                let a = 2.5 * t;
                raw(
                    (300.0 * a.cos(), 300.0 * a.sin()),
                    (0.03 * a.cos(), 0.03 * a.sin(), 0.1 + 0.01 * t),
                )
            })
            .collect()
    }

    #[test]
    fn reclustering_is_identity() {
        let obs = cluster_and_order(&arc_points(30), 4.0).unwrap();
        let again: Vec<_> = obs
            .iter()
            .map(|o| RawPoint {
                position: o.position,
                cost_best: 1.0,
                cost_second: 2.0,
                pixel: o.pixel,
            })
            .collect();
        let obs2 = cluster_and_order(&again, 4.0).unwrap();
        assert_eq!(obs, obs2);
    }

    proptest! {
        #[test]
        fn larger_eps4_never_keeps_more(
            costs in prop::collection::vec((0.1f64..5.0, 0.0f64..5.0), 1..40),
            lo in 0.05f64..0.95,
            bump in 0.0f64..0.5,
        ) {
            let pts: Vec<_> = costs.iter().map(|&(e1, d)| with_costs(e1, e1 + d)).collect();
            let hi = (lo + bump).min(0.99);
            let a = peak_similarity_filter(&pts, &OutlierParams { eps4: lo, ..Default::default() }).unwrap();
            let b = peak_similarity_filter(&pts, &OutlierParams { eps4: hi, ..Default::default() }).unwrap();
            prop_assert!(b.len() <= a.len());
            prop_assert!(b.iter().all(|p| a.contains(p)));
        }

        #[test]
        fn reversed_input_gives_same_chain(n in 5usize..40, shuffle_seed in 0u64..1000) {
            let mut pts = arc_points(n);
            let forward = cluster_and_order(&pts, 4.0).unwrap();
            pts.reverse();
            let rotate = (shuffle_seed as usize) % n;
            pts.rotate_left(rotate);
            let back = cluster_and_order(&pts, 4.0).unwrap();
            let fp: Vec<_> = forward.iter().map(|o| o.position).collect();
            let mut bp: Vec<_> = back.iter().map(|o| o.position).collect();
            if fp != bp {
                bp.reverse();
            }
            prop_assert_eq!(fp, bp);
        }
    }
}
