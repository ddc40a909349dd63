//! Diversity measurement over embedded demonstrations.
//!
//! The diversity of a point set D is `1 / r*`, where `r*` is the largest
//! distance from any point of the convex hull of D to its nearest member of D
//! (the largest empty ball centred in the hull). The exact solver enumerates
//! Voronoi vertices (circumcentres of the Delaunay triangulation, built by
//! lifting onto a paraboloid) and, optionally, the points where Voronoi faces
//! cross the hull boundary. A Monte Carlo estimator samples the hull
//! uniformly and serves as an independent check.

mod delaunay;
mod dm;
mod hull;
mod montecarlo;

pub use delaunay::{delaunay_simplices, voronoi_vertices};
pub use dm::{compute_dm, DmMethod, DmOptions, DmReport};
pub use hull::{convex_hull, ConvexHull, Facet};
pub use montecarlo::monte_carlo_dm;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Highest working dimension the exact solver accepts.
pub const MAX_EXACT_DIM: usize = 8;

/// Tolerance for hull membership, in input units relative to the point
/// cloud's extent (floored at 1).
pub const HULL_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("points {first} and {second} coincide")]
    DuplicatePoint { first: usize, second: usize },
    #[error("points span an affine subspace of dimension {affine_dim} in dimension {dim}")]
    DegenerateHull { affine_dim: usize, dim: usize },
    #[error("need at least {needed} points in dimension {dim}, got {got}")]
    TooFewPoints { needed: usize, dim: usize, got: usize },
    #[error("point {index} has dimension {got}, expected {expected}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("dimension {dim} exceeds the exact-mode limit of {max}")]
    DimensionTooHigh { dim: usize, max: usize },
    #[error("point {index} has a non-finite coordinate")]
    NonFinite { index: usize },
    #[error("no Voronoi vertex lies inside the hull and boundary candidates are disabled")]
    NoCandidate,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Reciprocal Euclidean distance.
pub fn sim(u: &[f64], d: &[f64]) -> Result<f64, GeometryError> {
    if u.len() != d.len() {
        return Err(GeometryError::DimensionMismatch {
            index: 1,
            expected: u.len(),
            got: d.len(),
        });
    }
    let dist = distance(u, d);
    if dist == 0.0 {
        return Err(GeometryError::DuplicatePoint {
            first: 0,
            second: 1,
        });
    }
    Ok(1.0 / dist)
}

pub(crate) fn distance_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub(crate) fn distance(a: &[f64], b: &[f64]) -> f64 {
    distance_sq(a, b).sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Distance from `p` to its nearest site.
pub(crate) fn nearest_distance(p: &[f64], sites: &[Vec<f64>]) -> f64 {
    sites
        .iter()
        .map(|s| distance_sq(p, s))
        .fold(f64::INFINITY, f64::min)
        .sqrt()
}

/// Checks shape and finiteness; returns the common dimension.
pub(crate) fn check_points(points: &[Vec<f64>]) -> Result<usize, GeometryError> {
    let dim = points.first().map_or(0, Vec::len);
    if dim == 0 {
        return Err(GeometryError::InvalidArgument(
            "points must be non-empty with dimension >= 1".into(),
        ));
    }
    for (index, p) in points.iter().enumerate() {
        if p.len() != dim {
            return Err(GeometryError::DimensionMismatch {
                index,
                expected: dim,
                got: p.len(),
            });
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite { index });
        }
    }
    if points.len() < dim + 1 {
        return Err(GeometryError::TooFewPoints {
            needed: dim + 1,
            dim,
            got: points.len(),
        });
    }
    Ok(dim)
}

/// Rejects exactly coincident points.
pub(crate) fn check_distinct(points: &[Vec<f64>]) -> Result<(), GeometryError> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        points[a]
            .iter()
            .zip(&points[b])
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    for w in order.windows(2) {
        if points[w[0]] == points[w[1]] {
            return Err(GeometryError::DuplicatePoint {
                first: w[0].min(w[1]),
                second: w[0].max(w[1]),
            });
        }
    }
    Ok(())
}

/// Affine map onto a centred frame with unit half-extent, used so that all
/// tolerances are relative to the point cloud.
#[derive(Debug, Clone)]
pub(crate) struct Frame {
    pub center: Vec<f64>,
    pub scale: f64,
}

impl Frame {
    pub fn fit(points: &[Vec<f64>]) -> Self {
        let dim = points[0].len();
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for p in points {
            for k in 0..dim {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let center: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect();
        let scale = lo
            .iter()
            .zip(&hi)
            .map(|(a, b)| 0.5 * (b - a))
            .fold(0.0, f64::max);
        let scale = if scale > 0.0 { scale } else { 1.0 };
        Frame { center, scale }
    }

    pub fn to_local(&self, p: &[f64]) -> Vec<f64> {
        p.iter()
            .zip(&self.center)
            .map(|(x, c)| (x - c) / self.scale)
            .collect()
    }

    pub fn to_world(&self, p: &[f64]) -> Vec<f64> {
        p.iter()
            .zip(&self.center)
            .map(|(x, c)| x * self.scale + c)
            .collect()
    }

    pub fn all_to_local(&self, points: &[Vec<f64>]) -> Vec<Vec<f64>> {
        points.iter().map(|p| self.to_local(p)).collect()
    }
}

/// Solves `a x = b`; `None` when `a` is numerically singular.
pub(crate) fn solve(a: DMatrix<f64>, b: DVector<f64>) -> Option<DVector<f64>> {
    let scale = a.amax();
    if scale == 0.0 {
        return None;
    }
    let lu = a.full_piv_lu();
    let det = lu.determinant();
    if !det.is_finite() || det.abs() < 1e-14 * scale.powi(b.len() as i32) {
        return None;
    }
    let x = lu.solve(&b)?;
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Centre of the sphere through `vertices` (d+1 points in dimension d).
pub(crate) fn circumcenter(vertices: &[&[f64]]) -> Option<Vec<f64>> {
    let d = vertices[0].len();
    debug_assert_eq!(vertices.len(), d + 1);
    let v0 = vertices[0];
    let n0 = dot(v0, v0);
    let mut a = DMatrix::zeros(d, d);
    let mut b = DVector::zeros(d);
    for (i, v) in vertices[1..].iter().enumerate() {
        for k in 0..d {
            a[(i, k)] = 2.0 * (v[k] - v0[k]);
        }
        b[i] = dot(v, v) - n0;
    }
    solve(a, b).map(|x| x.iter().copied().collect())
}
