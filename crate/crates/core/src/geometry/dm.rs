use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::delaunay::{circumcenters, delaunay_local};
use super::hull::{local_hull, LocalHull};
use super::{
    check_distinct, check_points, dot, nearest_distance, solve, Frame, GeometryError,
    HULL_TOLERANCE, MAX_EXACT_DIM,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DmMethod {
    ExactVoronoi,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DmOptions {
    /// Also consider points where Voronoi faces cross the hull boundary.
    /// Without them the maximum can be missed when the widest gap touches
    /// the boundary.
    pub include_boundary_candidates: bool,
}

impl Default for DmOptions {
    fn default() -> Self {
        Self {
            include_boundary_candidates: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmReport {
    /// Reciprocal of `radius`.
    pub dm: f64,
    /// Centre of the largest empty ball.
    pub worst_point: Vec<f64>,
    pub radius: f64,
    pub method: DmMethod,
    pub dim: usize,
    /// Candidate centres evaluated (samples, for Monte Carlo).
    pub candidate_count: usize,
}

impl DmReport {
    pub(crate) fn new(
        frame: &Frame,
        best: (f64, Vec<f64>),
        method: DmMethod,
        dim: usize,
        candidate_count: usize,
    ) -> Self {
        let radius = best.0 * frame.scale;
        DmReport {
            dm: 1.0 / radius,
            worst_point: frame.to_world(&best.1),
            radius,
            method,
            dim,
            candidate_count,
        }
    }
}

/// Exact diversity of a point set: the reciprocal radius of the largest ball
/// centred in the convex hull that contains no point in its interior.
///
/// Requires at least `dim + 1` distinct points spanning the space and
/// `dim <= MAX_EXACT_DIM`.
pub fn compute_dm(points: &[Vec<f64>], opts: &DmOptions) -> Result<DmReport, GeometryError> {
    let dim = check_points(points)?;
    if dim > MAX_EXACT_DIM {
        return Err(GeometryError::DimensionTooHigh {
            dim,
            max: MAX_EXACT_DIM,
        });
    }
    check_distinct(points)?;
    let frame = Frame::fit(points);
    let sites = frame.all_to_local(points);
    let hull = local_hull(&sites)?;
    let simplices = delaunay_local(&sites)?;

    let mut candidates: Vec<Vec<f64>> = circumcenters(&sites, &simplices, HULL_TOLERANCE)
        .into_iter()
        .filter(|c| {
            hull.facets
                .iter()
                .all(|f| f.signed_distance(c) <= HULL_TOLERANCE)
        })
        .collect();
    let interior = candidates.len();
    if opts.include_boundary_candidates {
        candidates.extend(boundary_candidates(&sites, &hull, &simplices));
    }
    log::debug!(
        "compute_dm: {} sites, {} simplices, {} vertex + {} boundary candidates",
        sites.len(),
        simplices.len(),
        interior,
        candidates.len() - interior
    );
    if candidates.is_empty() {
        return Err(GeometryError::NoCandidate);
    }

    let best = candidates
        .par_iter()
        .enumerate()
        .map(|(i, c)| (nearest_distance(c, &sites), i))
        .reduce(
            || (f64::NEG_INFINITY, usize::MAX),
            |a, b| {
                if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) {
                    b
                } else {
                    a
                }
            },
        );
    Ok(DmReport::new(
        &frame,
        (best.0, candidates[best.1].clone()),
        DmMethod::ExactVoronoi,
        dim,
        candidates.len(),
    ))
}

/// All `size`-element subsets of `items`.
fn subsets(items: &[usize], size: usize, out: &mut BTreeSet<Vec<usize>>) {
    fn rec(items: &[usize], size: usize, start: usize, cur: &mut Vec<usize>, out: &mut BTreeSet<Vec<usize>>) {
        if cur.len() == size {
            out.insert(cur.clone());
            return;
        }
        for i in start..items.len() {
            if items.len() - i < size - cur.len() {
                break;
            }
            cur.push(items[i]);
            rec(items, size, i + 1, cur, out);
            cur.pop();
        }
    }
    rec(items, size, 0, &mut Vec::with_capacity(size), out);
}

/// Points where a Voronoi face meets a hull face of complementary dimension.
///
/// For `q` from 1 to `d - 1`, a set of `q + 1` sites forming a Delaunay face
/// is equidistant along a flat of dimension `d - q`; it meets the affine span
/// of a `q`-dimensional hull face in a single point, kept when that point lies
/// in the face itself.
fn boundary_candidates(
    sites: &[Vec<f64>],
    hull: &LocalHull,
    simplices: &[Vec<usize>],
) -> Vec<Vec<f64>> {
    let d = sites[0].len();
    let mut out = Vec::new();
    for q in 1..d {
        let mut dfaces = BTreeSet::new();
        for s in simplices {
            subsets(s, q + 1, &mut dfaces);
        }
        let mut hfaces = BTreeSet::new();
        for f in &hull.facets {
            subsets(&f.vertices, q + 1, &mut hfaces);
        }
        let hfaces: Vec<Vec<usize>> = hfaces.into_iter().collect();
        let found: Vec<Vec<f64>> = dfaces
            .par_iter()
            .flat_map_iter(|df| {
                hfaces
                    .iter()
                    .filter_map(move |hf| crossing(sites, df, hf))
            })
            .collect();
        out.extend(found);
    }
    out
}

fn crossing(sites: &[Vec<f64>], dface: &[usize], hface: &[usize]) -> Option<Vec<f64>> {
    let q = dface.len() - 1;
    let s0 = &sites[dface[0]];
    let h0 = &sites[hface[0]];
    let dirs: Vec<Vec<f64>> = hface[1..]
        .iter()
        .map(|&j| sites[j].iter().zip(h0).map(|(a, b)| a - b).collect())
        .collect();
    let mut a = DMatrix::zeros(q, q);
    let mut b = DVector::zeros(q);
    let n0 = dot(s0, s0);
    for (i, &si) in dface[1..].iter().enumerate() {
        let s = &sites[si];
        let diff: Vec<f64> = s.iter().zip(s0).map(|(x, y)| 2.0 * (x - y)).collect();
        for (j, dir) in dirs.iter().enumerate() {
            a[(i, j)] = dot(&diff, dir);
        }
        b[i] = dot(s, s) - n0 - dot(&diff, h0);
    }
    let t = solve(a, b)?;
    let tol = HULL_TOLERANCE;
    if t.iter().any(|&v| v < -tol) || t.sum() > 1.0 + tol {
        return None;
    }
    let mut x = h0.clone();
    for (tj, dir) in t.iter().zip(&dirs) {
        x.iter_mut().zip(dir).for_each(|(xi, di)| *xi += tj * di);
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dm(points: &[Vec<f64>]) -> DmReport {
        compute_dm(points, &DmOptions::default()).unwrap()
    }

    #[test]
    fn unit_square() {
        let r = dm(&[
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 1.0],
        ]);
        assert!((r.dm - 2f64.sqrt()).abs() < 1e-9);
        assert!((r.worst_point[0] - 0.5).abs() < 1e-12);
        assert_eq!(r.method, DmMethod::ExactVoronoi);
    }

    #[test]
    fn obtuse_triangle_needs_boundary() {
        // The circumcentre lies outside, so the widest gap sits on the long
        // edge where x^2 = (x - 2)^2 + 0.25.
        let pts = vec![vec![0.0, 0.0], vec![4.0, 0.0], vec![2.0, 0.5]];
        let with = dm(&pts);
        assert!((with.radius - 1.0625).abs() < 1e-9, "{with:?}");
        assert!((with.worst_point[0] - 1.0625).abs() < 1e-9 && with.worst_point[1].abs() < 1e-9);
        assert!(matches!(
            compute_dm(
                &pts,
                &DmOptions {
                    include_boundary_candidates: false
                }
            ),
            Err(GeometryError::NoCandidate)
        ));
    }

    #[test]
    fn one_dimensional_gap() {
        let r = dm(&[vec![0.0], vec![1.0], vec![5.0]]);
        assert!((r.radius - 2.0).abs() < 1e-12);
        assert!((r.worst_point[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn unit_cube_center() {
        let mut pts = Vec::new();
        for x in [0.0, 1.0] {
            for y in [0.0, 1.0] {
                for z in [0.0, 1.0] {
                    pts.push(vec![x, y, z]);
                }
            }
        }
        let r = dm(&pts);
        assert!((r.radius - 3f64.sqrt() / 2.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_input() {
        let opts = DmOptions::default();
        let high = vec![vec![0.0; 9]; 10];
        assert!(matches!(
            compute_dm(&high, &opts),
            Err(GeometryError::DimensionTooHigh { dim: 9, .. })
        ));
        let dup = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0]];
        assert!(matches!(
            compute_dm(&dup, &opts),
            Err(GeometryError::DuplicatePoint { first: 1, second: 3 })
        ));
        let line = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![3.0, 3.0]];
        assert!(matches!(
            compute_dm(&line, &opts),
            Err(GeometryError::DegenerateHull { .. })
        ));
    }

    #[test]
    fn report_serializes() {
        let r = dm(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]);
        let v = serde_json::to_value(&r).unwrap();
        assert_eq!(v["method"], "exact_voronoi");
        assert_eq!(v["dim"], 2);
    }
}
