use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::hull::{incremental, local_hull, VISIBILITY_EPS};
use super::{check_distinct, check_points, circumcenter, Frame, GeometryError};

/// Lower facets whose downward normal component is smaller than this are
/// treated as vertical.
const LOWER_EPS: f64 = 1e-13;
const JOGGLE_ATTEMPTS: u32 = 4;

/// Delaunay simplices (sorted site indices) of a full-dimensional site set in
/// local coordinates.
///
/// Sites are lifted onto the paraboloid `z = |x|^2`; the lower hull of the
/// lifted set projects to the triangulation. When every site lies on one
/// sphere the lifted set is flat, so an extra point is placed above it and
/// facets touching that point are discarded. If near-cospherical input makes
/// a site drop out of the lower hull, heights are perturbed slightly and the
/// hull is rebuilt.
pub(crate) fn delaunay_local(sites: &[Vec<f64>]) -> Result<Vec<Vec<usize>>, GeometryError> {
    let d = sites[0].len();
    local_hull(sites)?;
    let lifted: Vec<Vec<f64>> = sites
        .iter()
        .map(|p| {
            let mut q = p.clone();
            q.push(p.iter().map(|x| x * x).sum());
            q
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    for attempt in 0..=JOGGLE_ATTEMPTS {
        let mut pts = lifted.clone();
        if attempt > 0 {
            let amp = 1e-11 * 10f64.powi(attempt as i32);
            for p in &mut pts {
                p[d] += amp * rng.random_range(-1.0..1.0);
            }
        }
        let top = pts.len();
        let facets = match incremental(&pts, VISIBILITY_EPS) {
            Ok(f) => f,
            Err(GeometryError::DegenerateHull { affine_dim, .. }) if affine_dim == d => {
                pts.push(apex(&pts));
                incremental(&pts, VISIBILITY_EPS)?
            }
            Err(e) => return Err(e),
        };
        let simplices: Vec<Vec<usize>> = facets
            .into_iter()
            .filter(|f| f.normal[d] < -LOWER_EPS && !f.vertices.contains(&top))
            .map(|f| f.vertices)
            .collect();
        let covered: HashSet<usize> = simplices.iter().flatten().copied().collect();
        if covered.len() == sites.len() {
            let mut simplices = simplices;
            simplices.sort_unstable();
            return Ok(simplices);
        }
        log::debug!(
            "delaunay attempt {attempt}: {} of {} sites covered, perturbing",
            covered.len(),
            sites.len()
        );
    }
    Err(GeometryError::DegenerateHull {
        affine_dim: d,
        dim: d + 1,
    })
}

/// A point above the centroid of flat lifted data, higher than all of it.
fn apex(pts: &[Vec<f64>]) -> Vec<f64> {
    let d = pts[0].len() - 1;
    let mut p = vec![0.0; d + 1];
    for q in pts {
        p.iter_mut().zip(q).for_each(|(a, b)| *a += b);
    }
    p.iter_mut().for_each(|a| *a /= pts.len() as f64);
    let (lo, hi) = pts
        .iter()
        .map(|q| q[d])
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), z| (l.min(z), h.max(z)));
    p[d] = hi + (hi - lo) + 1.0;
    p
}

/// Circumcentres of the given simplices, merged when they agree after
/// rounding to `tol`.
pub(crate) fn circumcenters(
    sites: &[Vec<f64>],
    simplices: &[Vec<usize>],
    tol: f64,
) -> Vec<Vec<f64>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for s in simplices {
        let verts: Vec<&[f64]> = s.iter().map(|&i| sites[i].as_slice()).collect();
        let Some(c) = circumcenter(&verts) else {
            continue;
        };
        let key: Vec<i64> = c.iter().map(|x| (x / tol).round() as i64).collect();
        if seen.insert(key) {
            out.push(c);
        }
    }
    out
}

/// Delaunay triangulation as sorted lists of input indices.
pub fn delaunay_simplices(points: &[Vec<f64>]) -> Result<Vec<Vec<usize>>, GeometryError> {
    check_points(points)?;
    check_distinct(points)?;
    let frame = Frame::fit(points);
    delaunay_local(&frame.all_to_local(points))
}

/// Distinct Voronoi vertices, in lexicographic order. Vertices closer than
/// 1e-9 of the point cloud's half-extent are merged.
pub fn voronoi_vertices(points: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, GeometryError> {
    check_points(points)?;
    check_distinct(points)?;
    let frame = Frame::fit(points);
    let local = frame.all_to_local(points);
    let simplices = delaunay_local(&local)?;
    let mut out: Vec<Vec<f64>> = circumcenters(&local, &simplices, 1e-9)
        .iter()
        .map(|c| frame.to_world(c))
        .collect();
    out.sort_by(|a, b| {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    Ok(out)
}
