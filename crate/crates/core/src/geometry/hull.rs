use std::collections::{BTreeSet, HashMap};

use serde::Serialize;

use super::{check_distinct, check_points, dot, Frame, GeometryError};

/// A hull facet: `normal . x <= offset` for every point of the hull.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Facet {
    /// Input indices of the facet's vertices (a simplex; coplanar regions are
    /// triangulated).
    pub vertices: Vec<usize>,
    /// Outward unit normal.
    pub normal: Vec<f64>,
    pub offset: f64,
}

impl Facet {
    pub fn signed_distance(&self, p: &[f64]) -> f64 {
        dot(&self.normal, p) - self.offset
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvexHull {
    pub dim: usize,
    /// Input indices of hull vertices. Counter-clockwise in two dimensions,
    /// ascending otherwise.
    pub vertices: Vec<usize>,
    pub facets: Vec<Facet>,
}

impl ConvexHull {
    /// Whether `p` lies inside the hull or within `tol` of its boundary.
    pub fn contains(&self, p: &[f64], tol: f64) -> bool {
        p.len() == self.dim && self.facets.iter().all(|f| f.signed_distance(p) <= tol)
    }
}

/// Convex hull of a full-dimensional point set.
pub fn convex_hull(points: &[Vec<f64>]) -> Result<ConvexHull, GeometryError> {
    let dim = check_points(points)?;
    check_distinct(points)?;
    let frame = Frame::fit(points);
    let local = frame.all_to_local(points);
    let facets = local_hull(&local)?;
    Ok(to_world(&frame, dim, facets))
}

pub(crate) fn to_world(frame: &Frame, dim: usize, local: LocalHull) -> ConvexHull {
    let facets = local
        .facets
        .into_iter()
        .map(|f| {
            let offset = f.offset * frame.scale + dot(&f.normal, &frame.center);
            Facet {
                vertices: f.vertices,
                normal: f.normal,
                offset,
            }
        })
        .collect();
    ConvexHull {
        dim,
        vertices: local.vertices,
        facets,
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LocalHull {
    pub vertices: Vec<usize>,
    pub facets: Vec<Facet>,
}

/// Hull in local coordinates; dispatches on dimension.
pub(crate) fn local_hull(pts: &[Vec<f64>]) -> Result<LocalHull, GeometryError> {
    match pts[0].len() {
        1 => interval(pts),
        2 => monotone_chain(pts),
        _ => {
            let facets = incremental(pts, VISIBILITY_EPS)?;
            let vertices: BTreeSet<usize> =
                facets.iter().flat_map(|f| f.vertices.iter().copied()).collect();
            Ok(LocalHull {
                vertices: vertices.into_iter().collect(),
                facets,
            })
        }
    }
}

/// Points closer than this to a facet plane are not considered beyond it.
pub(crate) const VISIBILITY_EPS: f64 = 1e-12;
/// Minimum spread (local units) of the initial simplex.
const SPAN_EPS: f64 = 1e-9;

fn interval(pts: &[Vec<f64>]) -> Result<LocalHull, GeometryError> {
    let (mut lo, mut hi) = (0, 0);
    for (i, p) in pts.iter().enumerate() {
        if p[0] < pts[lo][0] {
            lo = i;
        }
        if p[0] > pts[hi][0] {
            hi = i;
        }
    }
    if pts[hi][0] - pts[lo][0] <= SPAN_EPS {
        return Err(GeometryError::DegenerateHull {
            affine_dim: 0,
            dim: 1,
        });
    }
    Ok(LocalHull {
        vertices: vec![lo.min(hi), lo.max(hi)],
        facets: vec![
            Facet {
                vertices: vec![lo],
                normal: vec![-1.0],
                offset: -pts[lo][0],
            },
            Facet {
                vertices: vec![hi],
                normal: vec![1.0],
                offset: pts[hi][0],
            },
        ],
    })
}

fn cross(o: &[f64], a: &[f64], b: &[f64]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn monotone_chain(pts: &[Vec<f64>]) -> Result<LocalHull, GeometryError> {
    let mut order: Vec<usize> = (0..pts.len()).collect();
    order.sort_by(|&a, &b| {
        pts[a][0]
            .total_cmp(&pts[b][0])
            .then(pts[a][1].total_cmp(&pts[b][1]))
    });
    let chain = |seq: &mut dyn Iterator<Item = usize>| {
        let mut out: Vec<usize> = Vec::new();
        for i in seq {
            while out.len() >= 2
                && cross(&pts[out[out.len() - 2]], &pts[out[out.len() - 1]], &pts[i]) <= 0.0
            {
                out.pop();
            }
            out.push(i);
        }
        out.pop();
        out
    };
    let mut hull = chain(&mut order.iter().copied());
    hull.extend(chain(&mut order.iter().rev().copied()));
    let area2: f64 = (0..hull.len())
        .map(|k| {
            let (a, b) = (&pts[hull[k]], &pts[hull[(k + 1) % hull.len()]]);
            a[0] * b[1] - a[1] * b[0]
        })
        .sum();
    let extent = order
        .first()
        .zip(order.last())
        .map_or(0.0, |(&a, &b)| super::distance(&pts[a], &pts[b]));
    if hull.len() < 3 || area2.abs() <= SPAN_EPS * extent.max(SPAN_EPS) {
        return Err(GeometryError::DegenerateHull {
            affine_dim: usize::from(extent > 0.0),
            dim: 2,
        });
    }
    let facets = (0..hull.len())
        .map(|k| {
            let (i, j) = (hull[k], hull[(k + 1) % hull.len()]);
            let (a, b) = (&pts[i], &pts[j]);
            let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
            let len = dx.hypot(dy);
            let normal = vec![dy / len, -dx / len];
            let offset = dot(&normal, a);
            Facet {
                vertices: vec![i, j],
                normal,
                offset,
            }
        })
        .collect();
    Ok(LocalHull {
        vertices: hull,
        facets,
    })
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Removes from `v` its components along the orthonormal `basis` (twice, for
/// stability) and returns the residual norm.
fn reject(v: &mut [f64], basis: &[Vec<f64>]) -> f64 {
    for _ in 0..2 {
        for q in basis {
            let c = dot(v, q);
            v.iter_mut().zip(q).for_each(|(x, y)| *x -= c * y);
        }
    }
    dot(v, v).sqrt()
}

fn orthonormal_rows(rows: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(rows.len());
    for mut r in rows {
        let n = reject(&mut r, &basis);
        if n > 0.0 {
            r.iter_mut().for_each(|x| *x /= n);
            basis.push(r);
        }
    }
    basis
}

/// Hyperplane through `verts`, oriented away from `interior`.
fn plane(pts: &[Vec<f64>], verts: Vec<usize>, interior: &[f64]) -> Facet {
    let p0 = &pts[verts[0]];
    let rows = verts[1..].iter().map(|&v| sub(&pts[v], p0)).collect();
    let basis = orthonormal_rows(rows);
    let mut w = sub(p0, interior);
    let n = reject(&mut w, &basis);
    w.iter_mut().for_each(|x| *x /= n);
    let offset = dot(&w, p0);
    Facet {
        vertices: verts,
        normal: w,
        offset,
    }
}

/// Beneath-beyond hull for dimension >= 2. Facets are simplices with sorted
/// vertex lists. Points within `eps` of a facet plane count as inside it.
pub(crate) fn incremental(pts: &[Vec<f64>], eps: f64) -> Result<Vec<Facet>, GeometryError> {
    let m = pts[0].len();
    debug_assert!(m >= 2);

    // Greedy initial simplex: each new vertex is the point farthest from the
    // affine span of those already chosen.
    let first = (0..pts.len())
        .min_by(|&a, &b| {
            pts[a]
                .iter()
                .zip(&pts[b])
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
        .expect("non-empty");
    let mut simplex = vec![first];
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m);
    for step in 0..m {
        let mut best = (0.0, usize::MAX, Vec::new());
        for (i, p) in pts.iter().enumerate() {
            let mut r = sub(p, &pts[first]);
            let n = reject(&mut r, &basis);
            if n > best.0 {
                best = (n, i, r);
            }
        }
        let (n, i, mut r) = best;
        if n <= SPAN_EPS {
            return Err(GeometryError::DegenerateHull {
                affine_dim: step,
                dim: m,
            });
        }
        r.iter_mut().for_each(|x| *x /= n);
        basis.push(r);
        simplex.push(i);
    }

    let mut interior = vec![0.0; m];
    for &v in &simplex {
        interior.iter_mut().zip(&pts[v]).for_each(|(c, x)| *c += x);
    }
    interior.iter_mut().for_each(|c| *c /= (m + 1) as f64);

    let mut facets: Vec<Facet> = (0..=m)
        .map(|skip| {
            let mut verts: Vec<usize> = simplex
                .iter()
                .enumerate()
                .filter(|&(k, _)| k != skip)
                .map(|(_, &v)| v)
                .collect();
            verts.sort_unstable();
            plane(pts, verts, &interior)
        })
        .collect();

    let in_simplex: BTreeSet<usize> = simplex.iter().copied().collect();
    let mut ridges: HashMap<Vec<usize>, usize> = HashMap::new();
    for (i, p) in pts.iter().enumerate() {
        if in_simplex.contains(&i) {
            continue;
        }
        let visible: Vec<bool> = facets.iter().map(|f| f.signed_distance(p) > eps).collect();
        if !visible.iter().any(|&v| v) {
            continue;
        }
        ridges.clear();
        for f in facets.iter().zip(&visible).filter(|(_, &v)| v).map(|(f, _)| f) {
            for skip in 0..f.vertices.len() {
                let mut r = f.vertices.clone();
                r.remove(skip);
                *ridges.entry(r).or_insert(0) += 1;
            }
        }
        let mut keep = visible.iter();
        facets.retain(|_| !*keep.next().unwrap());
        let mut horizon: Vec<Vec<usize>> = ridges
            .drain()
            .filter(|(_, count)| *count == 1)
            .map(|(r, _)| r)
            .collect();
        horizon.sort_unstable();
        for mut r in horizon {
            let at = r.partition_point(|&v| v < i);
            r.insert(at, i);
            facets.push(plane(pts, r, &interior));
        }
    }
    Ok(facets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    }

    /// O(n^3) reference: i is a hull vertex iff some line through i has every
    /// other point strictly on one side.
    fn brute_hull_2d(p: &[Vec<f64>]) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        for i in 0..p.len() {
            for j in 0..p.len() {
                if i == j {
                    continue;
                }
                if (0..p.len())
                    .filter(|&k| k != i && k != j)
                    .all(|k| cross(&p[i], &p[j], &p[k]) > 0.0)
                {
                    out.insert(i);
                    out.insert(j);
                }
            }
        }
        out
    }

    #[test]
    fn square_with_interior_point() {
        let pts = vec![
            vec![0.0, 0.0],
            vec![2.0, 0.0],
            vec![1.0, 1.0],
            vec![2.0, 2.0],
            vec![0.0, 2.0],
            vec![1.0, 0.0],
        ];
        let h = convex_hull(&pts).unwrap();
        assert_eq!(h.vertices, vec![0, 1, 3, 4]);
        assert!(h.contains(&[1.0, 1.0], 1e-12));
        assert!(h.contains(&[2.0, 1.0], 1e-12));
        assert!(!h.contains(&[2.1, 1.0], 1e-12));
        for f in &h.facets {
            assert!((dot(&f.normal, &f.normal) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_brute_force_2d() {
        for seed in 0..20 {
            let pts = random_points(40, 2, seed);
            let h = convex_hull(&pts).unwrap();
            let got: BTreeSet<usize> = h.vertices.iter().copied().collect();
            assert_eq!(got, brute_hull_2d(&pts), "seed {seed}");
        }
    }

    #[test]
    fn cube_3d() {
        let mut pts = Vec::new();
        for x in [0.0, 1.0] {
            for y in [0.0, 1.0] {
                for z in [0.0, 1.0] {
                    pts.push(vec![x, y, z]);
                }
            }
        }
        pts.push(vec![0.5, 0.5, 0.5]);
        pts.push(vec![0.5, 0.5, 1.0]);
        let h = convex_hull(&pts).unwrap();
        assert_eq!(h.vertices, (0..8).collect::<Vec<_>>());
        assert_eq!(h.facets.len(), 12);
        assert!(h.contains(&[0.2, 0.9, 0.5], 1e-12));
        assert!(!h.contains(&[0.2, 0.9, 1.01], 1e-12));
    }

    #[test]
    fn every_point_inside_and_vertices_on_boundary() {
        for dim in 3..=5 {
            let pts = random_points(60, dim, dim as u64);
            let h = convex_hull(&pts).unwrap();
            for p in &pts {
                assert!(h.contains(p, 1e-9));
            }
            for f in &h.facets {
                for &v in &f.vertices {
                    assert!(f.signed_distance(&pts[v]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn degenerate_inputs() {
        let line = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![2.0, 2.0]];
        assert!(matches!(
            convex_hull(&line),
            Err(GeometryError::DegenerateHull { affine_dim: 1, dim: 2 })
        ));
        let plane = vec![
            vec![0.0, 0.0, 0.0],
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![1.0, 1.0, 0.0],
        ];
        assert!(matches!(
            convex_hull(&plane),
            Err(GeometryError::DegenerateHull { affine_dim: 2, dim: 3 })
        ));
    }

    #[test]
    fn one_dimensional() {
        let h = convex_hull(&[vec![3.0], vec![-1.0], vec![0.5]]).unwrap();
        assert_eq!(h.vertices, vec![0, 1]);
        assert!(h.contains(&[2.9], 0.0));
        assert!(!h.contains(&[3.1], 0.0));
    }
}
