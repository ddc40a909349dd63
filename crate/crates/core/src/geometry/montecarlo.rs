use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::dm::{DmMethod, DmReport};
use super::hull::local_hull;
use super::{check_distinct, check_points, nearest_distance, Frame, GeometryError};

const CHUNK: usize = 1 << 14;

/// Estimates the largest empty ball by sampling the hull uniformly.
///
/// The hull is split into simplices fanned from an interior point and each
/// sample picks a simplex by volume, then a uniform point inside it. The
/// result never exceeds the exact radius (up to rounding) and approaches it
/// as `samples` grows. Output depends only on `seed`, not on thread count.
pub fn monte_carlo_dm(
    points: &[Vec<f64>],
    samples: usize,
    seed: u64,
) -> Result<DmReport, GeometryError> {
    if samples == 0 {
        return Err(GeometryError::InvalidArgument("samples must be positive".into()));
    }
    let dim = check_points(points)?;
    check_distinct(points)?;
    let frame = Frame::fit(points);
    let sites = frame.all_to_local(points);
    let hull = local_hull(&sites)?;

    let mut center = vec![0.0; dim];
    for &v in &hull.vertices {
        center.iter_mut().zip(&sites[v]).for_each(|(c, x)| *c += x);
    }
    center.iter_mut().for_each(|c| *c /= hull.vertices.len() as f64);

    let simplices: Vec<Vec<Vec<f64>>> = hull
        .facets
        .iter()
        .map(|f| {
            let mut s = vec![center.clone()];
            s.extend(f.vertices.iter().map(|&v| sites[v].clone()));
            s
        })
        .collect();
    let mut cumulative = Vec::with_capacity(simplices.len());
    let mut total = 0.0;
    for s in &simplices {
        total += volume(s);
        cumulative.push(total);
    }

    let chunks = samples.div_ceil(CHUNK);
    let best = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(chunk as u64);
            let n = CHUNK.min(samples - chunk * CHUNK);
            let mut best = (f64::NEG_INFINITY, Vec::new());
            let mut weights = vec![0.0; dim + 1];
            for _ in 0..n {
                let u = rng.random::<f64>() * total;
                let k = cumulative.partition_point(|&c| c <= u).min(simplices.len() - 1);
                let mut sum = 0.0;
                for w in weights.iter_mut() {
                    *w = -(1.0 - rng.random::<f64>()).ln();
                    sum += *w;
                }
                let mut p = vec![0.0; dim];
                for (w, v) in weights.iter().zip(&simplices[k]) {
                    p.iter_mut().zip(v).for_each(|(pi, vi)| *pi += w / sum * vi);
                }
                let r = nearest_distance(&p, &sites);
                if r > best.0 {
                    best = (r, p);
                }
            }
            best
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold((f64::NEG_INFINITY, Vec::new()), |a, b| if b.0 > a.0 { b } else { a });

    Ok(DmReport::new(&frame, best, DmMethod::MonteCarlo, dim, samples))
}

fn volume(simplex: &[Vec<f64>]) -> f64 {
    let d = simplex.len() - 1;
    let m = DMatrix::from_fn(d, d, |i, j| simplex[i + 1][j] - simplex[0][j]);
    let fact: f64 = (1..=d).map(|k| k as f64).product();
    m.determinant().abs() / fact
}
