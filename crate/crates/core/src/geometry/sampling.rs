use super::{mean_point, Point3, PointCloud};
use crate::error::{Error, Result};

/// Greedy farthest point sampling.
///
/// The first pick is the point nearest the centroid when `seed == 0` and
/// `seed mod N` otherwise. Each later pick maximizes the distance to the
/// already chosen set, ties going to the smallest index.
pub fn farthest_point_sampling(cloud: &PointCloud, count: usize, seed: u64) -> Result<Vec<usize>> {
    farthest_point_sampling_points(&cloud.points, count, seed)
}

pub fn farthest_point_sampling_points(points: &[Point3], count: usize, seed: u64) -> Result<Vec<usize>> {
    let n = points.len();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    if count == 0 || count > n {
        return Err(Error::InvalidSampleCount { count, n });
    }

    let start = if seed == 0 {
        let c = mean_point(points);
        let mut best = 0;
        let mut best_d2 = f64::INFINITY;
        for (i, p) in points.iter().enumerate() {
            let d2 = (p - c).norm_squared();
            if d2 < best_d2 {
                best_d2 = d2;
                best = i;
            }
        }
        best
    } else {
        (seed % n as u64) as usize
    };

    let mut chosen = Vec::with_capacity(count);
    let mut min_d2 = vec![f64::INFINITY; n];
    let mut current = start;
    loop {
        chosen.push(current);
        min_d2[current] = f64::NEG_INFINITY;
        if chosen.len() == count {
            break;
        }
        let anchor = points[current];
        let mut next = usize::MAX;
        let mut next_d2 = f64::NEG_INFINITY;
        for (i, p) in points.iter().enumerate() {
            let slot = &mut min_d2[i];
            if *slot == f64::NEG_INFINITY {
                continue;
            }
            let d2 = (p - anchor).norm_squared();
            if d2 < *slot {
                *slot = d2;
            }
            if *slot > next_d2 {
                next_d2 = *slot;
                next = i;
            }
        }
        current = next;
    }
    Ok(chosen)
}
