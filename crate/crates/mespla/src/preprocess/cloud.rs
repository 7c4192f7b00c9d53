//! Point-cloud conditioning: statistical k-NN outlier removal and voxel-grid
//! downsampling to centroids.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::sensors::PointCloud;

/// Mean distance from each point to its `k` nearest neighbors; grid-hash
/// accelerated, exact.
fn knn_mean_distances(points: &[[f64; 3]], k: usize) -> Vec<f64> {
    let n = points.len();
    if n <= 2000 {
        return brute_knn_mean_distances(points, k);
    }

    // Uniform grid with roughly two points per occupied cell.
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let volume: f64 = (0..3).map(|a| (hi[a] - lo[a]).max(1e-6)).product();
    let cell = (volume * 2.0 / n as f64).cbrt().max(1e-6);

    let key = |p: &[f64; 3]| {
        [
            ((p[0] - lo[0]) / cell).floor() as i64,
            ((p[1] - lo[1]) / cell).floor() as i64,
            ((p[2] - lo[2]) / cell).floor() as i64,
        ]
    };
    let mut grid: HashMap<[i64; 3], Vec<u32>> = HashMap::new();
    for (i, p) in points.iter().enumerate() {
        grid.entry(key(p)).or_default().push(i as u32);
    }
    let max_ring = (0..3)
        .map(|a| ((hi[a] - lo[a]) / cell).ceil() as i64 + 1)
        .max()
        .unwrap_or(1);

    fn bounded_push(heap: &mut Vec<f64>, k: usize, d2: f64) {
        if heap.len() < k {
            heap.push(d2);
            heap.sort_by(|a, b| b.partial_cmp(a).unwrap());
        } else if d2 < heap[0] {
            heap[0] = d2;
            heap.sort_by(|a, b| b.partial_cmp(a).unwrap());
        }
    }

    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let c = key(p);
            // Collect the k smallest squared distances via a bounded max-heap.
            let mut heap: Vec<f64> = Vec::with_capacity(k + 1);
            let mut ring = 0i64;
            loop {
                // Scan the Chebyshev shell at `ring`.
                for dx in -ring..=ring {
                    for dy in -ring..=ring {
                        for dz in -ring..=ring {
                            if dx.abs().max(dy.abs()).max(dz.abs()) != ring {
                                continue;
                            }
                            if let Some(ids) = grid.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) {
                                for &j in ids {
                                    if j as usize == i {
                                        continue;
                                    }
                                    let q = &points[j as usize];
                                    let d2 = (p[0] - q[0]).powi(2)
                                        + (p[1] - q[1]).powi(2)
                                        + (p[2] - q[2]).powi(2);
                                    bounded_push(&mut heap, k, d2);
                                }
                            }
                        }
                    }
                }
                // Points beyond ring r are at least (r)*cell away from the
                // cell of p, so once the k-th best is closer we can stop.
                let have_k = heap.len() >= k;
                if have_k {
                    let kth = heap[0].sqrt();
                    if (ring as f64) * cell >= kth {
                        break;
                    }
                }
                ring += 1;
                if ring > max_ring {
                    break;
                }
            }
            let m = heap.len().max(1);
            heap.iter().map(|d2| d2.sqrt()).sum::<f64>() / m as f64
        })
        .collect()
}

fn brute_knn_mean_distances(points: &[[f64; 3]], k: usize) -> Vec<f64> {
    let n = points.len();
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut d2: Vec<f64> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let q = &points[j];
                    (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)
                })
                .collect();
            d2.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let take = k.min(d2.len()).max(1);
            d2[..take].iter().map(|v| v.sqrt()).sum::<f64>() / take as f64
        })
        .collect()
}

/// Drop points whose mean k-NN distance exceeds mean + sigma_mult * std of
/// that statistic. Clouds with at most `k` points pass through unchanged.
pub fn remove_outliers(pc: &PointCloud, k: usize, sigma_mult: f64) -> Result<PointCloud> {
    if k == 0 {
        return Err(Error::Contract("outlier filter needs k >= 1".into()));
    }
    if !(sigma_mult > 0.0) {
        return Err(Error::Contract("outlier filter needs sigma_mult > 0".into()));
    }
    if pc.points.len() <= k {
        return Ok(pc.clone());
    }
    let pts: Vec<[f64; 3]> = pc
        .points
        .iter()
        .map(|p| [p[0] as f64, p[1] as f64, p[2] as f64])
        .collect();
    let means = knn_mean_distances(&pts, k);
    let n = means.len() as f64;
    let mu = means.iter().sum::<f64>() / n;
    let var = means.iter().map(|m| (m - mu).powi(2)).sum::<f64>() / n;
    let threshold = mu + sigma_mult * var.sqrt();
    let points = pc
        .points
        .iter()
        .zip(means.iter())
        .filter(|(_, m)| **m <= threshold)
        .map(|(p, _)| *p)
        .collect();
    Ok(PointCloud { points })
}

/// One centroid per occupied voxel, output ordered by lexicographic voxel
/// index so downstream truncation is reproducible.
pub fn voxel_downsample(pc: &PointCloud, voxel_m: f64) -> Result<PointCloud> {
    if !(voxel_m > 0.0) {
        return Err(Error::Config(format!(
            "voxel size must be positive, got {voxel_m}"
        )));
    }
    let mut cells: HashMap<[i64; 3], ([f64; 3], u32)> = HashMap::new();
    for p in &pc.points {
        let idx = [
            ((p[0] as f64) / voxel_m).floor() as i64,
            ((p[1] as f64) / voxel_m).floor() as i64,
            ((p[2] as f64) / voxel_m).floor() as i64,
        ];
        let entry = cells.entry(idx).or_insert(([0.0; 3], 0));
        for a in 0..3 {
            entry.0[a] += p[a] as f64;
        }
        entry.1 += 1;
    }
    let mut keys: Vec<[i64; 3]> = cells.keys().copied().collect();
    keys.sort_unstable();
    let points = keys
        .iter()
        .map(|k| {
            let (sum, count) = &cells[k];
            [
                (sum[0] / *count as f64) as f32,
                (sum[1] / *count as f64) as f32,
                (sum[2] / *count as f64) as f32,
            ]
        })
        .collect();
    Ok(PointCloud { points })
}
