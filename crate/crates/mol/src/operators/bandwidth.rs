//! Kernel bandwidth tuning from the log-log slope of the kernel sum.

use crate::error::{MolError, Result};
use crate::geometry::{NeighborIndex, PointCloud};

#[derive(Debug, Clone)]
pub struct BandwidthReport {
    pub epsilon_grid: Vec<f64>,
    pub log_s: Vec<f64>,
    /// Slope of log S vs log epsilon at each grid point (centered differences,
    /// one-sided at the ends).
    pub slopes: Vec<f64>,
    pub chosen_epsilon: f64,
    pub estimated_d: usize,
}

/// Log-spaced default sweep over `[2^-14, 10]`.
pub fn default_epsilon_grid() -> Vec<f64> {
    let lo = (2.0f64).powi(-14).ln();
    let hi = 10.0f64.ln();
    let count = 49;
    (0..count)
        .map(|i| (lo + (hi - lo) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

/// Sweep `S(eps) = (1/(N k)) sum_i sum_r exp(-|x_i - x_{i_r}|^2 / (4 eps))`
/// over the grid, locate the maximum slope of log S (which estimates d/2),
/// and pick the bandwidth where the slope matches d/2.
pub fn tune_epsilon(
    cloud: &PointCloud,
    knn: &NeighborIndex,
    grid: &[f64],
) -> Result<BandwidthReport> {
    if grid.len() < 3 {
        return Err(MolError::Parameter(
            "bandwidth grid needs at least 3 candidates".into(),
        ));
    }
    let decades = (grid[grid.len() - 1] / grid[0]).log10();
    if decades < 3.0 {
        return Err(MolError::Parameter(format!(
            "bandwidth grid spans {decades:.1} decades, need at least 3"
        )));
    }
    if knn.lists.len() != cloud.len() {
        return Err(MolError::Shape(format!(
            "kNN index covers {} points, cloud has {}",
            knn.lists.len(),
            cloud.len()
        )));
    }
    // All neighbor terms enter, including the self pair at distance zero.
    // The self terms pin S to 1/k as eps -> 0, so the log-log slope decays
    // to zero on the left instead of diverging with the closest-pair tail.
    let mut sq_dists = Vec::new();
    for list in &knn.distances {
        for &d in list {
            sq_dists.push(d);
        }
    }
    if sq_dists.is_empty() {
        return Err(MolError::DegenerateCloud(
            "kNN index has no non-self neighbors".into(),
        ));
    }
    let count = sq_dists.len() as f64;
    let log_s: Vec<f64> = grid
        .iter()
        .map(|&eps| {
            let s: f64 = sq_dists.iter().map(|&d2| (-d2 / (4.0 * eps)).exp()).sum();
            (s / count).max(f64::MIN_POSITIVE).ln()
        })
        .collect();
    let logg: Vec<f64> = grid.iter().map(|&e| e.ln()).collect();
    let m = grid.len();
    let mut slopes = vec![0.0; m];
    for i in 0..m {
        let (a, b) = if i == 0 {
            (0, 1)
        } else if i == m - 1 {
            (m - 2, m - 1)
        } else {
            (i - 1, i + 1)
        };
        slopes[i] = (log_s[b] - log_s[a]) / (logg[b] - logg[a]);
    }
    // At tiny eps the sum is dominated by the single closest pair and the
    // slope blows up like d_min^2 / (4 eps); only consider bandwidths where
    // the kernel sum retains meaningful mass.
    let mass_floor = 1e-6f64.ln();
    let candidates: Vec<usize> = (0..m).filter(|&i| log_s[i] > mass_floor).collect();
    if candidates.is_empty() {
        return Err(MolError::DegenerateCloud(
            "kernel sum is negligible over the whole bandwidth grid".into(),
        ));
    }
    let max_idx = *candidates
        .iter()
        .max_by(|&&a, &&b| slopes[a].partial_cmp(&slopes[b]).unwrap())
        .unwrap();
    let max_slope = slopes[max_idx];
    if max_slope < 0.5 {
        return Err(MolError::DegenerateCloud(format!(
            "maximum kernel-sum slope {max_slope:.3} < 0.5; cloud looks degenerate"
        )));
    }
    let estimated_d = (2.0 * max_slope).round().max(1.0) as usize;
    let target = estimated_d as f64 / 2.0;
    // Prefer the largest bandwidth whose slope is within 0.05 of d/2
    // (a smoother operator); otherwise the closest slope match.
    let chosen_epsilon = candidates
        .iter()
        .filter(|&&i| (slopes[i] - target).abs() <= 0.05)
        .map(|&i| grid[i])
        .fold(f64::NAN, f64::max);
    let chosen_epsilon = if chosen_epsilon.is_nan() {
        let mut best = max_idx;
        for &i in &candidates {
            if (slopes[i] - target).abs() < (slopes[best] - target).abs() {
                best = i;
            }
        }
        grid[best]
    } else {
        chosen_epsilon
    };
    if !log_s.iter().all(|v| v.is_finite()) {
        return Err(MolError::DegenerateCloud(
            "log S not finite on the sweep grid".into(),
        ));
    }
    Ok(BandwidthReport {
        epsilon_grid: grid.to_vec(),
        log_s,
        slopes,
        chosen_epsilon,
        estimated_d,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_knn, sample_cloud, ManifoldKind, PointCloud};

    #[test]
    fn torus_dimension_estimate_is_two() {
        let cloud = sample_cloud(ManifoldKind::Torus, 2500, 2.0, 1.0, 21).unwrap();
        let knn = build_knn(&cloud, 64).unwrap();
        let report = tune_epsilon(&cloud, &knn, &default_epsilon_grid()).unwrap();
        let max_slope = report
            .slopes
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(
            (0.8..=1.2).contains(&max_slope),
            "max slope {max_slope} outside [0.8, 1.2]"
        );
        assert_eq!(report.estimated_d, 2);
        let lo = report.epsilon_grid[0];
        let hi = *report.epsilon_grid.last().unwrap();
        assert!(report.chosen_epsilon >= lo && report.chosen_epsilon <= hi);
    }

    #[test]
    fn kernel_sum_is_local() {
        // Two tight clusters far apart: the inter-cluster terms underflow,
        // so S at small eps matches the one-cluster value.
        let mut points = Vec::new();
        for i in 0..6 {
            let t = i as f64 * 1e-3;
            points.push([t, 0.0, 0.0]);
            points.push([t + 1e6, 0.0, 0.0]);
        }
        let cloud = PointCloud {
            points,
            intrinsic: None,
            manifold_kind: ManifoldKind::Custom,
            major_radius: 2.0,
            minor_radius: 1.0,
            seed: 0,
        };
        let knn = build_knn(&cloud, 12).unwrap();
        let eps = 1e-4;
        let mut sum = 0.0;
        let mut cnt = 0usize;
        for list in &knn.distances {
            for &d2 in &list[1..] {
                sum += (-d2 / (4.0 * eps)).exp();
                cnt += 1;
            }
        }
        // Every surviving term comes from within a cluster; gap terms are 0.
        let gap_term = (-(1e6f64 * 1e6) / (4.0 * eps)).exp();
        assert_eq!(gap_term, 0.0);
        assert!(sum > 0.0 && cnt == 12 * 11);
    }

    #[test]
    fn bandwidth_scales_with_coordinates() {
        let cloud = sample_cloud(ManifoldKind::Torus, 800, 2.0, 1.0, 3).unwrap();
        let mut scaled = cloud.clone();
        for p in &mut scaled.points {
            for c in p.iter_mut() {
                *c *= 2.0;
            }
        }
        let knn = build_knn(&cloud, 32).unwrap();
        let knn2 = build_knn(&scaled, 32).unwrap();
        let grid = default_epsilon_grid();
        let argmax = |rep: &BandwidthReport| {
            let i = rep
                .slopes
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            rep.epsilon_grid[i]
        };
        let r1 = tune_epsilon(&cloud, &knn, &grid).unwrap();
        let r2 = tune_epsilon(&scaled, &knn2, &grid).unwrap();
        let ratio = argmax(&r2) / argmax(&r1);
        assert!(
            (2.8..=5.2).contains(&ratio),
            "argmax-slope bandwidth ratio {ratio} not near 4"
        );
    }

    #[test]
    fn narrow_grid_rejected() {
        let cloud = sample_cloud(ManifoldKind::Torus, 50, 2.0, 1.0, 1).unwrap();
        let knn = build_knn(&cloud, 8).unwrap();
        assert!(tune_epsilon(&cloud, &knn, &[0.1, 0.2, 0.3]).is_err());
    }
}
