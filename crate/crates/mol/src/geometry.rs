//! Point clouds on the benchmark manifolds: sampling, kNN indexing, and
//! near-boundary splits.

use std::f64::consts::PI;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MolError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ManifoldKind {
    Torus,
    SemiTorus,
    Custom,
}

/// A sampled point cloud on a 2-d surface embedded in R^3.
#[derive(Debug, Clone)]
pub struct PointCloud {
    /// Ambient coordinates, one `[x, y, z]` per point.
    pub points: Vec<[f64; 3]>,
    /// Intrinsic `(theta, phi)` angles, when the geometry is known.
    pub intrinsic: Option<Vec<[f64; 2]>>,
    pub manifold_kind: ManifoldKind,
    pub major_radius: f64,
    pub minor_radius: f64,
    pub seed: u64,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// The torus embedding: `(theta, phi) -> R^3`.
pub fn torus_embed(major_radius: f64, minor_radius: f64, theta: f64, phi: f64) -> [f64; 3] {
    let ring = major_radius + minor_radius * theta.cos();
    [ring * phi.cos(), ring * phi.sin(), minor_radius * theta.sin()]
}

/// Sample `n` points i.i.d. uniformly in intrinsic coordinates and map them
/// through the torus embedding. The semi-torus restricts `phi` to `[0, pi]`.
pub fn sample_cloud(
    kind: ManifoldKind,
    n: usize,
    major_radius: f64,
    minor_radius: f64,
    seed: u64,
) -> Result<PointCloud> {
    if !(major_radius > minor_radius && minor_radius > 0.0) {
        return Err(MolError::Parameter(format!(
            "require R > r > 0, got R={major_radius}, r={minor_radius}"
        )));
    }
    if n == 0 {
        return Err(MolError::Parameter("need at least one point".into()));
    }
    if kind == ManifoldKind::Custom {
        return Err(MolError::Parameter(
            "sample_cloud only generates torus/semi-torus clouds".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phi_max = match kind {
        ManifoldKind::Torus => 2.0 * PI,
        _ => PI,
    };
    let mut points = Vec::with_capacity(n);
    let mut intrinsic = Vec::with_capacity(n);
    for _ in 0..n {
        let theta = rng.random::<f64>() * 2.0 * PI;
        let phi = rng.random::<f64>() * phi_max;
        intrinsic.push([theta, phi]);
        points.push(torus_embed(major_radius, minor_radius, theta, phi));
    }
    Ok(PointCloud {
        points,
        intrinsic: Some(intrinsic),
        manifold_kind: kind,
        major_radius,
        minor_radius,
        seed,
    })
}

/// Place `side x side` points on a regular intrinsic-angle grid and map them
/// through the torus embedding. Useful for manufactured-solution benchmarks,
/// where the quadrature noise of a random cloud would dominate the error.
pub fn grid_cloud(
    kind: ManifoldKind,
    side: usize,
    major_radius: f64,
    minor_radius: f64,
) -> Result<PointCloud> {
    if !(major_radius > minor_radius && minor_radius > 0.0) {
        return Err(MolError::Parameter(format!(
            "require R > r > 0, got R={major_radius}, r={minor_radius}"
        )));
    }
    if side < 2 {
        return Err(MolError::Parameter("grid needs side >= 2".into()));
    }
    if kind != ManifoldKind::Torus {
        return Err(MolError::Parameter(
            "grid_cloud only generates full-torus clouds".into(),
        ));
    }
    let n = side * side;
    let mut points = Vec::with_capacity(n);
    let mut intrinsic = Vec::with_capacity(n);
    for i in 0..side {
        for j in 0..side {
            let theta = 2.0 * PI * i as f64 / side as f64;
            let phi = 2.0 * PI * j as f64 / side as f64;
            intrinsic.push([theta, phi]);
            points.push(torus_embed(major_radius, minor_radius, theta, phi));
        }
    }
    Ok(PointCloud {
        points,
        intrinsic: Some(intrinsic),
        manifold_kind: kind,
        major_radius,
        minor_radius,
        seed: 0,
    })
}

/// Exact k-nearest-neighbor lists, self included as the first entry.
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    pub k: usize,
    /// `lists[i]` holds the indices of the k nearest points to point i,
    /// sorted by distance, starting with i itself.
    pub lists: Vec<Vec<usize>>,
    /// Squared Euclidean distances matching `lists`.
    pub distances: Vec<Vec<f64>>,
}

pub fn squared_distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Brute-force kNN over the cloud. Ties broken by point index so the result
/// is independent of iteration order.
pub fn build_knn(cloud: &PointCloud, k: usize) -> Result<NeighborIndex> {
    let n = cloud.len();
    if k == 0 || k > n {
        return Err(MolError::Parameter(format!(
            "neighbor count k={k} out of range 1..={n}"
        )));
    }
    let mut lists = Vec::with_capacity(n);
    let mut distances = Vec::with_capacity(n);
    let mut scratch: Vec<(f64, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        scratch.clear();
        for j in 0..n {
            scratch.push((squared_distance(&cloud.points[i], &cloud.points[j]), j));
        }
        scratch.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        // The self entry has distance 0 and the smallest index among zero
        // distances is not guaranteed to be i if points coincide; force it.
        if scratch[0].1 != i {
            let pos = scratch.iter().position(|&(_, j)| j == i).unwrap();
            scratch.swap(0, pos);
        }
        lists.push(scratch[..k].iter().map(|&(_, j)| j).collect());
        distances.push(scratch[..k].iter().map(|&(d, _)| d).collect());
    }
    Ok(NeighborIndex { k, lists, distances })
}

/// Partition of the cloud into interior points (`X_eps`) and points within
/// geodesic distance `epsilon` of the boundary.
#[derive(Debug, Clone)]
pub struct BoundarySplit {
    pub interior: Vec<usize>,
    pub near_boundary: Vec<usize>,
    pub epsilon: f64,
}

/// Geodesic distance to the semi-torus boundary `phi in {0, pi}` at a point
/// with intrinsic angles `(theta, phi)`.
pub fn semi_torus_boundary_distance(
    major_radius: f64,
    minor_radius: f64,
    theta: f64,
    phi: f64,
) -> f64 {
    (major_radius + minor_radius * theta.cos()) * phi.min(PI - phi)
}

pub fn split_near_boundary(cloud: &PointCloud, epsilon: f64) -> Result<BoundarySplit> {
    match cloud.manifold_kind {
        ManifoldKind::Torus => Ok(BoundarySplit {
            interior: (0..cloud.len()).collect(),
            near_boundary: Vec::new(),
            epsilon,
        }),
        ManifoldKind::SemiTorus => {
            let intrinsic = cloud.intrinsic.as_ref().ok_or_else(|| {
                MolError::Parameter("semi-torus split needs intrinsic coordinates".into())
            })?;
            let dist = |i: usize| {
                semi_torus_boundary_distance(
                    cloud.major_radius,
                    cloud.minor_radius,
                    intrinsic[i][0],
                    intrinsic[i][1],
                )
            };
            split_with_distance(cloud.len(), epsilon, dist)
        }
        ManifoldKind::Custom => Err(MolError::Parameter(
            "custom clouds need split_near_boundary_with and a distance callback".into(),
        )),
    }
}

/// Split using a caller-supplied boundary-distance function.
pub fn split_near_boundary_with<F: Fn(usize) -> f64>(
    cloud: &PointCloud,
    epsilon: f64,
    boundary_distance: F,
) -> Result<BoundarySplit> {
    split_with_distance(cloud.len(), epsilon, boundary_distance)
}

fn split_with_distance<F: Fn(usize) -> f64>(
    n: usize,
    epsilon: f64,
    dist: F,
) -> Result<BoundarySplit> {
    let mut interior = Vec::new();
    let mut near_boundary = Vec::new();
    for i in 0..n {
        if dist(i) > epsilon {
            interior.push(i);
        } else {
            near_boundary.push(i);
        }
    }
    Ok(BoundarySplit {
        interior,
        near_boundary,
        epsilon,
    })
}

/// Empirical fill distance: max over a dense intrinsic probe grid of the
/// ambient distance to the nearest cloud point.
pub fn estimate_fill_distance(cloud: &PointCloud, probe_per_axis: usize) -> f64 {
    let phi_max = match cloud.manifold_kind {
        ManifoldKind::SemiTorus => PI,
        _ => 2.0 * PI,
    };
    let mut worst: f64 = 0.0;
    for a in 0..probe_per_axis {
        let theta = 2.0 * PI * a as f64 / probe_per_axis as f64;
        for b in 0..probe_per_axis {
            let phi = phi_max * b as f64 / probe_per_axis as f64;
            let p = torus_embed(cloud.major_radius, cloud.minor_radius, theta, phi);
            let mut best = f64::INFINITY;
            for q in &cloud.points {
                let d = squared_distance(&p, q);
                if d < best {
                    best = d;
                }
            }
            worst = worst.max(best.sqrt());
        }
    }
    worst
}

/// Default near-boundary threshold: two fill distances, so the split captures
/// at least one layer of points per boundary component.
pub fn default_boundary_epsilon(cloud: &PointCloud) -> f64 {
    2.0 * estimate_fill_distance(cloud, 40)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CloudManifest {
    pub kind: ManifoldKind,
    pub n: usize,
    pub major_radius: f64,
    pub minor_radius: f64,
    pub seed: u64,
}

/// Write the cloud as `idx,x,y,z,theta,phi` CSV plus a JSON manifest.
pub fn save_cloud(cloud: &PointCloud, csv_path: &Path, manifest_path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(csv_path)?);
    writeln!(out, "idx,x,y,z,theta,phi")?;
    for (i, p) in cloud.points.iter().enumerate() {
        let [theta, phi] = cloud
            .intrinsic
            .as_ref()
            .map(|t| t[i])
            .unwrap_or([f64::NAN, f64::NAN]);
        writeln!(
            out,
            "{i},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            p[0], p[1], p[2], theta, phi
        )?;
    }
    out.flush()?;
    let manifest = CloudManifest {
        kind: cloud.manifold_kind,
        n: cloud.len(),
        major_radius: cloud.major_radius,
        minor_radius: cloud.minor_radius,
        seed: cloud.seed,
    };
    std::fs::write(manifest_path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn load_cloud(csv_path: &Path, manifest_path: &Path) -> Result<PointCloud> {
    let manifest: CloudManifest = serde_json::from_str(&std::fs::read_to_string(manifest_path)?)?;
    let reader = BufReader::new(std::fs::File::open(csv_path)?);
    let mut points = Vec::new();
    let mut intrinsic = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if lineno == 0 {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(MolError::Config(format!(
                "cloud csv line {lineno}: expected 6 fields"
            )));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|e| MolError::Config(format!("cloud csv line {lineno}: {e}")))
        };
        points.push([parse(fields[1])?, parse(fields[2])?, parse(fields[3])?]);
        intrinsic.push([parse(fields[4])?, parse(fields[5])?]);
    }
    if points.len() != manifest.n {
        return Err(MolError::Config(format!(
            "manifest says {} points, csv has {}",
            manifest.n,
            points.len()
        )));
    }
    Ok(PointCloud {
        points,
        intrinsic: Some(intrinsic),
        manifold_kind: manifest.kind,
        major_radius: manifest.major_radius,
        minor_radius: manifest.minor_radius,
        seed: manifest.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn embedding_at_origin_angles() {
        let p = torus_embed(2.0, 1.0, 0.0, 0.0);
        assert_eq!(p, [3.0, 0.0, 0.0]);
    }

    #[test]
    fn sampled_points_satisfy_implicit_equation() {
        let cloud = sample_cloud(ManifoldKind::Torus, 500, 2.0, 1.0, 7).unwrap();
        for p in &cloud.points {
            let ring = (p[0] * p[0] + p[1] * p[1]).sqrt() - 2.0;
            assert_abs_diff_eq!(ring * ring + p[2] * p[2], 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn semi_torus_phi_range() {
        let cloud = sample_cloud(ManifoldKind::SemiTorus, 1000, 2.0, 1.0, 3).unwrap();
        assert_eq!(cloud.len(), 1000);
        for t in cloud.intrinsic.as_ref().unwrap() {
            assert!(t[1] >= 0.0 && t[1] <= PI);
        }
    }

    #[test]
    fn invalid_radii_rejected() {
        assert!(sample_cloud(ManifoldKind::Torus, 10, 1.0, 2.0, 0).is_err());
        assert!(sample_cloud(ManifoldKind::Torus, 0, 2.0, 1.0, 0).is_err());
    }

    #[test]
    fn sampling_is_reproducible() {
        let a = sample_cloud(ManifoldKind::Torus, 200, 2.0, 1.0, 42).unwrap();
        let b = sample_cloud(ManifoldKind::Torus, 200, 2.0, 1.0, 42).unwrap();
        assert_eq!(a.points, b.points);
    }

    #[test]
    fn knn_two_points() {
        let cloud = PointCloud {
            points: vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]],
            intrinsic: None,
            manifold_kind: ManifoldKind::Custom,
            major_radius: 2.0,
            minor_radius: 1.0,
            seed: 0,
        };
        let knn = build_knn(&cloud, 2).unwrap();
        assert_eq!(knn.lists[0], vec![0, 1]);
        assert_eq!(knn.lists[1], vec![1, 0]);
        assert_eq!(knn.distances[0][0], 0.0);
    }

    #[test]
    fn knn_k1_is_self() {
        let cloud = sample_cloud(ManifoldKind::Torus, 50, 2.0, 1.0, 1).unwrap();
        let knn = build_knn(&cloud, 1).unwrap();
        for (i, list) in knn.lists.iter().enumerate() {
            assert_eq!(list, &vec![i]);
        }
    }

    #[test]
    fn knn_flat_grid_axis_neighbors() {
        // 7x7 unit grid in the z=0 plane; interior points should list the
        // four axis-adjacent neighbors right after self.
        let mut points = Vec::new();
        for i in 0..7 {
            for j in 0..7 {
                points.push([i as f64, j as f64, 0.0]);
            }
        }
        let cloud = PointCloud {
            points,
            intrinsic: None,
            manifold_kind: ManifoldKind::Custom,
            major_radius: 2.0,
            minor_radius: 1.0,
            seed: 0,
        };
        let knn = build_knn(&cloud, 5).unwrap();
        let center = 3 * 7 + 3;
        let mut got: Vec<usize> = knn.lists[center][1..].to_vec();
        got.sort_unstable();
        let mut want = vec![center - 7, center - 1, center + 1, center + 7];
        want.sort_unstable();
        assert_eq!(got, want);
    }

    #[test]
    fn knn_k_too_large() {
        let cloud = sample_cloud(ManifoldKind::Torus, 5, 2.0, 1.0, 1).unwrap();
        assert!(build_knn(&cloud, 6).is_err());
    }

    #[test]
    fn knn_distances_nondecreasing() {
        let cloud = sample_cloud(ManifoldKind::Torus, 300, 2.0, 1.0, 9).unwrap();
        let knn = build_knn(&cloud, 12).unwrap();
        for (i, d) in knn.distances.iter().enumerate() {
            assert_eq!(knn.lists[i][0], i);
            assert_eq!(d[0], 0.0);
            for w in d.windows(2) {
                assert!(w[1] >= w[0]);
            }
        }
    }

    #[test]
    fn split_mid_domain_point_is_interior() {
        let d = semi_torus_boundary_distance(2.0, 1.0, 0.0, PI / 2.0);
        assert_abs_diff_eq!(d, 3.0 * PI / 2.0, epsilon = 1e-12);
        let cloud = PointCloud {
            points: vec![torus_embed(2.0, 1.0, 0.0, PI / 2.0)],
            intrinsic: Some(vec![[0.0, PI / 2.0]]),
            manifold_kind: ManifoldKind::SemiTorus,
            major_radius: 2.0,
            minor_radius: 1.0,
            seed: 0,
        };
        let split = split_near_boundary(&cloud, 0.1).unwrap();
        assert_eq!(split.interior, vec![0]);
        assert!(split.near_boundary.is_empty());
    }

    #[test]
    fn split_boundary_point_is_near_boundary() {
        let cloud = PointCloud {
            points: vec![torus_embed(2.0, 1.0, 1.0, 0.0)],
            intrinsic: Some(vec![[1.0, 0.0]]),
            manifold_kind: ManifoldKind::SemiTorus,
            major_radius: 2.0,
            minor_radius: 1.0,
            seed: 0,
        };
        let split = split_near_boundary(&cloud, 1e-9).unwrap();
        assert_eq!(split.near_boundary, vec![0]);
    }

    #[test]
    fn split_torus_has_no_boundary() {
        let cloud = sample_cloud(ManifoldKind::Torus, 100, 2.0, 1.0, 5).unwrap();
        let split = split_near_boundary(&cloud, 100.0).unwrap();
        assert_eq!(split.interior.len(), 100);
        assert!(split.near_boundary.is_empty());
    }

    #[test]
    fn fill_distance_shrinks_with_n() {
        // Median ratio over seeds should be near 2 for N -> 4N (d = 2).
        let mut ratios = Vec::new();
        for seed in 0..10 {
            let small = sample_cloud(ManifoldKind::Torus, 250, 2.0, 1.0, seed).unwrap();
            let large = sample_cloud(ManifoldKind::Torus, 1000, 2.0, 1.0, 1000 + seed).unwrap();
            let fs = estimate_fill_distance(&small, 30);
            let fl = estimate_fill_distance(&large, 30);
            assert!(fl < fs);
            ratios.push(fs / fl);
        }
        ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = ratios[ratios.len() / 2];
        assert!(
            (1.0..=4.0).contains(&median),
            "median fill-distance ratio {median} outside [1, 4]"
        );
    }

    #[test]
    fn cloud_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let cloud = sample_cloud(ManifoldKind::SemiTorus, 64, 2.0, 1.0, 11).unwrap();
        let csv = dir.path().join("cloud.csv");
        let man = dir.path().join("cloud.json");
        save_cloud(&cloud, &csv, &man).unwrap();
        let back = load_cloud(&csv, &man).unwrap();
        assert_eq!(cloud.points, back.points);
        assert_eq!(cloud.intrinsic, back.intrinsic);
        assert_eq!(cloud.seed, back.seed);
    }
}
