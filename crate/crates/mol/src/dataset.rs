//! Generation and persistence of (kappa, solution) training datasets.

use std::io::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{MolError, Result};
use crate::fields::{sample_kappa_with, KappaFamily, KappaRanges, SensorGrid};
use crate::geometry::{build_knn, load_cloud, save_cloud, NeighborIndex, PointCloud};
use crate::operators::{
    build_dm_operator, build_gmls_operator, build_rbf_operator_with, default_epsilon_grid,
    default_rbf_shape, dm_neighbor_count, tune_epsilon, DiscreteOperator, EstimatorKind,
};
use crate::solver::{solve_linear_with, Coefficient, ForwardProblem, SolveMethod};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSplit {
    Train,
    Test,
}

/// Which kappa family a dataset draws from; `Mixed` allocates equal quarters
/// across the four analytic families in a fixed cyclic order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyChoice {
    Single(KappaFamily),
    Mixed,
}

const MIXED_ORDER: [KappaFamily; 4] = [
    KappaFamily::Linear,
    KappaFamily::Exponential,
    KappaFamily::PiecewiseLinear,
    KappaFamily::Quadratic,
];

/// Estimator configuration resolved before the sample sweep; shared state
/// (bandwidth, stencils) is computed once per cloud.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EstimatorSpec {
    Dm {
        /// Stencil size; defaults to `ceil(1.5 sqrt(N))`.
        neighbors: Option<usize>,
        /// Bandwidth; defaults to the tuned value.
        epsilon: Option<f64>,
    },
    Rbf {
        shape: Option<f64>,
    },
    Gmls {
        stencil: usize,
        degree: usize,
    },
}

impl EstimatorSpec {
    pub fn kind(&self) -> EstimatorKind {
        match self {
            EstimatorSpec::Dm { .. } => EstimatorKind::Dm,
            EstimatorSpec::Rbf { .. } => EstimatorKind::Rbf,
            EstimatorSpec::Gmls { .. } => EstimatorKind::Gmls,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub n_samples: usize,
    pub family: FamilyChoice,
    pub c: f64,
    pub base_seed: u64,
    pub split: DatasetSplit,
    pub ranges: KappaRanges,
    /// Force a linear-solver method; `None` keeps the size heuristic.
    pub solve_method: Option<SolveMethod>,
}

impl DatasetConfig {
    pub fn new(n_samples: usize, family: FamilyChoice, base_seed: u64) -> DatasetConfig {
        DatasetConfig {
            n_samples,
            family,
            c: 1.0,
            base_seed,
            split: DatasetSplit::Train,
            ranges: KappaRanges::default(),
            solve_method: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OperatorDataset {
    /// `n_samples x m` kappa evaluations on the sensor grid.
    pub kappa_sensors: Array2<f64>,
    /// `n_samples x N` forward solutions on the cloud.
    pub solutions: Array2<f64>,
    /// `n_samples x N` kappa evaluations on the cloud (used by PDE losses).
    pub kappa_cloud: Array2<f64>,
    pub families: Vec<KappaFamily>,
    pub seeds: Vec<u64>,
    pub residuals: Vec<f64>,
    pub split: DatasetSplit,
    pub estimator: EstimatorKind,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub n_samples: usize,
    pub sensor_rows: usize,
    pub sensor_cols: usize,
    pub cloud_size: usize,
    pub estimator: EstimatorSpec,
    pub resolved_epsilon: Option<f64>,
    pub config: DatasetConfig,
    pub families: Vec<KappaFamily>,
    pub seeds: Vec<u64>,
    pub residuals: Vec<f64>,
    pub f_values: Vec<f64>,
    pub split: DatasetSplit,
}

/// SplitMix64 step; derives independent per-sample seeds from a base seed.
pub fn derive_seed(base_seed: u64, k: u64) -> u64 {
    let mut z = base_seed
        .wrapping_add(k.wrapping_mul(0x9e3779b97f4a7c15))
        .wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Family for sample `k` under the mixed allocation: cyclic through the four
/// analytic families, so every prefix of length 4q holds exactly q of each.
pub fn mixed_family(k: usize) -> KappaFamily {
    MIXED_ORDER[k % 4]
}

/// Shared per-cloud estimator state so the k-sweep only redoes the
/// kappa-dependent work.
pub struct EstimatorContext {
    pub spec: EstimatorSpec,
    pub knn: NeighborIndex,
    pub epsilon: Option<f64>,
}

impl EstimatorContext {
    pub fn prepare(cloud: &PointCloud, spec: &EstimatorSpec) -> Result<EstimatorContext> {
        let n = cloud.len();
        let (knn, epsilon) = match spec {
            EstimatorSpec::Dm { neighbors, epsilon } => {
                let k = neighbors.unwrap_or_else(|| dm_neighbor_count(n));
                let knn = build_knn(cloud, k.min(n))?;
                let eps = match epsilon {
                    Some(e) => *e,
                    None => {
                        tune_epsilon(cloud, &knn, &default_epsilon_grid())?.chosen_epsilon
                    }
                };
                (knn, Some(eps))
            }
            EstimatorSpec::Rbf { .. } => {
                // Only needed for the default shape-parameter heuristic.
                (build_knn(cloud, 2.min(n))?, None)
            }
            EstimatorSpec::Gmls { stencil, .. } => {
                ((build_knn(cloud, (stencil + 1).min(n))?), None)
            }
        };
        Ok(EstimatorContext {
            spec: spec.clone(),
            knn,
            epsilon,
        })
    }

    pub fn build_operator(
        &self,
        cloud: &PointCloud,
        kappa: &[f64],
    ) -> Result<DiscreteOperator> {
        match &self.spec {
            EstimatorSpec::Dm { .. } => {
                build_dm_operator(cloud, &self.knn, kappa, self.epsilon.unwrap(), 2)
            }
            EstimatorSpec::Rbf { shape } => {
                let s = shape.unwrap_or_else(|| default_rbf_shape(&self.knn));
                build_rbf_operator_with(
                    cloud,
                    kappa,
                    &crate::operators::RbfOptions {
                        shape: s,
                        ..Default::default()
                    },
                )
            }
            EstimatorSpec::Gmls { stencil, degree } => {
                build_gmls_operator(cloud, &self.knn, kappa, *stencil, *degree)
            }
        }
    }
}

/// Sample `n_samples` kappa fields, solve the forward problem for each, and
/// collect the dataset plus its manifest.
pub fn generate_dataset(
    cloud: &PointCloud,
    sensors: &SensorGrid,
    spec: &EstimatorSpec,
    f_values: &Array1<f64>,
    config: &DatasetConfig,
) -> Result<(OperatorDataset, DatasetManifest)> {
    let n = cloud.len();
    let m = sensors.len();
    if config.n_samples == 0 {
        return Err(MolError::Parameter("dataset needs at least one sample".into()));
    }
    if f_values.len() != n {
        return Err(MolError::Shape(format!(
            "f has {} values for {} points",
            f_values.len(),
            n
        )));
    }
    let ctx = EstimatorContext::prepare(cloud, spec)?;

    let mut kappa_sensors = Array2::zeros((config.n_samples, m));
    let mut kappa_cloud = Array2::zeros((config.n_samples, n));
    let mut solutions = Array2::zeros((config.n_samples, n));
    let mut families = Vec::with_capacity(config.n_samples);
    let mut seeds = Vec::with_capacity(config.n_samples);
    let mut residuals = Vec::with_capacity(config.n_samples);

    for k in 0..config.n_samples {
        let family = match config.family {
            FamilyChoice::Single(f) => f,
            FamilyChoice::Mixed => mixed_family(k),
        };
        let seed = derive_seed(config.base_seed, k as u64);
        let field = sample_kappa_with(family, seed, cloud, sensors, &config.ranges)?;
        let kappa_at_cloud = field.evaluate(&cloud.points, cloud.major_radius);
        let kappa_at_sensors = field.evaluate(&sensors.locations, cloud.major_radius);
        let operator = ctx.build_operator(cloud, &kappa_at_cloud)?;
        let report = solve_linear_with(
            &ForwardProblem {
                operator: &operator,
                c: Coefficient::Scalar(config.c),
                f_values: f_values.clone(),
                boundary: None,
            },
            config.solve_method,
        )
        .map_err(|e| {
            MolError::Solver(format!(
                "forward solve failed for sample {k} (kappa seed {seed}): {e}"
            ))
        })?;
        for (j, &v) in kappa_at_sensors.iter().enumerate() {
            kappa_sensors[[k, j]] = v;
        }
        for (j, &v) in kappa_at_cloud.iter().enumerate() {
            kappa_cloud[[k, j]] = v;
        }
        for (j, &v) in report.solution.iter().enumerate() {
            solutions[[k, j]] = v;
        }
        families.push(family);
        seeds.push(seed);
        residuals.push(report.residual_norm);
    }

    let manifest = DatasetManifest {
        n_samples: config.n_samples,
        sensor_rows: sensors.rows,
        sensor_cols: sensors.cols,
        cloud_size: n,
        estimator: spec.clone(),
        resolved_epsilon: ctx.epsilon,
        config: config.clone(),
        families: families.clone(),
        seeds: seeds.clone(),
        residuals: residuals.clone(),
        f_values: f_values.to_vec(),
        split: config.split,
    };
    Ok((
        OperatorDataset {
            kappa_sensors,
            solutions,
            kappa_cloud,
            families,
            seeds,
            residuals,
            split: config.split,
            estimator: spec.kind(),
        },
        manifest,
    ))
}

fn write_matrix_csv(path: &Path, matrix: &Array2<f64>) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for row in matrix.rows() {
        let mut first = true;
        for v in row.iter() {
            if !first {
                write!(out, ",")?;
            }
            write!(out, "{v:.16e}")?;
            first = false;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

fn read_matrix_csv(path: &Path) -> Result<Array2<f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|t| t.trim().parse::<f64>()).collect();
        let row = row.map_err(|e| {
            MolError::Parameter(format!("{}:{}: bad float: {e}", path.display(), lineno + 1))
        })?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(MolError::Parameter(format!("{}: empty matrix", path.display())));
    }
    let cols = rows[0].len();
    if rows.iter().any(|r| r.len() != cols) {
        return Err(MolError::Shape(format!("{}: ragged rows", path.display())));
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let nrows = flat.len() / cols;
    Array2::from_shape_vec((nrows, cols), flat)
        .map_err(|e| MolError::Shape(format!("{}: {e}", path.display())))
}

/// Write the dataset directory: `kappa_sensors.csv`, `solutions.csv`,
/// `kappa_cloud.csv`, `cloud.csv`, `manifest.json`.
pub fn save_dataset(
    dir: &Path,
    dataset: &OperatorDataset,
    manifest: &DatasetManifest,
    cloud: &PointCloud,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_matrix_csv(&dir.join("kappa_sensors.csv"), &dataset.kappa_sensors)?;
    write_matrix_csv(&dir.join("solutions.csv"), &dataset.solutions)?;
    write_matrix_csv(&dir.join("kappa_cloud.csv"), &dataset.kappa_cloud)?;
    save_cloud(cloud, &dir.join("cloud.csv"), &dir.join("cloud_manifest.json"))?;
    std::fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(manifest)?,
    )?;
    Ok(())
}

/// Read back a dataset directory written by `save_dataset`.
pub fn load_dataset(dir: &Path) -> Result<(OperatorDataset, DatasetManifest, PointCloud)> {
    let manifest: DatasetManifest =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
    let kappa_sensors = read_matrix_csv(&dir.join("kappa_sensors.csv"))?;
    let solutions = read_matrix_csv(&dir.join("solutions.csv"))?;
    let kappa_cloud = read_matrix_csv(&dir.join("kappa_cloud.csv"))?;
    let cloud = load_cloud(&dir.join("cloud.csv"), &dir.join("cloud_manifest.json"))?;
    let expect = |name: &str, got: (usize, usize), want: (usize, usize)| {
        if got == want {
            Ok(())
        } else {
            Err(MolError::Shape(format!(
                "{name}: shape {got:?} does not match manifest {want:?}"
            )))
        }
    };
    expect(
        "kappa_sensors",
        (kappa_sensors.nrows(), kappa_sensors.ncols()),
        (manifest.n_samples, manifest.sensor_rows * manifest.sensor_cols),
    )?;
    expect(
        "solutions",
        (solutions.nrows(), solutions.ncols()),
        (manifest.n_samples, manifest.cloud_size),
    )?;
    expect(
        "kappa_cloud",
        (kappa_cloud.nrows(), kappa_cloud.ncols()),
        (manifest.n_samples, manifest.cloud_size),
    )?;
    let dataset = OperatorDataset {
        kappa_sensors,
        solutions,
        kappa_cloud,
        families: manifest.families.clone(),
        seeds: manifest.seeds.clone(),
        residuals: manifest.residuals.clone(),
        split: manifest.split,
        estimator: manifest.estimator.kind(),
    };
    Ok((dataset, manifest, cloud))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{sample_cloud, ManifoldKind};

    fn small_setup() -> (PointCloud, SensorGrid, Array1<f64>) {
        let cloud = sample_cloud(ManifoldKind::Torus, 200, 2.0, 1.0, 4).unwrap();
        let sensors = SensorGrid::new(ManifoldKind::Torus, 6, 6, 2.0, 1.0).unwrap();
        let f = Array1::ones(200);
        (cloud, sensors, f)
    }

    fn dm_spec() -> EstimatorSpec {
        EstimatorSpec::Dm {
            neighbors: None,
            epsilon: None,
        }
    }

    #[test]
    fn mixed_quartering() {
        let (cloud, sensors, f) = small_setup();
        let config = DatasetConfig::new(4, FamilyChoice::Mixed, 11);
        let (ds, _) = generate_dataset(&cloud, &sensors, &dm_spec(), &f, &config).unwrap();
        let mut counts = std::collections::HashMap::new();
        for fam in &ds.families {
            *counts.entry(*fam).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 4);
        assert!(counts.values().all(|&c| c == 1));
    }

    #[test]
    fn deterministic_regeneration() {
        let (cloud, sensors, f) = small_setup();
        let config = DatasetConfig::new(3, FamilyChoice::Single(KappaFamily::Linear), 7);
        let (a, _) = generate_dataset(&cloud, &sensors, &dm_spec(), &f, &config).unwrap();
        let (b, _) = generate_dataset(&cloud, &sensors, &dm_spec(), &f, &config).unwrap();
        assert_eq!(a.kappa_sensors, b.kappa_sensors);
        assert_eq!(a.solutions, b.solutions);
    }

    #[test]
    fn sensor_values_strictly_positive() {
        let (cloud, sensors, f) = small_setup();
        let config = DatasetConfig::new(8, FamilyChoice::Mixed, 3);
        let (ds, _) = generate_dataset(&cloud, &sensors, &dm_spec(), &f, &config).unwrap();
        assert!(ds.kappa_sensors.iter().all(|&v| v > 0.0));
        assert!(ds.kappa_cloud.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn recorded_residuals_small() {
        let (cloud, sensors, f) = small_setup();
        let config = DatasetConfig::new(5, FamilyChoice::Single(KappaFamily::Quadratic), 19);
        let (ds, _) = generate_dataset(&cloud, &sensors, &dm_spec(), &f, &config).unwrap();
        // Dense path at this size; absolute residual of a well-scaled system.
        assert!(ds.residuals.iter().all(|&r| r < 1e-8), "{:?}", ds.residuals);
    }

    #[test]
    fn roundtrip_is_bitwise() {
        let (cloud, sensors, f) = small_setup();
        let config = DatasetConfig::new(3, FamilyChoice::Mixed, 5);
        let (ds, manifest) =
            generate_dataset(&cloud, &sensors, &dm_spec(), &f, &config).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &ds, &manifest, &cloud).unwrap();
        let (loaded, loaded_manifest, loaded_cloud) = load_dataset(dir.path()).unwrap();
        assert_eq!(ds.kappa_sensors, loaded.kappa_sensors);
        assert_eq!(ds.solutions, loaded.solutions);
        assert_eq!(ds.kappa_cloud, loaded.kappa_cloud);
        assert_eq!(ds.seeds, loaded.seeds);
        assert_eq!(manifest.f_values, loaded_manifest.f_values);
        assert_eq!(cloud.points, loaded_cloud.points);
    }

    #[test]
    fn derived_seeds_are_distinct() {
        let mut seen = std::collections::HashSet::new();
        for base in [0u64, 1, 42] {
            for k in 0..1000u64 {
                assert!(seen.insert(derive_seed(base, k)));
            }
        }
    }

    #[test]
    fn train_test_seeds_disjoint() {
        let (cloud, sensors, f) = small_setup();
        let train = DatasetConfig::new(6, FamilyChoice::Mixed, 100);
        let mut test = DatasetConfig::new(6, FamilyChoice::Mixed, 200);
        test.split = DatasetSplit::Test;
        let (a, _) = generate_dataset(&cloud, &sensors, &dm_spec(), &f, &train).unwrap();
        let (b, _) = generate_dataset(&cloud, &sensors, &dm_spec(), &f, &test).unwrap();
        assert!(a.seeds.iter().all(|s| !b.seeds.contains(s)));
    }

    #[test]
    fn gmls_dataset_generates() {
        let (cloud, sensors, f) = small_setup();
        let spec = EstimatorSpec::Gmls {
            stencil: 18,
            degree: 2,
        };
        let config = DatasetConfig::new(2, FamilyChoice::Single(KappaFamily::Linear), 9);
        let (ds, manifest) = generate_dataset(&cloud, &sensors, &spec, &f, &config).unwrap();
        assert_eq!(ds.estimator, EstimatorKind::Gmls);
        assert!(manifest.resolved_epsilon.is_none());
    }

    #[test]
    fn forced_iterative_matches_dense() {
        let (cloud, sensors, f) = small_setup();
        let mut config = DatasetConfig::new(2, FamilyChoice::Single(KappaFamily::Linear), 13);
        let (dense, _) = generate_dataset(&cloud, &sensors, &dm_spec(), &f, &config).unwrap();
        config.solve_method = Some(SolveMethod::Iterative);
        let (iter, _) = generate_dataset(&cloud, &sensors, &dm_spec(), &f, &config).unwrap();
        let diff = (&dense.solutions - &iter.solutions)
            .iter()
            .fold(0.0f64, |a, &b| a.max(b.abs()));
        assert!(diff < 1e-7, "dense vs iterative gap {diff}");
    }
}
