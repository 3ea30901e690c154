use std::time::Instant;

use mol::geometry::{build_knn, grid_cloud, sample_cloud, ManifoldKind};
use mol::operators::{
    build_dm_operator, build_rbf_operator_with, default_epsilon_grid, default_rbf_shape,
    dm_neighbor_count, tune_epsilon, RbfOptions,
};
use mol::solver::{solve_linear_with, Coefficient, ForwardProblem, SolveMethod};
use ndarray::Array1;

fn main() {
    let which = std::env::args().nth(1).unwrap_or_default();
    match which.as_str() {
        "rbf" => {
            for n in [500usize, 1000, 2000, 4000] {
                let cloud = sample_cloud(ManifoldKind::Torus, n, 2.0, 1.0, 1).unwrap();
                let knn = build_knn(&cloud, 2).unwrap();
                let shape = default_rbf_shape(&knn);
                let kappa = vec![1.0; n];
                let t = Instant::now();
                let op = build_rbf_operator_with(
                    &cloud,
                    &kappa,
                    &RbfOptions {
                        shape,
                        ..Default::default()
                    },
                )
                .unwrap();
                println!("rbf n={n}: {:.1}s (size {})", t.elapsed().as_secs_f64(), op.size());
            }
        }
        "dmsolve" => {
            let n = 2500;
            let cloud = sample_cloud(ManifoldKind::Torus, n, 2.0, 1.0, 1).unwrap();
            let knn = build_knn(&cloud, dm_neighbor_count(n)).unwrap();
            let t = Instant::now();
            let eps = tune_epsilon(&cloud, &knn, &default_epsilon_grid())
                .unwrap()
                .chosen_epsilon;
            println!("tune: {:.2}s eps={eps:.4}", t.elapsed().as_secs_f64());
            let kappa = vec![1.5; n];
            let t = Instant::now();
            let op = build_dm_operator(&cloud, &knn, &kappa, eps, 2).unwrap();
            println!("assemble: {:.2}s", t.elapsed().as_secs_f64());
            let t = Instant::now();
            let rep = solve_linear_with(
                &ForwardProblem {
                    operator: &op,
                    c: Coefficient::Scalar(1.0),
                    f_values: mol::solver::default_forcing(&cloud),
                    boundary: None,
                },
                Some(SolveMethod::Iterative),
            )
            .unwrap();
            println!(
                "iterative solve: {:.2}s, {} iters, residual {:.2e}",
                t.elapsed().as_secs_f64(),
                rep.iterations,
                rep.residual_norm
            );
        }
        "epoch" => {
            use mol::network::model::{BranchArch, DeepONetModel};
            use mol::network::{evaluate_losses, LossWeights, ObsData, TrainingData};
            use ndarray::Array2;
            let n = 2500;
            let m = 676;
            let k = 100;
            let cloud = sample_cloud(ManifoldKind::Torus, n, 2.0, 1.0, 1).unwrap();
            let locations = Array2::from_shape_fn((n, 3), |(i, j)| cloud.points[i][j]);
            let model = DeepONetModel::new(m, 32, &BranchArch::default(), 0).unwrap();
            let data = TrainingData {
                locations,
                obs: Some(ObsData {
                    kappa_sensors: Array2::from_shape_fn((k, m), |(a, b)| {
                        1.0 + 0.1 * ((a * 31 + b) as f64).sin()
                    }),
                    solutions: Array2::ones((k, n)),
                }),
                pde: None,
                bc: None,
            };
            let mut grad = vec![0.0; model.n_params()];
            let t = Instant::now();
            let reps = 20;
            for _ in 0..reps {
                grad.iter_mut().for_each(|g| *g = 0.0);
                evaluate_losses(
                    &model,
                    &model.params,
                    &data,
                    &LossWeights::default(),
                    Some(&mut grad),
                )
                .unwrap();
            }
            println!(
                "obs epoch: {:.3}s each",
                t.elapsed().as_secs_f64() / reps as f64
            );
        }
        "sweep" => {
            use mol::operators::build_gmls_operator;
            let oracle = |theta: f64| {
                (2.0 * theta.cos() + (2.0 * theta).cos()) / (2.0 + theta.cos())
            };
            let rel_err = |op: &mol::operators::DiscreteOperator,
                           cloud: &mol::geometry::PointCloud| {
                let intr = cloud.intrinsic.as_ref().unwrap();
                let u: Array1<f64> = intr.iter().map(|t| t[0].cos()).collect();
                let lu = op.apply(&u);
                let mut num = 0.0;
                let mut den = 0.0;
                for (i, t) in intr.iter().enumerate() {
                    let truth = oracle(t[0]);
                    num += (lu[i] - truth) * (lu[i] - truth);
                    den += truth * truth;
                }
                (num / den).sqrt()
            };
            for est in ["gmls", "dm", "rbf"] {
                println!("--- {est}");
                for &n in &[500usize, 1000, 2000, 4000] {
                    if est == "rbf" && n > 2000 {
                        continue;
                    }
                    let mut errs = Vec::new();
                    let t = Instant::now();
                    for seed in 0..5u64 {
                        let cloud =
                            sample_cloud(ManifoldKind::Torus, n, 2.0, 1.0, 100 + seed).unwrap();
                        let kappa = vec![1.0; n];
                        let op = match est {
                            "gmls" => {
                                let k = dm_neighbor_count(n);
                                let knn = build_knn(&cloud, k).unwrap();
                                build_gmls_operator(&cloud, &knn, &kappa, k, 2).unwrap()
                            }
                            "dm" => {
                                let knn = build_knn(&cloud, dm_neighbor_count(n)).unwrap();
                                let eps = tune_epsilon(&cloud, &knn, &default_epsilon_grid())
                                    .unwrap()
                                    .chosen_epsilon;
                                build_dm_operator(&cloud, &knn, &kappa, eps, 2).unwrap()
                            }
                            _ => {
                                let knn = build_knn(&cloud, 2).unwrap();
                                let shape = default_rbf_shape(&knn);
                                build_rbf_operator_with(
                                    &cloud,
                                    &kappa,
                                    &RbfOptions {
                                        shape,
                                        ..Default::default()
                                    },
                                )
                                .unwrap()
                            }
                        };
                        errs.push(rel_err(&op, &cloud));
                    }
                    errs.sort_by(|a, b| a.partial_cmp(b).unwrap());
                    println!(
                        "n={n}: median {:.4} all {:?} ({:.1}s)",
                        errs[2],
                        errs.iter().map(|e| (e * 1e4).round() / 1e4).collect::<Vec<_>>(),
                        t.elapsed().as_secs_f64()
                    );
                }
            }
        }
        "sweep2" => {
            let oracle =
                |theta: f64| (2.0 * theta.cos() + (2.0 * theta).cos()) / (2.0 + theta.cos());
            let rel_err = |op: &mol::operators::DiscreteOperator,
                           cloud: &mol::geometry::PointCloud| {
                let intr = cloud.intrinsic.as_ref().unwrap();
                let u: Array1<f64> = intr.iter().map(|t| t[0].cos()).collect();
                let lu = op.apply(&u);
                let mut num = 0.0;
                let mut den = 0.0;
                for (i, t) in intr.iter().enumerate() {
                    let truth = oracle(t[0]);
                    num += (lu[i] - truth) * (lu[i] - truth);
                    den += truth * truth;
                }
                (num / den).sqrt()
            };
            println!("--- dm 2x stencil");
            for &n in &[500usize, 1000, 2000, 4000] {
                let mut errs = Vec::new();
                for seed in 0..5u64 {
                    let cloud =
                        sample_cloud(ManifoldKind::Torus, n, 2.0, 1.0, 100 + seed).unwrap();
                    let kappa = vec![1.0; n];
                    let k = dm_neighbor_count(n);
                    let knn = build_knn(&cloud, k).unwrap();
                    let eps = tune_epsilon(&cloud, &knn, &default_epsilon_grid())
                        .unwrap()
                        .chosen_epsilon;
                    let knn2 = build_knn(&cloud, (2 * k).min(n)).unwrap();
                    let op = build_dm_operator(&cloud, &knn2, &kappa, eps, 2).unwrap();
                    errs.push(rel_err(&op, &cloud));
                }
                errs.sort_by(|a, b| a.partial_cmp(b).unwrap());
                println!("n={n}: median {:.4} all {:?}", errs[2], errs);
            }
            println!("--- rbf fixed shape 1.0");
            for &n in &[500usize, 1000, 2000] {
                let mut errs = Vec::new();
                for seed in 0..2u64 {
                    let cloud =
                        sample_cloud(ManifoldKind::Torus, n, 2.0, 1.0, 100 + seed).unwrap();
                    let kappa = vec![1.0; n];
                    let op = build_rbf_operator_with(
                        &cloud,
                        &kappa,
                        &RbfOptions::default(),
                    )
                    .unwrap();
                    errs.push(rel_err(&op, &cloud));
                }
                println!("n={n}: {errs:?}");
            }
        }
        "dmeps" => {
            let oracle =
                |theta: f64| (2.0 * theta.cos() + (2.0 * theta).cos()) / (2.0 + theta.cos());
            for &n in &[500usize, 1000, 2000, 4000] {
                let cloud = sample_cloud(ManifoldKind::Torus, n, 2.0, 1.0, 100).unwrap();
                let k = dm_neighbor_count(n);
                let knn = build_knn(&cloud, k).unwrap();
                let tuned = tune_epsilon(&cloud, &knn, &default_epsilon_grid())
                    .unwrap()
                    .chosen_epsilon;
                let intr = cloud.intrinsic.as_ref().unwrap();
                let u: Array1<f64> = intr.iter().map(|t| t[0].cos()).collect();
                let mut line = format!("n={n} tuned={tuned:.4}:");
                for eps in [0.01, 0.02, 0.04, 0.08, 0.16, 0.32, tuned] {
                    let kappa = vec![1.0; n];
                    let op = match build_dm_operator(&cloud, &knn, &kappa, eps, 2) {
                        Ok(op) => op,
                        Err(_) => continue,
                    };
                    let lu = op.apply(&u);
                    let mut num = 0.0;
                    let mut den = 0.0;
                    for (i, t) in intr.iter().enumerate() {
                        let truth = oracle(t[0]);
                        num += (lu[i] - truth) * (lu[i] - truth);
                        den += truth * truth;
                    }
                    line += &format!(" {eps:.3}->{:.3}", (num / den).sqrt());
                }
                println!("{line}");
            }
        }
        "c5" => {
            use mol::dataset::{
                generate_dataset, DatasetConfig, DatasetSplit, EstimatorSpec, FamilyChoice,
            };
            use mol::fields::{KappaFamily, SensorGrid};
            use mol::network::model::{BranchArch, DeepONetModel};
            use mol::network::{
                mean_l2_relative_error, train, LossWeights, ObsData, TrainingConfig, TrainingData,
            };
            use ndarray::Array2;
            let n = 2500;
            let cloud = sample_cloud(ManifoldKind::Torus, n, 2.0, 1.0, 2024).unwrap();
            let sensors = SensorGrid::default_for(ManifoldKind::Torus, 2.0, 1.0);
            let spec = EstimatorSpec::Dm {
                neighbors: None,
                epsilon: None,
            };
            let f = mol::solver::default_forcing(&cloud);
            let t = Instant::now();
            let mut cfg_train =
                DatasetConfig::new(100, FamilyChoice::Single(KappaFamily::Linear), 10);
            cfg_train.solve_method = Some(SolveMethod::Iterative);
            let (train_set, _) =
                generate_dataset(&cloud, &sensors, &spec, &f, &cfg_train).unwrap();
            let mut cfg_test =
                DatasetConfig::new(200, FamilyChoice::Single(KappaFamily::Linear), 20);
            cfg_test.split = DatasetSplit::Test;
            cfg_test.solve_method = Some(SolveMethod::Iterative);
            let (test_set, _) = generate_dataset(&cloud, &sensors, &spec, &f, &cfg_test).unwrap();
            println!("datasets: {:.1}s", t.elapsed().as_secs_f64());
            let locations = Array2::from_shape_fn((n, 3), |(i, j)| cloud.points[i][j]);
            let mut model =
                DeepONetModel::new(sensors.len(), 32, &BranchArch::default(), 7).unwrap();
            let data = TrainingData {
                locations: locations.clone(),
                obs: Some(ObsData {
                    kappa_sensors: train_set.kappa_sensors.clone(),
                    solutions: train_set.solutions.clone(),
                }),
                pde: None,
                bc: None,
            };
            for stage in 0..8 {
                let config = TrainingConfig {
                    weights: LossWeights::default(),
                    epochs: 2500,
                    ..TrainingConfig::default()
                };
                let t = Instant::now();
                let rep = train(&mut model, &data, &config).unwrap();
                let pred = model
                    .predict(&test_set.kappa_sensors, &locations)
                    .unwrap();
                let err = mean_l2_relative_error(&pred, &test_set.solutions).unwrap();
                println!(
                    "epochs {}: loss {:.3e}, test err {:.2}% ({:.0}s)",
                    (stage + 1) * 2500,
                    rep.final_losses.total,
                    100.0 * err,
                    t.elapsed().as_secs_f64()
                );
            }
        }
        "c6" => {
            use mol::dataset::{
                derive_seed, generate_dataset, DatasetConfig, DatasetSplit, EstimatorContext,
                EstimatorSpec, FamilyChoice,
            };
            use mol::fields::{sample_kappa, KappaFamily, SensorGrid};
            use mol::network::model::{BranchArch, DeepONetModel};
            use mol::network::{
                mean_l2_relative_error, train, LossWeights, ObsData, PdeConstraintSet,
                TrainingConfig, TrainingData,
            };
            use ndarray::Array2;
            let n = 2500;
            let cloud = sample_cloud(ManifoldKind::Torus, n, 2.0, 1.0, 2024).unwrap();
            let sensors = SensorGrid::default_for(ManifoldKind::Torus, 2.0, 1.0);
            let m = sensors.len();
            let spec = EstimatorSpec::Dm {
                neighbors: None,
                epsilon: None,
            };
            let f = mol::solver::default_forcing(&cloud);
            let t = Instant::now();
            let mut cfg_train =
                DatasetConfig::new(10, FamilyChoice::Single(KappaFamily::Linear), 10);
            cfg_train.solve_method = Some(SolveMethod::Iterative);
            let (train_set, _) =
                generate_dataset(&cloud, &sensors, &spec, &f, &cfg_train).unwrap();
            let mut cfg_test =
                DatasetConfig::new(200, FamilyChoice::Single(KappaFamily::Linear), 20);
            cfg_test.split = DatasetSplit::Test;
            cfg_test.solve_method = Some(SolveMethod::Iterative);
            let (test_set, _) = generate_dataset(&cloud, &sensors, &spec, &f, &cfg_test).unwrap();
            println!("datasets: {:.1}s", t.elapsed().as_secs_f64());
            let t = Instant::now();
            let ctx = EstimatorContext::prepare(&cloud, &spec).unwrap();
            let mut pde_sensors = Array2::zeros((100, m));
            let mut operators = Vec::with_capacity(100);
            for k in 0..100u64 {
                let field = sample_kappa(
                    KappaFamily::Linear,
                    derive_seed(30, k),
                    &cloud,
                    &sensors,
                )
                .unwrap();
                let kappa_cloud = field.evaluate(&cloud.points, 2.0);
                let row = field.evaluate(&sensors.locations, 2.0);
                for (slot, v) in pde_sensors.row_mut(k as usize).iter_mut().zip(row) {
                    *slot = v;
                }
                operators.push(ctx.build_operator(&cloud, &kappa_cloud).unwrap());
            }
            println!("physics operators: {:.1}s", t.elapsed().as_secs_f64());
            let locations = Array2::from_shape_fn((n, 3), |(i, j)| cloud.points[i][j]);
            let obs = ObsData {
                kappa_sensors: train_set.kappa_sensors.clone(),
                solutions: train_set.solutions.clone(),
            };
            for (label, pde) in [
                ("obs-only", None),
                (
                    "pi",
                    Some(PdeConstraintSet {
                        kappa_sensors: pde_sensors.clone(),
                        operators: operators.clone(),
                        c: 1.0,
                        f_values: f.clone(),
                        interior: None,
                    }),
                ),
            ] {
                let mut model =
                    DeepONetModel::new(m, 32, &BranchArch::default(), 7).unwrap();
                let data = TrainingData {
                    locations: locations.clone(),
                    obs: Some(obs.clone()),
                    pde,
                    bc: None,
                };
                let weights = LossWeights {
                    w_obs: 1.0,
                    w_pde: if label == "pi" { 1e-4 } else { 0.0 },
                    w_bc: 0.0,
                };
                for stage in 0..4 {
                    let config = TrainingConfig {
                        weights,
                        epochs: 2500,
                        ..TrainingConfig::default()
                    };
                    let t = Instant::now();
                    let rep = train(&mut model, &data, &config).unwrap();
                    let pred = model
                        .predict(&test_set.kappa_sensors, &locations)
                        .unwrap();
                    let err = mean_l2_relative_error(&pred, &test_set.solutions).unwrap();
                    println!(
                        "{label} epochs {}: loss {:.3e}, test err {:.2}% ({:.0}s)",
                        (stage + 1) * 2500,
                        rep.final_losses.total,
                        100.0 * err,
                        t.elapsed().as_secs_f64()
                    );
                }
            }
        }
        "c7" => {
            use mol::inversion::{
                build_prior, run_inversion, sample_prior, synthesize_observations, ForwardMap,
                InversionConfig, LocalKernelForward, SurrogateForward, DEFAULT_S, DEFAULT_TAU,
            };
            use mol::network::model::{BranchArch, DeepONetModel};
            use mol::network::{
                mean_l2_relative_error, train, LossWeights, ObsData, TrainingConfig, TrainingData,
            };
            use ndarray::Array2;
            let cloud = grid_cloud(ManifoldKind::Torus, 20, 2.0, 1.0).unwrap();
            let n = cloud.len();
            let knn = build_knn(&cloud, dm_neighbor_count(n)).unwrap();
            let eps = tune_epsilon(&cloud, &knn, &default_epsilon_grid())
                .unwrap()
                .chosen_epsilon;
            let prior = build_prior(&cloud, 16, DEFAULT_TAU, DEFAULT_S).unwrap();
            let forward = LocalKernelForward {
                cloud: &cloud,
                knn: &knn,
                epsilon: eps,
                c: 1.0,
                f_values: mol::solver::default_forcing(&cloud),
            };
            let truth_alpha = sample_prior(&prior, 777);
            let obs = synthesize_observations(&truth_alpha, &forward, 0.01, 4242).unwrap();
            let config = InversionConfig {
                seed: 99,
                ..Default::default()
            };
            let t = Instant::now();
            let recon = LocalKernelForward {
                cloud: &cloud,
                knn: &knn,
                epsilon: eps,
                c: 1.0,
                f_values: mol::solver::default_forcing(&cloud),
            };
            let (summary, _) = run_inversion(
                &prior,
                &obs,
                &ForwardMap::LocalKernel(LocalKernelForward {
                    cloud: &cloud,
                    knn: &knn,
                    epsilon: eps,
                    c: 1.0,
                    f_values: mol::solver::default_forcing(&cloud),
                }),
                &recon,
                &config,
            )
            .unwrap();
            println!(
                "local: kappa err {:.2}%, accept {:.2}, step {:.4}s ({:.0}s total)",
                100.0 * summary.kappa_rel_error.unwrap(),
                summary.acceptance_rate,
                summary.mean_step_seconds,
                t.elapsed().as_secs_f64()
            );
            let local_step = summary.mean_step_seconds;
            // Surrogate: train on prior draws with sensors at the cloud points.
            let k_train: usize = std::env::args()
                .nth(2)
                .and_then(|v| v.parse().ok())
                .unwrap_or(150);
            let t = Instant::now();
            let mut kappa_sensors = Array2::zeros((k_train, n));
            let mut solutions = Array2::zeros((k_train, n));
            for k in 0..k_train {
                let alpha = sample_prior(&prior, 1000 + k as u64);
                let u = forward.apply(&alpha).unwrap();
                for j in 0..n {
                    kappa_sensors[[k, j]] = alpha[j].exp();
                    solutions[[k, j]] = u[j];
                }
            }
            println!("surrogate dataset: {:.1}s", t.elapsed().as_secs_f64());
            let locations = Array2::from_shape_fn((n, 3), |(i, j)| cloud.points[i][j]);
            let mut model = DeepONetModel::new(n, 32, &BranchArch::default(), 7).unwrap();
            let mut data = TrainingData {
                locations: locations.clone(),
                obs: Some(ObsData {
                    kappa_sensors,
                    solutions,
                }),
                pde: None,
                bc: None,
            };
            let n_stages: usize = std::env::args()
                .nth(3)
                .and_then(|v| v.parse().ok())
                .unwrap_or(3);
            let use_pde = std::env::args().nth(4).as_deref() == Some("pde");
            if use_pde {
                use mol::network::PdeConstraintSet;
                let mut ops = Vec::with_capacity(k_train);
                let mut pde_sensors = Array2::zeros((k_train, n));
                for k in 0..k_train {
                    let alpha = sample_prior(&prior, 1000 + k as u64);
                    let kappa: Vec<f64> = alpha.iter().map(|a| a.exp()).collect();
                    for j in 0..n {
                        pde_sensors[[k, j]] = kappa[j];
                    }
                    ops.push(
                        mol::operators::build_dm_operator(&cloud, &knn, &kappa, eps, 2).unwrap(),
                    );
                }
                data.pde = Some(PdeConstraintSet {
                    kappa_sensors: pde_sensors,
                    operators: ops,
                    c: 1.0,
                    f_values: mol::solver::default_forcing(&cloud),
                    interior: None,
                });
            }
            for stage in 0..n_stages {
                let cfg = TrainingConfig {
                    weights: LossWeights {
                        w_obs: 1.0,
                        w_pde: if use_pde { 0.01 } else { 0.0 },
                        w_bc: 0.0,
                    },
                    epochs: 2500,
                    ..TrainingConfig::default()
                };
                let t = Instant::now();
                let rep = train(&mut model, &data, &cfg).unwrap();
                // Held-out fit on fresh prior draws.
                let mut ks = Array2::zeros((20, n));
                let mut us = Array2::zeros((20, n));
                for k in 0..20 {
                    let alpha = sample_prior(&prior, 5000 + k as u64);
                    let u = forward.apply(&alpha).unwrap();
                    for j in 0..n {
                        ks[[k, j]] = alpha[j].exp();
                        us[[k, j]] = u[j];
                    }
                }
                let pred = model.predict(&ks, &locations).unwrap();
                let err = mean_l2_relative_error(&pred, &us).unwrap();
                println!(
                    "surrogate epochs {}: loss {:.3e}, held-out err {:.2}% ({:.0}s)",
                    (stage + 1) * 2500,
                    rep.final_losses.total,
                    100.0 * err,
                    t.elapsed().as_secs_f64()
                );
            }
            let (summary, _) = run_inversion(
                &prior,
                &obs,
                &ForwardMap::Surrogate(SurrogateForward {
                    model: &model,
                    locations: locations.clone(),
                }),
                &recon,
                &config,
            )
            .unwrap();
            println!(
                "surrogate: kappa err {:.2}%, accept {:.2}, step {:.6}s (ratio {:.3})",
                100.0 * summary.kappa_rel_error.unwrap(),
                summary.acceptance_rate,
                summary.mean_step_seconds,
                summary.mean_step_seconds / local_step
            );
        }
        "c8" => {
            use mol::inversion::{build_prior, sample_prior, DEFAULT_S, DEFAULT_TAU};
            let cloud = grid_cloud(ManifoldKind::Torus, 10, 2.0, 1.0).unwrap();
            let n = cloud.len();
            let prior = build_prior(&cloud, 16, DEFAULT_TAU, DEFAULT_S).unwrap();
            let draws = 20000;
            let mut sum = vec![0.0; n];
            let mut sum_sq = vec![0.0; n];
            for k in 0..draws {
                let a = sample_prior(&prior, k as u64);
                for i in 0..n {
                    sum[i] += a[i];
                    sum_sq[i] += a[i] * a[i];
                }
            }
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for i in 0..n {
                let mean = sum[i] / draws as f64;
                let var = sum_sq[i] / draws as f64 - mean * mean;
                lo = lo.min(var);
                hi = hi.max(var);
            }
            println!("independent draws variance range [{lo:.3}, {hi:.3}]");
        }
        other => eprintln!("unknown probe '{other}'"),
    }
}
