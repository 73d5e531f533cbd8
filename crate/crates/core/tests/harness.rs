mod common;

use std::path::Path;

use common::{normal_cdf, Grid};
use proptest::prelude::*;
use r2d2_core::autodiff_nn::{Activation, LossKind, Tensor};
use r2d2_core::bayes_layers::{BayesNet, PriorConfig};
use r2d2_core::distributions::RngState;
use r2d2_core::error::Error;
use r2d2_core::harness::{
    auroc, aupr, classification_entropy, generate_scenario, max_probability, read_idx, read_idx_images,
    run_benchmark, run_ood, runs_csv, scenario_mean, shrinkage_density_dump, summary_csv, write_idx_images,
    write_idx_labels, write_scenario_csv, BenchConfig, DensityGrid, IdxImages, ModelKind, OodConfig, Scenario,
    ScenarioId,
};
use r2d2_core::inference::{PosteriorSamples, TrainConfig};

/// `P(s_pos > s_neg) + P(tie) / 2` over every pair.
fn brute_force_auroc(scores: &[f64], positive: &[bool]) -> f64 {
    let (mut num, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if positive[i] && !positive[j] {
                pairs += 1.0;
                num += if si > sj { 1.0 } else if si == sj { 0.5 } else { 0.0 };
            }
        }
    }
    num / pairs
}

#[test]
fn auroc_matches_pairwise_count_on_200_points() {
    let mut g = Grid::new(31);
    let positive: Vec<bool> = (0..200).map(|_| g.unit() < 0.4).collect();
    let scores: Vec<f64> = positive.iter().map(|&p| g.range(0.0, 1.0) + if p { 0.3 } else { 0.0 }).collect();
    let got = auroc(&scores, &positive).unwrap().unwrap();
    assert!((got - brute_force_auroc(&scores, &positive)).abs() < 1e-12);
}

#[test]
fn auroc_edge_cases() {
    assert_eq!(auroc(&[0.1, 0.2, 0.9, 0.8], &[false, false, true, true]).unwrap(), Some(1.0));
    assert_eq!(auroc(&[0.1, 0.2], &[true, true]).unwrap(), None);
    assert_eq!(auroc(&[0.5; 6], &[true, false, true, false, false, true]).unwrap(), Some(0.5));
    assert!(auroc(&[0.1, 0.2], &[true]).is_err());
}

#[test]
fn aupr_perfect_ranking_is_one_and_constant_scores_give_prevalence() {
    assert_eq!(aupr(&[0.9, 0.8, 0.1], &[true, true, false]).unwrap(), Some(1.0));
    let a = aupr(&[0.3; 8], &[true, false, false, false, true, false, false, false]).unwrap().unwrap();
    assert!((a - 0.25).abs() < 1e-12, "{a}");
    assert_eq!(aupr(&[0.3, 0.4], &[false, false]).unwrap(), None);
}

#[test]
fn entropy_and_max_probability_examples() {
    let uniform = vec![0.1; 10];
    assert!((classification_entropy(&uniform).unwrap() - 10f64.ln()).abs() < 1e-12);
    assert_eq!(classification_entropy(&[0.0, 1.0, 0.0]).unwrap(), 0.0);
    assert!((classification_entropy(&[0.5, 0.5, 0.0, 0.0]).unwrap() - 2f64.ln()).abs() < 1e-15);
    assert!(classification_entropy(&[0.5, 0.6]).is_err());
    assert_eq!(max_probability(&[0.7, 0.2, 0.1]).unwrap(), 0.7);
    assert_eq!(max_probability(&[0.25; 4]).unwrap(), 0.25);
}

proptest! {
    #[test]
    fn auroc_equals_pairwise_probability(
        raw in prop::collection::vec((0u8..12, any::<bool>()), 2..500),
    ) {
        // coarse integer scores force plenty of ties
        let scores: Vec<f64> = raw.iter().map(|(s, _)| *s as f64).collect();
        let positive: Vec<bool> = raw.iter().map(|(_, p)| *p).collect();
        let got = auroc(&scores, &positive).unwrap();
        if positive.iter().all(|&p| p) || positive.iter().all(|&p| !p) {
            prop_assert!(got.is_none());
        } else {
            let want = brute_force_auroc(&scores, &positive);
            prop_assert!((got.unwrap() - want).abs() < 1e-12);
        }
    }

    #[test]
    fn entropy_lies_between_zero_and_log_k(w in prop::collection::vec(0.0f64..10.0, 1..50)) {
        let total: f64 = w.iter().sum();
        prop_assume!(total > 1e-9);
        let p: Vec<f64> = w.iter().map(|v| v / total).collect();
        let h = classification_entropy(&p).unwrap();
        prop_assert!(h >= 0.0 && h <= (p.len() as f64).ln() + 1e-12);
    }
}

#[test]
fn idx_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let (img, lab) = (dir.path().join("t-images-idx3-ubyte"), dir.path().join("t-labels-idx1-ubyte"));
    let pixels: Vec<f64> = (0..32).map(|i| ((i * 37) % 256) as f64 / 255.0).collect();
    let t = Tensor::new(vec![2, 1, 4, 4], pixels.clone()).unwrap();
    write_idx_images(&img, &t).unwrap();
    write_idx_labels(&lab, &[3, 7]).unwrap();
    let (images, labels) = read_idx(&img, &lab).unwrap();
    assert_eq!((images.len(), images.rows, images.cols), (2, 4, 4));
    assert_eq!(images.images.data(), pixels.as_slice());
    assert_eq!(labels, vec![3, 7]);
    assert_eq!(std::fs::read(&img).unwrap()[..4], [0, 0, 8, 3]);
}

#[test]
fn truncated_idx_reports_the_offset() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x-images-idx3-ubyte");
    write_idx_images(&path, &Tensor::new(vec![2, 1, 4, 4], vec![0.5; 32]).unwrap()).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
    match read_idx_images(&path) {
        Err(Error::Parse { offset, .. }) => assert_eq!(offset, bytes.len() as u64 - 5),
        other => panic!("expected a parse error, got {other:?}"),
    }
    std::fs::write(&path, &bytes[..10]).unwrap();
    assert!(matches!(read_idx_images(&path), Err(Error::Parse { offset: 10, .. })));
    std::fs::write(&path, [0u8, 0, 8, 1, 0, 0, 0, 0]).unwrap();
    assert!(matches!(read_idx_images(&path), Err(Error::Parse { offset: 0, .. })));
}

#[test]
fn idx_label_count_mismatch_fails() {
    let dir = tempfile::tempdir().unwrap();
    let (img, lab) = (dir.path().join("images"), dir.path().join("labels"));
    write_idx_images(&img, &Tensor::new(vec![2, 1, 4, 4], vec![0.0; 32]).unwrap()).unwrap();
    write_idx_labels(&lab, &[1, 2, 3]).unwrap();
    assert!(matches!(read_idx(&img, &lab), Err(Error::Parse { .. })));
}

#[test]
fn noiseless_scenarios_follow_their_functions() {
    assert_eq!(scenario_mean(ScenarioId::S1Polynomial, &[2.0]), 8.0);
    assert_eq!(scenario_mean(ScenarioId::S2Lowdim, &[1.0; 4]), 2.0);
    let s = Scenario { noise_sd: 0.0, ..Scenario::new(ScenarioId::S1Polynomial, 100, 3) };
    let split = generate_scenario(&s, &mut RngState::new(3, 0)).unwrap();
    assert_eq!((split.train.len(), split.test.len()), (80, 20));
    for d in [&split.train, &split.test] {
        for (x, y) in d.x.data().iter().zip(d.y.data()) {
            assert!((-5.0..5.0).contains(x));
            assert_eq!(*y, x * x * x);
        }
    }
}

#[test]
fn scenario_one_noise_variance_is_nine() {
    let s = Scenario::new(ScenarioId::S1Polynomial, 10_000, 21);
    let split = generate_scenario(&s, &mut RngState::new(21, 0)).unwrap();
    let resid: Vec<f64> = [&split.train, &split.test]
        .iter()
        .flat_map(|d| d.x.data().iter().zip(d.y.data()).map(|(x, y)| y - x * x * x).collect::<Vec<_>>())
        .collect();
    let n = resid.len() as f64;
    let m = resid.iter().sum::<f64>() / n;
    let var = resid.iter().map(|r| (r - m) * (r - m)).sum::<f64>() / (n - 1.0);
    assert!((var - 9.0).abs() < 0.05 * 9.0, "{var}");
}

#[test]
fn scenarios_are_seed_deterministic() {
    for id in [ScenarioId::S1Polynomial, ScenarioId::S2Lowdim, ScenarioId::S3Highdim] {
        let s = Scenario::new(id, 200, 4);
        let a = generate_scenario(&s, &mut RngState::new(4, 0)).unwrap();
        let b = generate_scenario(&s, &mut RngState::new(4, 0)).unwrap();
        assert_eq!(a, b);
        let (mut ca, mut cb) = (Vec::new(), Vec::new());
        write_scenario_csv(&a, &mut ca).unwrap();
        write_scenario_csv(&b, &mut cb).unwrap();
        assert_eq!(ca, cb);
        let c = generate_scenario(&s, &mut RngState::new(5, 0)).unwrap();
        assert_ne!(a.train.y, c.train.y);
        assert_eq!(a.train.x.shape()[1], id.input_dim());
    }
}

fn small_net() -> BayesNet {
    BayesNet::mlp(3, 4, 1, 1, Activation::Relu, PriorConfig::default(), &RngState::new(1, 1)).unwrap()
}

#[test]
fn density_dump_covers_whole_layer() {
    let net = small_net();
    let draws = PosteriorSamples::from_variational(&net, 100, &RngState::new(2, 0)).unwrap();
    let size = net.layers[0].weights.mu.len();
    let dumps = shrinkage_density_dump(&net, &draws, size, &DensityGrid::default()).unwrap();
    let mut ids: Vec<usize> = dumps.iter().map(|d| d.weight_id).collect();
    ids.sort_unstable();
    assert_eq!(ids, (0..size).collect::<Vec<_>>());
    assert!(dumps.iter().all(|d| d.samples.len() == 100 && d.density.len() == 201));
    assert!(shrinkage_density_dump(&net, &draws, size + 1, &DensityGrid::default()).is_err());
}

#[test]
fn density_dump_ranks_by_mean_magnitude() {
    let mut net = small_net();
    let mu = net.layers[0].weights.mu.data_mut();
    mu.iter_mut().enumerate().for_each(|(i, m)| *m = 1.0 + i as f64);
    mu[7] = -0.01;
    mu[2] = 0.02;
    let draws = PosteriorSamples::from_variational(&net, 20, &RngState::new(3, 0)).unwrap();
    let dumps = shrinkage_density_dump(&net, &draws, 2, &DensityGrid::default()).unwrap();
    assert_eq!((dumps[0].weight_id, dumps[1].weight_id), (7, 2));
    assert_eq!(dumps[0].mean, -0.01);
}

#[test]
fn clamp_floor_concentrates_density_at_the_mean() {
    let mut net = small_net();
    let layer = &mut net.layers[0];
    layer.weights.mu.data_mut().iter_mut().enumerate().for_each(|(i, m)| *m = 0.1 * i as f64 - 0.3);
    let ss = layer.shrinkage.as_mut().unwrap();
    ss.psi.data_mut().iter_mut().for_each(|p| *p = 1e-12);
    ss.omega = 1.0;
    let draws = PosteriorSamples::from_variational(&net, 100, &RngState::new(4, 0)).unwrap();
    let dumps = shrinkage_density_dump(&net, &draws, 3, &DensityGrid::default()).unwrap();
    let a = 1e-4;
    for d in &dumps {
        assert!(d.samples.iter().all(|s| (s - d.mean).abs() < a));
        let h = d.bandwidth;
        let mass = d.samples.iter().map(|s| normal_cdf((d.mean + a - s) / h) - normal_cdf((d.mean - a - s) / h)).sum::<f64>()
            / d.samples.len() as f64;
        assert!(mass > 0.999, "weight {}: mass {mass}", d.weight_id);
    }
}

fn bench_config(models: &[&str], depths: &[usize], seeds: &[u64], n: usize) -> BenchConfig {
    let text = format!(
        "version = 1\n[scenario]\nid = \"s1_polynomial\"\nn = {n}\n[grid]\nmodels = {models:?}\ndepths = {depths:?}\nseeds = {seeds:?}\n[train]\nepochs = 20\n[output]\ndensity_k = 1\n",
    );
    BenchConfig::from_toml(&text).unwrap()
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap()
}

#[test]
fn benchmark_bookkeeping_and_rerun_bytes() {
    let cfg = bench_config(&["r2d2-svgi", "gauss-svi"], &[0], &[0, 1, 2], 500);
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let report = run_benchmark(&cfg, Some(d1.path())).unwrap();
    assert_eq!(report.runs.len(), 6);
    assert_eq!(report.summary.len(), 2);
    assert!(report.runs.iter().all(|r| r.error.is_none() && r.metrics.mse.unwrap().is_finite()));
    assert_eq!(report.summary[0].model, "gaussian-svi");
    assert_eq!(report.summary[1].model, "r2d2-svgi");
    let summary = String::from_utf8(read(d1.path(), "summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
    assert_eq!(std::fs::read_dir(d1.path().join("runs")).unwrap().count(), 6);

    let again = run_benchmark(&cfg, Some(d2.path())).unwrap();
    for name in ["runs.csv", "summary.csv", "runs.jsonl"] {
        assert_eq!(read(d1.path(), name), read(d2.path(), name), "{name}");
    }
    assert_eq!(runs_csv(&report.runs).unwrap(), runs_csv(&again.runs).unwrap());
    assert_eq!(summary_csv(&report.summary).unwrap(), read(d1.path(), "summary.csv"));
}

#[test]
fn failed_runs_are_recorded_and_the_grid_continues() {
    let mut cfg = bench_config(&["r2d2-svgi", "r2d2-sgld"], &[1], &[0], 200);
    cfg.sgld.step_size = 50.0;
    let report = run_benchmark(&cfg, None).unwrap();
    assert_eq!(report.runs.len(), 2);
    let sgld = report.runs.iter().find(|r| r.model == "r2d2-sgld").unwrap();
    assert!(sgld.error.as_deref().unwrap().contains("diverged"), "{:?}", sgld.error);
    let svgi = report.runs.iter().find(|r| r.model == "r2d2-svgi").unwrap();
    assert!(svgi.error.is_none());
    let row = report.summary.iter().find(|r| r.model == "r2d2-sgld").unwrap();
    assert_eq!((row.runs, row.failed, row.mse_mean), (1, 1, None));
    let csv = String::from_utf8(summary_csv(&report.summary).unwrap()).unwrap();
    assert!(csv.contains("r2d2-sgld,1,1,1,n/a"), "{csv}");
}

#[test]
fn config_rejects_unknown_keys_and_versions() {
    let ok = "version = 1\n[scenario]\nid = \"s2_lowdim\"\nn = 100\n[grid]\nmodels = [\"r2d2-svgi\"]\ndepths = [1]\nseeds = [0]\n";
    let cfg = BenchConfig::from_toml(ok).unwrap();
    assert_eq!(BenchConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(), cfg);
    assert!(BenchConfig::from_toml(&ok.replace("version = 1", "version = 2")).is_err());
    assert!(BenchConfig::from_toml(&format!("{ok}[train]\nlearning_rate = 0.1\n")).is_err());
    assert!(BenchConfig::from_toml(&format!("{ok}[prior]\na_pi = 0.5\nbogus = 1\n")).is_err());
    assert!(BenchConfig::from_toml(&ok.replace("r2d2-svgi", "gaussian-svgi")).is_err());
    assert!(BenchConfig::from_toml(&ok.replace("n = 100", "n = 5")).is_err());

    let shipped = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/s1_depth.toml");
    let cfg = BenchConfig::load(&shipped).unwrap();
    assert_eq!(cfg.runs().len(), 20);
    assert_eq!(cfg.grid.models, vec![ModelKind::R2D2_SVGI, ModelKind::GAUSSIAN_SVI]);
}

#[test]
fn scenario_two_depth_two_ordering() {
    let mut cfg = bench_config(&["r2d2-svgi", "gaussian-svi"], &[2], &[0, 1, 2, 3, 4], 10_000);
    cfg.scenario.id = ScenarioId::S2Lowdim;
    cfg.train.epochs = 100;
    let report = run_benchmark(&cfg, None).unwrap();
    let mean = |m: &str| report.summary.iter().find(|r| r.model == m).unwrap().mse_mean.unwrap();
    let (r2d2, gauss) = (mean("r2d2-svgi"), mean("gaussian-svi"));
    assert!(r2d2 < gauss, "r2d2 {r2d2} vs gaussian {gauss}");
}

/// Ten classes of noisy stripes; the out-of-distribution set is blobs of
/// uniform noise.
fn synthetic_images(n: usize, stripes: bool, seed: u64) -> (IdxImages, Vec<usize>) {
    let mut rng = RngState::new(seed, 0);
    let mut data = Vec::with_capacity(n * 784);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % 10;
        for r in 0..28 {
            for _ in 0..28 {
                let base = if stripes && (r / 3) % 10 == class { 0.9 } else { 0.05 };
                let v = if stripes { base + 0.05 * rng.uniform() } else { rng.uniform() };
                data.push(v);
            }
        }
        labels.push(class);
    }
    (IdxImages { images: Tensor::new(vec![n, 1, 28, 28], data).unwrap(), rows: 28, cols: 28 }, labels)
}

#[test]
fn ood_pipeline_smoke() {
    let (train, labels) = synthetic_images(300, true, 1);
    let (ood, _) = synthetic_images(50, false, 2);
    let cfg = OodConfig {
        n_train: 250,
        n_test: 50,
        n_ood: 50,
        train: TrainConfig { epochs: 3, batch_size: 25, mc_eval_samples: 5, loss: LossKind::CrossEntropy, ..TrainConfig::default() },
        ..OodConfig::default()
    };
    let res = run_ood(&cfg, &train, &labels, &ood).unwrap();
    let m = res.metrics;
    for v in [m.accuracy, m.macro_f1, m.auroc, m.aupr] {
        assert!((0.0..=1.0).contains(&v.unwrap()));
    }
    assert!(m.mean_entropy_in.unwrap() <= 10f64.ln() + 1e-12);
    assert_eq!(res.epochs_run, 3);
    assert!(run_ood(&OodConfig { n_train: 290, ..cfg }, &train, &labels, &ood).is_err());
}
