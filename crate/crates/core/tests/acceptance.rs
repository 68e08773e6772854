//! Acceptance suite. Each test prints one `[PASS]` / `[FAIL]` line and
//! then asserts. Run with `cargo test -p cpaudit-core --release --test
//! acceptance -- --nocapture --test-threads=1` to see the lines in order.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cpaudit_core::conformal::{calibrate, conformal_quantile, prediction_sets, Threshold};
use cpaudit_core::harness::synthetic::{run_suite, SynthModel};
use cpaudit_core::harness::{
    aggregate, render_table, summary_csv, ExperimentConfig, MetricsReport,
};
use cpaudit_core::ingest::{read_predictions, write_predictions, Split};
use cpaudit_core::metrics::{
    auc_binary, auc_weighted_ovo, avg_set_size, coverage_rate, expected_calibration_error,
    size_stratified_coverage,
};
use cpaudit_core::synth::{default_manifest, distort, generate, oracle_posterior, Skew, SynthSpec};
use cpaudit_core::{run_cell, CellConfig, CellId, PredictionSet, ProbabilityMatrix};

fn verdict(name: &str, ok: bool, detail: String) {
    println!("[{}] {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "{name}: {detail}");
}

fn random_rows(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let raw: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 1e-3).collect();
            let s: f64 = raw.iter().sum();
            raw.iter().map(|v| v / s).collect()
        })
        .collect()
}

fn set(members: &[usize], k: usize) -> PredictionSet {
    PredictionSet::new(members.to_vec(), k).unwrap()
}

/// Oracle-model test coverage for seeds `0..100` on the k=4, sep=1,
/// noise=0.2 spec with 500 calibration and 2000 test rows.
fn coverage_runs() -> Vec<f64> {
    let cal: Vec<usize> = (0..500).collect();
    let test: Vec<usize> = (500..2500).collect();
    (0..100u64)
        .map(|seed| {
            let spec = SynthSpec::uniform("cov", 4, 6, 2500, 1.0, 0.2, Skew::None, seed);
            let ds = generate(&spec).unwrap();
            let p = oracle_posterior(&spec, ds.latent_features()).unwrap();
            let id = CellId::new("oracle", "cov", seed);
            run_cell(&id, &p, &ds.labels, &cal, &test, &CellConfig::default())
                .unwrap()
                .coverage_rate
        })
        .collect()
}

#[test]
fn marginal_coverage_guarantee() {
    let start = Instant::now();
    let coverages = coverage_runs();
    let elapsed = start.elapsed();
    let mean = coverages.iter().sum::<f64>() / coverages.len() as f64;
    let inside = coverages
        .iter()
        .filter(|c| (0.88..=0.92).contains(*c))
        .count();
    let ok = (0.90..=0.912).contains(&mean) && inside >= 95 && elapsed < Duration::from_secs(60);
    verdict(
        "marginal coverage guarantee",
        ok,
        format!(
            "mean {mean:.5} (need [0.900, 0.912]), {inside}/100 seeds in [0.88, 0.92] (need >= 95), {elapsed:.2?}"
        ),
    );
}

/// Supplementary: the expected coverage of split conformal with n=500 is
/// ceil(501 * 0.9) / 501 for continuous scores. The 100-seed mean must sit
/// within three standard errors of it.
#[test]
fn marginal_coverage_expectation() {
    let coverages = coverage_runs();
    let m = coverages.len() as f64;
    let mean = coverages.iter().sum::<f64>() / m;
    let var = coverages.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (m - 1.0);
    let se = (var / m).sqrt();
    let expected = 451.0 / 501.0;
    let z = (mean - expected) / se;
    verdict(
        "marginal coverage expectation (supplementary)",
        z.abs() <= 3.0,
        format!("mean {mean:.5}, expected {expected:.5}, standard error {se:.5}, z = {z:.2}"),
    );
}

#[test]
fn quantile_corner_cases() {
    let nine: Vec<f64> = (1..=9).map(|i| i as f64 / 10.0).collect();
    let a = conformal_quantile(&nine, 0.1).unwrap().threshold;
    let b = conformal_quantile(&[0.1, 0.2, 0.3, 0.4], 0.1)
        .unwrap()
        .threshold;
    let c = conformal_quantile(&[0.5, 0.5, 0.5], 0.5).unwrap().threshold;
    let ok = a == Threshold::Value(0.9) && b == Threshold::FullSet && c == Threshold::Value(0.5);
    verdict(
        "quantile corner cases",
        ok,
        format!("n=9 -> {a:?}, n=4 -> {b:?}, ties -> {c:?}"),
    );
}

#[test]
fn set_nesting() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut violations = 0;
    let mut rows_checked = 0;
    for k in [3, 5, 10] {
        let cal_rows = random_rows(&mut rng, 300, k);
        let cal_labels: Vec<usize> = (0..300).map(|_| rng.random_range(0..k)).collect();
        let cal = ProbabilityMatrix::from_rows(&cal_rows).unwrap();
        let n = if k == 10 { 334 } else { 333 };
        let test = ProbabilityMatrix::from_rows(&random_rows(&mut rng, n, k)).unwrap();
        let per_alpha: Vec<Vec<PredictionSet>> = [0.01, 0.05, 0.1, 0.2, 0.5]
            .iter()
            .map(|&a| prediction_sets(&test, &calibrate(&cal, &cal_labels, a).unwrap()))
            .collect();
        for i in 0..n {
            rows_checked += 1;
            if per_alpha
                .windows(2)
                .any(|w| !w[0][i].is_superset_of(&w[1][i]))
            {
                violations += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    verdict(
        "set nesting",
        violations == 0 && rows_checked == 1000 && elapsed < Duration::from_secs(5),
        format!("{violations} violations over {rows_checked} rows, {elapsed:.2?}"),
    );
}

fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut total = 0.0;
    let mut pairs = 0.0;
    for i in (0..labels.len()).filter(|&i| labels[i]) {
        for j in (0..labels.len()).filter(|&j| !labels[j]) {
            pairs += 1.0;
            total += match scores[i].partial_cmp(&scores[j]).unwrap() {
                std::cmp::Ordering::Greater => 1.0,
                std::cmp::Ordering::Equal => 0.5,
                std::cmp::Ordering::Less => 0.0,
            };
        }
    }
    total / pairs
}

#[test]
fn metric_oracles() {
    let mut failures = Vec::new();

    // CR / SS hand fixtures
    let sets = vec![set(&[0], 3), set(&[0], 3), set(&[0, 1], 3), set(&[1, 2], 3)];
    let labels = [0, 1, 1, 2];
    if coverage_rate(&sets, &labels).unwrap() != 0.75 {
        failures.push("CR 3/4".to_string());
    }
    if avg_set_size(&sets).unwrap() != 1.5 {
        failures.push("SS [1,1,2,2]".to_string());
    }
    let ssc = size_stratified_coverage(&sets, &labels, 1).unwrap();
    if ssc.strata[&1].coverage != 0.5 || ssc.strata[&2].coverage != 1.0 || ssc.sscs != 0.5 {
        failures.push("SSC hand fixture".to_string());
    }

    // gray box: 100 singletons covering 60%, 300 five-sets covering 100%
    let mut gray_sets = Vec::new();
    let mut gray_labels = Vec::new();
    for i in 0..100 {
        gray_sets.push(set(&[0], 5));
        gray_labels.push(if i < 60 { 0 } else { 1 });
    }
    for i in 0..300 {
        gray_sets.push(PredictionSet::full(5));
        gray_labels.push(i % 5);
    }
    let gray = size_stratified_coverage(&gray_sets, &gray_labels, 10).unwrap();
    let gray_cr = coverage_rate(&gray_sets, &gray_labels).unwrap();
    if (gray.sscs - 0.60).abs() > 1e-12 || (gray_cr - 0.90).abs() > 1e-12 {
        failures.push(format!("gray box SSCS {} CR {}", gray.sscs, gray_cr));
    }

    // AUC vs brute force
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worst: f64 = 0.0;
    for case in 0..200 {
        let n = rng.random_range(2..=100);
        let mut l: Vec<bool> = (0..n).map(|_| rng.random()).collect();
        l[0] = true;
        l[1] = false;
        let s: Vec<f64> = if case % 2 == 0 {
            (0..n).map(|_| rng.random()).collect()
        } else {
            (0..n).map(|_| rng.random_range(0..5) as f64).collect()
        };
        worst = worst.max((auc_binary(&s, &l).unwrap() - brute_auc(&s, &l)).abs());
    }
    if worst > 1e-12 {
        failures.push(format!("auc_binary max error {worst:e}"));
    }

    // OvO reduction at k = 2
    let mut reduction_mismatches = 0;
    for _ in 0..200 {
        let n = rng.random_range(2..=100);
        let p1: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let rows: Vec<[f64; 2]> = p1.iter().map(|&p| [1.0 - p, p]).collect();
        let mut y: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
        y[0] = 0;
        y[1] = 1;
        let probs = ProbabilityMatrix::from_rows(&rows).unwrap();
        let pos: Vec<bool> = y.iter().map(|&c| c == 1).collect();
        if auc_weighted_ovo(&probs, &y).unwrap() != auc_binary(&p1, &pos).unwrap() {
            reduction_mismatches += 1;
        }
    }
    if reduction_mismatches > 0 {
        failures.push(format!("{reduction_mismatches} k=2 reduction mismatches"));
    }

    verdict(
        "metric oracles",
        failures.is_empty(),
        if failures.is_empty() {
            format!(
                "hand fixtures exact, gray box SSCS {:.2} / CR {:.2}, auc max err {worst:e}, k=2 reduction exact",
                gray.sscs, gray_cr
            )
        } else {
            failures.join("; ")
        },
    );
}

#[test]
fn decomposition_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(500);
    let mut count_mismatch = 0;
    let mut worst: f64 = 0.0;
    for _ in 0..500 {
        let k = rng.random_range(2..=10);
        let n = rng.random_range(1..=300);
        let probs = ProbabilityMatrix::from_rows(&random_rows(&mut rng, n, k)).unwrap();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let cal_n = rng.random_range(1..=50);
        let cal_probs = ProbabilityMatrix::from_rows(&random_rows(&mut rng, cal_n, k)).unwrap();
        let cal_labels: Vec<usize> = (0..cal_n).map(|_| rng.random_range(0..k)).collect();
        let alpha = rng.random_range(0.01..0.6);
        let sets = prediction_sets(&probs, &calibrate(&cal_probs, &cal_labels, alpha).unwrap());
        let cr = coverage_rate(&sets, &labels).unwrap();
        let ssc = size_stratified_coverage(&sets, &labels, 1).unwrap();
        let hits: usize = ssc.strata.values().map(|s| s.hits).sum();
        let covered = sets
            .iter()
            .zip(&labels)
            .filter(|(s, &y)| s.contains(y))
            .count();
        if hits != covered || ssc.strata.values().map(|s| s.count).sum::<usize>() != n {
            count_mismatch += 1;
        }
        let recomposed: f64 = ssc
            .strata
            .values()
            .map(|s| s.count as f64 / n as f64 * s.coverage)
            .sum();
        worst = worst.max((recomposed - cr).abs());
    }
    verdict(
        "decomposition invariant",
        count_mismatch == 0 && worst <= 1e-12,
        format!(
            "500 fixtures: {count_mismatch} hit-count mismatches, max |CR - sum_k (|G_k|/n) SSC(k)| = {worst:e}"
        ),
    );
}

#[test]
fn tradeoff_reproduction() {
    let start = Instant::now();
    let config = ExperimentConfig {
        seeds: (0..50).collect(),
        ..Default::default()
    };
    let specs = default_manifest();
    let cells = run_suite(&specs, &SynthModel::standard(0.5), &config).unwrap();
    let report = aggregate(&cells, &config).unwrap();
    let elapsed = start.elapsed();

    let distorted = report.model("oracle-t0.5").unwrap();
    let lda = report.model("lda").unwrap();
    let per_seed_mean = |model: &str, seed: u64| {
        let v: Vec<f64> = cells
            .iter()
            .filter(|c| c.model == model && c.seed == seed)
            .map(|c| c.sscs)
            .collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let favours_oracle = config
        .seeds
        .iter()
        .filter(|&&s| per_seed_mean("oracle", s) > per_seed_mean("oracle-t0.5", s))
        .count();

    let ok = specs.len() == 20
        && distorted.mean.auc >= lda.mean.auc
        && distorted.mean.sscs < lda.mean.sscs
        && favours_oracle >= 45
        && elapsed < Duration::from_secs(300);
    verdict(
        "trade-off reproduction",
        ok,
        format!(
            "AUC distorted {:.4} vs lda {:.4}; SSCS distorted {:.4} vs lda {:.4}; paired seeds favouring oracle {favours_oracle}/50; {elapsed:.2?}",
            distorted.mean.auc, lda.mean.auc, distorted.mean.sscs, lda.mean.sscs
        ),
    );
}

#[test]
fn oracle_calibration() {
    let mut worst: f64 = 0.0;
    let mut worst_id = String::new();
    for spec in default_manifest() {
        let mut big = spec.clone();
        big.n = 20_000;
        let ds = generate(&big).unwrap();
        let p = oracle_posterior(&big, ds.latent_features()).unwrap();
        let ece = expected_calibration_error(&p, &ds.labels, 15).unwrap();
        if ece > worst {
            worst = ece;
            worst_id = spec.id.clone();
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let probs = ProbabilityMatrix::from_rows(&random_rows(&mut rng, 1000, 7)).unwrap();
    let same = distort(&probs, 1.0).unwrap();
    let identity_err = probs
        .as_slice()
        .iter()
        .zip(same.as_slice())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    verdict(
        "oracle calibration",
        worst < 0.03 && identity_err <= 1e-12,
        format!("max ECE {worst:.4} ({worst_id}) over 20 specs at n=20000; distort(T=1) max err {identity_err:e}"),
    );
}

fn serialize_run(config: &ExperimentConfig) -> (String, String) {
    let specs: Vec<SynthSpec> = default_manifest().into_iter().step_by(4).collect();
    let cells: Vec<MetricsReport> =
        run_suite(&specs, &SynthModel::standard(config.temperature), config).unwrap();
    let report = aggregate(&cells, config).unwrap();
    (
        serde_json::to_string_pretty(&cells).unwrap()
            + &serde_json::to_string_pretty(&report).unwrap(),
        summary_csv(&report),
    )
}

#[test]
fn determinism_and_round_trip() {
    let config = ExperimentConfig {
        seeds: vec![0, 1, 2],
        ..Default::default()
    };
    let first = serialize_run(&config);
    let second = serialize_run(&config);
    let deterministic = first == second;

    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst: f64 = 0.0;
    let mut labels_ok = true;
    for (n, k) in [(10_000, 10), (500, 2), (50, 4)] {
        let probs = ProbabilityMatrix::from_rows(&random_rows(&mut rng, n, k)).unwrap();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let splits: Vec<Split> = (0..n)
            .map(|i| if i % 5 == 0 { Split::Cal } else { Split::Test })
            .collect();
        let path = dir.path().join(format!("rt{n}x{k}.csv"));
        write_predictions(&probs, &labels, Some(&splits), &path).unwrap();
        let back = read_predictions(&path).unwrap();
        labels_ok &= back.labels == labels && back.splits.as_deref() == Some(splits.as_slice());
        for (a, b) in back.probs.as_slice().iter().zip(probs.as_slice()) {
            worst = worst.max((a - b).abs());
        }
    }
    verdict(
        "determinism and round-trip",
        deterministic && labels_ok && worst <= 1e-12,
        format!(
            "repeat run byte-identical: {deterministic}; ingest max abs error {worst:e}, labels/splits preserved: {labels_ok}"
        ),
    );
}

fn fixture_cell(dataset: &str, auc: f64, sscs: f64) -> MetricsReport {
    MetricsReport {
        model: "tabicl".into(),
        dataset: dataset.into(),
        seed: 0,
        alpha: 0.1,
        n_cal: 100,
        n_test: 300,
        q: Some(0.8),
        coverage_rate: 0.9,
        avg_set_size: 1.4,
        ssc_by_stratum: Default::default(),
        sscs,
        sscs_raw: sscs,
        sscs_degenerate: false,
        min_stratum_count: 10,
        ece: 0.02,
        ece_bins: 15,
        auc,
    }
}

#[test]
fn summary_table_rendering() {
    let config = ExperimentConfig {
        seeds: vec![0],
        ..Default::default()
    };
    let cells = vec![
        fixture_cell("a", 0.871, 0.418),
        fixture_cell("b", 0.909, 0.570),
    ];
    let table = render_table(&aggregate(&cells, &config).unwrap());
    let row = "| tabicl | 0.890 ± 0.019 | 0.494 ± 0.076 |";
    verdict(
        "summary table rendering",
        table.lines().any(|l| l == row),
        format!("expected row `{row}` in\n{table}"),
    );
}
