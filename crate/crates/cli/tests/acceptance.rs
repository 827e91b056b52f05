//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails. Federation and attack criteria drive the
//! release-style `grid --repro` presets through the binary; the oracle
//! criteria call the library directly.

#[path = "../../core/tests/oracles/mod.rs"]
mod oracles;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use fedsel_core::fl::{
    fedavg_aggregate, gradient, ifca_round, local_train, model_init, objective, train_clients, LocalSpec,
    ModelParams, Regularizer,
};
use fedsel_core::data::{ClientDataset, Sample};
use fedsel_core::privacy::sample_laplace;
use fedsel_core::seed;
use fedsel_core::similarity::{emd, ClusterHistogram, ClusterModel};
use rand::Rng;

const SEED: &str = "seed=1";

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn grid(repro: &str, out: &Path, extra: &[&str]) -> Result<Duration, String> {
    let start = Instant::now();
    let mut args = vec!["grid", "--repro", repro, "--set", SEED, "-o", out.to_str().unwrap()];
    args.extend(extra);
    let o = Command::new(env!("CARGO_BIN_EXE_fedsel"))
        .args(&args)
        .env("RUST_LOG", "error")
        .output()
        .map_err(|e| e.to_string())?;
    if !o.status.success() {
        return Err(format!("grid --repro {repro} failed: {}", String::from_utf8_lossy(&o.stderr)));
    }
    Ok(start.elapsed())
}

/// Rows of a CSV without quoted fields, keyed by header name.
fn rows(path: &Path) -> Vec<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<String> = lines.next().unwrap().split(',').map(String::from).collect();
    lines
        .map(|l| header.iter().cloned().zip(l.split(',').map(String::from)).collect())
        .collect()
}

fn num(row: &BTreeMap<String, String>, key: &str) -> f64 {
    row[key].parse().unwrap_or_else(|_| panic!("{key} = {}", row[key]))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

// ---------------------------------------------------------------------------

fn emd_trend(out: &Path, elapsed: Duration) -> Verdict {
    let table = rows(&out.join("grid.csv"));
    let curve = |eps: &str| -> (Vec<f64>, Vec<f64>) {
        let mut pts: Vec<(f64, f64)> = table
            .iter()
            .filter(|r| r["epsilon"] == eps)
            .map(|r| (num(r, "rate"), num(r, "emd")))
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        pts.into_iter().unzip()
    };
    let (r, clean) = curve("inf");
    let (r10, eps10) = curve("10");
    let (_, eps01) = curve("0.1");
    let range = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max) - v.iter().copied().fold(f64::INFINITY, f64::min);
    let increasing = clean.windows(2).all(|w| w[0] < w[1]);
    let rho_clean = oracles::spearman(&r, &clean);
    let rho_10 = oracles::spearman(&r10, &eps10);
    let shrink = 1.0 - range(&eps01) / range(&clean);
    verdict(
        increasing && rho_clean >= 0.9 && rho_10 >= 0.8 && shrink >= 0.5 && elapsed.as_secs_f64() < 60.0,
        format!(
            "noiseless strictly increasing: {increasing}, rho(noiseless) = {rho_clean:.3} (>= 0.9), rho(eps 10) = {rho_10:.3} (>= 0.8), \
             eps 0.1 range shrink = {:.1}% (>= 50%), runtime {:.1}s (< 60s)",
            shrink * 100.0,
            elapsed.as_secs_f64()
        ),
    )
}

fn mia_calibration(dir: &Path) -> Verdict {
    let out = dir.join("fig5");
    let elapsed = match grid("fig5", &out, &[]) {
        Ok(t) => t,
        Err(e) => return verdict(false, e),
    };
    let table = rows(&out.join("grid.csv"));
    let mut ok = elapsed.as_secs_f64() < 120.0;
    let mut parts = Vec::new();
    for r in &table {
        let eps = r["epsilon"].as_str();
        let power = num(r, "power_mean");
        let fpr = num(r, "fpr");
        let e: f64 = eps.parse().unwrap_or(f64::INFINITY);
        if e <= 1.0 {
            ok &= power <= 0.15;
        }
        if e >= 1000.0 {
            ok &= power >= 0.9;
        }
        ok &= (fpr - 0.05).abs() <= 0.03;
        ok &= num(r, "rounds") == 50.0;
        parts.push(format!("eps {eps}: power {power:.3}, fpr {fpr:.3}"));
    }
    ok &= table.len() == 5;
    verdict(
        ok,
        format!(
            "{} (power <= 0.15 at eps <= 1, >= 0.9 at eps 1000, |fpr - 0.05| <= 0.03), runtime {:.1}s (< 120s)",
            parts.join("; "),
            elapsed.as_secs_f64()
        ),
    )
}

const ALGORITHMS: [&str; 3] = ["fedavg", "fedprox", "feddyn"];

fn cell_means(path: &Path, column: &str) -> BTreeMap<(String, String), Vec<f64>> {
    let mut out: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for r in rows(path).into_iter().filter(|r| !r[column].is_empty()) {
        out.entry((r["algorithm"].clone(), r["cell"].clone())).or_default().push(num(&r, column));
    }
    out
}

fn similar_beats_dissimilar(dir: &Path) -> Verdict {
    let out = dir.join("tableII");
    let elapsed = match grid("tableII", &out, &[]) {
        Ok(t) => t,
        Err(e) => return verdict(false, e),
    };
    let acc = cell_means(&out.join("grid.csv"), "accuracy");
    let m = |a: &str, c: &str| mean(&acc[&(a.to_string(), c.to_string())]);
    let mut ok = elapsed.as_secs_f64() < 600.0;
    let mut parts = Vec::new();
    for a in ALGORITHMS {
        let (s, l, d) = (m(a, "similar"), m(a, "local"), m(a, "dissimilar"));
        ok &= s - l >= 0.03 && s - d >= 0.03;
        parts.push(format!("{a}: similar {s:.3} local {l:.3} dissimilar {d:.3}"));
    }
    verdict(
        ok,
        format!("{} (margin >= 0.03 over both, 3 seeds), runtime {:.1}s (< 600s)", parts.join("; "), elapsed.as_secs_f64()),
    )
}

fn selection_and_incremental(dir: &Path) -> (Verdict, Verdict) {
    let out = dir.join("tableIII");
    if let Err(e) = grid("tableIII", &out, &[]) {
        return (verdict(false, e.clone()), verdict(false, e));
    }
    let path = out.join("grid.csv");
    let acc = cell_means(&path, "accuracy");
    let stops = cell_means(&path, "stop_round");
    let n_peers = 11.0;
    let m = |a: &str, c: &str| mean(&acc[&(a.to_string(), c.to_string())]);

    let mut ok4 = true;
    let mut lenient_wins = 0;
    let mut parts4 = Vec::new();
    let mut stopped = 0;
    let mut ok5 = true;
    let mut parts5 = Vec::new();
    for a in ALGORITHMS {
        let (strict, lenient, all, inc) = (m(a, "strict"), m(a, "lenient"), m(a, "all"), m(a, "incremental"));
        ok4 &= strict >= all - 0.01 && lenient >= all - 0.01;
        lenient_wins += usize::from(lenient >= all);
        parts4.push(format!("{a}: strict {strict:.3} lenient {lenient:.3} all {all:.3}"));

        let mean_stop = mean(&stops[&(a.to_string(), "incremental".to_string())]);
        stopped += usize::from(mean_stop < n_peers);
        ok5 &= inc >= all;
        parts5.push(format!("{a}: incremental {inc:.3} vs all {all:.3}, mean stop round {mean_stop:.2} of 11"));
    }
    ok4 &= lenient_wins >= 2;
    ok5 &= stopped >= 2;
    (
        verdict(ok4, format!("{}; lenient >= all in {lenient_wins}/3 (need 2)", parts4.join("; "))),
        verdict(ok5, format!("{}; stopped early in {stopped}/3 (need 2)", parts5.join("; "))),
    )
}

// ---------------------------------------------------------------------------

fn toy_client(id: &str, n: usize, flip: bool, seed_value: u64) -> ClientDataset {
    let mut rng = seed::rng(seed_value);
    let train: Vec<Sample> = (0..n)
        .map(|i| {
            let label = i % 2;
            let c = if label == 0 { -1.0 } else { 1.0 };
            Sample {
                pixels: (0..4).map(|_| c + rng.gen_range(-0.8..0.8)).collect(),
                label: if flip { 1 - label } else { label },
            }
        })
        .collect();
    ClientDataset {
        client_id: id.into(),
        provenance: vec![(0, n)],
        train_index: (0..n).collect(),
        test_index: Vec::new(),
        train,
        test: Vec::new(),
    }
}

fn aggregation_oracles() -> Verdict {
    let mut rng = seed::rng(41);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let clients = rng.gen_range(1..=8);
        let len = rng.gen_range(1..=40);
        let scale = 10f64.powi(rng.gen_range(-3..=3));
        let updates: Vec<(Vec<f64>, usize)> = (0..clients)
            .map(|_| ((0..len + 1).map(|_| rng.gen_range(-scale..scale)).collect(), rng.gen_range(1..=1000)))
            .collect();
        let exact = oracles::weighted_mean_exact(&updates);
        let params: Vec<(ModelParams, usize)> = updates
            .iter()
            .map(|(w, n)| {
                let mut p = model_init(&[len, 1], 0).unwrap();
                p.values = w.clone();
                (p, *n)
            })
            .collect();
        let got = fedavg_aggregate(&params).unwrap();
        for (i, (g, e)) in got.values.iter().zip(&exact).enumerate() {
            let magnitude = updates.iter().map(|(w, _)| w[i].abs()).fold(e.abs(), f64::max);
            worst = worst.max((g - e).abs() / magnitude);
        }
    }

    let spec = LocalSpec { learning_rate: 0.2, batch_size: 8, epochs_per_round: 2, seed: 9 };
    let init = model_init(&[4, 6, 2], 3).unwrap();
    let clients: Vec<_> = (0..3).map(|k| toy_client(&format!("c{k}"), 30 + 10 * k, k == 2, k as u64)).collect();
    let data = &clients[0].train;
    let plain = local_train(&init, data, &spec, Regularizer::None).unwrap();
    let prox = local_train(&init, data, &spec, Regularizer::Proximal { mu: 0.0, anchor: &init.values }).unwrap();
    let zeros = vec![0.0; init.len()];
    let dyn_ = local_train(&init, data, &spec, Regularizer::Dynamic { h: &zeros, lambda: 0.0 }).unwrap();
    let (ifca, _) = ifca_round(std::slice::from_ref(&init), &clients, &spec, 1).unwrap();
    let fedavg = fedavg_aggregate(&train_clients(&init, &clients, &spec, 1, |_| Regularizer::None).unwrap()).unwrap();
    let bitwise = plain.values == prox.values && plain.values == dyn_.values && ifca[0].values == fedavg.values;
    verdict(
        worst <= 1e-12 && bitwise,
        format!(
            "worst relative error vs rational mean {worst:.2e} over 100 instances (<= 1e-12); prox(0), dyn(0,0), ifca(1) bitwise: {bitwise}"
        ),
    )
}

fn gradient_checks() -> Verdict {
    let mut rng = seed::rng(77);
    let batch: Vec<Sample> = toy_client("g", 6, false, 5).train.into_iter().map(|mut s| {
        s.pixels.truncate(3);
        s
    }).collect();
    let mut worst = [0.0f64; 3];
    for i in 0..5 {
        let mut p = model_init(&[3, 3, 2], i).unwrap();
        p.values.iter_mut().for_each(|w| *w += rng.gen_range(-0.5..0.5));
        let aux: Vec<f64> = (0..p.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let regs = [
            Regularizer::None,
            Regularizer::Proximal { mu: 0.7, anchor: &aux },
            Regularizer::Dynamic { h: &aux, lambda: 0.3 },
        ];
        for (m, reg) in regs.into_iter().enumerate() {
            let analytic = gradient(&p, &batch, reg);
            let numeric = oracles::central_difference(
                |w| {
                    let mut q = p.clone();
                    q.values.copy_from_slice(w);
                    objective(&q, &batch, reg)
                },
                &p.values,
                1e-5,
            );
            worst[m] = worst[m].max(oracles::max_relative_error(&analytic, &numeric, 1e-6));
        }
    }
    verdict(
        worst.iter().all(|&e| e < 1e-4),
        format!(
            "max relative error over 5 points: plain {:.1e}, prox {:.1e}, dyn {:.1e} (< 1e-4)",
            worst[0], worst[1], worst[2]
        ),
    )
}

fn random_histogram(rng: &mut impl Rng, k: usize) -> ClusterHistogram {
    let mut w: Vec<f64> = (0..k).map(|_| if rng.gen_bool(0.3) { 0.0 } else { rng.gen_range(0.0..1.0) }).collect();
    if w.iter().sum::<f64>() == 0.0 {
        w[0] = 1.0;
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    let drift = 1.0 - w.iter().sum::<f64>();
    let last = w.iter().rposition(|&x| x > 0.0).unwrap();
    w[last] += drift;
    ClusterHistogram::new(w).unwrap()
}

fn random_model(rng: &mut impl Rng, k: usize) -> ClusterModel {
    ClusterModel::new((0..k).map(|_| (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect()).collect(), Vec::new())
}

fn emd_correctness() -> Verdict {
    let mut rng = seed::rng(8);
    let mut lp_worst: f64 = 0.0;
    for k in 1..=4 {
        for _ in 0..60 {
            let model = random_model(&mut rng, k);
            let (p, q) = (random_histogram(&mut rng, k), random_histogram(&mut rng, k));
            let got = emd(&p, &q, &model).unwrap().0;
            let want = oracles::transport_brute_force(p.weights(), q.weights(), &model.ground_distance);
            lp_worst = lp_worst.max((got - want).abs());
        }
    }
    let model = random_model(&mut rng, 6);
    let (mut sym, mut tri) = (0.0f64, f64::NEG_INFINITY);
    for _ in 0..1000 {
        let (p, q, r) = (random_histogram(&mut rng, 6), random_histogram(&mut rng, 6), random_histogram(&mut rng, 6));
        let d = |a: &ClusterHistogram, b: &ClusterHistogram| emd(a, b, &model).unwrap().0;
        sym = sym.max((d(&p, &q) - d(&q, &p)).abs());
        tri = tri.max(d(&p, &r) - d(&p, &q) - d(&q, &r));
    }
    let line = ClusterModel::new(vec![vec![0.0], vec![1.0], vec![2.0]], Vec::new());
    let collinear = emd(
        &ClusterHistogram::new(vec![0.5, 0.5, 0.0]).unwrap(),
        &ClusterHistogram::new(vec![0.0, 0.5, 0.5]).unwrap(),
        &line,
    )
    .unwrap()
    .0;
    verdict(
        lp_worst <= 1e-9 && sym <= 1e-9 && tri <= 1e-7 && (collinear - 1.0).abs() <= 1e-9,
        format!(
            "240 instances K <= 4 vs brute-force LP max diff {lp_worst:.1e}; 1000 pairs: asymmetry {sym:.1e} (<= 1e-9), \
             triangle excess {tri:.1e} (<= 1e-7); collinear {collinear}"
        ),
    )
}

fn laplace_statistics() -> Verdict {
    let mut rng = seed::rng(2024);
    let draws: Vec<f64> = (0..100_000).map(|_| sample_laplace(&mut rng, 1.0)).collect();
    let m = mean(&draws);
    let var = draws.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
    verdict(
        m.abs() <= 0.02 && (var - 2.0).abs() <= 0.1,
        format!("1e5 draws at s = 1, eps = 1: mean {m:.4} (|.| <= 0.02), variance {var:.4} (2 +/- 5%)"),
    )
}

fn determinism(first: &Path, second: &Path) -> Verdict {
    let mut compared = Vec::new();
    let mut same = true;
    for entry in std::fs::read_dir(first).unwrap() {
        let name = entry.unwrap().file_name();
        let name = name.to_string_lossy().into_owned();
        if !name.ends_with(".csv") {
            continue;
        }
        let a = std::fs::read(first.join(&name)).unwrap();
        let b = std::fs::read(second.join(&name)).unwrap_or_default();
        same &= a == b;
        compared.push(name);
    }
    compared.sort();
    verdict(
        same && !compared.is_empty(),
        format!("byte-identical across two runs: {same} ({})", compared.join(", ")),
    )
}

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let base: PathBuf = dir.path().to_path_buf();
    let mut results: Vec<(usize, Verdict)> = Vec::new();
    let mut report = |n: usize, v: Verdict| {
        println!("criterion {n:>2}: {} - {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        results.push((n, v));
    };

    let (fig3_a, fig3_b) = (base.join("fig3_a"), base.join("fig3_b"));
    let first = grid("fig3", &fig3_a, &[]);
    let second = grid("fig3", &fig3_b, &[]);
    match &first {
        Ok(t) => report(1, emd_trend(&fig3_a, *t)),
        Err(e) => report(1, verdict(false, e.clone())),
    }
    report(2, mia_calibration(&base));
    report(3, similar_beats_dissimilar(&base));
    let (c4, c5) = selection_and_incremental(&base);
    report(4, c4);
    report(5, c5);
    report(6, aggregation_oracles());
    report(7, gradient_checks());
    report(8, emd_correctness());
    report(9, laplace_statistics());
    match (&first, &second) {
        (Ok(_), Ok(_)) => report(10, determinism(&fig3_a, &fig3_b)),
        (Err(e), _) | (_, Err(e)) => report(10, verdict(false, e.clone())),
    }

    let failed: Vec<usize> = results.iter().filter(|(_, v)| !v.pass).map(|(n, _)| *n).collect();
    println!("acceptance: {}/{} criteria passed", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
