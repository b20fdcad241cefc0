//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any
//! failure.
//!
//! ```text
//! cargo test --release --test acceptance
//! ```

mod support;

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::Rng;
use rfid_activity::eval::{bench_latency, build_instances, kfold_cv, loso_normalization, InstanceSet};
use rfid_activity::features::{pearson, spectral_energy, FeatureExtractor, FeatureIndex};
use rfid_activity::model::{BodyLayout, DataSegment, PipelineConfig, TagReading};
use rfid_activity::select::{combinations, select_min, subset_accuracy, Granularity, SubsetSpec};
use rfid_activity::sim::{generate_dataset, Dataset, Scenario};
use rfid_activity::stream::{complete, count_matrix, overlap, push_history, HistoryBuffer};
use rfid_activity::svm::{
    dual_objective, load_model, rbf_gram, save_model, smo_solve, smo_train_binary, SmoParams, TrainParams,
};
use support::{brute_force_dual, cholesky, population_variance, random_problem, rng};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn(&Shared) -> Outcome);
type Level = (Option<(usize, usize)>, Vec<(SubsetSpec, f64)>);

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, limit: Duration, detail: String) -> Outcome {
    check(
        elapsed < limit,
        format!("{detail}; runtime {:.1?} (limit {limit:?})", elapsed),
    )
}

struct Shared {
    dataset: Dataset,
}

fn main() {
    let t0 = Instant::now();
    let shared = Shared {
        dataset: generate_dataset(&Scenario::default_scenario(), 42).expect("default scenario"),
    };
    let criteria: [Criterion; 10] = [
        ("1 feature dimensionality", c1_dimensions),
        ("2 overlap and completion", c2_completion),
        ("3 numerical identities", c3_identities),
        ("4 SMO oracle equivalence", c4_smo),
        ("5 end-to-end accuracy", c5_accuracy),
        ("6 completion ablation", c6_ablation),
        ("7 real-time contract", c7_realtime),
        ("8 selection oracle", c8_selection),
        ("9 subject normalization", c9_normalization),
        ("10 persistence and determinism", c10_persistence),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        match f(&shared) {
            Ok(detail) => println!("PASS criterion {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {name}: {detail}");
            }
        }
    }
    println!("{} of 10 criteria passed in {:.1?}", 10 - failed, t0.elapsed());
    if failed > 0 {
        std::process::exit(1);
    }
}

fn c1_dimensions(_: &Shared) -> Outcome {
    let layout = BodyLayout::default_layout();
    let idx = FeatureIndex::new(&layout);
    let spatial = idx.tag_pairs() + idx.antenna_pairs();
    if (idx.temporal_len(), spatial, idx.dim()) != (1008, 636, 1644) {
        return Err(format!(
            "default layout gives {} + {spatial} = {}",
            idx.temporal_len(),
            idx.dim()
        ));
    }
    let mut r = rng(1);
    for case in 0..200 {
        let na = r.random_range(1..=6);
        let parts = r.random_range(1..=10);
        let per = r.random_range(1..=5);
        let a: Vec<String> = (0..na).map(|i| format!("a{i}")).collect();
        let p: Vec<String> = (0..parts).map(|i| format!("p{i}")).collect();
        let a: Vec<&str> = a.iter().map(String::as_str).collect();
        let p: Vec<&str> = p.iter().map(String::as_str).collect();
        let layout = BodyLayout::uniform(&a, &p, per).map_err(|e| e.to_string())?;
        let nt = parts * per;
        let expected = 7 * na * nt + nt * (nt - 1) / 2 + na * (na - 1) / 2;
        let seg = DataSegment {
            readings: (0..20)
                .map(|i| TagReading::new(i * 100, r.random_range(0..na), r.random_range(0..nt), -60.0))
                .collect(),
            ..DataSegment::empty(0, 5000)
        };
        let fv = FeatureExtractor::new(&layout, &PipelineConfig::default())
            .extract(&seg)
            .map_err(|e| e.to_string())?;
        if FeatureIndex::new(&layout).dim() != expected || fv.values.len() != expected {
            return Err(format!(
                "case {case}: {na} antennas, {nt} tags: got {}, expected {expected}",
                fv.values.len()
            ));
        }
    }
    Ok("1008 + 636 = 1644; 200 random layouts match 7·Na·Nt + C(Nt,2) + C(Na,2)".into())
}

fn seg(start: i64, readings: &[(usize, usize)]) -> DataSegment {
    DataSegment {
        readings: readings
            .iter()
            .enumerate()
            .map(|(i, &(a, t))| TagReading::new(start + i as i64, a, t, -60.0))
            .collect(),
        ..DataSegment::empty(start, 5000)
    }
}

fn c2_completion(_: &Shared) -> Outcome {
    let t0 = Instant::now();
    let layout = BodyLayout::default_layout();
    let cur = seg(5000, &[(0, 5), (0, 5), (0, 7)]);
    let hist = seg(0, &[(0, 5), (0, 7), (0, 7), (0, 7)]);
    let o = overlap(&cur, &hist, &layout);
    if o != 2.0 / 3.0 {
        return Err(format!("overlap {o}, expected 2/3"));
    }
    if overlap(&cur, &cur, &layout) != 1.0 || overlap(&cur, &seg(0, &[(1, 1)]), &layout) != 0.0 {
        return Err("identical/disjoint overlap".into());
    }

    let mut buffer = HistoryBuffer::new(4);
    push_history(&mut buffer, seg(0, &[(0, 0), (0, 9), (1, 3), (1, 30)]));
    let current = seg(5000, &[(2, 1), (2, 8), (3, 20), (3, 35)]);
    let done = complete(&current, &buffer, 0.7, &layout);
    let counts = count_matrix(&done, &layout);
    let covered = (0..4)
        .filter(|&a| (0..layout.num_tags()).any(|t| counts.get(a, t) > 0))
        .count();
    if covered != 4 || done.completed_from != vec![(0, 4)] {
        return Err(format!("completion covers {covered} antennas"));
    }

    // fuzzed segments: idempotence and non-removal
    let mut r = rng(2);
    for case in 0..1000 {
        let depth = r.random_range(0..=4);
        let mut buffer = HistoryBuffer::new(4);
        let random_seg = |start: i64, r: &mut support::TestRng| {
            let n = r.random_range(0..30);
            let pairs: Vec<(usize, usize)> = (0..n).map(|_| (r.random_range(0..4), r.random_range(0..36))).collect();
            seg(start, &pairs)
        };
        for k in 0..depth {
            push_history(&mut buffer, random_seg(k as i64 * 5000, &mut r));
        }
        let current = random_seg(depth as i64 * 5000, &mut r);
        let threshold = r.random_range(0.0..=1.0);
        let once = complete(&current, &buffer, threshold, &layout);
        let twice = complete(&once, &buffer, threshold, &layout);
        let kept = current.readings.iter().all(|x| once.readings.contains(x));
        if once != twice || !kept || once.readings.len() < current.readings.len() {
            return Err(format!("fuzz case {case} violates idempotence or non-removal"));
        }
    }
    within(
        t0.elapsed(),
        Duration::from_secs(1),
        "overlap 2/3 exact; disjoint history restores 4 antennas; 1000 fuzzed segments idempotent and non-removing"
            .into(),
    )
}

fn c3_identities(_: &Shared) -> Outcome {
    let mut r = rng(3);
    let mut worst_energy = 0.0f64;
    for _ in 0..1000 {
        let k = r.random_range(2..=128);
        let x: Vec<f64> = (0..k).map(|_| r.random_range(-95.0..0.0)).collect();
        let expected = k as f64 * population_variance(&x);
        let rel = (spectral_energy(&x) - expected).abs() / expected;
        worst_energy = worst_energy.max(rel);
    }
    let mut worst_pearson = 0.0f64;
    for _ in 0..1000 {
        let n = r.random_range(3..=64);
        let x: Vec<f64> = (0..n).map(|_| r.random_range(-95.0..-20.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| r.random_range(-95.0..-20.0)).collect();
        let a = r.random_range(0.1..10.0) * if r.random_bool(0.5) { 1.0 } else { -1.0 };
        let b = r.random_range(-50.0..50.0);
        let moved: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        let (p, q) = (pearson(&x, &y).unwrap(), pearson(&moved, &y).unwrap());
        worst_pearson = worst_pearson.max((q - a.signum() * p).abs());
    }
    let mut psd = 0;
    for _ in 0..50 {
        let x = Array2::from_shape_fn((20, 5), |_| r.random_range(-3.0..3.0));
        let g = rbf_gram(&x, r.random_range(0.05..2.0));
        let m: Vec<Vec<f64>> = (0..20)
            .map(|i| (0..20).map(|j| g[(i, j)] + if i == j { 1e-10 } else { 0.0 }).collect())
            .collect();
        if cholesky(&m).is_some() {
            psd += 1;
        }
    }
    check(
        worst_energy <= 1e-9 && worst_pearson <= 1e-12 && psd == 50,
        format!("energy rel err {worst_energy:.1e}, pearson err {worst_pearson:.1e}, {psd}/50 Gram matrices PSD"),
    )
}

fn c4_smo(_: &Shared) -> Outcome {
    let t0 = Instant::now();
    let mut r = rng(4);
    let (mut worst_obj, mut worst_kkt, mut worst_default_obj) = (0.0f64, 0.0f64, 0.0f64);
    for case in 0..25 {
        let n = r.random_range(3..=10);
        let (points, y) = random_problem(&mut r, n, 2);
        let c = [0.5, 1.0, 10.0][case % 3];
        let gamma = [0.5, 2.0][case % 2];
        let (exact, _) = brute_force_dual(&points, &y, c, gamma);
        let refs: Vec<&[f64]> = points.iter().map(Vec::as_slice).collect();
        let run = |tol| {
            smo_solve(
                &refs,
                &y,
                &SmoParams {
                    c,
                    gamma,
                    tol,
                    max_iter: None,
                },
            )
            .map_err(|e| e.to_string())
        };
        let default = run(1e-3)?;
        let tight = run(1e-6)?;
        worst_kkt = worst_kkt.max(default.kkt_gap);
        worst_default_obj = worst_default_obj.max((dual_objective(&refs, &y, &default.alpha, gamma) - exact).abs());
        worst_obj = worst_obj.max((dual_objective(&refs, &y, &tight.alpha, gamma) - exact).abs());
    }
    let pos = [[0.0, 0.0], [1.0, 1.0]];
    let neg = [[0.0, 1.0], [1.0, 0.0]];
    let p: Vec<&[f64]> = pos.iter().map(|x| x.as_slice()).collect();
    let n: Vec<&[f64]> = neg.iter().map(|x| x.as_slice()).collect();
    let xor = smo_train_binary(
        &p,
        &n,
        &SmoParams {
            c: 10.0,
            gamma: 1.0,
            tol: 1e-3,
            max_iter: None,
        },
    )
    .map_err(|e| e.to_string())?;
    let xor_ok = pos.iter().all(|x| xor.predict(x)) && neg.iter().all(|x| !xor.predict(x));
    if !(worst_obj <= 1e-6 && worst_kkt <= 1e-3 && xor_ok) {
        return Err(format!(
            "objective gap {worst_obj:.1e}, KKT {worst_kkt:.1e}, xor {xor_ok}"
        ));
    }
    within(
        t0.elapsed(),
        Duration::from_secs(10),
        format!(
            "25 instances: objective gap {worst_obj:.1e} at tol 1e-6 ({worst_default_obj:.1e} at tol 1e-3), \
             KKT residual {worst_kkt:.1e} at tol 1e-3; XOR 100%"
        ),
    )
}

fn cv_accuracy(dataset: &Dataset, window: f64, completion: bool) -> Result<f64, String> {
    let config = PipelineConfig {
        completion,
        history_span_s: 20f64.max(window),
        ..PipelineConfig::default().with_window(window)
    };
    let set = build_instances(dataset, &config).map_err(|e| e.to_string())?;
    Ok(kfold_cv(&set, 10, 42, &TrainParams::default())
        .map_err(|e| e.to_string())?
        .accuracy)
}

fn c5_accuracy(s: &Shared) -> Outcome {
    let t0 = Instant::now();
    let acc = cv_accuracy(&s.dataset, 5.0, true)?;
    if acc < 0.90 {
        return Err(format!("10-fold accuracy {acc:.4} < 0.90"));
    }
    within(
        t0.elapsed(),
        Duration::from_secs(300),
        format!("10-fold accuracy {acc:.4} >= 0.90 at L = 5 s"),
    )
}

fn c6_ablation(s: &Shared) -> Outcome {
    let on5 = cv_accuracy(&s.dataset, 5.0, true)?;
    let off5 = cv_accuracy(&s.dataset, 5.0, false)?;
    let on20 = cv_accuracy(&s.dataset, 20.0, true)?;
    let off20 = cv_accuracy(&s.dataset, 20.0, false)?;
    let (d5, d20) = (on5 - off5, on20 - off20);
    check(
        d5 >= 0.10 && d20 < d5,
        format!(
            "L=5: {on5:.4} vs {off5:.4} ({:+.1} points); L=20: {on20:.4} vs {off20:.4} ({:+.1} points)",
            100.0 * d5,
            100.0 * d20
        ),
    )
}

fn c7_realtime(s: &Shared) -> Outcome {
    let config = PipelineConfig::default();
    let model = build_instances(&s.dataset, &config)
        .and_then(|set| set.train_all(&TrainParams::default()))
        .map_err(|e| e.to_string())?;
    let l1 = PipelineConfig::default().with_window(1.0);
    let traces = &s.dataset.traces[..2];
    let report = bench_latency(&model, &s.dataset.layout, traces, &l1, Duration::ZERO).map_err(|e| e.to_string())?;
    if report.durations_ms.len() < 100 || !report.pass || report.max_ms >= 1000.0 {
        return Err(format!(
            "{} windows, max {:.1} ms",
            report.durations_ms.len(),
            report.max_ms
        ));
    }

    // slowed pipeline must fail the contract and make the CLI exit with 3
    let short = Scenario {
        duration_s: 2.0,
        ..Scenario::default_scenario()
    };
    let short_ds = generate_dataset(&short, 7).map_err(|e| e.to_string())?;
    let slow = bench_latency(
        &model,
        &short_ds.layout,
        &short_ds.traces[..1],
        &l1,
        Duration::from_millis(1001),
    )
    .map_err(|e| e.to_string())?;
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let code = slowed_cli_exit(tmp.path())?;
    check(
        !slow.pass && code == Some(3),
        format!(
            "{} windows at L = 1 s, max {:.1} ms, mean {:.1} ms; slowed run fails with exit {code:?}",
            report.durations_ms.len(),
            report.max_ms,
            report.mean_ms
        ),
    )
}

fn planted() -> Scenario {
    Scenario::parse(include_str!("../scenarios/planted.toml")).expect("planted scenario")
}

fn slowed_cli_exit(dir: &Path) -> Result<Option<i32>, String> {
    let sc = dir.join("short.toml");
    let text = planted().to_toml().replace("duration_s = 30.0", "duration_s = 3.0");
    std::fs::write(&sc, text).map_err(|e| e.to_string())?;
    let p = |n: &str| dir.join(n).to_str().unwrap().to_string();
    let sc = sc.to_str().unwrap().to_string();
    har(&["simulate", "--scenario", &sc, "--out", &p("d")])?;
    har(&["train", "--data", &p("d"), "--out", &p("m.bin"), "--window", "1"])?;
    let out = Command::new(env!("CARGO_BIN_EXE_rfid-har"))
        .args([
            "bench",
            "--model",
            &p("m.bin"),
            "--data",
            &p("d"),
            "--windows",
            "1",
            "--slowdown-ms",
            "1100",
        ])
        .output()
        .map_err(|e| e.to_string())?;
    Ok(out.status.code())
}

fn har(args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_rfid-har"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(out.stdout)
}

/// Level and qualifying subsets found by scoring every subset.
fn exhaustive(set: &InstanceSet, rho: f64, scores: &[(SubsetSpec, f64)]) -> Level {
    let na = set.layout.num_antennas();
    let np = set.layout.num_parts();
    for a in 1..=na {
        for p in 1..=np {
            let q: Vec<(SubsetSpec, f64)> = scores
                .iter()
                .filter(|(s, acc)| s.antennas.len() == a && s.parts.len() == p && *acc >= rho)
                .cloned()
                .collect();
            if !q.is_empty() {
                return (Some((a, p)), q);
            }
        }
    }
    (None, Vec::new())
}

fn c8_selection(_: &Shared) -> Outcome {
    let t0 = Instant::now();
    let ds = generate_dataset(&planted(), 42).map_err(|e| e.to_string())?;
    let set = build_instances(&ds, &PipelineConfig::default()).map_err(|e| e.to_string())?;
    let params = TrainParams::default();
    let (k, seed) = (5, 42);
    let na = set.layout.num_antennas();
    let np = set.layout.num_parts();
    let mut scores = Vec::new();
    for a in 1..=na {
        for antennas in combinations(na, a) {
            for p in 1..=np {
                for parts in combinations(np, p) {
                    let spec = SubsetSpec::new(antennas.clone(), parts);
                    let acc = subset_accuracy(&set, &spec, k, seed, &params).map_err(|e| e.to_string())?;
                    scores.push((spec, acc));
                }
            }
        }
    }
    let max = scores.iter().map(|(_, a)| *a).fold(0.0, f64::max);
    let chance = 1.0 / set.activities.len() as f64;
    let mut details = Vec::new();
    for rho in [chance + 0.2, max - 0.02] {
        let got =
            select_min(&set, rho, Granularity::Part, k, seed, &params, |_, _, _| {}).map_err(|e| e.to_string())?;
        let (level, subsets) = exhaustive(&set, rho, &scores);
        if got.level != level || got.subsets != subsets {
            return Err(format!(
                "rho {rho:.3}: search {:?} {:?} vs exhaustive {level:?} {subsets:?}",
                got.level, got.subsets
            ));
        }
        let names: Vec<String> = subsets.iter().map(|(s, _)| s.to_string()).collect();
        details.push(format!("rho {rho:.3} -> level {level:?} [{}]", names.join("; ")));
    }
    within(t0.elapsed(), Duration::from_secs(600), details.join(", "))
}

fn c9_normalization(s: &Shared) -> Outcome {
    let (plain, norm) = loso_normalization(&s.dataset, &PipelineConfig::default(), &TrainParams::default())
        .map_err(|e| e.to_string())?;
    check(
        norm.mean >= plain.mean,
        format!(
            "leave-one-subject-out mean: raw {:.4}, normalized {:.4}",
            plain.mean, norm.mean
        ),
    )
}

fn c10_persistence(_: &Shared) -> Outcome {
    let ds = generate_dataset(&planted(), 42).map_err(|e| e.to_string())?;
    let set = build_instances(&ds, &PipelineConfig::default()).map_err(|e| e.to_string())?;
    let model = set.train_all(&TrainParams::default()).map_err(|e| e.to_string())?;
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = tmp.path().join("model.bin");
    save_model(&model, &path).map_err(|e| e.to_string())?;
    let loaded = load_model(&path).map_err(|e| e.to_string())?;
    let mut r = rng(10);
    for i in 0..100 {
        let base = &set.instances[r.random_range(0..set.len())].values;
        let v: Vec<f64> = base.iter().map(|x| x + r.random_range(-2.0..2.0)).collect();
        let a = model.decision_values(&v, set.fingerprint).map_err(|e| e.to_string())?;
        let b = loaded.decision_values(&v, set.fingerprint).map_err(|e| e.to_string())?;
        let same_bits = a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits());
        if !same_bits || model.predict(&v, set.fingerprint).ok() != loaded.predict(&v, set.fingerprint).ok() {
            return Err(format!("vector {i} predicts differently after reload"));
        }
    }

    let p = |n: &str| tmp.path().join(n).to_str().unwrap().to_string();
    let sc = p("planted.toml");
    std::fs::write(&sc, planted().to_toml()).map_err(|e| e.to_string())?;
    let mut runs = 0;
    for round in ["a", "b"] {
        har(&[
            "simulate",
            "--scenario",
            &sc,
            "--out",
            &p(&format!("d_{round}")),
            "--seed",
            "9",
        ])?;
    }
    let (da, db) = (tmp.path().join("d_a"), tmp.path().join("d_b"));
    if tree(&da)? != tree(&db)? {
        return Err("simulate output differs between runs".into());
    }
    runs += 1;
    let d = p("d_a");
    for m in ["m_a.bin", "m_b.bin"] {
        har(&["train", "--data", &d, "--out", &p(m)])?;
    }
    if std::fs::read(p("m_a.bin")).ok() != std::fs::read(p("m_b.bin")).ok() {
        return Err("train output differs between runs".into());
    }
    runs += 1;
    let trace = tree(&da.join("traces"))?
        .first()
        .map(|(f, _)| da.join("traces").join(f))
        .ok_or("no traces")?;
    let layout = p("d_a/layout.txt");
    let commands: Vec<Vec<&str>> = vec![
        vec!["eval", "--data", &d, "--kfold", "5"],
        vec!["eval", "--data", &d, "--model", "MODEL"],
        vec!["eval", "--data", &d, "--loso", "--normalize"],
        vec!["eval", "--data", &d, "--sweep-window", "2,5", "--folds", "3"],
        vec![
            "eval",
            "--data",
            &d,
            "--ablate-completion",
            "--windows",
            "2,5",
            "--folds",
            "3",
        ],
        vec!["select", "--data", &d, "--rho", "0.9", "--folds", "5"],
        vec![
            "recognize",
            "--model",
            "MODEL",
            "--input",
            trace.to_str().unwrap(),
            "--layout",
            &layout,
        ],
    ];
    let model_path = p("m_a.bin");
    for cmd in commands {
        let cmd: Vec<&str> = cmd
            .into_iter()
            .map(|a| if a == "MODEL" { model_path.as_str() } else { a })
            .collect();
        if har(&cmd)? != har(&cmd)? {
            return Err(format!("{} output differs between runs", cmd[..2].join(" ")));
        }
        runs += 1;
    }
    Ok(format!(
        "100 random vectors predict identically after reload; {runs} CLI commands byte-identical across runs"
    ))
}

fn tree(dir: &Path) -> Result<Vec<(std::path::PathBuf, Vec<u8>)>, String> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).map_err(|e| e.to_string())? {
        let path = e.map_err(|e| e.to_string())?.path();
        if path.is_dir() {
            out.extend(tree(&path)?);
        } else {
            let bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
            out.push((path.strip_prefix(dir).unwrap().to_path_buf(), bytes));
        }
    }
    out.sort();
    Ok(out)
}
