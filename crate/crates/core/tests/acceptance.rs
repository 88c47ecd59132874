//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use gausstin::cli::sweep;
use gausstin::config::Config;
use gausstin::data::{synth_stream, Layout, SynthSpec};
use gausstin::gmm::{FitConfig, GaussianComponent, GaussianMixture};
use gausstin::learner::{LabeledRow, SoftmaxModel};
use gausstin::metrics::{bwt, fwt, AccuracyMatrix, Metric, Summary};
use gausstin::replay::{Exemplar, ExemplarSource, ReplayBuffer};
use gausstin::report::{self, RunRecord};
use gausstin::seed;
use gausstin::trainer::{check_no_future_replay, run_experiment_detailed, ExperimentConfig, Strategy};
use gausstin::Error;
use rand::Rng;
use rand_distr::StandardNormal;

type Outcome = Result<String, String>;

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn adversarial_config() -> PathBuf {
    workspace().join("configs/adversarial.toml")
}

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn em_monotonicity() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for trial in 0..100u64 {
        let mut rng = seed::rng(seed::derive(1, "em", trial));
        let d = rng.random_range(1..=8);
        let k = rng.random_range(1..=6);
        let n = rng.random_range(50..=2000);
        let comps: Vec<GaussianComponent<f64>> = (0..k)
            .map(|_| {
                let mean = (0..d).map(|_| 6.0 * rng.sample::<f64, _>(StandardNormal)).collect();
                let vars = (0..d).map(|_| rng.random_range(0.2..3.0)).collect();
                GaussianComponent::new(1.0 / k as f64, mean, vars, 1e-6).unwrap()
            })
            .collect();
        let truth = GaussianMixture::new(comps).map_err(|e| e.to_string())?;
        let (data, _) = truth.sample(n, trial);
        let cfg = FitConfig {
            n_components: rng.random_range(1..=6),
            seed: trial,
            ..FitConfig::default()
        };
        let fit = GaussianMixture::<f64>::fit(&data, &cfg).map_err(|e| e.to_string())?;
        for w in fit.fit_trace().windows(2) {
            worst = worst.max(w[0] - w[1]);
        }
    }
    let elapsed = start.elapsed();
    ensure(worst <= 1e-9, format!("log-likelihood dropped by {worst:e}"))?;
    ensure(elapsed < Duration::from_secs(30), format!("took {elapsed:?}"))?;
    Ok(format!("100 fits, largest decrease {worst:.1e}, {:.1}s", elapsed.as_secs_f64()))
}

fn parameter_recovery() -> Outcome {
    let truth = GaussianMixture::new(vec![
        GaussianComponent::new(0.5, vec![0.0, 0.0], vec![1.0, 1.0], 1e-6).unwrap(),
        GaussianComponent::new(0.5, vec![10.0, 10.0], vec![1.0, 1.0], 1e-6).unwrap(),
    ])
    .map_err(|e| e.to_string())?;
    let mut ok = 0;
    for s in 0..20u64 {
        let (data, _) = truth.sample(5000, 100 + s);
        let cfg = FitConfig {
            n_components: 2,
            seed: s,
            ..FitConfig::default()
        };
        let fit = GaussianMixture::<f64>::fit(&data, &cfg).map_err(|e| e.to_string())?;
        let err = |perm: [usize; 2]| {
            let mut mean_err: f64 = 0.0;
            let mut weight_err: f64 = 0.0;
            for (i, &j) in perm.iter().enumerate() {
                let (t, f) = (&truth.components()[i], &fit.components()[j]);
                for (a, b) in t.mean.iter().zip(&f.mean) {
                    mean_err = mean_err.max((a - b).abs());
                }
                weight_err = weight_err.max((t.weight - f.weight).abs());
            }
            (mean_err, weight_err)
        };
        let (m, w) = [err([0, 1]), err([1, 0])]
            .into_iter()
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .unwrap();
        if m <= 0.1 && w <= 0.05 {
            ok += 1;
        }
    }
    ensure(ok >= 19, format!("only {ok}/20 seeds recovered"))?;
    Ok(format!("{ok}/20 seeds within tolerance"))
}

fn metric_fidelity() -> Outcome {
    let mut worst: f64 = 0.0;
    for s in 0..1000u64 {
        let mut rng = seed::rng(seed::derive(3, "metrics", s));
        let t = rng.random_range(2..=8);
        let rows: Vec<Vec<f64>> = (0..t).map(|_| (0..t).map(|_| rng.random::<f64>()).collect()).collect();
        let r = AccuracyMatrix::square(rows.clone()).map_err(|e| e.to_string())?;
        for i in 2..=t {
            let mut sum = 0.0;
            for j in 1..i {
                sum += rows[i - 1][j - 1] - rows[j - 1][j - 1];
            }
            let brute = sum / (i - 1) as f64;
            worst = worst.max((bwt(&r, i).map_err(|e| e.to_string())? - brute).abs());
        }
        for i in 1..t {
            let mut sum = 0.0;
            for j in i + 1..=t {
                sum += rows[i - 1][j - 1];
            }
            let brute = sum / (t - i) as f64;
            worst = worst.max((fwt(&r, i, t).map_err(|e| e.to_string())? - brute).abs());
        }
    }
    ensure(worst <= 1e-12, format!("max deviation {worst:e}"))?;
    let two = AccuracyMatrix::square(vec![vec![0.9, 0.3], vec![0.8, 0.7]]).map_err(|e| e.to_string())?;
    let hand_bwt = bwt(&two, 2).map_err(|e| e.to_string())?;
    ensure((hand_bwt + 0.1).abs() < 1e-12, format!("two-task BWT {hand_bwt}"))?;
    let three = AccuracyMatrix::square(vec![vec![0.5, 0.1, 0.2], vec![0.4, 0.5, 0.6], vec![0.4, 0.5, 0.9]])
        .map_err(|e| e.to_string())?;
    let single = fwt(&three, 2, 3).map_err(|e| e.to_string())?;
    ensure((single - 0.6).abs() < 1e-12, format!("single-term FWT {single}"))?;
    Ok(format!("1000 matrices, max deviation {worst:.1e}; hand examples exact"))
}

/// Results of the adversarial grid shared by the ordering criteria.
struct Grid {
    records: Vec<RunRecord>,
    summary: Summary,
    elapsed: Duration,
}

impl Grid {
    fn run() -> Result<Self, String> {
        let cfg = Config::load(adversarial_config()).map_err(|e| e.to_string())?;
        let plan: Vec<(Strategy, usize)> = cfg
            .experiment
            .strategies
            .iter()
            .flat_map(|&s| cfg.experiment.k_values.iter().map(move |&k| (s, k)))
            .collect();
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let start = Instant::now();
        sweep(&cfg, &plan, 0, dir.path()).map_err(|e| e.to_string())?;
        let elapsed = start.elapsed();
        let text = fs::read(dir.path().join("runs.jsonl")).map_err(|e| e.to_string())?;
        let records = report::read_records(&text[..]).map_err(|e| e.to_string())?;
        let summary = report::summarize_records(&records);
        Ok(Self {
            records,
            summary,
            elapsed,
        })
    }

    /// Mean over every k and seed.
    fn mean(&self, s: Strategy, f: impl Fn(&RunRecord) -> f64) -> f64 {
        let v: Vec<f64> = self.records.iter().filter(|r| r.strategy == s).map(f).collect();
        v.iter().sum::<f64>() / v.len() as f64
    }

    fn bwt(&self, s: Strategy) -> f64 {
        self.mean(s, |r| r.bwt)
    }

    fn acc(&self, s: Strategy) -> f64 {
        self.mean(s, |r| r.acc)
    }

    /// Mean of the strategy's FWT and BWT table cells.
    fn grand_mean(&self, s: Strategy) -> f64 {
        let v: Vec<f64> = self
            .summary
            .iter()
            .filter(|((name, _, m), c)| name == s.name() && *m != Metric::Acc && c.mean.is_finite())
            .map(|(_, c)| c.mean)
            .collect();
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn forgetting(grid: &Grid) -> Outcome {
    let seq = grid.bwt(Strategy::SeqFinetune);
    ensure(seq < 0.0, format!("Seq-finetune mean BWT {seq:+.4} is not negative"))?;
    Ok(format!("Seq-finetune mean BWT {:+.2} points", 100.0 * seq))
}

fn gauss_tin_ordering(grid: &Grid) -> Outcome {
    let (gt, seq) = (grid.bwt(Strategy::GaussTin), grid.bwt(Strategy::SeqFinetune));
    let (joint, gt_acc) = (grid.acc(Strategy::Joint), grid.acc(Strategy::GaussTin));
    ensure(gt - seq >= 0.02, format!("BWT margin {:.2} points < 2", 100.0 * (gt - seq)))?;
    ensure(gt > 0.0, format!("Gauss-Tin mean BWT {gt:+.4} is not positive"))?;
    ensure(joint >= gt_acc - 0.01, format!("joint accuracy {joint:.4} below Gauss-Tin {gt_acc:.4} - 0.01"))?;
    ensure(grid.elapsed < Duration::from_secs(300), format!("grid took {:?}", grid.elapsed))?;
    Ok(format!(
        "BWT Gauss-Tin {:+.2} vs Seq {:+.2} points; accuracy joint {:.2} vs Gauss-Tin {:.2}; {:.1}s",
        100.0 * gt,
        100.0 * seq,
        100.0 * joint,
        100.0 * gt_acc,
        grid.elapsed.as_secs_f64()
    ))
}

fn ablation_ordering(grid: &Grid) -> Outcome {
    let gt = grid.bwt(Strategy::GaussTin);
    let gt_grand = grid.grand_mean(Strategy::GaussTin);
    let mut parts = vec![format!("Gauss-Tin BWT {:+.2}, grand {:.2}", 100.0 * gt, 100.0 * gt_grand)];
    for s in [Strategy::GaussTinNoPrompt, Strategy::GaussTinNoGmm] {
        let (b, g) = (grid.bwt(s), grid.grand_mean(s));
        ensure(gt >= b - 0.005, format!("{s} BWT {b:+.4} exceeds Gauss-Tin {gt:+.4} by > 0.5 points"))?;
        ensure(gt_grand > g, format!("{s} grand mean {g:.4} >= Gauss-Tin {gt_grand:.4}"))?;
        parts.push(format!("{s} BWT {:+.2}, grand {:.2}", 100.0 * b, 100.0 * g));
    }
    Ok(parts.join("; "))
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gausstin"))
}

fn run_cli(args: &[&str], out: &Path) -> Result<(), String> {
    let status = bin()
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("GAUSSTIN_OUT")
        .output()
        .map_err(|e| e.to_string())?;
    ensure(
        status.status.success(),
        format!("{args:?} failed: {}", String::from_utf8_lossy(&status.stderr)),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = adversarial_config();
    let args = ["run", "--config", cfg.to_str().unwrap(), "--seed", "11", "--k", "5", "--strategy", "gauss-tin"];
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_cli(&args, &a)?;
    run_cli(&args, &b)?;
    let (x, y) = (fs::read(a.join("results.csv")), fs::read(b.join("results.csv")));
    let (x, y) = (x.map_err(|e| e.to_string())?, y.map_err(|e| e.to_string())?);
    ensure(x == y, "results.csv differs between identical runs")?;
    Ok(format!("two `run` invocations, results.csv identical ({} bytes)", x.len()))
}

fn exemplar(task: &str, label: usize) -> Exemplar<f64> {
    Exemplar {
        features: vec![label as f64],
        label,
        source_task: task.to_string(),
        method: ExemplarSource::GmmSampled,
        score: 0.0,
    }
}

fn capacity_and_leakage() -> Outcome {
    let mut ops = 0;
    for trial in 0..300u64 {
        let mut rng = seed::rng(seed::derive(8, "buffer", trial));
        let capacity = rng.random_range(10..=50);
        let mut buf = ReplayBuffer::<f64>::new(capacity).map_err(|e| e.to_string())?;
        let mut seen = 0usize;
        let mut expected: BTreeMap<String, usize> = BTreeMap::new();
        for _ in 0..rng.random_range(1..40) {
            if seen == 0 || rng.random_bool(0.3) {
                seen += 1;
            }
            let task = format!("t{}", rng.random_range(1..=seen));
            let n = rng.random_range(0..=60);
            let before = buf.clone();
            let res = buf.update(&task, (0..n).map(|i| exemplar(&task, i % 4)).collect());
            ops += 1;
            match res {
                Ok(()) => {
                    ensure(n <= capacity, format!("accepted {n} > {capacity}"))?;
                    expected.insert(task.clone(), n);
                }
                Err(Error::CapacityExceeded { .. }) => {
                    ensure(n > capacity, "rejected a legal update")?;
                    ensure(buf == before, "failed update modified the buffer")?;
                }
                Err(e) => return Err(e.to_string()),
            }
            for (id, &len) in &expected {
                let got = buf.get(id).map_or(0, <[_]>::len);
                ensure(got == len && got <= capacity, format!("{id}: holds {got}, expected {len}"))?;
            }
            ensure(buf.total() == expected.values().sum::<usize>(), "total disagrees with slots")?;
            for id in buf.task_ids() {
                let idx: usize = id[1..].parse().unwrap();
                ensure(idx <= seen, format!("{id} stored before it was seen"))?;
            }
        }
    }

    let spec = SynthSpec {
        tasks: 5,
        classes_per_task: 2,
        dim: 3,
        train_per_class: 15,
        eval_per_class: 5,
        layout: Layout::Adversarial,
        ..SynthSpec::default()
    };
    let stream = synth_stream::<f64>(&spec, 1).map_err(|e| e.to_string())?;
    let mut snapshots = 0;
    for strategy in Strategy::ABLATION {
        for k in [1, 2] {
            let cfg = ExperimentConfig {
                k,
                strategy,
                capacity: 10,
                seed: k as u64,
                ..ExperimentConfig::default()
            };
            let run = run_experiment_detailed(&stream.with_k(k).unwrap(), &cfg).map_err(|e| e.to_string())?;
            for (stage, (_, buf)) in run.snapshots.iter().enumerate() {
                let seen = &stream.tasks()[..k + stage];
                check_no_future_replay(buf, seen).map_err(|e| format!("{strategy} k={k}: {e}"))?;
                snapshots += 1;
            }
        }
    }
    let mut future = ReplayBuffer::<f64>::new(10).unwrap();
    future.update("t4", vec![exemplar("t4", 0)]).unwrap();
    ensure(
        matches!(check_no_future_replay(&future, &stream.tasks()[..2]), Err(Error::FutureReplay(_))),
        "future exemplar not detected",
    )?;
    Ok(format!("{ops} random buffer ops within bounds; {snapshots} run snapshots leak-free"))
}

fn gradient_check() -> Outcome {
    let mut worst: f64 = 0.0;
    for s in 0..50u64 {
        let mut rng = seed::rng(seed::derive(9, "grad", s));
        let classes = rng.random_range(2..=5);
        let dim = rng.random_range(1..=6);
        let weights: Vec<f64> = (0..classes * dim).map(|_| rng.sample(StandardNormal)).collect();
        let bias: Vec<f64> = (0..classes).map(|_| rng.sample(StandardNormal)).collect();
        let rows: Vec<LabeledRow<f64>> = (0..rng.random_range(1..=8))
            .map(|_| LabeledRow {
                features: (0..dim).map(|_| rng.sample(StandardNormal)).collect(),
                label: rng.random_range(0..classes),
                source_task: "t".into(),
            })
            .collect();
        let batch: Vec<&LabeledRow<f64>> = rows.iter().collect();
        let model = SoftmaxModel::from_parts(classes, dim, weights, bias).map_err(|e| e.to_string())?;
        let (_, grad) = model.loss_and_gradient(&batch);
        let analytic: Vec<f64> = grad.weights.iter().chain(&grad.bias).copied().collect();
        let h = 1e-6;
        let mut numeric = Vec::with_capacity(analytic.len());
        for p in 0..analytic.len() {
            let shifted = |delta: f64| {
                let mut m = model.clone();
                if p < classes * dim {
                    m.weights_mut()[p] += delta;
                } else {
                    m.bias_mut()[p - classes * dim] += delta;
                }
                m.loss_and_gradient(&batch).0
            };
            numeric.push((shifted(h) - shifted(-h)) / (2.0 * h));
        }
        let diff: f64 = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt() + numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
        worst = worst.max(diff / norm.max(1e-12));
    }
    ensure(worst <= 1e-4, format!("relative error {worst:e}"))?;
    Ok(format!("50 instances, max relative error {worst:.1e}"))
}

fn grid_shape() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = adversarial_config();
    run_cli(&["grid", "--config", cfg.to_str().unwrap(), "--jobs", "4"], dir.path())?;
    let md = fs::read_to_string(dir.path().join("results.md")).map_err(|e| e.to_string())?;
    let mut lines = md.lines();
    let header = lines.next().unwrap_or_default();
    let expected = "| Method | FWT D_k1 | FWT D_k5 | FWT D_k8 | FWT D_k10 | BWT D_k1 | BWT D_k5 | BWT D_k8 | BWT D_k10 |";
    ensure(header == expected, format!("header `{header}`"))?;
    lines.next();
    let rows: Vec<&str> = lines.collect();
    let names: Vec<&str> = Strategy::ALL.iter().map(|s| s.display_name()).collect();
    ensure(rows.len() == names.len(), format!("{} rows", rows.len()))?;
    for (row, name) in rows.iter().zip(&names) {
        ensure(row.starts_with(&format!("| {name} |")), format!("row `{row}`"))?;
        ensure(row.matches('|').count() == 10, format!("row `{row}` has wrong cell count"))?;
    }
    let csv = fs::read(dir.path().join("results.csv")).map_err(|e| e.to_string())?;
    let summary = report::parse_csv(&csv[..]).map_err(|e| e.to_string())?;
    let mut cells: BTreeMap<&str, usize> = BTreeMap::new();
    for (name, k, metric) in summary.keys() {
        if [1, 5, 8, 10].contains(k) && *metric != Metric::Acc {
            *cells.entry(Strategy::ALL.iter().find(|s| s.name() == name).unwrap().name()).or_default() += 1;
        }
    }
    ensure(cells.values().all(|&n| n == 8) && cells.len() == 5, format!("csv cells {cells:?}"))?;
    Ok("5 strategies x (4 FWT + 4 BWT) cells, columns in FWT then BWT order".into())
}

fn main() {
    let mut failed = 0;
    let mut record = |n: usize, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let res = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        match res {
            Ok(detail) => println!("criterion {n:2} PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("criterion {n:2} FAIL {name}: {why}");
            }
        }
    };
    record(1, "EM monotonicity", &mut em_monotonicity);
    record(2, "parameter recovery", &mut parameter_recovery);
    record(3, "metric fidelity", &mut metric_fidelity);
    let grid = Grid::run();
    let with_grid = |f: fn(&Grid) -> Outcome| {
        let g = &grid;
        move || g.as_ref().map_err(Clone::clone).and_then(f)
    };
    record(4, "forgetting reproduction", &mut with_grid(forgetting));
    record(5, "Gauss-Tin ordering", &mut with_grid(gauss_tin_ordering));
    record(6, "ablation ordering", &mut with_grid(ablation_ordering));
    record(7, "determinism", &mut determinism);
    record(8, "capacity and leakage", &mut capacity_and_leakage);
    record(9, "gradient check", &mut gradient_check);
    record(10, "grid shape", &mut grid_shape);
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
