use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::config::TrainConfig;
use super::run::{run_training, LossTrace, RunOptions, RunSummary};
use crate::error::{Error, Result};
use crate::eval::MetricReport;

/// Dotted paths at which two JSON documents differ.
pub fn json_diff_paths(a: &Value, b: &Value) -> Vec<String> {
    fn walk(a: &Value, b: &Value, prefix: &str, out: &mut Vec<String>) {
        match (a, b) {
            (Value::Object(x), Value::Object(y)) => {
                let mut keys: Vec<&String> = x.keys().chain(y.keys()).collect();
                keys.sort();
                keys.dedup();
                for k in keys {
                    let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    match (x.get(k), y.get(k)) {
                        (Some(va), Some(vb)) => walk(va, vb, &path, out),
                        _ => out.push(path),
                    }
                }
            }
            _ if a != b => out.push(prefix.to_string()),
            _ => {}
        }
    }
    let mut out = Vec::new();
    walk(a, b, "", &mut out);
    out
}

/// The configured run and its drift-only twin, which differs only in
/// `objective.lambda_v = 0`.
pub fn ablation_pair(cfg: &TrainConfig) -> Result<(TrainConfig, TrainConfig)> {
    let mut baseline = cfg.clone();
    baseline.objective.lambda_v = 0.0;
    let diff = json_diff_paths(&cfg.to_json(), &baseline.to_json());
    if diff != ["objective.lambda_v"] {
        return Err(Error::Config(format!(
            "ablation arms must differ in objective.lambda_v only, found {diff:?} (is lambda_v already 0?)"
        )));
    }
    Ok((cfg.clone(), baseline))
}

/// Full-arm value, baseline value, and their differences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricDelta {
    pub full: f64,
    pub baseline: f64,
    /// `full − baseline`.
    pub absolute: f64,
    /// `(full − baseline) / baseline`.
    pub relative: f64,
}

impl MetricDelta {
    pub fn new(full: f64, baseline: f64) -> Self {
        MetricDelta {
            full,
            baseline,
            absolute: full - baseline,
            relative: (full - baseline) / baseline,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub sliced_w2: MetricDelta,
    pub precision: MetricDelta,
    pub recall: MetricDelta,
    pub mode_coverage: Option<MetricDelta>,
}

impl Comparison {
    pub fn new(full: &MetricReport, baseline: &MetricReport) -> Self {
        Comparison {
            sliced_w2: MetricDelta::new(full.sliced_w2, baseline.sliced_w2),
            precision: MetricDelta::new(full.precision, baseline.precision),
            recall: MetricDelta::new(full.recall, baseline.recall),
            mode_coverage: full.mode_coverage.zip(baseline.mode_coverage).map(|(f, b)| MetricDelta::new(f, b)),
        }
    }

    /// Table with absolute and relative deltas, one row per metric.
    pub fn render(&self) -> String {
        let mut s = format!("{:<14}{:>12}{:>12}{:>12}{:>10}\n", "metric", "full", "baseline", "delta", "rel");
        let mut row = |name: &str, d: &MetricDelta| {
            s.push_str(&format!("{name:<14}{:>12.5}{:>12.5}{:>+12.5}{:>+9.1}%\n", d.full, d.baseline, d.absolute, 100.0 * d.relative));
        };
        row("sliced_w2", &self.sliced_w2);
        row("precision", &self.precision);
        row("recall", &self.recall);
        if let Some(m) = &self.mode_coverage {
            row("mode_coverage", m);
        }
        s
    }
}

/// What an ablation keeps from one finished run.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmRun {
    pub config: TrainConfig,
    pub trace: LossTrace,
    pub summary: RunSummary,
    pub out_dir: Option<PathBuf>,
}

/// Both arms of one seed.
#[derive(Debug, Clone)]
pub struct AblationPair {
    pub seed: u64,
    pub full: ArmRun,
    pub baseline: ArmRun,
    pub comparison: Comparison,
}

/// Per-seed comparisons plus medians across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub seeds: Vec<u64>,
    pub per_seed: Vec<Comparison>,
    pub median: Comparison,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

impl AblationReport {
    pub fn new(pairs: &[AblationPair]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Empty("ablation report"));
        }
        let per_seed: Vec<Comparison> = pairs.iter().map(|p| p.comparison.clone()).collect();
        let med = |f: fn(&Comparison) -> Option<MetricDelta>| -> Option<MetricDelta> {
            let ds: Option<Vec<MetricDelta>> = per_seed.iter().map(f).collect();
            ds.map(|ds| MetricDelta::new(median(ds.iter().map(|d| d.full).collect()), median(ds.iter().map(|d| d.baseline).collect())))
        };
        let median = Comparison {
            sliced_w2: med(|c| Some(c.sliced_w2)).expect("present"),
            precision: med(|c| Some(c.precision)).expect("present"),
            recall: med(|c| Some(c.recall)).expect("present"),
            mode_coverage: med(|c| c.mode_coverage),
        };
        Ok(AblationReport {
            seeds: pairs.iter().map(|p| p.seed).collect(),
            per_seed,
            median,
        })
    }
}

type Job<'a, T> = Box<dyn FnOnce() -> T + Send + 'a>;

/// Runs `jobs` on up to `workers` threads; results keep job order.
pub(crate) fn run_parallel<T: Send>(jobs: Vec<Job<'_, T>>, workers: usize) -> Vec<T> {
    let n = jobs.len();
    let queue: Vec<Mutex<Option<Job<'_, T>>>> = jobs.into_iter().map(|j| Mutex::new(Some(j))).collect();
    let results: Vec<Mutex<Option<T>>> = (0..n).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, n.max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let job = queue[i].lock().expect("job lock").take().expect("job taken once");
                let out = job();
                *results[i].lock().expect("result lock") = Some(out);
            });
        }
    });
    results.into_iter().map(|r| r.into_inner().expect("result lock").expect("job ran")).collect()
}

/// Paired full and drift-only runs for each seed. Arms for seed `s` go to
/// `out/seed_s/{agm,baseline}` when `out` is set. Runs are spread over up
/// to `workers` threads; each run is deterministic, so the thread count
/// does not change results.
pub fn run_ablation(cfg: &TrainConfig, seeds: &[u64], out: Option<PathBuf>, workers: usize) -> Result<(Vec<AblationPair>, AblationReport)> {
    if seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    if !cfg.evaluate {
        return Err(Error::Config("ablation compares final metrics; evaluate must be true".into()));
    }
    let mut jobs: Vec<Job<'_, Result<ArmRun>>> = Vec::new();
    for &seed in seeds {
        let (full, baseline) = ablation_pair(&TrainConfig { seed, ..cfg.clone() })?;
        for (arm, c) in [("agm", full), ("baseline", baseline)] {
            let dir = out.as_ref().map(|o| o.join(format!("seed_{seed}")).join(arm));
            jobs.push(Box::new(move || {
                let a = run_training(&c, RunOptions { out_dir: dir, progress: None })?;
                Ok(ArmRun {
                    config: a.config,
                    trace: a.trace,
                    summary: a.summary,
                    out_dir: a.out_dir,
                })
            }));
        }
    }
    let mut runs = run_parallel(jobs, workers).into_iter();
    let mut pairs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let full = runs.next().expect("full arm")?;
        let baseline = runs.next().expect("baseline arm")?;
        let (Some(fm), Some(bm)) = (&full.summary.metrics, &baseline.summary.metrics) else {
            return Err(Error::Config("ablation runs produced no metrics".into()));
        };
        let comparison = Comparison::new(fm, bm);
        pairs.push(AblationPair {
            seed,
            full,
            baseline,
            comparison,
        });
    }
    let report = AblationReport::new(&pairs)?;
    if let Some(o) = &out {
        std::fs::create_dir_all(o)?;
        std::fs::write(o.join("ablation.json"), serde_json::to_string_pretty(&report)?)?;
        std::fs::write(o.join("ablation.txt"), report.median.render())?;
    }
    Ok((pairs, report))
}
