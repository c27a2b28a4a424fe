use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{aggregate_runs, render_report, score_task, Columns, EvalError, Metric, MetricsReport, Provenance, ReportFormat, ReportRow, SceneScores};
use crate::backends::{Backend, PromptMode, RunTrace, SceneInput};
use crate::labels::SynonymTable;
use crate::oracle::{Oracle, TaskId, TaskSpec};
use crate::scene::{Dataset, Scene};

/// How per-scene scores combine into one run score.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// Pool every object of the dataset.
    #[default]
    Object,
    /// Average per-scene accuracies.
    Scene,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSpec {
    pub tasks: Vec<TaskId>,
    pub modes: Vec<PromptMode>,
    pub runs: usize,
    pub seed: u64,
    pub concurrency: usize,
    pub weighting: Weighting,
}

impl Default for EvalSpec {
    fn default() -> Self {
        EvalSpec {
            tasks: TaskId::ALL.to_vec(),
            modes: vec![PromptMode::ZeroShot],
            runs: 3,
            seed: 42,
            concurrency: 4,
            weighting: Weighting::Object,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneScoreRow {
    pub run: usize,
    pub task: TaskId,
    pub mode: PromptMode,
    pub scene_id: String,
    pub scores: SceneScores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub run: usize,
    pub task: TaskId,
    pub mode: PromptMode,
    pub scene_id: String,
    pub parse_warnings: usize,
    pub trace: RunTrace,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutcome {
    pub report: MetricsReport,
    pub scene_scores: Vec<SceneScoreRow>,
    pub traces: Vec<TraceRow>,
}

type SceneResult = Result<(SceneScores, usize, RunTrace), EvalError>;

fn plan_and_score(oracle: &Oracle, backend: &dyn Backend, scene: &Scene, task: &TaskSpec, mode: PromptMode) -> SceneResult {
    let planned = backend
        .plan(&SceneInput::Scene(scene.clone()), task, mode)
        .map_err(|failure| EvalError::Backend { scene_id: scene.scene_id.clone(), failure })?;
    let scores = score_task(oracle, &planned.report.plans, scene, task)?;
    Ok((scores, planned.report.warnings.len(), planned.trace))
}

fn run_score(scores: &[&SceneScores], metric: Metric, weighting: Weighting) -> Option<f64> {
    match weighting {
        Weighting::Object => SceneScores::sum(scores.iter().copied()).get(metric).value(),
        Weighting::Scene => {
            let defined: Vec<f64> = scores.iter().filter_map(|s| s.get(metric).value()).collect();
            (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
        }
    }
}

/// Run every (run, task, mode) over the dataset. `make_backend` is called
/// once per run index so stochastic backends can be reseeded.
pub fn run_eval(
    dataset: &Dataset,
    oracle: &Oracle,
    spec: &EvalSpec,
    make_backend: &(dyn Fn(usize) -> Result<Box<dyn Backend>, String> + Sync),
) -> Result<EvalOutcome, EvalError> {
    if spec.runs == 0 {
        return Err(EvalError::NoRuns);
    }
    if spec.tasks.is_empty() || spec.modes.is_empty() {
        return Err(EvalError::Config("at least one task and one mode are required".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.concurrency.max(1))
        .build()
        .map_err(|e| EvalError::Config(e.to_string()))?;
    let mut scene_scores = Vec::new();
    let mut traces = Vec::new();
    let mut descriptor = None;
    for run in 0..spec.runs {
        let backend = make_backend(run).map_err(EvalError::Config)?;
        let desc = backend.descriptor();
        for &task in &spec.tasks {
            let task_spec = TaskSpec::from(task);
            for &mode in &spec.modes {
                let one = |scene: &Scene| plan_and_score(oracle, backend.as_ref(), scene, &task_spec, mode);
                let results: Vec<SceneResult> = if desc.concurrent_safe {
                    pool.install(|| dataset.scenes.par_iter().map(one).collect())
                } else {
                    dataset.scenes.iter().map(one).collect()
                };
                for (scene, result) in dataset.scenes.iter().zip(results) {
                    let (scores, warnings, trace) = result?;
                    scene_scores.push(SceneScoreRow { run, task, mode, scene_id: scene.scene_id.clone(), scores });
                    traces.push(TraceRow { run, task, mode, scene_id: scene.scene_id.clone(), parse_warnings: warnings, trace });
                }
            }
        }
        descriptor.get_or_insert(desc);
    }
    let descriptor = descriptor.expect("at least one run");

    let mut rows = Vec::new();
    for &task in &spec.tasks {
        for &mode in &spec.modes {
            let per_run: Vec<Vec<&SceneScores>> = (0..spec.runs)
                .map(|run| {
                    scene_scores
                        .iter()
                        .filter(|r| r.run == run && r.task == task && r.mode == mode)
                        .map(|r| &r.scores)
                        .collect()
                })
                .collect();
            let mut metrics = BTreeMap::new();
            for m in Metric::ALL {
                let values: Option<Vec<f64>> = per_run.iter().map(|s| run_score(s, m, spec.weighting)).collect();
                let agg = match values {
                    Some(v) => Some(aggregate_runs(&v)?),
                    None => None,
                };
                metrics.insert(m, agg);
            }
            let first = &per_run[0];
            rows.push(ReportRow {
                task,
                method: format!("{}({})", descriptor.label, mode.letter()),
                mode,
                runs: spec.runs,
                objects: first.iter().map(|s| s.sta.den as usize).sum(),
                extra_predictions: per_run.iter().flatten().map(|s| s.extra_predictions).sum(),
                metrics,
            });
        }
    }

    let mut prompt_hashes: Vec<String> = traces.iter().filter_map(|t| t.trace.prompt_hash.clone()).collect();
    prompt_hashes.sort();
    prompt_hashes.dedup();
    let provenance = Provenance {
        dataset: dataset.name.clone(),
        dataset_version: dataset.version.clone(),
        catalog_version: dataset.catalog_version.clone(),
        synonyms_version: SynonymTable::builtin().version.clone(),
        seed: spec.seed,
        runs: spec.runs,
        backend: descriptor,
        weighting: spec.weighting,
        temperature: traces.iter().find_map(|t| t.trace.temperature),
        prompt_hashes,
    };
    Ok(EvalOutcome { report: MetricsReport { provenance, rows }, scene_scores, traces })
}

fn scores_csv(rows: &[SceneScoreRow]) -> String {
    let mut out = String::from("run,task,mode,scene_id");
    for m in Metric::ALL {
        let _ = write!(out, ",{m}_num,{m}_den");
    }
    out.push_str(",unmatched_gt,extra_predictions\n");
    for r in rows {
        let _ = write!(out, "{},{},{},{}", r.run, r.task, r.mode, r.scene_id);
        for m in Metric::ALL {
            let ratio = r.scores.get(m);
            let _ = write!(out, ",{},{}", ratio.num, ratio.den);
        }
        let _ = writeln!(out, ",{},{}", r.scores.unmatched_gt, r.scores.extra_predictions);
    }
    out
}

/// Write manifest, per-scene scores, rendered reports and traces. Everything
/// except `trace.json` is a deterministic function of the inputs.
pub fn write_run_dir(dir: &Path, outcome: &EvalOutcome, manifest: &serde_json::Value) -> Result<(), EvalError> {
    let io = |e: std::io::Error| EvalError::Io(format!("{}: {e}", dir.display()));
    fs::create_dir_all(dir).map_err(io)?;
    let write = |name: &str, text: String| fs::write(dir.join(name), text).map_err(io);
    let mut m = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    m.push('\n');
    write("manifest.json", m)?;
    write("scores.csv", scores_csv(&outcome.scene_scores))?;
    write("report.txt", render_report(&outcome.report, ReportFormat::Plain, Columns::All)?)?;
    write("report.md", render_report(&outcome.report, ReportFormat::Markdown, Columns::All)?)?;
    write("report.csv", render_report(&outcome.report, ReportFormat::Csv, Columns::All)?)?;
    write("report.json", outcome.report.to_json())?;
    let mut t = serde_json::to_string_pretty(&outcome.traces).expect("traces serialize");
    t.push('\n');
    write("trace.json", t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{CaptionErrorModel, ModularBackend, OracleBackend};
    use crate::gen::{generate_dataset, GenConfig};

    #[test]
    fn oracle_scores_perfectly() {
        let o = Oracle::default();
        let d = generate_dataset(&o, &GenConfig::default()).unwrap();
        let out = run_eval(&d, &o, &EvalSpec::default(), &|_| Ok(Box::new(OracleBackend::new(Oracle::default())))).unwrap();
        for row in &out.report.rows {
            for m in Metric::ALL {
                let cell = row.cell(m);
                match (m, row.task) {
                    (Metric::AmbA, TaskId::T2 | TaskId::T3) => assert_eq!(cell, "-"),
                    _ => assert_eq!(cell, "100.00±0.00", "{:?} {m}", row.task),
                }
            }
        }
        assert_eq!(out.scene_scores.len(), 3 * 3 * 40);
    }

    #[test]
    fn serial_and_parallel_agree() {
        let o = Oracle::default();
        let d = generate_dataset(&o, &GenConfig { scene_count: 12, ..GenConfig::default() }).unwrap();
        let make = |run: usize| -> Result<Box<dyn Backend>, String> {
            Ok(Box::new(ModularBackend::simulated(Oracle::default(), CaptionErrorModel::new(0.5, 0.2, run as u64).unwrap())))
        };
        let one = run_eval(&d, &o, &EvalSpec { concurrency: 1, ..EvalSpec::default() }, &make).unwrap();
        let many = run_eval(&d, &o, &EvalSpec { concurrency: 8, ..EvalSpec::default() }, &make).unwrap();
        assert_eq!(one.report, many.report);
        assert_eq!(one.scene_scores, many.scene_scores);
    }

    #[test]
    fn run_directory_contents() {
        let o = Oracle::default();
        let d = generate_dataset(&o, &GenConfig { scene_count: 3, ..GenConfig::default() }).unwrap();
        let spec = EvalSpec { runs: 1, ..EvalSpec::default() };
        let out = run_eval(&d, &o, &spec, &|_| Ok(Box::new(OracleBackend::default()))).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_run_dir(dir.path(), &out, &serde_json::json!({"seed": 42})).unwrap();
        for f in ["manifest.json", "scores.csv", "report.txt", "report.md", "report.csv", "report.json", "trace.json"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let csv = std::fs::read_to_string(dir.path().join("scores.csv")).unwrap();
        assert_eq!(csv.lines().count(), 1 + 3 * 3);
        let txt = std::fs::read_to_string(dir.path().join("report.txt")).unwrap();
        assert!(txt.contains("Oracle(Z)"));
        assert!(!txt.contains('±'));
    }
}
