//! Scoring predicted plans against the oracle, aggregation over runs, and
//! report rendering.

mod report;
mod runner;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use report::{render_report, Aggregate, Columns, MetricsReport, Provenance, ReportFormat, ReportRow};
pub use runner::{run_eval, write_run_dir, EvalOutcome, EvalSpec, SceneScoreRow, TraceRow, Weighting};

use crate::backends::BackendFailure;
use crate::catalog::Catalog;
use crate::labels::canonicalize_label;
use crate::oracle::{Oracle, OracleError, TaskSpec};
use crate::plan::ObjectManipulationPlan;
use crate::scene::{Destination, Scene};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("scene '{0}' has no objects")]
    EmptyScene(String),
    #[error("no runs to aggregate")]
    NoRuns,
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("scene '{scene_id}': {failure}")]
    Backend { scene_id: String, failure: BackendFailure },
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Metric {
    StaA,
    AmbA,
    DesA,
    GraA,
    PlaA,
    ComA,
}

impl Metric {
    pub const ALL: [Metric; 6] = [Metric::StaA, Metric::AmbA, Metric::DesA, Metric::GraA, Metric::PlaA, Metric::ComA];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::StaA => "StaA",
            Metric::AmbA => "AmbA",
            Metric::DesA => "DesA",
            Metric::GraA => "GraA",
            Metric::PlaA => "PlaA",
            Metric::ComA => "ComA",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Metric::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown metric '{s}'"))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ratio {
    pub num: u32,
    pub den: u32,
}

impl Ratio {
    /// `None` when the denominator is zero.
    pub fn value(self) -> Option<f64> {
        (self.den > 0).then(|| f64::from(self.num) / f64::from(self.den))
    }

    fn tally(&mut self, hit: bool) {
        self.den += 1;
        self.num += u32::from(hit);
    }
}

impl std::ops::Add for Ratio {
    type Output = Ratio;

    fn add(self, o: Ratio) -> Ratio {
        Ratio { num: self.num + o.num, den: self.den + o.den }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneScores {
    pub sta: Ratio,
    pub amb: Ratio,
    pub des: Ratio,
    pub gra: Ratio,
    pub pla: Ratio,
    pub com: Ratio,
    pub unmatched_gt: usize,
    pub extra_predictions: usize,
}

impl SceneScores {
    pub fn get(&self, m: Metric) -> Ratio {
        match m {
            Metric::StaA => self.sta,
            Metric::AmbA => self.amb,
            Metric::DesA => self.des,
            Metric::GraA => self.gra,
            Metric::PlaA => self.pla,
            Metric::ComA => self.com,
        }
    }

    fn add(&mut self, o: &SceneScores) {
        self.sta = self.sta + o.sta;
        self.amb = self.amb + o.amb;
        self.des = self.des + o.des;
        self.gra = self.gra + o.gra;
        self.pla = self.pla + o.pla;
        self.com = self.com + o.com;
        self.unmatched_gt += o.unmatched_gt;
        self.extra_predictions += o.extra_predictions;
    }

    /// Object-weighted totals.
    pub fn sum<'a>(scores: impl IntoIterator<Item = &'a SceneScores>) -> SceneScores {
        let mut total = SceneScores::default();
        for s in scores {
            total.add(s);
        }
        total
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Matching {
    /// (ground-truth index, prediction index), in ground-truth order.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_gt: Vec<String>,
    pub extra_predictions: Vec<String>,
}

/// Sort key within a category: explicit index first, then the name, then
/// position, so the pairing does not depend on prediction order.
fn order_key(name: &str, position: usize) -> (u32, String, usize) {
    match canonicalize_label(name) {
        Ok(l) => (l.index.unwrap_or(0), l.token, position),
        Err(_) => (0, String::new(), position),
    }
}

/// Pair predictions with ground-truth objects by catalog category: equal
/// names pair first, the remainder in index order within each category.
pub fn match_objects(catalog: &Catalog, predictions: &[ObjectManipulationPlan], scene: &Scene) -> Matching {
    let category = |name: &str| catalog.category_of(name).unwrap_or_default();
    let mut gt_groups: HashMap<String, Vec<usize>> = HashMap::new();
    for (i, a) in scene.objects.iter().enumerate() {
        gt_groups.entry(category(&a.name)).or_default().push(i);
    }
    let mut pred_groups: HashMap<String, Vec<usize>> = HashMap::new();
    for (i, p) in predictions.iter().enumerate() {
        pred_groups.entry(category(&p.name)).or_default().push(i);
    }
    let mut partner: Vec<Option<usize>> = vec![None; scene.objects.len()];
    let mut used = vec![false; predictions.len()];
    for (cat, gt) in &mut gt_groups {
        let Some(preds) = pred_groups.get_mut(cat) else { continue };
        gt.sort_by_key(|&i| order_key(&scene.objects[i].name, i));
        preds.sort_by_key(|&i| order_key(&predictions[i].name, i));
        // exact names first, then the rest in index order
        let token = |name: &str| canonicalize_label(name).map(|l| l.token).ok();
        for &g in gt.iter() {
            let want = token(&scene.objects[g].name);
            if let Some(&p) = preds.iter().find(|&&p| !used[p] && want.is_some() && token(&predictions[p].name) == want) {
                partner[g] = Some(p);
                used[p] = true;
            }
        }
        let free: Vec<usize> = preds.iter().copied().filter(|&p| !used[p]).collect();
        let open: Vec<usize> = gt.iter().copied().filter(|&g| partner[g].is_none()).collect();
        for (g, p) in open.into_iter().zip(free) {
            partner[g] = Some(p);
            used[p] = true;
        }
    }
    let mut m = Matching::default();
    for (g, p) in partner.into_iter().enumerate() {
        match p {
            Some(p) => m.pairs.push((g, p)),
            None => m.unmatched_gt.push(scene.objects[g].name.clone()),
        }
    }
    m.extra_predictions = predictions.iter().zip(&used).filter(|(_, u)| !**u).map(|(p, _)| p.name.clone()).collect();
    m
}

/// Per-field accuracy of `predictions` for one scene under `task`.
/// Denominators are ground-truth objects; unmatched objects count as wrong.
pub fn score_task(
    oracle: &Oracle,
    predictions: &[ObjectManipulationPlan],
    scene: &Scene,
    task: &TaskSpec,
) -> Result<SceneScores, EvalError> {
    if scene.objects.is_empty() {
        return Err(EvalError::EmptyScene(scene.scene_id.clone()));
    }
    let expected = oracle.expected_plans(scene, task)?;
    let matching = match_objects(oracle.catalog(), predictions, scene);
    let mut partner = vec![None; scene.objects.len()];
    for &(g, p) in &matching.pairs {
        partner[g] = Some(&predictions[p]);
    }
    let mut s = SceneScores {
        unmatched_gt: matching.unmatched_gt.len(),
        extra_predictions: matching.extra_predictions.len(),
        ..SceneScores::default()
    };
    for (e, pred) in expected.iter().zip(partner) {
        let state = pred.is_some_and(|p| p.state.is(&e.state));
        let dest = pred.is_some_and(|p| p.destination.is(&e.destination));
        let grasp = pred.is_some_and(|p| p.grasping_type.is(&e.grasping_type));
        let place = pred.is_some_and(|p| p.placing_type.is(&e.placing_type));
        s.sta.tally(state);
        s.des.tally(dest);
        s.gra.tally(grasp);
        s.pla.tally(place);
        s.com.tally(state && dest && grasp && place);
        if e.destination == Destination::Uncertain {
            s.amb.tally(pred.is_some_and(|p| p.destination.is(&Destination::Uncertain)));
        }
    }
    Ok(s)
}

/// Mean and sample standard deviation (two-pass).
pub fn aggregate_runs(values: &[f64]) -> Result<Aggregate, EvalError> {
    if values.is_empty() {
        return Err(EvalError::NoRuns);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.len() >= 2).then(|| {
        let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        (ss / (n - 1.0)).sqrt()
    });
    Ok(Aggregate { mean, std, n: values.len() })
}
