//! Plan-generation backends behind one interface: (input, task, mode) to a
//! parse report plus a trace of every stage.

mod caption;
mod chat;
mod prompt;
mod registry;

use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use caption::{simulate_captions, CaptionErrorModel, RuleBasedPlanner};
pub use chat::{
    ChatError, ChatMessage, ChatModel, ChatRequest, ChatResponse, ContentPart, RemoteChatClient, RemoteConfig,
    ReplayModel, Usage, API_KEY_ENV,
};
pub use registry::{build_backend, BackendSettings, BACKEND_IDS};
pub use prompt::{build_prompt, Exemplar, InputKind, OutputSchema, Prompt, PromptError, PromptMode, PromptSpec, COT_STEPS};

use crate::oracle::{Oracle, OracleError, TaskSpec};
use crate::plan::{emit_plans, parse_model_output, ParseReport, ParseWarning, PlanParseError};
use crate::scene::Scene;

#[derive(Debug, Clone, PartialEq)]
pub enum SceneInput {
    Image { bytes: Vec<u8>, media_type: String },
    Caption(String),
    Scene(Scene),
}

impl SceneInput {
    pub fn kind(&self) -> &'static str {
        match self {
            SceneInput::Image { .. } => "image",
            SceneInput::Caption(_) => "caption",
            SceneInput::Scene(_) => "scene",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub input: String,
    pub output: String,
    #[serde(default)]
    pub latency: Duration,
    #[serde(default = "one")]
    pub attempts: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<Usage>,
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub backend: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    pub stages: Vec<StageRecord>,
}

impl RunTrace {
    fn new(backend: &str) -> Self {
        RunTrace { backend: backend.into(), ..RunTrace::default() }
    }

    pub fn total_latency(&self) -> Duration {
        self.stages.iter().map(|s| s.latency).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("{backend} cannot take {input} input: {reason}")]
    IncompatibleInput { backend: String, input: &'static str, reason: String },
    #[error(transparent)]
    Chat(#[from] ChatError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("cannot read scene image: {0}")]
    Image(String),
}

/// A backend error together with whatever stages completed before it.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{error}")]
pub struct BackendFailure {
    pub error: BackendError,
    pub trace: RunTrace,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Planned {
    pub report: ParseReport,
    pub trace: RunTrace,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub id: String,
    /// Method name used in reports.
    pub label: String,
    /// False means the harness must not call `plan` concurrently.
    pub concurrent_safe: bool,
}

pub trait Backend: Send + Sync {
    fn descriptor(&self) -> BackendDescriptor;
    fn plan(&self, input: &SceneInput, task: &TaskSpec, mode: PromptMode) -> Result<Planned, BackendFailure>;
}

/// Parse model text into a report; output with no structured content becomes
/// an empty report with a warning rather than an error.
fn parse_lenient(text: &str) -> ParseReport {
    match parse_model_output(text) {
        Ok(r) => r,
        Err(e) => {
            let (offset, message) = match e {
                PlanParseError::Malformed(m) => (m.offset, m.message),
                other => (0, other.to_string()),
            };
            ParseReport { plans: Vec::new(), warnings: vec![ParseWarning::SkippedBlock { offset, message }], discarded_fragments: 1 }
        }
    }
}

fn fail(error: impl Into<BackendError>, trace: RunTrace) -> BackendFailure {
    BackendFailure { error: error.into(), trace }
}

fn incompatible(backend: &str, input: &SceneInput, reason: &str, trace: RunTrace) -> BackendFailure {
    fail(
        BackendError::IncompatibleInput { backend: backend.into(), input: input.kind(), reason: reason.into() },
        trace,
    )
}

/// Ground truth plans pushed through emit, extraction and parsing.
#[derive(Debug, Clone, Default)]
pub struct OracleBackend {
    oracle: Oracle,
}

impl OracleBackend {
    pub fn new(oracle: Oracle) -> Self {
        OracleBackend { oracle }
    }
}

impl Backend for OracleBackend {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor { id: "oracle".into(), label: "Oracle".into(), concurrent_safe: true }
    }

    fn plan(&self, input: &SceneInput, task: &TaskSpec, _mode: PromptMode) -> Result<Planned, BackendFailure> {
        let mut trace = RunTrace::new("oracle");
        let SceneInput::Scene(scene) = input else {
            return Err(incompatible("oracle", input, "needs a ground-truth scene", trace));
        };
        let started = Instant::now();
        let plans = self.oracle.plan_scene(scene, task).map_err(|e| fail(e, trace.clone()))?;
        let text = emit_plans(&plans);
        let report = parse_lenient(&text);
        trace.stages.push(StageRecord {
            stage: "oracle".into(),
            input: scene.scene_id.clone(),
            output: text,
            latency: started.elapsed(),
            attempts: 1,
            usage: None,
        });
        Ok(Planned { report, trace })
    }
}

/// Shared settings for calls to a chat model.
#[derive(Clone)]
pub struct ModelCall {
    pub model: Arc<dyn ChatModel>,
    pub model_name: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout: Duration,
}

impl ModelCall {
    pub fn new(model: Arc<dyn ChatModel>, model_name: impl Into<String>) -> Self {
        ModelCall { model, model_name: model_name.into(), temperature: 0.0, max_tokens: 2048, timeout: Duration::from_secs(60) }
    }

    fn run(&self, stage: &str, parts: Vec<ContentPart>, trace: &mut RunTrace) -> Result<String, ChatError> {
        let input = parts
            .iter()
            .map(|p| match p {
                ContentPart::Text { text } => text.clone(),
                ContentPart::Image { media_type, bytes } => format!("[{media_type}, {} bytes]", bytes.len()),
            })
            .collect::<Vec<_>>()
            .join("\n");
        let mut request = ChatRequest::new(self.model_name.clone(), vec![ChatMessage::user(parts)]);
        request.temperature = self.temperature;
        request.max_tokens = self.max_tokens;
        request.timeout = self.timeout;
        trace.temperature = Some(self.temperature);
        let response = self.model.complete(&request)?;
        trace.stages.push(StageRecord {
            stage: stage.into(),
            input,
            output: response.text.clone(),
            latency: response.latency,
            attempts: response.attempts,
            usage: response.usage,
        });
        Ok(response.text)
    }
}

fn media_type_for(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => "image/png",
        Some("webp") => "image/webp",
        Some("gif") => "image/gif",
        _ => "image/jpeg",
    }
}

fn scene_image(scene: &Scene) -> Option<Result<(Vec<u8>, String), BackendError>> {
    let path = scene.image_ref.as_ref()?;
    Some(
        std::fs::read(path)
            .map(|bytes| (bytes, media_type_for(path).to_string()))
            .map_err(|e| BackendError::Image(format!("{}: {e}", path.display()))),
    )
}

/// One vision-language call from image and prompt to plans.
pub struct MonolithicBackend {
    oracle: Oracle,
    call: ModelCall,
    schema: OutputSchema,
}

impl MonolithicBackend {
    pub fn new(oracle: Oracle, call: ModelCall) -> Self {
        MonolithicBackend { oracle, call, schema: OutputSchema::FullPlan }
    }

    pub fn with_schema(mut self, schema: OutputSchema) -> Self {
        self.schema = schema;
        self
    }
}

impl Backend for MonolithicBackend {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor { id: "monolithic-remote".into(), label: "OSSA-VLM".into(), concurrent_safe: true }
    }

    fn plan(&self, input: &SceneInput, task: &TaskSpec, mode: PromptMode) -> Result<Planned, BackendFailure> {
        let mut trace = RunTrace::new("monolithic-remote");
        let (bytes, media_type) = match input {
            SceneInput::Image { bytes, media_type } => (bytes.clone(), media_type.clone()),
            SceneInput::Scene(scene) => match scene_image(scene) {
                Some(Ok(image)) => image,
                Some(Err(e)) => return Err(fail(e, trace)),
                None => return Err(incompatible("monolithic-remote", input, "scene has no image_ref", trace)),
            },
            SceneInput::Caption(_) => return Err(incompatible("monolithic-remote", input, "needs an image", trace)),
        };
        let spec = PromptSpec::new(task.clone(), mode).with_schema(self.schema);
        let prompt = build_prompt(&self.oracle, &spec, InputKind::Image)
            .map_err(|e| fail(e, trace.clone()))?;
        trace.prompt_hash = Some(prompt.hash());
        let parts = vec![ContentPart::Text { text: prompt.text }, ContentPart::Image { media_type, bytes }];
        let text = self.call.run("plan", parts, &mut trace).map_err(|e| fail(e, trace.clone()))?;
        Ok(Planned { report: parse_lenient(&text), trace })
    }
}

const CAPTION_PROMPT: &str = "Describe every object on the table, one sentence per object, in the form \
\"a <size> <shape> <color> <object> on the table.\" Name the condition of each object as part of the \
object (for example \"half apple\", \"banana peel\", \"dirty plate\", \"bowl with soup\"). \
Sizes are small, medium or big.";

pub enum Captioner {
    Simulated(CaptionErrorModel),
    Remote(ModelCall),
}

pub enum TextPlanner {
    RuleBased(RuleBasedPlanner),
    Remote(ModelCall),
}

/// Caption stage followed by a text-only planning stage.
pub struct ModularBackend {
    oracle: Oracle,
    captioner: Captioner,
    planner: TextPlanner,
    schema: OutputSchema,
}

impl ModularBackend {
    pub fn new(oracle: Oracle, captioner: Captioner, planner: TextPlanner) -> Self {
        ModularBackend { oracle, captioner, planner, schema: OutputSchema::FullPlan }
    }

    /// Only affects a remote text planner; the rule-based one always emits full plans.
    pub fn with_schema(mut self, schema: OutputSchema) -> Self {
        self.schema = schema;
        self
    }

    /// Simulated captions read by the rule-based planner; fully offline.
    pub fn simulated(oracle: Oracle, em: CaptionErrorModel) -> Self {
        let planner = TextPlanner::RuleBased(RuleBasedPlanner::new(oracle.clone()));
        ModularBackend::new(oracle, Captioner::Simulated(em), planner)
    }

    fn id(&self) -> &'static str {
        match (&self.captioner, &self.planner) {
            (Captioner::Simulated(_), TextPlanner::RuleBased(_)) => "modular-sim",
            _ => "modular-remote",
        }
    }

    fn caption(&self, input: &SceneInput, trace: &mut RunTrace) -> Result<String, BackendFailure> {
        let image = match (input, &self.captioner) {
            (SceneInput::Caption(text), _) => return Ok(text.clone()),
            (SceneInput::Scene(scene), Captioner::Simulated(em)) => {
                let started = Instant::now();
                let text = simulate_captions(&self.oracle, scene, em);
                trace.stages.push(StageRecord {
                    stage: "caption".into(),
                    input: scene.scene_id.clone(),
                    output: text.clone(),
                    latency: started.elapsed(),
                    attempts: 1,
                    usage: None,
                });
                return Ok(text);
            }
            (SceneInput::Image { bytes, media_type }, Captioner::Remote(_)) => (bytes.clone(), media_type.clone()),
            (SceneInput::Scene(scene), Captioner::Remote(_)) => match scene_image(scene) {
                Some(Ok(image)) => image,
                Some(Err(e)) => return Err(fail(e, trace.clone())),
                None => return Err(incompatible(self.id(), input, "scene has no image_ref", trace.clone())),
            },
            (SceneInput::Image { .. }, Captioner::Simulated(_)) => {
                return Err(incompatible(self.id(), input, "the simulated captioner needs a ground-truth scene", trace.clone()))
            }
        };
        let Captioner::Remote(call) = &self.captioner else { unreachable!("image paths use the remote captioner") };
        let parts = vec![ContentPart::Text { text: CAPTION_PROMPT.into() }, ContentPart::Image { media_type: image.1, bytes: image.0 }];
        call.run("caption", parts, trace).map_err(|e| fail(e, trace.clone()))
    }
}

impl Backend for ModularBackend {
    fn descriptor(&self) -> BackendDescriptor {
        let label = match self.captioner {
            Captioner::Simulated(_) => "OSSA-LLM-SIM",
            Captioner::Remote(_) => "OSSA-LLM-DCM",
        };
        BackendDescriptor { id: self.id().into(), label: label.into(), concurrent_safe: true }
    }

    fn plan(&self, input: &SceneInput, task: &TaskSpec, mode: PromptMode) -> Result<Planned, BackendFailure> {
        let mut trace = RunTrace::new(self.id());
        let captions = self.caption(input, &mut trace)?;
        let text = match &self.planner {
            TextPlanner::RuleBased(p) => {
                let started = Instant::now();
                let text = p.plan(&captions, task);
                trace.stages.push(StageRecord {
                    stage: "plan".into(),
                    input: captions,
                    output: text.clone(),
                    latency: started.elapsed(),
                    attempts: 1,
                    usage: None,
                });
                text
            }
            TextPlanner::Remote(call) => {
                let spec = PromptSpec::new(task.clone(), mode).with_schema(self.schema);
                let prompt = build_prompt(&self.oracle, &spec, InputKind::Caption)
                    .map_err(|e| fail(e, trace.clone()))?;
                trace.prompt_hash = Some(prompt.hash());
                let text = format!("{}\nScene description:\n{captions}\n", prompt.text);
                call.run("plan", vec![ContentPart::Text { text }], &mut trace).map_err(|e| fail(e, trace.clone()))?
            }
        };
        Ok(Planned { report: parse_lenient(&text), trace })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gen::{generate_dataset, GenConfig};
    use crate::oracle::TaskId;
    use crate::plan::Field;
    use crate::scene::ObjectState;

    #[test]
    fn oracle_backend_matches_ground_truth() {
        let o = Oracle::default();
        let d = generate_dataset(&o, &GenConfig::default()).unwrap();
        let b = OracleBackend::new(o.clone());
        for task in TaskId::ALL {
            let spec = TaskSpec::from(task);
            for s in &d.scenes {
                let out = b.plan(&SceneInput::Scene(s.clone()), &spec, PromptMode::ZeroShot).unwrap();
                assert_eq!(out.report.plans, o.plan_scene(s, &spec).unwrap());
                assert!(out.report.warnings.is_empty());
            }
        }
        let err = b.plan(&SceneInput::Caption("x".into()), &TaskId::T1.into(), PromptMode::ZeroShot).unwrap_err();
        assert!(matches!(err.error, BackendError::IncompatibleInput { .. }));
    }

    #[test]
    fn saturated_state_omission_leaves_only_default_states() {
        let o = Oracle::default();
        let d = generate_dataset(&o, &GenConfig::default()).unwrap();
        let b = ModularBackend::simulated(o.clone(), CaptionErrorModel::new(1.0, 0.0, 5).unwrap());
        for s in &d.scenes {
            let out = b.plan(&SceneInput::Scene(s.clone()), &TaskId::T1.into(), PromptMode::ZeroShot).unwrap();
            for p in &out.report.plans {
                let cat = o.catalog().category_of(&p.name).unwrap();
                let default = o.catalog().entry(&cat).unwrap().default_state();
                assert!(p.state.is_unknown() || p.state.is(&default), "{p:?}");
            }
            assert_eq!(out.trace.stages.len(), 2);
        }
    }

    #[test]
    fn monolithic_replays_fixture_answer() {
        let answer = "Sure!\n```json\n{\"bowl\": {\"state\": \"containing leftover food\", \"destination\": \"uncertain\"}}\n```";
        let call = ModelCall::new(Arc::new(ReplayModel::new(answer)), "stub");
        let b = MonolithicBackend::new(Oracle::default(), call);
        let input = SceneInput::Image { bytes: vec![0xff, 0xd8], media_type: "image/jpeg".into() };
        let out = b.plan(&input, &TaskId::T1.into(), PromptMode::FewShot).unwrap();
        assert_eq!(out.report.plans, parse_model_output(answer).unwrap().plans);
        assert!(out.report.plans[0].state.is(&ObjectState::ContainingLeftoverFood));
        assert_eq!(out.report.plans[0].grasping_type, Field::Unknown);
        assert!(out.trace.prompt_hash.is_some());
        assert_eq!(out.trace.temperature, Some(0.0));

        let no_image = Scene { scene_id: "s".into(), image_ref: None, objects: vec![] };
        let err = b.plan(&SceneInput::Scene(no_image), &TaskId::T1.into(), PromptMode::ZeroShot).unwrap_err();
        assert!(matches!(err.error, BackendError::IncompatibleInput { .. }));
    }

    #[test]
    fn garbage_output_is_an_empty_report() {
        let call = ModelCall::new(Arc::new(ReplayModel::new("I cannot see any table.")), "stub");
        let b = ModularBackend::new(Oracle::default(), Captioner::Simulated(CaptionErrorModel::noiseless(0)), TextPlanner::Remote(call));
        let out = b.plan(&SceneInput::Caption("a small round red apple on the table.".into()), &TaskId::T2.into(), PromptMode::ZeroShot).unwrap();
        assert!(out.report.plans.is_empty());
        assert_eq!(out.report.discarded_fragments, 1);
        assert_eq!(b.descriptor().id, "modular-remote");
    }
}
