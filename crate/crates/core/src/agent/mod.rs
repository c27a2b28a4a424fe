//! Episode orchestration: generate plans once, ask the user about every plan
//! whose destination is uncertain, revise, and hand validated commands to
//! an executor.

use std::fmt;
use std::time::{Duration, Instant};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{Backend, BackendFailure, PromptMode, RunTrace, SceneInput};
use crate::labels::{canonicalize_label, SynonymTable};
use crate::oracle::{discard_rule, keep_rule, LeftoverClass, TaskId, TaskSpec};
use crate::plan::{Field, ObjectManipulationPlan, ParseWarning};
use crate::scene::{Destination, GraspType, ObjectState, PlaceType};

/// Unrecognized answers tolerated per clarification before giving up.
pub const MAX_ANSWER_ATTEMPTS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Answer {
    Keep,
    Discard,
}

impl Answer {
    pub fn as_str(self) -> &'static str {
        match self {
            Answer::Keep => "keep",
            Answer::Discard => "discard",
        }
    }

    /// Map free text onto keep/discard through the synonym table.
    pub fn normalize(raw: &str) -> Option<Answer> {
        let token = canonicalize_label(raw).ok()?.token;
        let table = SynonymTable::builtin();
        let hit = |key: &str| {
            table.answers.get(key).is_some_and(|list| {
                list.iter().any(|a| canonicalize_label(a).is_ok_and(|l| l.token == token))
            })
        };
        match (token.as_str(), hit("keep"), hit("discard")) {
            ("keep", ..) | (_, true, false) => Some(Answer::Keep),
            ("discard", ..) | (_, false, true) => Some(Answer::Discard),
            _ => None,
        }
    }
}

impl fmt::Display for Answer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClarificationRequest {
    pub object: String,
    pub state: Field<ObjectState>,
    pub question: String,
    pub allowed_answers: Vec<Answer>,
}

impl ClarificationRequest {
    fn for_plan(plan: &ObjectManipulationPlan) -> Self {
        let question = match plan.state.known() {
            Some(s) => format!("The {} is {s}. Should I keep it or discard it?", plan.name),
            None => format!("Should I keep or discard the {}?", plan.name),
        };
        ClarificationRequest {
            object: plan.name.clone(),
            state: plan.state.clone(),
            question,
            allowed_answers: vec![Answer::Keep, Answer::Discard],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AgentError {
    #[error("backend failed: {0}")]
    Backend(BackendFailure),
    #[error("plan for '{0}' is not ambiguous")]
    NotAmbiguous(String),
    #[error("unrecognized answer '{0}' (expected keep or discard)")]
    UnrecognizedAnswer(String),
    #[error("no usable answer for '{0}' after {MAX_ANSWER_ATTEMPTS} attempts")]
    PolicyExhausted(String),
    #[error("no clarification is pending")]
    NotAwaitingAnswer,
    #[error("the pending clarification is about '{expected}', not '{got}'")]
    WrongObject { expected: String, got: String },
    #[error("clarification for '{0}' is still pending")]
    StillPending(String),
}

/// Resolve an uncertain destination from the user's answer; every other
/// field is kept.
pub fn revise_plan(plan: &ObjectManipulationPlan, answer: &str) -> Result<ObjectManipulationPlan, AgentError> {
    if !plan.destination.is(&Destination::Uncertain) {
        return Err(AgentError::NotAmbiguous(plan.name.clone()));
    }
    let answer = Answer::normalize(answer).ok_or_else(|| AgentError::UnrecognizedAnswer(answer.to_string()))?;
    Ok(apply_answer(plan, answer))
}

fn apply_answer(plan: &ObjectManipulationPlan, answer: Answer) -> ObjectManipulationPlan {
    let contains = match plan.state.known() {
        Some(s) => *s == ObjectState::ContainingLeftoverFood,
        // an uncertain container without a state is taken to hold food
        None => plan.container.is(&true),
    };
    let (destination, placing) = match answer {
        Answer::Keep => keep_rule(),
        Answer::Discard if contains => discard_rule(LeftoverClass::ContainingLeftoverFood),
        Answer::Discard => discard_rule(LeftoverClass::LeftoverFood),
    };
    let mut revised = plan.clone();
    revised.destination = Field::Known(destination);
    revised.placing_type = Field::Known(placing);
    revised
}

/// A fully canonical instruction for the low-level executor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Command {
    pub object: String,
    pub grasping_type: GraspType,
    pub destination: Destination,
    pub placing_type: PlaceType,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quarantined {
    pub plan: ObjectManipulationPlan,
    pub reasons: Vec<String>,
}

/// One command per plan; plans missing a grasp, destination or placing type
/// are set aside with the reasons.
pub fn to_commands(plans: &[ObjectManipulationPlan]) -> (Vec<Command>, Vec<Quarantined>) {
    let mut commands = Vec::new();
    let mut quarantined = Vec::new();
    for p in plans {
        debug_assert!(
            !p.destination.is(&Destination::Uncertain),
            "uncertain destination reached dispatch for '{}'",
            p.name
        );
        let mut reasons = Vec::new();
        if p.grasping_type.is_unknown() {
            reasons.push("unknown grasp".to_string());
        }
        match p.destination {
            Field::Unknown => reasons.push("unknown destination".into()),
            Field::Known(Destination::Uncertain) => reasons.push("uncertain destination".into()),
            Field::Known(_) => {}
        }
        if p.placing_type.is_unknown() {
            reasons.push("unknown placing".into());
        }
        match (p.grasping_type.get(), p.destination.get(), p.placing_type.get()) {
            (Some(grasping_type), Some(destination), Some(placing_type)) if reasons.is_empty() => {
                commands.push(Command { object: p.name.clone(), grasping_type, destination, placing_type })
            }
            _ => quarantined.push(Quarantined { plan: p.clone(), reasons }),
        }
    }
    (commands, quarantined)
}

pub trait Executor {
    fn execute(&mut self, commands: &[Command]);
}

/// Validating stand-in for learned manipulation skills: records and logs.
#[derive(Debug, Default)]
pub struct LoggingExecutor {
    pub executed: Vec<Command>,
}

impl Executor for LoggingExecutor {
    fn execute(&mut self, commands: &[Command]) {
        for c in commands {
            assert!(c.destination != Destination::Uncertain, "executor received an uncertain destination");
            log::info!("{} {} -> {} ({})", c.grasping_type, c.object, c.destination, c.placing_type);
        }
        self.executed.extend_from_slice(commands);
    }
}

/// Supplies answers for an interactive policy. `None` means no answer is
/// coming, which ends the episode like running out of attempts.
pub trait AnswerProvider: Send {
    fn answer(&mut self, request: &ClarificationRequest) -> Option<String>;
}

pub enum UserPolicy {
    Scripted(ScriptedPolicy),
    Interactive(Box<dyn AnswerProvider>),
}

/// Per-object answers with an optional global fallback.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedPolicy {
    pub global: Option<Answer>,
    pub per_object: IndexMap<String, Answer>,
}

impl ScriptedPolicy {
    pub fn always(answer: Answer) -> Self {
        ScriptedPolicy { global: Some(answer), per_object: IndexMap::new() }
    }

    fn answer_for(&self, object: &str) -> Option<Answer> {
        self.per_object.get(object).copied().or(self.global)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub request: ClarificationRequest,
    /// Every reply received, recognized or not.
    pub replies: Vec<String>,
    pub answer: Answer,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub plan_ms: f64,
    pub clarify_ms: f64,
    pub dispatch_ms: f64,
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1000.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub task: TaskId,
    pub instruction: String,
    pub initial_plans: Vec<ObjectManipulationPlan>,
    pub final_plans: Vec<ObjectManipulationPlan>,
    pub parse_warnings: Vec<ParseWarning>,
    pub transcript: Vec<TranscriptEntry>,
    pub commands: Vec<Command>,
    pub quarantined: Vec<Quarantined>,
    pub timings: Timings,
    pub trace: RunTrace,
}

impl PartialEq for EpisodeResult {
    /// Timings and the backend trace (which carries latencies) are ignored.
    fn eq(&self, other: &Self) -> bool {
        self.task == other.task
            && self.instruction == other.instruction
            && self.initial_plans == other.initial_plans
            && self.final_plans == other.final_plans
            && self.parse_warnings == other.parse_warnings
            && self.transcript == other.transcript
            && self.commands == other.commands
            && self.quarantined == other.quarantined
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnswerOutcome {
    Accepted,
    /// Not recognized; this many attempts remain.
    Rejected { remaining: usize },
}

/// The clarification loop as a resumable state machine, so a session can
/// wait for a human between steps.
#[derive(Debug, Clone)]
pub struct Episode {
    task: TaskSpec,
    initial: Vec<ObjectManipulationPlan>,
    warnings: Vec<ParseWarning>,
    trace: RunTrace,
    next: usize,
    finalized: Vec<ObjectManipulationPlan>,
    transcript: Vec<TranscriptEntry>,
    pending: Option<(ClarificationRequest, Vec<String>)>,
    plan_time: Duration,
    clarify_started: Instant,
}

impl Episode {
    pub fn new(task: TaskSpec, plans: Vec<ObjectManipulationPlan>, warnings: Vec<ParseWarning>, trace: RunTrace, plan_time: Duration) -> Self {
        let mut episode = Episode {
            task,
            initial: plans,
            warnings,
            trace,
            next: 0,
            finalized: Vec::new(),
            transcript: Vec::new(),
            pending: None,
            plan_time,
            clarify_started: Instant::now(),
        };
        episode.advance();
        episode
    }

    /// Plan once with `backend` and open the episode.
    pub fn plan(backend: &dyn Backend, input: &SceneInput, task: TaskSpec, mode: PromptMode) -> Result<Self, AgentError> {
        let started = Instant::now();
        let planned = backend.plan(input, &task, mode).map_err(AgentError::Backend)?;
        Ok(Episode::new(task, planned.report.plans, planned.report.warnings, planned.trace, started.elapsed()))
    }

    fn advance(&mut self) {
        while self.pending.is_none() && self.next < self.initial.len() {
            let plan = &self.initial[self.next];
            if plan.destination.is(&Destination::Uncertain) {
                self.pending = Some((ClarificationRequest::for_plan(plan), Vec::new()));
            } else {
                self.finalized.push(plan.clone());
                self.next += 1;
            }
        }
    }

    pub fn task(&self) -> &TaskSpec {
        &self.task
    }

    pub fn pending(&self) -> Option<&ClarificationRequest> {
        self.pending.as_ref().map(|(r, _)| r)
    }

    pub fn initial_plans(&self) -> &[ObjectManipulationPlan] {
        &self.initial
    }

    /// Plans settled so far followed by those not yet reached.
    pub fn current_plans(&self) -> Vec<ObjectManipulationPlan> {
        self.finalized.iter().chain(&self.initial[self.next..]).cloned().collect()
    }

    pub fn transcript(&self) -> &[TranscriptEntry] {
        &self.transcript
    }

    /// Answer the pending clarification about `object`.
    pub fn answer(&mut self, object: &str, reply: &str) -> Result<AnswerOutcome, AgentError> {
        let (request, replies) = self.pending.as_mut().ok_or(AgentError::NotAwaitingAnswer)?;
        let same = canonicalize_label(object).is_ok_and(|l| l.token == request.object);
        if !same {
            return Err(AgentError::WrongObject { expected: request.object.clone(), got: object.to_string() });
        }
        replies.push(reply.to_string());
        let Some(answer) = Answer::normalize(reply) else {
            let remaining = MAX_ANSWER_ATTEMPTS.saturating_sub(replies.len());
            if remaining == 0 {
                return Err(AgentError::PolicyExhausted(request.object.clone()));
            }
            return Ok(AnswerOutcome::Rejected { remaining });
        };
        let (request, replies) = self.pending.take().expect("pending checked above");
        let revised = apply_answer(&self.initial[self.next], answer);
        self.finalized.push(revised);
        self.transcript.push(TranscriptEntry { request, replies, answer });
        self.next += 1;
        self.advance();
        Ok(AnswerOutcome::Accepted)
    }

    /// Convert the settled plans to commands and dispatch them.
    pub fn finish(self, executor: &mut dyn Executor) -> Result<EpisodeResult, AgentError> {
        if let Some((request, _)) = &self.pending {
            return Err(AgentError::StillPending(request.object.clone()));
        }
        let clarify = self.clarify_started.elapsed();
        let started = Instant::now();
        let (commands, quarantined) = to_commands(&self.finalized);
        if !commands.is_empty() {
            executor.execute(&commands);
        }
        Ok(EpisodeResult {
            task: self.task.id,
            instruction: self.task.instruction,
            initial_plans: self.initial,
            final_plans: self.finalized,
            parse_warnings: self.warnings,
            transcript: self.transcript,
            commands,
            quarantined,
            timings: Timings { plan_ms: ms(self.plan_time), clarify_ms: ms(clarify), dispatch_ms: ms(started.elapsed()) },
            trace: self.trace,
        })
    }
}

/// One pass of the agent loop for a single scene and instruction.
pub fn run_episode(
    input: &SceneInput,
    task: TaskSpec,
    backend: &dyn Backend,
    mode: PromptMode,
    policy: &mut UserPolicy,
    executor: &mut dyn Executor,
) -> Result<EpisodeResult, AgentError> {
    let mut episode = Episode::plan(backend, input, task, mode)?;
    while let Some(request) = episode.pending().cloned() {
        match policy {
            UserPolicy::Scripted(script) => {
                let answer = script.answer_for(&request.object).ok_or_else(|| AgentError::PolicyExhausted(request.object.clone()))?;
                episode.answer(&request.object, answer.as_str())?;
            }
            UserPolicy::Interactive(provider) => {
                let reply = provider.answer(&request).ok_or_else(|| AgentError::PolicyExhausted(request.object.clone()))?;
                episode.answer(&request.object, &reply)?;
            }
        }
    }
    episode.finish(executor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::OracleBackend;
    use crate::oracle::Oracle;
    use crate::scene::{ObjectAnnotation, Scene, ShapeClass, SizeClass};

    fn soup_bowl() -> ObjectAnnotation {
        ObjectAnnotation {
            name: "bowl".into(),
            color: "white".into(),
            size: SizeClass::Medium,
            shape: ShapeClass::Round,
            container: true,
            state: ObjectState::ContainingLeftoverFood,
            destination: Destination::Dishwasher,
            grasping_type: GraspType::EdgeGrasp,
            placing_type: PlaceType::Pour,
            edible: false,
        }
    }

    fn half_orange() -> ObjectAnnotation {
        ObjectAnnotation {
            name: "orange".into(),
            color: "orange".into(),
            size: SizeClass::Small,
            shape: ShapeClass::Round,
            container: false,
            state: ObjectState::LeftoverFood,
            destination: Destination::TrashBin,
            grasping_type: GraspType::TopGrasp,
            placing_type: PlaceType::Place,
            edible: true,
        }
    }

    fn scene(objects: Vec<ObjectAnnotation>) -> SceneInput {
        SceneInput::Scene(Scene { scene_id: "s".into(), image_ref: None, objects })
    }

    fn run(input: &SceneInput, task: TaskId, answer: Answer) -> EpisodeResult {
        let mut policy = UserPolicy::Scripted(ScriptedPolicy::always(answer));
        let mut exec = LoggingExecutor::default();
        let r = run_episode(input, task.into(), &OracleBackend::default(), PromptMode::ZeroShot, &mut policy, &mut exec).unwrap();
        assert_eq!(exec.executed, r.commands);
        r
    }

    #[test]
    fn keep_sends_the_soup_bowl_to_the_fridge() {
        let r = run(&scene(vec![soup_bowl()]), TaskId::T1, Answer::Keep);
        assert_eq!(r.transcript.len(), 1);
        assert_eq!(r.commands[0].destination, Destination::Fridge);
    }

    #[test]
    fn discard_pours_the_soup_bowl() {
        let r = run(&scene(vec![soup_bowl()]), TaskId::T1, Answer::Discard);
        assert_eq!((r.commands[0].destination, r.commands[0].placing_type), (Destination::Dishwasher, PlaceType::Pour));
    }

    #[test]
    fn no_leftovers_no_questions() {
        let mut apple = half_orange();
        apple.name = "apple".into();
        apple.state = ObjectState::Intact;
        let r = run(&scene(vec![apple]), TaskId::T1, Answer::Keep);
        assert!(r.transcript.is_empty());
        assert_eq!(r.commands.len(), 1);
        let r = run(&scene(vec![soup_bowl(), half_orange()]), TaskId::T3, Answer::Keep);
        assert!(r.transcript.is_empty());
    }

    #[test]
    fn revision_matches_the_explicit_tasks() {
        let o = Oracle::default();
        for a in [soup_bowl(), half_orange()] {
            let ambiguous = o.ground_truth_plan(&a, &TaskId::T1.into()).unwrap().to_omp(&a);
            let keep = o.ground_truth_plan(&a, &TaskId::T2.into()).unwrap().to_omp(&a);
            let discard = o.ground_truth_plan(&a, &TaskId::T3.into()).unwrap().to_omp(&a);
            assert_eq!(revise_plan(&ambiguous, "keep").unwrap(), keep);
            assert_eq!(revise_plan(&ambiguous, "Throw it away").unwrap(), discard);
            assert!(matches!(revise_plan(&keep, "keep"), Err(AgentError::NotAmbiguous(_))));
            assert!(matches!(revise_plan(&ambiguous, "maybe"), Err(AgentError::UnrecognizedAnswer(_))));
        }
    }

    #[test]
    fn unknown_fields_are_quarantined() {
        let mut p = ObjectManipulationPlan::unknown("cup");
        p.destination = Field::Known(Destination::Dishwasher);
        p.placing_type = Field::Known(PlaceType::Place);
        let (commands, quarantined) = to_commands(&[p]);
        assert!(commands.is_empty());
        assert_eq!(quarantined[0].reasons, ["unknown grasp"]);
    }

    #[test]
    fn interactive_answers_are_bounded() {
        let o = Oracle::default();
        let a = half_orange();
        let plan = o.ground_truth_plan(&a, &TaskId::T1.into()).unwrap().to_omp(&a);
        let mut ep = Episode::new(TaskId::T1.into(), vec![plan], vec![], RunTrace::default(), Duration::ZERO);
        assert!(matches!(ep.answer("bowl", "keep"), Err(AgentError::WrongObject { .. })));
        assert_eq!(ep.answer("orange", "hmm").unwrap(), AnswerOutcome::Rejected { remaining: 2 });
        assert_eq!(ep.answer("orange", "what").unwrap(), AnswerOutcome::Rejected { remaining: 1 });
        assert!(matches!(ep.answer("orange", "no idea"), Err(AgentError::PolicyExhausted(_))));

        let plan = o.ground_truth_plan(&a, &TaskId::T1.into()).unwrap().to_omp(&a);
        let mut ep = Episode::new(TaskId::T1.into(), vec![plan], vec![], RunTrace::default(), Duration::ZERO);
        assert_eq!(ep.answer("orange", "hmm").unwrap(), AnswerOutcome::Rejected { remaining: 2 });
        assert_eq!(ep.answer("Orange", "store it").unwrap(), AnswerOutcome::Accepted);
        assert!(matches!(ep.answer("orange", "keep"), Err(AgentError::NotAwaitingAnswer)));
        let r = ep.finish(&mut LoggingExecutor::default()).unwrap();
        assert_eq!(r.transcript[0].replies, ["hmm", "store it"]);
        assert_eq!(r.commands[0].destination, Destination::Fridge);
    }

    #[test]
    fn answers_normalize() {
        assert_eq!(Answer::normalize("KEEP"), Some(Answer::Keep));
        assert_eq!(Answer::normalize("bin it!"), Some(Answer::Discard));
        assert_eq!(Answer::normalize("perhaps"), None);
        assert_eq!(Answer::normalize(""), None);
    }
}
