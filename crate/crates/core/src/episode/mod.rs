//! Pose-query episodes without a language model.
//!
//! An agent alternates between querying BEV poses (each call retrieves a real
//! frame or fails) and stopping with an answer. Scripted [`policy`] agents
//! drive the state machine, and [`reward`] scores the finished trajectory.

pub mod policy;
pub mod reward;

use serde::{Deserialize, Serialize};

use crate::grounding::{retrieve, FramePoseTable, GroundingParams, QueryResult};
use crate::scene::BevPose;
use crate::{Error, Result};

pub use policy::{run_episode, Policy, Task};
pub use reward::{
    accuracy_reward, format_reward, group_advantages, spatial_reward, tool_reward, total_reward, turn_format_ok,
    RewardBreakdown, RewardConfig,
};

/// Name of the pose-query tool in emitted turn text.
pub const TOOL_NAME: &str = "video_image_sample_tool";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Query(BevPose),
    Stop(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerKind {
    MultipleChoice,
    Numeric,
}

/// What the environment hands back after an action.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observation {
    Frame(usize),
    Error(String),
    Terminal,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpisodeState {
    /// Retrieved frames in first-retrieval order, without repeats.
    pub evidence: Vec<usize>,
    pub query_buffer: Vec<(BevPose, QueryResult)>,
    pub calls_made: usize,
    pub terminated: bool,
    /// Terminated because the call budget ran out.
    pub capped: bool,
    pub answer: Option<String>,
}

impl EpisodeState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Applies one action. The call that exhausts `t_max` is still answered,
    /// then the episode ends without an answer.
    pub fn step(
        &mut self,
        action: &Action,
        table: &FramePoseTable,
        p: &GroundingParams,
    ) -> Result<(Observation, Option<QueryResult>)> {
        if self.terminated {
            return Err(Error::State("episode already terminated".into()));
        }
        match action {
            Action::Stop(answer) => {
                self.answer = Some(answer.clone());
                self.terminated = true;
                Ok((Observation::Terminal, None))
            }
            Action::Query(pose) => {
                let result = retrieve(pose, table, p)?;
                self.calls_made += 1;
                self.query_buffer.push((*pose, result));
                let obs = match result {
                    QueryResult::Hit { frame_id, .. } => {
                        if !self.evidence.contains(&frame_id) {
                            self.evidence.push(frame_id);
                        }
                        Observation::Frame(frame_id)
                    }
                    QueryResult::Miss { best_score, .. } => Observation::Error(format!(
                        "no frame close to the requested camera (best similarity {best_score:.4})"
                    )),
                };
                if self.calls_made >= p.t_max {
                    self.terminated = true;
                    self.capped = true;
                }
                Ok((obs, Some(result)))
            }
        }
    }
}

/// One agent turn: the action, its retrieval outcome and the raw text the
/// agent emitted for it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub action: Action,
    pub result: Option<QueryResult>,
    /// Best similarity of a tool call; absent for the stop action.
    pub score: Option<f64>,
    pub think: String,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<StepRecord>,
    pub answer: Option<String>,
    pub gold: String,
    pub kind: AnswerKind,
    pub capped: bool,
}

impl Trajectory {
    /// `s_max` of every tool call, in call order.
    pub fn call_scores(&self) -> Vec<f64> {
        self.steps.iter().filter_map(|s| s.score).collect()
    }

    pub fn hit_count(&self) -> usize {
        self.steps.iter().filter(|s| s.result.is_some_and(|r| r.is_hit())).count()
    }
}

/// Turn text as a model would emit it: a think block followed by either a
/// tool call or an answer.
pub fn render_turn(think: &str, action: &Action) -> String {
    match action {
        Action::Query(p) => {
            let call = serde_json::json!({ "name": TOOL_NAME, "arguments": { "camera": [p.x, p.y, p.r] } });
            format!("<think>{think}</think>\n<tool_call>\n{call}\n</tool_call>")
        }
        Action::Stop(answer) => format!("<think>{think}</think>\n<answer>{answer}</answer>"),
    }
}
