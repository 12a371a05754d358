use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{render_turn, Action, AnswerKind, EpisodeState, StepRecord, Trajectory};
use crate::grounding::{FramePoseTable, GroundingParams};
use crate::scene::BevPose;
use crate::{Error, Result};

const OPTIONS: [&str; 4] = ["A", "B", "C", "D"];

/// A question with a known answer and, optionally, the frame that shows it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub question: String,
    pub gold: String,
    pub kind: AnswerKind,
    pub gold_frame: Option<usize>,
}

/// Scripted agents that exercise the episode machinery.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    /// Queries the gold frame's stored pose, then answers correctly.
    Oracle,
    /// Coin flip between a uniformly random pose query and a random option.
    Random,
    /// Answers "A" straight away.
    NoTool,
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(Policy::Oracle),
            "random" => Ok(Policy::Random),
            "no-tool" => Ok(Policy::NoTool),
            other => Err(Error::input(format!("unknown policy {other:?} (expected oracle, random or no-tool)"))),
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Policy::Oracle => "oracle",
            Policy::Random => "random",
            Policy::NoTool => "no-tool",
        })
    }
}

fn next_action<R: Rng>(
    policy: Policy,
    state: &EpisodeState,
    task: &Task,
    table: &FramePoseTable,
    rng: &mut R,
) -> Result<(String, Action)> {
    Ok(match policy {
        Policy::NoTool => ("Answering from the selected keyframes alone.".into(), Action::Stop("A".into())),
        Policy::Oracle => match task.gold_frame {
            Some(frame) if state.calls_made == 0 => {
                let pose = *table
                    .get(frame)
                    .ok_or_else(|| Error::input(format!("gold frame {frame} is not in the pose table")))?;
                ("The relevant view is not among the keyframes; requesting it.".into(), Action::Query(pose))
            }
            _ => ("The retrieved view settles the question.".into(), Action::Stop(task.gold.clone())),
        },
        Policy::Random => {
            if rng.random_bool(0.5) {
                let g = &table.grid;
                let pose = BevPose {
                    x: rng.random_range(0.0..g.width as f64),
                    y: rng.random_range(0.0..g.height as f64),
                    r: rng.random_range(0.0..360.0),
                };
                ("Sampling another viewpoint.".into(), Action::Query(pose))
            } else {
                let pick = OPTIONS[rng.random_range(0..OPTIONS.len())];
                ("Committing to an option.".into(), Action::Stop(pick.into()))
            }
        }
    })
}

/// Runs one episode to termination and records every turn.
pub fn run_episode<R: Rng>(
    policy: Policy,
    task: &Task,
    table: &FramePoseTable,
    params: &GroundingParams,
    rng: &mut R,
) -> Result<Trajectory> {
    params.validate()?;
    let mut state = EpisodeState::new();
    let mut steps = Vec::new();
    while !state.terminated {
        let (think, action) = next_action(policy, &state, task, table, rng)?;
        let (_, result) = state.step(&action, table, params)?;
        let text = render_turn(&think, &action);
        steps.push(StepRecord {
            action,
            result,
            score: result.map(|r| r.score()),
            think,
            text,
        });
    }
    Ok(Trajectory {
        steps,
        answer: state.answer,
        gold: task.gold.clone(),
        kind: task.kind,
        capped: state.capped,
    })
}
