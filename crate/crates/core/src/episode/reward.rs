use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{AnswerKind, Trajectory};
use crate::{Error, Result};

/// Added to the group standard deviation before dividing.
pub const ADVANTAGE_EPS: f64 = 1e-8;

const TAGS: [&str; 6] = ["<think>", "</think>", "<tool_call>", "</tool_call>", "<answer>", "</answer>"];

static TURN: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?s)\A\s*<think>(.*?)</think>\s*(?:<tool_call>(.*?)</tool_call>|<answer>(.*?)</answer>)\s*\z").unwrap()
});
static OPTION_LETTER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?:^|[^A-Za-z])([A-Za-z])(?:[^A-Za-z]|$)").unwrap());
static NUMBER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?").unwrap());

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub lambda_tool: f64,
    pub lambda_spatial: f64,
    pub alpha_s: f64,
    pub theta_sim: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            lambda_tool: 1.0,
            lambda_spatial: 1.0,
            alpha_s: 0.5,
            theta_sim: 0.5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub acc: f64,
    pub format: f64,
    pub tool: f64,
    pub spatial: f64,
    pub lambda_tool: f64,
    pub lambda_spatial: f64,
    pub alpha_s: f64,
    pub theta_sim: f64,
    pub total: f64,
}

impl RewardBreakdown {
    pub fn recomputed_total(&self) -> f64 {
        self.acc + self.format + self.lambda_tool * self.tool + self.lambda_spatial * self.spatial
    }
}

fn valid_tool_json(body: &str) -> bool {
    let Ok(v) = serde_json::from_str::<Value>(body.trim()) else {
        return false;
    };
    let name_ok = v.get("name").is_some_and(Value::is_string);
    let camera_ok = v
        .get("arguments")
        .and_then(|a| a.get("camera"))
        .and_then(Value::as_array)
        .is_some_and(|c| c.len() == 3 && c.iter().all(Value::is_number));
    name_ok && camera_ok
}

/// Whether one emitted turn is a think block followed by exactly one tool
/// call or answer block.
pub fn turn_format_ok(text: &str) -> bool {
    let Some(c) = TURN.captures(text) else {
        return false;
    };
    let clean = |m: Option<regex::Match>| m.is_none_or(|m| TAGS.iter().all(|t| !m.as_str().contains(t)));
    if !(clean(c.get(1)) && clean(c.get(2)) && clean(c.get(3))) {
        return false;
    }
    c.get(2).is_none_or(|m| valid_tool_json(m.as_str()))
}

/// 1 when every turn is well formed, 0 otherwise (including no turns).
pub fn format_reward<S: AsRef<str>>(turns: &[S]) -> f64 {
    if !turns.is_empty() && turns.iter().all(|t| turn_format_ok(t.as_ref())) {
        1.0
    } else {
        0.0
    }
}

fn option_letter(s: &str) -> Option<char> {
    OPTION_LETTER.captures(s).and_then(|c| c[1].chars().next()).map(|c| c.to_ascii_uppercase())
}

fn first_number(s: &str) -> Option<f64> {
    NUMBER.find(s).and_then(|m| m.as_str().parse::<f64>().ok()).filter(|v| v.is_finite())
}

/// Option-letter match for multiple choice; for numeric answers the mean
/// over ten relative-error tolerances 0.50, 0.45, …, 0.05.
pub fn accuracy_reward(answer: &str, gold: &str, kind: AnswerKind) -> f64 {
    match kind {
        AnswerKind::MultipleChoice => match (option_letter(answer), option_letter(gold)) {
            (Some(a), Some(g)) if a == g => 1.0,
            _ => 0.0,
        },
        AnswerKind::Numeric => {
            let (Some(a), Some(g)) = (first_number(answer), first_number(gold)) else {
                return 0.0;
            };
            let rel = (a - g).abs() / g.abs().max(1e-9);
            let passed = (0..10).filter(|i| rel <= (10 - i) as f64 / 20.0).count();
            passed as f64 / 10.0
        }
    }
}

/// 1 for a correct trajectory that retrieved at least one frame.
pub fn tool_reward(traj: &Trajectory, acc: f64) -> f64 {
    if acc > 0.0 && traj.hit_count() > 0 {
        1.0
    } else {
        0.0
    }
}

/// `−α_s` if any call's best similarity fell below `θ_sim`; one failure
/// costs the same as many.
pub fn spatial_reward(call_scores: &[f64], theta_sim: f64, alpha_s: f64) -> f64 {
    if call_scores.iter().any(|&s| s < theta_sim) {
        -alpha_s
    } else {
        0.0
    }
}

pub fn total_reward(traj: &Trajectory, cfg: &RewardConfig) -> RewardBreakdown {
    let acc = traj.answer.as_deref().map_or(0.0, |a| accuracy_reward(a, &traj.gold, traj.kind));
    let turns: Vec<&str> = traj.steps.iter().map(|s| s.text.as_str()).collect();
    let format = format_reward(&turns);
    let tool = tool_reward(traj, acc);
    let spatial = spatial_reward(&traj.call_scores(), cfg.theta_sim, cfg.alpha_s);
    let mut b = RewardBreakdown {
        acc,
        format,
        tool,
        spatial,
        lambda_tool: cfg.lambda_tool,
        lambda_spatial: cfg.lambda_spatial,
        alpha_s: cfg.alpha_s,
        theta_sim: cfg.theta_sim,
        total: 0.0,
    };
    b.total = b.recomputed_total();
    b
}

/// Group-standardized advantages `(R − mean) / (std + ε)` with the
/// population standard deviation.
pub fn group_advantages(rewards: &[f64]) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(Error::input(format!("advantage group needs at least 2 rewards, got {}", rewards.len())));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let denom = var.sqrt() + ADVANTAGE_EPS;
    Ok(rewards.iter().map(|r| (r - mean) / denom).collect())
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::episode::{Action, StepRecord};
    use crate::grounding::QueryResult;
    use crate::scene::BevPose;

    const TOOL_EXAMPLE: &str =
        r#"<think>x</think><tool_call>{"name":"video_image_sample_tool","arguments":{"camera":[100,200,145]}}</tool_call>"#;

    #[test]
    fn format_examples() {
        assert_eq!(format_reward(&["<think>x</think><answer>A</answer>"]), 1.0);
        assert_eq!(format_reward(&["<answer>A</answer>"]), 0.0);
        assert_eq!(format_reward(&[TOOL_EXAMPLE]), 1.0);
        assert_eq!(format_reward::<&str>(&[]), 0.0);
    }

    #[test]
    fn format_rejects_structural_errors() {
        for bad in [
            "<think>x</think>",
            "<think>x</think><answer>A</answer><answer>B</answer>",
            "<think>x</think><tool_call>{}</tool_call><answer>A</answer>",
            "<think>x<think>y</think><answer>A</answer>",
            "<think>x</think><answer>A<answer></answer>",
            "<think>x</think><tool_call>not json</tool_call>",
            r#"<think>x</think><tool_call>{"name":"t","arguments":{"camera":[1,2]}}</tool_call>"#,
            r#"<think>x</think><tool_call>{"arguments":{"camera":[1,2,3]}}</tool_call>"#,
            r#"<think>x</think><tool_call>{"name":"t","arguments":{"camera":[1,2,"3"]}}</tool_call>"#,
            "text <think>x</think><answer>A</answer>",
            "<think>x</think><answer>A</answer> trailing",
        ] {
            assert!(!turn_format_ok(bad), "{bad}");
        }
    }

    #[test]
    fn format_trajectory_requires_every_turn() {
        assert_eq!(format_reward(&[TOOL_EXAMPLE, "<think>x</think><answer>A</answer>"]), 1.0);
        assert_eq!(format_reward(&[TOOL_EXAMPLE, "<answer>A</answer>"]), 0.0);
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy_reward("B", "b", AnswerKind::MultipleChoice), 1.0);
        assert_eq!(accuracy_reward("(C) the sofa", "C", AnswerKind::MultipleChoice), 1.0);
        assert_eq!(accuracy_reward("A", "C", AnswerKind::MultipleChoice), 0.0);
        assert_eq!(accuracy_reward("", "C", AnswerKind::MultipleChoice), 0.0);
        assert_eq!(accuracy_reward("3.5", "3.5", AnswerKind::Numeric), 1.0);
        assert_eq!(accuracy_reward("7", "3.5", AnswerKind::Numeric), 0.0);
        assert_eq!(accuracy_reward("about 0", "3.5", AnswerKind::Numeric), 0.0);
        assert_eq!(accuracy_reward("many", "3.5", AnswerKind::Numeric), 0.0);
    }

    #[test]
    fn numeric_accuracy_matches_threshold_count() {
        // 12% relative error passes tolerances 0.50 … 0.15: eight of ten.
        assert!((accuracy_reward("11.2", "10", AnswerKind::Numeric) - 0.8).abs() < 1e-12);
        // Exactly at a tolerance counts as passing.
        assert!((accuracy_reward("15", "10", AnswerKind::Numeric) - 0.1).abs() < 1e-12);
    }

    fn traj(scores: &[(f64, bool)], answer: &str, gold: &str) -> Trajectory {
        let mut steps: Vec<StepRecord> = scores
            .iter()
            .map(|&(s, hit)| StepRecord {
                action: Action::Query(BevPose { x: 0.0, y: 0.0, r: 0.0 }),
                result: Some(if hit {
                    QueryResult::Hit { frame_id: 0, score: s }
                } else {
                    QueryResult::Miss { best_frame_id: 0, best_score: s }
                }),
                score: Some(s),
                think: "x".into(),
                text: TOOL_EXAMPLE.into(),
            })
            .collect();
        steps.push(StepRecord {
            action: Action::Stop(answer.into()),
            result: None,
            score: None,
            think: "x".into(),
            text: format!("<think>x</think><answer>{answer}</answer>"),
        });
        Trajectory {
            steps,
            answer: Some(answer.into()),
            gold: gold.into(),
            kind: AnswerKind::MultipleChoice,
            capped: false,
        }
    }

    #[test]
    fn tool_reward_examples() {
        assert_eq!(tool_reward(&traj(&[(1.0, true)], "A", "A"), 1.0), 1.0);
        assert_eq!(tool_reward(&traj(&[], "A", "A"), 1.0), 0.0);
        assert_eq!(tool_reward(&traj(&[(1.0, true), (0.9, true)], "B", "A"), 0.0), 0.0);
    }

    #[test]
    fn spatial_examples() {
        assert_eq!(spatial_reward(&[], 0.5, 0.5), 0.0);
        assert_eq!(spatial_reward(&[0.3], 0.5, 0.5), -0.5);
        assert_eq!(spatial_reward(&[0.3, 0.1, 0.2], 0.5, 0.5), -0.5);
        assert_eq!(spatial_reward(&[0.5, 0.9], 0.5, 0.5), 0.0);
    }

    #[test]
    fn total_examples() {
        let cfg = RewardConfig::default();
        let perfect = total_reward(&traj(&[(1.0, true)], "A", "A"), &cfg);
        assert_eq!((perfect.acc, perfect.format, perfect.tool, perfect.spatial), (1.0, 1.0, 1.0, 0.0));
        assert_eq!(perfect.total, 1.0 + 1.0 + 1.0 + 0.0);

        let mut failing = traj(&[(0.3, false)], "B", "A");
        failing.steps.iter_mut().for_each(|s| s.text = "broken".into());
        let b = total_reward(&failing, &cfg);
        assert_eq!((b.acc, b.format, b.tool, b.spatial), (0.0, 0.0, 0.0, -0.5));
        assert_eq!(b.total, 0.0 + 0.0 + 0.0 - 0.5);

        let zero = RewardConfig { lambda_tool: 0.0, lambda_spatial: 0.0, ..cfg };
        let b = total_reward(&traj(&[(0.3, false), (1.0, true)], "A", "A"), &zero);
        assert_eq!(b.total, b.acc + b.format);
    }

    #[test]
    fn advantage_examples() {
        let a = group_advantages(&[1.0, 0.0]).unwrap();
        assert!((a[0] - 1.0).abs() < 1e-7 && (a[1] + 1.0).abs() < 1e-7);
        assert!(group_advantages(&[2.0; 4]).unwrap().iter().all(|v| v.abs() < 1e-12));
        assert!(group_advantages(&[1.0]).is_err());
    }

    proptest! {
        #[test]
        fn advantages_standardized(r in prop::collection::vec(-5.0f64..5.0, 2..64)) {
            let a = group_advantages(&r).unwrap();
            prop_assert!(a.iter().sum::<f64>().abs() < 1e-9);
            let n = r.len() as f64;
            let mean = r.iter().sum::<f64>() / n;
            let std = (r.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
            if std > 1e-3 {
                let var_a = a.iter().map(|v| v * v).sum::<f64>() / n;
                prop_assert!((var_a.sqrt() - 1.0).abs() < 1e-6);
            }
        }

        #[test]
        fn penalty_idempotent(
            calls in prop::collection::vec((0.0f64..1.0, any::<bool>()), 1..8),
            dup in 0usize..8,
        ) {
            let cfg = RewardConfig::default();
            let t = traj(&calls, "A", "A");
            let before = total_reward(&t, &cfg);
            let idx = dup % calls.len();
            let mut more = calls.clone();
            if calls[idx].0 < cfg.theta_sim {
                more.insert(idx, calls[idx]);
            }
            let after = total_reward(&traj(&more, "A", "A"), &cfg);
            prop_assert_eq!(before.spatial, after.spatial);
        }

        #[test]
        fn decomposition_holds(
            calls in prop::collection::vec((0.0f64..1.0, any::<bool>()), 0..8),
            lt in 0.0f64..3.0, ls in 0.0f64..3.0, alpha in 0.01f64..2.0, theta in 0.01f64..1.0,
            correct in any::<bool>(),
        ) {
            let cfg = RewardConfig { lambda_tool: lt, lambda_spatial: ls, alpha_s: alpha, theta_sim: theta };
            let b = total_reward(&traj(&calls, if correct { "A" } else { "B" }, "A"), &cfg);
            prop_assert!((b.total - b.recomputed_total()).abs() <= 1e-12);
            prop_assert!(b.spatial == 0.0 || b.spatial == -alpha);
        }
    }
}
