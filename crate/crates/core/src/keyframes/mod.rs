//! Language task descriptions to action keyframes.
//!
//! Two providers implement [`KeyframeProvider`]: [`rules::ScriptedProvider`]
//! looks instructions up in a declarative rule file, and
//! [`vlm::VlmProvider`] asks a vision-language model to delineate key steps,
//! mark pixels in several views and triangulates them.

pub mod camera;
pub mod rules;
pub mod vlm;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inpainting::{FrameKind, Keyframe};

pub use camera::{triangulate, CameraModel, Triangulation};
pub use rules::{RuleFile, ScriptedProvider};
pub use vlm::{VlmClient, VlmConfig, VlmError, VlmProvider};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskTag {
    Seen,
    Unseen,
}

impl std::fmt::Display for TaskTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TaskTag::Seen => "seen",
            TaskTag::Unseen => "unseen",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: String,
    pub instruction: String,
    pub env: String,
    pub tag: TaskTag,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.instruction.trim().is_empty() {
            return Err(Error::Config(format!("task {:?} has an empty instruction", self.id)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyStep {
    pub ordinal: usize,
    pub description: String,
}

/// Checks that ordinals run 1, 2, ... without gaps.
pub fn validate_steps(steps: &[KeyStep]) -> Result<(), VlmError> {
    if steps.is_empty() {
        return Err(VlmError::Validation("no key steps".into()));
    }
    for (k, s) in steps.iter().enumerate() {
        if s.ordinal != k + 1 {
            return Err(VlmError::Validation(format!(
                "step ordinals must be contiguous from 1, found {} at position {}",
                s.ordinal,
                k + 1
            )));
        }
        if s.description.trim().is_empty() {
            return Err(VlmError::Validation(format!("step {} has no description", s.ordinal)));
        }
    }
    Ok(())
}

/// A pixel marked in one camera view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyPoint {
    pub view: usize,
    pub u: f64,
    pub v: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<String>,
}

/// How environment points become actions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionMapping {
    pub action_dim: usize,
    /// Magnitude of velocity keyframes.
    pub speed: f64,
    /// Joint configurations by point name, for environments that have them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joint_table: Option<BTreeMap<String, Vec<f64>>>,
}

/// What a provider may look at when producing keyframes.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneContext {
    pub env: String,
    /// Current environment state; its leading entries are the position.
    pub state: Vec<f64>,
    /// Named points in environment coordinates.
    pub points: BTreeMap<String, Vec<f64>>,
    pub mapping: ActionMapping,
    pub views: Vec<vlm::ViewImage>,
}

/// Keyframes for one episode, in execution order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyframePlan {
    /// Condition the keyframes express (e.g. a side of an obstacle).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<String>,
    pub keyframes: Vec<Keyframe>,
    pub provider: String,
}

pub trait KeyframeProvider: Send + Sync {
    fn name(&self) -> &str;

    fn plan(&self, task: &TaskSpec, scene: &SceneContext) -> Result<KeyframePlan>;
}

/// Maps an environment point into the action space.
///
/// Position keyframes copy the point; velocity keyframes point from `origin`
/// towards it with the configured speed; joint keyframes are looked up by
/// name. When the point has fewer entries than the action, only the leading
/// components are pinned.
pub fn to_action_keyframe(
    name: &str,
    point: &[f64],
    origin: &[f64],
    kind: FrameKind,
    mapping: &ActionMapping,
    env: &str,
    source: &str,
) -> Result<Keyframe> {
    let d = mapping.action_dim;
    let (value, components) = match kind {
        FrameKind::Joint => {
            let table = mapping.joint_table.as_ref().ok_or_else(|| Error::UnsupportedFrameKind {
                kind: kind.to_string(),
                env: env.to_string(),
            })?;
            let q = table
                .get(name)
                .ok_or_else(|| Error::InvalidKeyframe(format!("no joint entry for point {name:?}")))?;
            (q.clone(), None)
        }
        FrameKind::Position | FrameKind::Velocity => {
            let n = point.len().min(d);
            if n == 0 {
                return Err(Error::InvalidKeyframe("empty point".into()));
            }
            let mut value = vec![0.0; d];
            if kind == FrameKind::Position {
                value[..n].copy_from_slice(&point[..n]);
            } else {
                if origin.len() < n {
                    return Err(Error::DimensionMismatch {
                        what: "velocity origin",
                        expected: n,
                        actual: origin.len(),
                    });
                }
                let diff: Vec<f64> = (0..n).map(|k| point[k] - origin[k]).collect();
                let norm = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
                if !(norm > 0.0) {
                    return Err(Error::InvalidKeyframe(format!(
                        "velocity keyframe towards {name:?} has no direction"
                    )));
                }
                for k in 0..n {
                    value[k] = diff[k] / norm * mapping.speed;
                }
            }
            let components = (n < d).then(|| (0..d).map(|k| k < n).collect());
            (value, components)
        }
    };
    let kf = Keyframe {
        value,
        kind,
        components,
        anchor: Some(point.to_vec()),
        source: source.to_string(),
    };
    kf.validate(d)?;
    Ok(kf)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mapping(d: usize, joints: bool) -> ActionMapping {
        ActionMapping {
            action_dim: d,
            speed: 0.5,
            joint_table: joints.then(|| BTreeMap::from([("home".to_string(), vec![0.1, 0.2])])),
        }
    }

    #[test]
    fn position_is_identity_in_matching_dimension() {
        let kf = to_action_keyframe("p", &[0.3, -0.2], &[0.0, 0.0], FrameKind::Position, &mapping(2, false), "e", "s")
            .unwrap();
        assert_eq!(kf.value, vec![0.3, -0.2]);
        assert_eq!(kf.components, None);
        assert_eq!(kf.anchor, Some(vec![0.3, -0.2]));
    }

    #[test]
    fn short_points_pin_leading_components() {
        let kf = to_action_keyframe("p", &[0.3, -0.2], &[0.0; 3], FrameKind::Position, &mapping(3, false), "e", "s")
            .unwrap();
        assert_eq!(kf.value, vec![0.3, -0.2, 0.0]);
        assert_eq!(kf.components, Some(vec![true, true, false]));
    }

    #[test]
    fn velocity_is_unit_direction_times_speed() {
        let kf = to_action_keyframe("p", &[3.0, 1.0], &[1.0, 1.0], FrameKind::Velocity, &mapping(2, false), "e", "s")
            .unwrap();
        assert_eq!(kf.value, vec![0.5, 0.0]);
        assert!(
            to_action_keyframe("p", &[1.0, 1.0], &[1.0, 1.0], FrameKind::Velocity, &mapping(2, false), "e", "s").is_err()
        );
    }

    #[test]
    fn joint_needs_a_table() {
        let err = to_action_keyframe("home", &[0.0], &[0.0], FrameKind::Joint, &mapping(2, false), "detour", "s");
        assert!(matches!(err, Err(Error::UnsupportedFrameKind { .. })));
        let kf = to_action_keyframe("home", &[0.0], &[0.0], FrameKind::Joint, &mapping(2, true), "arm", "s").unwrap();
        assert_eq!(kf.value, vec![0.1, 0.2]);
        assert!(to_action_keyframe("away", &[0.0], &[0.0], FrameKind::Joint, &mapping(2, true), "arm", "s").is_err());
    }

    #[test]
    fn step_ordinals_must_be_contiguous() {
        let s = |o: usize| KeyStep {
            ordinal: o,
            description: "move".into(),
        };
        assert!(validate_steps(&[s(1), s(2)]).is_ok());
        assert!(validate_steps(&[s(1), s(3)]).is_err());
        assert!(validate_steps(&[]).is_err());
    }
}
