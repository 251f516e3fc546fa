//! Scripted keyframe provider driven by a JSON rule file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inpainting::FrameKind;
use crate::keyframes::{to_action_keyframe, KeyframePlan, KeyframeProvider, SceneContext, TaskSpec};

pub const RULE_FILE_VERSION: u32 = 1;

const BUILTIN_RULES: &str = include_str!("../../configs/rules.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleKeyframe {
    /// Name of a scene point.
    pub point: String,
    pub kind: FrameKind,
    /// Added to the point before mapping it into the action space.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<Vec<f64>>,
    /// Overrides the component mask derived from the point.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub components: Option<Vec<bool>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub env: String,
    pub patterns: Vec<String>,
    /// Alternative phrasings accepted in addition to `patterns`.
    #[serde(default)]
    pub synonyms: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<String>,
    pub keyframes: Vec<RuleKeyframe>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleFile {
    pub version: u32,
    pub rules: Vec<Rule>,
}

/// Lowercase, punctuation replaced by spaces, whitespace collapsed.
fn normalize(text: &str) -> String {
    let cleaned: String = text
        .chars()
        .map(|c| if c.is_alphanumeric() { c.to_ascii_lowercase() } else { ' ' })
        .collect();
    cleaned.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Whole-word substring match on normalised text.
fn phrase_matches(instruction: &str, phrase: &str) -> bool {
    let phrase = normalize(phrase);
    !phrase.is_empty() && format!(" {instruction} ").contains(&format!(" {phrase} "))
}

impl RuleFile {
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_RULES).expect("bundled rule file is valid")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let file: RuleFile = serde_json::from_str(text)?;
        file.validate()?;
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != RULE_FILE_VERSION {
            return Err(Error::Config(format!(
                "rule file version {} (expected {RULE_FILE_VERSION})",
                self.version
            )));
        }
        for r in &self.rules {
            if r.patterns.iter().chain(&r.synonyms).all(|p| normalize(p).is_empty()) {
                return Err(Error::Config(format!("rule for {:?} has no usable pattern", r.env)));
            }
            if r.keyframes.is_empty() {
                return Err(Error::Config(format!("rule {:?} has no keyframes", r.patterns)));
            }
        }
        Ok(())
    }

    /// First rule of `env` whose pattern or synonym occurs in `instruction`.
    pub fn lookup(&self, env: &str, instruction: &str) -> Result<&Rule> {
        let text = normalize(instruction);
        self.rules
            .iter()
            .filter(|r| r.env == env)
            .find(|r| r.patterns.iter().chain(&r.synonyms).any(|p| phrase_matches(&text, p)))
            .ok_or_else(|| Error::NoRule {
                env: env.to_string(),
                instruction: instruction.to_string(),
            })
    }
}

#[derive(Debug, Clone)]
pub struct ScriptedProvider {
    rules: RuleFile,
}

impl ScriptedProvider {
    pub const NAME: &'static str = "scripted";

    pub fn new(rules: RuleFile) -> Self {
        Self { rules }
    }

    pub fn builtin() -> Self {
        Self::new(RuleFile::builtin())
    }

    pub fn rules(&self) -> &RuleFile {
        &self.rules
    }
}

impl KeyframeProvider for ScriptedProvider {
    fn name(&self) -> &str {
        Self::NAME
    }

    fn plan(&self, task: &TaskSpec, scene: &SceneContext) -> Result<KeyframePlan> {
        task.validate()?;
        if task.env != scene.env {
            return Err(Error::Config(format!(
                "task {:?} targets {:?} but the scene is {:?}",
                task.id, task.env, scene.env
            )));
        }
        let rule = self.rules.lookup(&task.env, &task.instruction)?;
        let mut keyframes = Vec::with_capacity(rule.keyframes.len());
        let mut origin = scene.state.clone();
        for rk in &rule.keyframes {
            let base = scene
                .points
                .get(&rk.point)
                .ok_or_else(|| Error::Config(format!("scene of {:?} has no point {:?}", scene.env, rk.point)))?;
            let mut point = base.clone();
            if let Some(off) = &rk.offset {
                if off.len() != point.len() {
                    return Err(Error::DimensionMismatch {
                        what: "rule offset",
                        expected: point.len(),
                        actual: off.len(),
                    });
                }
                point.iter_mut().zip(off).for_each(|(p, o)| *p += o);
            }
            let mut kf = to_action_keyframe(
                &rk.point,
                &point,
                &origin,
                rk.kind,
                &scene.mapping,
                &scene.env,
                Self::NAME,
            )?;
            if let Some(c) = &rk.components {
                kf.components = Some(c.clone());
                kf.validate(scene.mapping.action_dim)?;
            }
            origin = point;
            keyframes.push(kf);
        }
        Ok(KeyframePlan {
            condition: rule.condition.clone(),
            keyframes,
            provider: Self::NAME.to_string(),
        })
    }
}
