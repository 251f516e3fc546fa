//! Keyframes from a vision-language model behind an OpenAI-compatible
//! chat-completions endpoint.
//!
//! Request: `POST {base_url}/chat/completions` with
//! `{"model", "temperature": 0, "messages": [{"role": "user", "content":
//! [{"type": "text", "text"}, {"type": "image_url", "image_url": {"url":
//! "data:<mime>;base64,..."}}, ...]}]}`. Response: the first choice's
//! `message.content`, which must hold the JSON object requested by the
//! prompt (optionally wrapped in a code fence).

use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::inpainting::FrameKind;
use crate::keyframes::{
    to_action_keyframe, triangulate, validate_steps, CameraModel, KeyPoint, KeyStep, KeyframePlan, KeyframeProvider,
    SceneContext, TaskSpec,
};

pub const PLAN_STEPS_PROMPT: &str = include_str!("../../prompts/plan_steps.v1.md");
pub const MARK_POINTS_PROMPT: &str = include_str!("../../prompts/mark_points.v1.md");

pub const ENV_BASE_URL: &str = "DISCO_VLM_BASE_URL";
pub const ENV_MODEL: &str = "DISCO_VLM_MODEL";
pub const ENV_API_KEY: &str = "DISCO_VLM_API_KEY";
pub const ENV_TIMEOUT: &str = "DISCO_VLM_TIMEOUT_SECS";

#[derive(Debug, thiserror::Error)]
pub enum VlmError {
    #[error("VLM configuration: {0}")]
    Config(String),
    #[error("VLM transport failure: {0}")]
    Transport(String),
    #[error("VLM endpoint returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("unparseable VLM reply ({reason}); raw payload: {raw}")]
    Parse { reason: String, raw: String },
    #[error("invalid VLM reply: {0}")]
    Validation(String),
    #[error("pixel ({u}, {v}) outside the {width}x{height} image of view {view}")]
    Bounds {
        view: usize,
        u: f64,
        v: f64,
        width: u32,
        height: u32,
    },
}

/// An encoded camera image.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewImage {
    pub mime: String,
    pub data: Vec<u8>,
    pub width: u32,
    pub height: u32,
}

impl ViewImage {
    fn data_url(&self) -> String {
        format!(
            "data:{};base64,{}",
            self.mime,
            base64::engine::general_purpose::STANDARD.encode(&self.data)
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VlmConfig {
    pub base_url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub max_attempts: u32,
    /// Delay before the first retry; doubled for each further one.
    pub backoff: Duration,
}

impl VlmConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model: model.into(),
            api_key: None,
            timeout: Duration::from_secs(30),
            max_attempts: 3,
            backoff: Duration::from_millis(500),
        }
    }

    pub fn from_env() -> Result<Self, VlmError> {
        Self::from_lookup(|k| std::env::var(k).ok())
    }

    pub fn from_lookup(lookup: impl Fn(&str) -> Option<String>) -> Result<Self, VlmError> {
        let need = |k: &str| {
            lookup(k)
                .filter(|v| !v.trim().is_empty())
                .ok_or_else(|| VlmError::Config(format!("{k} is not set")))
        };
        let mut cfg = Self::new(need(ENV_BASE_URL)?, need(ENV_MODEL)?);
        cfg.api_key = lookup(ENV_API_KEY).filter(|v| !v.is_empty());
        if let Some(t) = lookup(ENV_TIMEOUT) {
            let secs: f64 = t
                .parse()
                .map_err(|_| VlmError::Config(format!("{ENV_TIMEOUT}={t:?} is not a number")))?;
            if !(secs > 0.0 && secs.is_finite()) {
                return Err(VlmError::Config(format!("{ENV_TIMEOUT} must be positive")));
            }
            cfg.timeout = Duration::from_secs_f64(secs);
        }
        Ok(cfg)
    }
}

/// Pixel marks for one key step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointMarks {
    pub points: Vec<KeyPoint>,
    /// Views for which the model returned no mark.
    pub missing_views: Vec<usize>,
}

impl PointMarks {
    pub fn is_partial(&self) -> bool {
        !self.missing_views.is_empty()
    }

    pub fn can_triangulate(&self) -> bool {
        self.points.len() >= 2
    }
}

#[derive(Debug, Clone)]
pub struct VlmClient {
    cfg: VlmConfig,
    http: reqwest::blocking::Client,
}

fn fill(template: &str, vars: &[(&str, String)]) -> String {
    vars.iter()
        .fold(template.to_string(), |t, (k, v)| t.replace(&format!("{{{k}}}"), v))
}

/// Strips an optional Markdown code fence around a reply.
fn unfence(text: &str) -> &str {
    let t = text.trim();
    match t.strip_prefix("```") {
        Some(rest) => {
            let body = rest.split_once('\n').map_or("", |(_, b)| b);
            body.trim_end().strip_suffix("```").unwrap_or(body).trim()
        }
        None => t,
    }
}

fn parse_json(text: &str) -> Result<Value, VlmError> {
    serde_json::from_str(unfence(text)).map_err(|e| VlmError::Parse {
        reason: e.to_string(),
        raw: text.to_string(),
    })
}

/// Key steps from a reply of the form `{"steps": [...]}` whose entries are
/// strings or `{"ordinal", "description"}` objects.
pub fn parse_steps(text: &str) -> Result<Vec<KeyStep>, VlmError> {
    let value = parse_json(text)?;
    let parse_err = |reason: &str| VlmError::Parse {
        reason: reason.to_string(),
        raw: text.to_string(),
    };
    let items = value
        .get("steps")
        .and_then(Value::as_array)
        .ok_or_else(|| parse_err("missing \"steps\" array"))?;
    let steps = items
        .iter()
        .enumerate()
        .map(|(k, item)| match item {
            Value::String(s) => Ok(KeyStep {
                ordinal: k + 1,
                description: s.clone(),
            }),
            Value::Object(o) => {
                let description = o
                    .get("description")
                    .and_then(Value::as_str)
                    .ok_or_else(|| parse_err("step without a description"))?;
                let ordinal = match o.get("ordinal") {
                    None => k + 1,
                    Some(v) => v.as_u64().ok_or_else(|| parse_err("non-integer ordinal"))? as usize,
                };
                Ok(KeyStep {
                    ordinal,
                    description: description.to_string(),
                })
            }
            _ => Err(parse_err("step is neither a string nor an object")),
        })
        .collect::<Result<Vec<_>, _>>()?;
    validate_steps(&steps)?;
    Ok(steps)
}

/// Pixel marks from a reply of the form `{"points": [...]}`, checked against
/// the image bounds.
pub fn parse_points(text: &str, views: &[ViewImage]) -> Result<PointMarks, VlmError> {
    #[derive(Deserialize)]
    struct Reply {
        points: Vec<KeyPoint>,
    }
    let reply: Reply = serde_json::from_value(parse_json(text)?).map_err(|e| VlmError::Parse {
        reason: e.to_string(),
        raw: text.to_string(),
    })?;
    let mut seen = vec![false; views.len()];
    for p in &reply.points {
        let img = views
            .get(p.view)
            .ok_or_else(|| VlmError::Validation(format!("mark for unknown view {}", p.view)))?;
        if std::mem::replace(&mut seen[p.view], true) {
            return Err(VlmError::Validation(format!("view {} marked twice", p.view)));
        }
        let inside = p.u >= 0.0 && p.v >= 0.0 && p.u < f64::from(img.width) && p.v < f64::from(img.height);
        if !inside {
            return Err(VlmError::Bounds {
                view: p.view,
                u: p.u,
                v: p.v,
                width: img.width,
                height: img.height,
            });
        }
    }
    Ok(PointMarks {
        points: reply.points,
        missing_views: (0..views.len()).filter(|&k| !seen[k]).collect(),
    })
}

impl VlmClient {
    pub fn new(cfg: VlmConfig) -> Result<Self, VlmError> {
        if cfg.max_attempts == 0 {
            return Err(VlmError::Config("max_attempts must be at least 1".into()));
        }
        let http = reqwest::blocking::Client::builder()
            .timeout(cfg.timeout)
            .build()
            .map_err(|e| VlmError::Config(e.to_string()))?;
        Ok(Self { cfg, http })
    }

    pub fn config(&self) -> &VlmConfig {
        &self.cfg
    }

    fn request_body(&self, prompt: &str, images: &[ViewImage]) -> Value {
        let mut content = vec![json!({"type": "text", "text": prompt})];
        content.extend(
            images
                .iter()
                .map(|img| json!({"type": "image_url", "image_url": {"url": img.data_url()}})),
        );
        json!({
            "model": self.cfg.model,
            "temperature": 0,
            "messages": [{"role": "user", "content": content}],
        })
    }

    fn post_once(&self, body: &Value) -> Result<String, VlmError> {
        let url = format!("{}/chat/completions", self.cfg.base_url.trim_end_matches('/'));
        let mut req = self.http.post(url).json(body);
        if let Some(key) = &self.cfg.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| VlmError::Transport(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| VlmError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(VlmError::Status {
                status: status.as_u16(),
                body: text,
            });
        }
        Ok(text)
    }

    /// Sends one chat turn and returns the assistant's text, retrying
    /// transport failures, 429 and 5xx with exponential backoff.
    pub fn chat(&self, prompt: &str, images: &[ViewImage]) -> Result<String, VlmError> {
        let body = self.request_body(prompt, images);
        let mut delay = self.cfg.backoff;
        let mut attempt = 1;
        let raw = loop {
            match self.post_once(&body) {
                Ok(text) => break text,
                Err(e) => {
                    let retryable = match &e {
                        VlmError::Transport(_) => true,
                        VlmError::Status { status, .. } => *status == 429 || *status >= 500,
                        _ => false,
                    };
                    if !retryable || attempt >= self.cfg.max_attempts {
                        return Err(e);
                    }
                    std::thread::sleep(delay);
                    delay *= 2;
                    attempt += 1;
                }
            }
        };
        let envelope: Value = serde_json::from_str(&raw).map_err(|e| VlmError::Parse {
            reason: e.to_string(),
            raw: raw.clone(),
        })?;
        envelope
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| VlmError::Parse {
                reason: "no choices[0].message.content".into(),
                raw,
            })
    }

    pub fn plan_steps(&self, task: &TaskSpec, images: &[ViewImage]) -> Result<Vec<KeyStep>, VlmError> {
        let prompt = fill(PLAN_STEPS_PROMPT, &[("instruction", task.instruction.clone())]);
        parse_steps(&self.chat(&prompt, images)?)
    }

    pub fn mark_points(&self, step: &KeyStep, images: &[ViewImage]) -> Result<PointMarks, VlmError> {
        let sizes = images
            .iter()
            .enumerate()
            .map(|(k, img)| format!("{k}: {}x{}", img.width, img.height))
            .collect::<Vec<_>>()
            .join(", ");
        let prompt = fill(
            MARK_POINTS_PROMPT,
            &[
                ("step", step.description.clone()),
                ("n_views", images.len().to_string()),
                ("sizes", sizes),
            ],
        );
        parse_points(&self.chat(&prompt, images)?, images)
    }
}

/// Plans key steps, marks each in every view and triangulates the marks.
#[derive(Debug, Clone)]
pub struct VlmProvider {
    pub client: VlmClient,
    /// Camera of each view, in the order of `SceneContext::views`.
    pub cameras: Vec<CameraModel>,
    pub kind: FrameKind,
    /// Largest acceptable RMS reprojection error in pixels.
    pub max_residual: f64,
}

impl VlmProvider {
    pub const NAME: &'static str = "vlm";
}

impl KeyframeProvider for VlmProvider {
    fn name(&self) -> &str {
        Self::NAME
    }

    fn plan(&self, task: &TaskSpec, scene: &SceneContext) -> Result<KeyframePlan> {
        task.validate()?;
        if scene.views.len() != self.cameras.len() {
            return Err(Error::Config(format!(
                "{} views but {} cameras",
                scene.views.len(),
                self.cameras.len()
            )));
        }
        let steps = self.client.plan_steps(task, &scene.views)?;
        let mut keyframes = Vec::with_capacity(steps.len());
        let mut origin = scene.state.clone();
        for step in &steps {
            let marks = self.client.mark_points(step, &scene.views)?;
            if !marks.can_triangulate() {
                return Err(VlmError::Validation(format!(
                    "step {} marked in {} view(s), missing {:?}; triangulation needs 2",
                    step.ordinal,
                    marks.points.len(),
                    marks.missing_views
                ))
                .into());
            }
            let obs: Vec<(KeyPoint, CameraModel)> = marks
                .points
                .iter()
                .map(|p| (p.clone(), self.cameras[p.view].clone()))
                .collect();
            let tri = triangulate(&obs)?;
            if tri.residual > self.max_residual {
                return Err(Error::DegenerateGeometry(format!(
                    "step {} reprojects with {:.3} px RMS (limit {})",
                    step.ordinal, tri.residual, self.max_residual
                )));
            }
            let kf = to_action_keyframe(
                &step.description,
                &tri.point,
                &origin,
                self.kind,
                &scene.mapping,
                &scene.env,
                Self::NAME,
            )?;
            origin = tri.point.to_vec();
            keyframes.push(kf);
        }
        Ok(KeyframePlan {
            condition: None,
            keyframes,
            provider: Self::NAME.to_string(),
        })
    }
}
