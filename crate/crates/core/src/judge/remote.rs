//! Remote judge over an OpenAI-compatible chat-completions endpoint.
//!
//! Wire protocol: POST `{endpoint_url}/chat/completions` with body
//! `{model, messages, temperature: 0}` and a bearer token taken from the
//! configured environment variable; the reply is read from
//! `choices[0].message.content`. The judge runs a fixed three-turn dialogue
//! (hypothesis, challenge, refined decision) and parses only the final
//! `<decision>{json}</decision>` block. Transport failures retry up to
//! `max_retries`; a persistently unavailable or malformed backend falls
//! back to the rule judge with the verdict flagged.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{
    next_metric_in_rotation, Decision, EvaluationContext, Judge, JudgeBackendConfig, JudgeError,
    JudgeVerdict, RuleJudge,
};
use crate::metrics::Metric;
use crate::series::Component;
use crate::shap::{ComponentClaim, Direction, ExplanationClaims};

/// JSON schema for the verdict block, embedded in the system prompt and
/// published in the project docs.
pub const VERDICT_SCHEMA: &str = r#"{
  "confidence": "float in [0,1]",
  "should_continue": "bool (false = accept the current weights)",
  "next_metric": "one of mae|mse|rmse|smape|mase|crps, required when continuing",
  "explanation": "string, evidence-grounded reasoning",
  "claims": [
    {
      "model": "model id",
      "component": "trend|seasonality|residual",
      "importance": "float in [0,1]",
      "direction": "helps|hurts|neutral"
    }
  ],
  "aspect_scores": "array of 9 floats in [0,1] (optional)",
  "weight_adjustment": "array of per-model weight deltas (optional)"
}"#;

const SYSTEM_PROMPT_PREAMBLE: &str = "You are the judge in an iterative ensemble weight \
optimization loop for time-series forecasting. You see cross-validation scores per model and \
metric, the current simplex weights, dataset characteristics and prior iterations. Evaluate the \
weights from three angles: alignment with performance, match to the dataset, and future \
robustness. Reply with the format <think>your analysis</think><decision>{verdict json}</decision>. \
Only the decision block is parsed. The verdict json must follow this schema:\n";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: &str, content: impl Into<String>) -> Self {
        Self {
            role: role.into(),
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
}

#[derive(Debug, Clone)]
pub enum TransportError {
    /// Worth retrying: 5xx, connection failures.
    Retryable(String),
    /// Not worth retrying: 4xx, protocol violations.
    Fatal(String),
    Timeout(String),
}

impl std::fmt::Display for TransportError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TransportError::Retryable(s) => write!(f, "retryable: {s}"),
            TransportError::Fatal(s) => write!(f, "fatal: {s}"),
            TransportError::Timeout(s) => write!(f, "timeout: {s}"),
        }
    }
}

/// One chat-completion round trip. Implemented by the HTTP client and by
/// scripted stubs in tests.
pub trait Transport {
    fn complete(&mut self, request: &ChatRequest) -> Result<String, TransportError>;
}

pub struct HttpTransport {
    client: reqwest::blocking::Client,
    endpoint_url: String,
    api_key: String,
}

impl HttpTransport {
    pub fn from_config(config: &JudgeBackendConfig) -> Result<Self, JudgeError> {
        let endpoint_url = config.endpoint_url.clone().ok_or(JudgeError::MissingEndpoint)?;
        let key_env = config
            .api_key_env
            .clone()
            .ok_or_else(|| JudgeError::MissingApiKey("<unset>".into()))?;
        let api_key =
            std::env::var(&key_env).map_err(|_| JudgeError::MissingApiKey(key_env.clone()))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| JudgeError::RemoteUnavailable(e.to_string()))?;
        Ok(Self {
            client,
            endpoint_url,
            api_key,
        })
    }
}

impl Transport for HttpTransport {
    fn complete(&mut self, request: &ChatRequest) -> Result<String, TransportError> {
        let url = format!("{}/chat/completions", self.endpoint_url.trim_end_matches('/'));
        let response = self
            .client
            .post(&url)
            .bearer_auth(&self.api_key)
            .json(request)
            .send()
            .map_err(|e| {
                if e.is_timeout() {
                    TransportError::Timeout(e.to_string())
                } else {
                    TransportError::Retryable(e.to_string())
                }
            })?;
        let status = response.status();
        if status.is_server_error() {
            return Err(TransportError::Retryable(format!("http {status}")));
        }
        if !status.is_success() {
            return Err(TransportError::Fatal(format!("http {status}")));
        }
        let body: Value = response
            .json()
            .map_err(|e| TransportError::Fatal(format!("invalid json body: {e}")))?;
        body.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_owned)
            .ok_or_else(|| TransportError::Fatal("missing choices[0].message.content".into()))
    }
}

fn complete_with_retries(
    transport: &mut dyn Transport,
    request: &ChatRequest,
    max_retries: u32,
) -> Result<String, JudgeError> {
    let mut last = None;
    for attempt in 0..=max_retries {
        match transport.complete(request) {
            Ok(reply) => return Ok(reply),
            Err(TransportError::Fatal(msg)) => return Err(JudgeError::RemoteUnavailable(msg)),
            Err(TransportError::Timeout(msg)) => last = Some(JudgeError::Timeout(msg)),
            Err(TransportError::Retryable(msg)) => last = Some(JudgeError::RemoteUnavailable(msg)),
        }
        if attempt < max_retries {
            std::thread::sleep(Duration::from_millis(200 * (attempt as u64 + 1)));
        }
    }
    Err(last.expect("at least one attempt"))
}

/// Single chat round trip with the configured retry policy.
pub fn remote_chat(messages: Vec<ChatMessage>, config: &JudgeBackendConfig) -> Result<String, JudgeError> {
    let mut transport = HttpTransport::from_config(config)?;
    let request = ChatRequest {
        model: config.model_name.clone().unwrap_or_else(|| "default".into()),
        messages,
        temperature: 0.0,
    };
    complete_with_retries(&mut transport, &request, config.max_retries)
}

/// Verdict fields as parsed off the wire, before context-dependent filling.
#[derive(Debug, Clone)]
pub struct ParsedVerdict {
    pub confidence: f64,
    pub should_continue: bool,
    pub next_metric: Option<Metric>,
    pub explanation: String,
    pub claims: Option<Vec<ComponentClaim>>,
    pub aspect_scores: Option<[f64; 9]>,
    pub weight_adjustment: Option<Vec<f64>>,
}

fn strip_code_fences(s: &str) -> String {
    let trimmed = s.trim();
    if !trimmed.contains("```") {
        return trimmed.to_string();
    }
    trimmed
        .lines()
        .filter(|line| !line.trim_start().starts_with("```"))
        .collect::<Vec<_>>()
        .join("\n")
}

fn remove_think_blocks(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(start) = rest.find("<think>") {
        out.push_str(&rest[..start]);
        match rest[start..].find("</think>") {
            Some(end) => rest = &rest[start + end + "</think>".len()..],
            None => return out, // unterminated think block: drop the tail
        }
    }
    out.push_str(rest);
    out
}

fn extract_decision_payload(raw: &str) -> Option<String> {
    let start = raw.rfind("<decision>")?;
    let after = &raw[start + "<decision>".len()..];
    let end = after.find("</decision>").unwrap_or(after.len());
    Some(after[..end].to_string())
}

/// Parse a judge reply into a verdict. Accepts `<decision>` framing, code
/// fences, bare JSON, and the minimal `{confidence, should_continue,
/// explanation}` shape.
pub fn parse_verdict(raw: &str) -> Result<ParsedVerdict, JudgeError> {
    let payload = match extract_decision_payload(raw) {
        Some(block) => strip_code_fences(&block),
        None => strip_code_fences(&remove_think_blocks(raw)),
    };
    let start = payload
        .find('{')
        .ok_or_else(|| JudgeError::MalformedVerdict("no json object in reply".into()))?;
    let end = payload
        .rfind('}')
        .ok_or_else(|| JudgeError::MalformedVerdict("unterminated json object".into()))?;
    if end < start {
        return Err(JudgeError::MalformedVerdict("unterminated json object".into()));
    }
    let value: Value = serde_json::from_str(&payload[start..=end])
        .map_err(|e| JudgeError::MalformedVerdict(e.to_string()))?;

    let confidence = value
        .get("confidence")
        .and_then(Value::as_f64)
        .ok_or_else(|| JudgeError::MalformedVerdict("missing numeric `confidence`".into()))?
        .clamp(0.0, 1.0);
    let should_continue = match (value.get("should_continue"), value.get("decision")) {
        (Some(Value::Bool(b)), _) => *b,
        (_, Some(Value::String(s))) if s == "accept" => false,
        (_, Some(Value::String(s))) if s == "continue" => true,
        _ => {
            return Err(JudgeError::MalformedVerdict(
                "missing `should_continue` bool or `decision` string".into(),
            ))
        }
    };
    let next_metric = value
        .get("next_metric")
        .and_then(Value::as_str)
        .and_then(Metric::parse);
    let explanation = value
        .get("explanation")
        .and_then(Value::as_str)
        .unwrap_or_default()
        .to_string();

    let claims = value.get("claims").and_then(Value::as_array).map(|entries| {
        entries
            .iter()
            .filter_map(|entry| {
                let model = entry.get("model")?.as_str()?.to_string();
                let component = match entry.get("component")?.as_str()? {
                    "trend" => Component::Trend,
                    "seasonality" => Component::Seasonality,
                    "residual" => Component::Residual,
                    _ => return None,
                };
                let importance = entry.get("importance")?.as_f64()?.clamp(0.0, 1.0);
                let direction = match entry.get("direction")?.as_str()? {
                    "helps" => Direction::Helps,
                    "hurts" => Direction::Hurts,
                    "neutral" => Direction::Neutral,
                    _ => return None,
                };
                Some(ComponentClaim {
                    model,
                    component,
                    importance,
                    direction,
                })
            })
            .collect::<Vec<_>>()
    });

    let aspect_scores = value
        .get("aspect_scores")
        .and_then(Value::as_array)
        .filter(|a| a.len() == 9)
        .map(|a| {
            let mut out = [0.0; 9];
            for (slot, v) in out.iter_mut().zip(a) {
                *slot = v.as_f64().unwrap_or(0.0).clamp(0.0, 1.0);
            }
            out
        });
    let weight_adjustment = value
        .get("weight_adjustment")
        .and_then(Value::as_array)
        .map(|a| a.iter().map(|v| v.as_f64().unwrap_or(0.0)).collect());

    Ok(ParsedVerdict {
        confidence,
        should_continue,
        next_metric,
        explanation,
        claims,
        aspect_scores,
        weight_adjustment,
    })
}

/// Judge backed by a chat endpoint, with rule-judge fallback.
pub struct RemoteJudge<T: Transport> {
    config: JudgeBackendConfig,
    transport: T,
}

impl<T: Transport> RemoteJudge<T> {
    pub fn new(config: JudgeBackendConfig, transport: T) -> Self {
        Self { config, transport }
    }

    fn request(&self, messages: Vec<ChatMessage>) -> ChatRequest {
        ChatRequest {
            model: self.config.model_name.clone().unwrap_or_else(|| "default".into()),
            messages,
            temperature: 0.0,
        }
    }

    fn dialogue(&mut self, ctx: &EvaluationContext) -> Result<String, JudgeError> {
        let context_json = serde_json::to_string_pretty(ctx)
            .map_err(|e| JudgeError::MalformedVerdict(format!("context serialization: {e}")))?;
        let mut transcript = vec![
            ChatMessage::new("system", format!("{SYSTEM_PROMPT_PREAMBLE}{VERDICT_SCHEMA}")),
            ChatMessage::new(
                "user",
                format!(
                    "Iteration {} on dataset `{}`. Evaluation context:\n{}\n\nState your initial \
                     hypothesis about the quality of the current weights.",
                    ctx.iteration, ctx.dataset_id, context_json
                ),
            ),
        ];
        let request = self.request(transcript.clone());
        let hypothesis = complete_with_retries(&mut self.transport, &request, self.config.max_retries)?;
        transcript.push(ChatMessage::new("assistant", hypothesis));
        transcript.push(ChatMessage::new(
            "user",
            "Challenge your hypothesis: where could these weights fail out of sample? Consider \
             regime shifts, seasonal coverage of the validation window, and overfitting to the \
             optimization metric.",
        ));
        let request = self.request(transcript.clone());
        let challenge = complete_with_retries(&mut self.transport, &request, self.config.max_retries)?;
        transcript.push(ChatMessage::new("assistant", challenge));
        transcript.push(ChatMessage::new(
            "user",
            "Refine your assessment and commit to a verdict now. Reply as \
             <think>...</think><decision>{json}</decision> following the schema exactly.",
        ));
        let request = self.request(transcript.clone());
        let mut reply = complete_with_retries(&mut self.transport, &request, self.config.max_retries)?;

        // re-ask on malformed replies before giving up
        for _ in 0..self.config.max_retries {
            if parse_verdict(&reply).is_ok() {
                break;
            }
            transcript.push(ChatMessage::new("assistant", reply.clone()));
            transcript.push(ChatMessage::new(
                "user",
                "That reply was not a valid verdict. Respond again with \
                 <decision>{json}</decision> only, following the schema.",
            ));
            let request = self.request(transcript.clone());
            reply = complete_with_retries(&mut self.transport, &request, self.config.max_retries)?;
        }
        Ok(reply)
    }

    fn finalize(&self, ctx: &EvaluationContext, parsed: ParsedVerdict) -> JudgeVerdict {
        let decision = if parsed.should_continue {
            Decision::Continue
        } else {
            Decision::Accept
        };
        let next_metric = match decision {
            Decision::Accept => None,
            Decision::Continue => parsed
                .next_metric
                .filter(|m| ctx.metric_pool.contains(m) && *m != ctx.current_metric)
                .or_else(|| next_metric_in_rotation(&ctx.metric_pool, ctx.current_metric)),
        };
        let low_fidelity = parsed.claims.as_ref().map_or(true, |c| c.is_empty());
        let claims = match parsed.claims {
            Some(claims) if !claims.is_empty() => ExplanationClaims {
                claims,
                free_text: parsed.explanation.clone(),
            },
            _ => ExplanationClaims::neutral(&ctx.cv_performance.model_ids, parsed.explanation.clone()),
        };
        JudgeVerdict {
            confidence: parsed.confidence,
            decision,
            next_metric,
            claims,
            aspect_scores: parsed.aspect_scores.unwrap_or([parsed.confidence; 9]),
            weight_adjustment: parsed.weight_adjustment,
            low_fidelity_claims: low_fidelity,
            fallback_used: false,
        }
    }

    fn fallback(&self, ctx: &EvaluationContext, cause: &JudgeError) -> Result<JudgeVerdict, JudgeError> {
        let mut verdict = RuleJudge::new(self.config.clone()).judge(ctx)?;
        verdict.fallback_used = true;
        verdict
            .claims
            .free_text
            .push_str(&format!(" [rule fallback after remote failure: {cause}]"));
        Ok(verdict)
    }
}

impl<T: Transport> Judge for RemoteJudge<T> {
    fn judge(&mut self, ctx: &EvaluationContext) -> Result<JudgeVerdict, JudgeError> {
        if ctx.metric_pool.is_empty() {
            return Err(JudgeError::EmptyMetricPool);
        }
        let reply = match self.dialogue(ctx) {
            Ok(reply) => reply,
            Err(err) if self.config.fallback_to_rule => return self.fallback(ctx, &err),
            Err(err) => return Err(err),
        };
        match parse_verdict(&reply) {
            Ok(parsed) => Ok(self.finalize(ctx, parsed)),
            Err(err) if self.config.fallback_to_rule => self.fallback(ctx, &err),
            Err(err) => Err(err),
        }
    }

    fn deterministic(&self) -> bool {
        false
    }
}
