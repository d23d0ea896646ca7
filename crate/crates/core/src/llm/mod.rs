//! Provider-agnostic chat completion with signature-style structured prompts.
//!
//! A [`Signature`] names the input fields an LLM call receives and the output
//! fields it must return as one JSON object. [`render_prompt`] turns a
//! signature plus input values into a [`CompletionRequest`];
//! [`parse_structured_output`] recovers the declared fields from whatever the
//! model actually sent back. [`call_signature`] ties the two together with a
//! single repair re-prompt.

mod client;
pub mod mock;
mod parse;

use std::collections::{BTreeMap, HashSet};

use thiserror::Error;

pub use client::{CompletionBackend, LlmClient, COMPLETION_TIMEOUT};
pub use parse::{parse_structured_output, FieldMap};

use crate::domain::RuntimeConfig;

pub const DEFAULT_TEMPERATURE: f32 = 0.2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("provider rate limit: {message}")]
    RateLimited { message: String },
    #[error("provider error{}: {message}", status.map(|s| format!(" (HTTP {s})")).unwrap_or_default())]
    ProviderError { status: Option<u16>, message: String },
    #[error("malformed model output: {snippet}")]
    MalformedOutput { snippet: String },
    #[error("missing input field: {0}")]
    MissingInput(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid signature: {0}")]
    InvalidSignature(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputShape {
    StringArray,
    String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InputField {
    pub name: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputField {
    pub name: String,
    pub description: String,
    pub shape: OutputShape,
}

/// Declarative contract for one LLM call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Signature {
    pub name: String,
    pub instruction: String,
    pub inputs: Vec<InputField>,
    pub outputs: Vec<OutputField>,
    pub max_tokens: u32,
}

impl Signature {
    pub fn new(name: &str, instruction: &str, max_tokens: u32) -> Self {
        Signature {
            name: name.to_string(),
            instruction: instruction.to_string(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            max_tokens,
        }
    }

    pub fn input(mut self, name: &str, description: &str) -> Self {
        self.inputs.push(InputField {
            name: name.to_string(),
            description: description.to_string(),
        });
        self
    }

    pub fn output(mut self, name: &str, description: &str, shape: OutputShape) -> Self {
        self.outputs.push(OutputField {
            name: name.to_string(),
            description: description.to_string(),
            shape,
        });
        self
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.max_tokens == 0 {
            return Err(LlmError::InvalidSignature("max_tokens must be >= 1".into()));
        }
        let mut seen = HashSet::new();
        for o in &self.outputs {
            if o.name.is_empty() || !seen.insert(o.name.as_str()) {
                return Err(LlmError::InvalidSignature(format!(
                    "output field names must be unique and nonempty, got {:?}",
                    o.name
                )));
            }
        }
        Ok(())
    }

    pub fn output_names(&self) -> Vec<&str> {
        self.outputs.iter().map(|o| o.name.as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub system_text: String,
    pub user_text: String,
    pub model: String,
    pub max_tokens: u32,
    pub temperature: f32,
}

/// First line of every rendered system prompt; the mock provider keys on it.
pub(crate) const SIGNATURE_MARKER: &str = "signature: ";

pub fn render_prompt(
    sig: &Signature,
    values: &BTreeMap<&str, String>,
    model: &str,
) -> Result<CompletionRequest, LlmError> {
    sig.validate()?;

    let mut system = format!("{SIGNATURE_MARKER}{}\n\n{}\n\n", sig.name, sig.instruction);
    system.push_str("Input fields:\n");
    for f in &sig.inputs {
        system.push_str(&format!("- {}: {}\n", f.name, f.description));
    }
    system.push_str("\nOutput fields:\n");
    for f in &sig.outputs {
        let shape = match f.shape {
            OutputShape::StringArray => "array of strings",
            OutputShape::String => "string",
        };
        system.push_str(&format!("- {} ({shape}): {}\n", f.name, f.description));
    }
    system.push_str(&format!(
        "\nAnswer with a single JSON object whose keys are exactly {}. \
         Use an array of strings for every array field and a string for every string field. \
         Do not add any text outside the JSON object.",
        quoted_list(&sig.output_names())
    ));

    let mut blocks = Vec::with_capacity(sig.inputs.len());
    for f in &sig.inputs {
        let value = values
            .get(f.name.as_str())
            .ok_or_else(|| LlmError::MissingInput(f.name.clone()))?;
        blocks.push(format!("{}:\n{}", f.name.to_uppercase(), value));
    }

    Ok(CompletionRequest {
        system_text: system,
        user_text: blocks.join("\n\n"),
        model: model.to_string(),
        max_tokens: sig.max_tokens,
        temperature: DEFAULT_TEMPERATURE,
    })
}

fn quoted_list(names: &[&str]) -> String {
    names.iter().map(|n| format!("\"{n}\"")).collect::<Vec<_>>().join(", ")
}

/// Appended to the original request when the first answer does not parse.
pub fn repair_request(original: &CompletionRequest, sig: &Signature) -> CompletionRequest {
    let mut req = original.clone();
    req.user_text.push_str(&format!(
        "\n\nReturn ONLY a valid JSON object with keys: {}",
        sig.output_names().join(", ")
    ));
    req
}

/// Render, complete, parse. One repair re-prompt on malformed output; the
/// second failure is returned as-is.
pub async fn call_signature(
    backend: &dyn CompletionBackend,
    sig: &Signature,
    values: &BTreeMap<&str, String>,
    config: &RuntimeConfig,
) -> Result<FieldMap, LlmError> {
    let req = render_prompt(sig, values, &config.model)?;
    let raw = backend.complete(&req, config).await?;
    match parse_structured_output(&raw, sig) {
        Ok(fields) => Ok(fields),
        Err(LlmError::MalformedOutput { snippet }) => {
            tracing::warn!(signature = %sig.name, %snippet, "unparseable output, re-prompting once");
            let retry = repair_request(&req, sig);
            let raw = backend.complete(&retry, config).await?;
            parse_structured_output(&raw, sig)
        }
        Err(e) => Err(e),
    }
}
