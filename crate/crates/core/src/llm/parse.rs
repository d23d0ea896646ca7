use std::collections::BTreeMap;

use serde_json::{Map, Value};

use super::{LlmError, OutputShape, Signature};

/// Declared output field → values. String-shaped fields hold at most one
/// element.
pub type FieldMap = BTreeMap<String, Vec<String>>;

const SNIPPET_CHARS: usize = 200;

/// Recovers the signature's fields from raw model text.
///
/// Tries, in order: the whole text as JSON, the contents of a markdown code
/// fence, and the span from the first `{` to the last `}`. The first step
/// yielding a JSON object wins. Every declared field is then present in the
/// result; undeclared keys are dropped.
pub fn parse_structured_output(raw: &str, sig: &Signature) -> Result<FieldMap, LlmError> {
    let object = extract_object(raw).ok_or_else(|| LlmError::MalformedOutput {
        snippet: raw.chars().take(SNIPPET_CHARS).collect(),
    })?;
    Ok(coerce(&object, sig))
}

fn extract_object(raw: &str) -> Option<Map<String, Value>> {
    let as_object = |s: &str| match serde_json::from_str::<Value>(s) {
        Ok(Value::Object(m)) => Some(m),
        _ => None,
    };
    as_object(raw.trim())
        .or_else(|| strip_fences(raw).and_then(as_object))
        .or_else(|| brace_span(raw).and_then(as_object))
}

fn strip_fences(raw: &str) -> Option<&str> {
    let open = raw.find("```")?;
    let after_tag = &raw[open + 3..];
    let body_start = after_tag.find('\n').map(|i| i + 1).unwrap_or(after_tag.len());
    let body = &after_tag[body_start..];
    Some(match body.find("```") {
        Some(close) => &body[..close],
        None => body,
    })
}

fn brace_span(raw: &str) -> Option<&str> {
    let start = raw.find('{')?;
    let end = raw.rfind('}')?;
    (end > start).then(|| &raw[start..=end])
}

fn stringify(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn coerce(object: &Map<String, Value>, sig: &Signature) -> FieldMap {
    sig.outputs
        .iter()
        .map(|field| {
            let values = match (object.get(&field.name), field.shape) {
                (None | Some(Value::Null), _) => Vec::new(),
                (Some(Value::Array(items)), OutputShape::StringArray) => items.iter().map(stringify).collect(),
                (Some(Value::Array(items)), OutputShape::String) => {
                    vec![items.iter().map(stringify).collect::<Vec<_>>().join("\n")]
                }
                (Some(scalar), _) => vec![stringify(scalar)],
            };
            (field.name.clone(), values)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::OutputShape::StringArray;
    use proptest::prelude::*;

    fn five_field() -> Signature {
        ["claims", "methods", "datasets", "results", "limitations"]
            .iter()
            .fold(Signature::new("extraction", "x", 1024), |s, n| {
                s.output(n, "", StringArray)
            })
    }

    fn three_field() -> Signature {
        ["consensus", "contradictions", "open_gaps"]
            .iter()
            .fold(Signature::new("synthesis", "x", 1024), |s, n| {
                s.output(n, "", StringArray)
            })
    }

    fn map(pairs: &[(&str, &[&str])]) -> FieldMap {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.iter().map(|s| s.to_string()).collect()))
            .collect()
    }

    /// Independent extractor: first balanced `{...}` outside string literals.
    fn balanced_object(s: &str) -> Option<&str> {
        let (mut depth, mut in_str, mut esc, mut start) = (0usize, false, false, None);
        for (i, c) in s.char_indices() {
            if in_str {
                match (esc, c) {
                    (true, _) => esc = false,
                    (false, '\\') => esc = true,
                    (false, '"') => in_str = false,
                    _ => {}
                }
                continue;
            }
            match c {
                '"' => in_str = true,
                '{' => {
                    start.get_or_insert(i);
                    depth += 1;
                }
                '}' if depth > 0 => {
                    depth -= 1;
                    if depth == 0 {
                        return Some(&s[start?..=i]);
                    }
                }
                _ => {}
            }
        }
        None
    }

    #[test]
    fn well_formed_is_exact() {
        let raw = r#"{"claims":["c1"],"methods":[],"datasets":[],"results":["r1"],"limitations":[]}"#;
        assert_eq!(
            parse_structured_output(raw, &five_field()).unwrap(),
            map(&[
                ("claims", &["c1"]),
                ("methods", &[]),
                ("datasets", &[]),
                ("results", &["r1"]),
                ("limitations", &[]),
            ])
        );
    }

    #[test]
    fn fenced_with_missing_fields() {
        let raw = "```json\n{\"claims\":[\"c1\"]}\n```";
        assert_eq!(
            parse_structured_output(raw, &five_field()).unwrap(),
            map(&[
                ("claims", &["c1"]),
                ("methods", &[]),
                ("datasets", &[]),
                ("results", &[]),
                ("limitations", &[]),
            ])
        );
    }

    #[test]
    fn prose_wrapped_scalar_is_wrapped() {
        let raw = r#"Sure! Here is the JSON: {"consensus":"only one point"} thanks"#;
        let inner = balanced_object(raw).unwrap();
        assert_eq!(inner, r#"{"consensus":"only one point"}"#);
        assert_eq!(
            parse_structured_output(raw, &three_field()).unwrap(),
            map(&[
                ("consensus", &["only one point"]),
                ("contradictions", &[]),
                ("open_gaps", &[])
            ])
        );
    }

    #[test]
    fn non_string_elements_are_stringified_and_extras_dropped() {
        let raw = r#"{"claims":[1, true, {"a":2}], "bogus":["x"], "methods": 3.5}"#;
        let got = parse_structured_output(raw, &five_field()).unwrap();
        assert_eq!(got["claims"], vec!["1", "true", r#"{"a":2}"#]);
        assert_eq!(got["methods"], vec!["3.5"]);
        assert!(!got.contains_key("bogus"));
    }

    #[test]
    fn string_shape_joins_arrays() {
        let sig = Signature::new("writer", "x", 10).output("draft_markdown", "", OutputShape::String);
        let got = parse_structured_output(r#"{"draft_markdown":["a","b"]}"#, &sig).unwrap();
        assert_eq!(got["draft_markdown"], vec!["a\nb"]);
        let missing = parse_structured_output("{}", &sig).unwrap();
        assert!(missing["draft_markdown"].is_empty());
    }

    #[test]
    fn unparseable_reports_first_200_chars() {
        let raw = "no json here ".repeat(40);
        match parse_structured_output(&raw, &five_field()) {
            Err(LlmError::MalformedOutput { snippet }) => {
                assert_eq!(snippet.chars().count(), 200);
                assert!(raw.starts_with(&snippet));
            }
            other => panic!("expected MalformedOutput, got {other:?}"),
        }
        // A top-level array is not an object.
        assert!(parse_structured_output("[1,2]", &five_field()).is_err());
    }

    #[test]
    fn unclosed_fence_still_parses() {
        let raw = "```\n{\"consensus\":[\"a\"]}";
        assert_eq!(
            parse_structured_output(raw, &three_field()).unwrap()["consensus"],
            vec!["a"]
        );
    }

    proptest! {
        #[test]
        fn every_declared_field_is_present(raw in "\\PC{0,80}") {
            if let Ok(m) = parse_structured_output(&raw, &five_field()) {
                prop_assert_eq!(m.len(), 5);
            }
        }

        #[test]
        fn exact_objects_round_trip(
            fields in proptest::collection::vec(proptest::collection::vec("\\PC{0,12}", 0..4), 5)
        ) {
            let names = ["claims", "methods", "datasets", "results", "limitations"];
            let expected: FieldMap = names.iter().zip(&fields).map(|(n, v)| (n.to_string(), v.clone())).collect();
            let raw = serde_json::to_string(&expected).unwrap();
            prop_assert_eq!(parse_structured_output(&raw, &five_field()).unwrap(), expected);
        }
    }
}
