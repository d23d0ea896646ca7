//! Offline provider. Responses are a pure function of the request, keyed on
//! the signature name in the first line of the system prompt.

use serde_json::json;

use super::{CompletionRequest, SIGNATURE_MARKER};

pub fn respond(req: &CompletionRequest) -> String {
    let signature = req
        .system_text
        .lines()
        .next()
        .and_then(|l| l.strip_prefix(SIGNATURE_MARKER))
        .unwrap_or("")
        .trim();
    match signature {
        "extraction" => extraction(req),
        "synthesis" => synthesis(),
        "writer" => writer(req),
        _ => "{}".to_string(),
    }
}

/// Text of the `NAME:\n<value>` block in the user prompt, if any.
fn block<'a>(user_text: &'a str, name: &str) -> Option<&'a str> {
    let header = format!("{name}:\n");
    let start = if user_text.starts_with(&header) {
        header.len()
    } else {
        user_text.find(&format!("\n\n{header}"))? + header.len() + 2
    };
    let rest = &user_text[start..];
    Some(rest.split("\n\n").next().unwrap_or(rest))
}

fn extraction(req: &CompletionRequest) -> String {
    let title = block(&req.user_text, "TITLE").unwrap_or("this paper").trim();
    json!({
        "claims": [format!("{title} reports an approach that bears directly on the research question.")],
        "methods": [format!("{title} combines a retrieval component with a learned generator.")],
        "datasets": ["A public question-answering benchmark described in the abstract."],
        "results": [format!("{title} reports gains over the strongest baseline it compares against.")],
        "limitations": ["Evidence is limited to what the abstract states."],
    })
    .to_string()
}

fn synthesis() -> String {
    json!({
        "consensus": [
            "Grounding generation in retrieved evidence improves factual accuracy.",
            "Retriever quality is the main driver of end-task performance.",
            "Most studies evaluate on open-domain question-answering benchmarks.",
            "Joint or iterative retrieval outperforms a single retrieval pass.",
        ],
        "contradictions": [
            "Studies disagree on whether dense retrieval consistently beats sparse retrieval.",
            "Reported benefits of longer retrieved contexts conflict across model sizes.",
        ],
        "open_gaps": [
            "Few works measure citation faithfulness of generated text.",
            "Evaluation outside English and outside Wikipedia-derived corpora is scarce.",
            "Cost and latency trade-offs of multi-step retrieval are rarely reported.",
        ],
    })
    .to_string()
}

fn writer(req: &CompletionRequest) -> String {
    let count = block(&req.user_text, "BIBLIOGRAPHY")
        .map(|b| b.lines().filter(|l| is_bib_line(l)).count())
        .unwrap_or(0);
    let cite = |i: usize| {
        if count == 0 {
            String::new()
        } else {
            format!(" [R{}]", i % count + 1)
        }
    };
    let all: String = (0..count)
        .map(|i| format!("[R{}]", i + 1))
        .collect::<Vec<_>>()
        .join(", ");

    let mut draft = String::from("## Related Work\n\n");
    draft.push_str(&format!(
        "Recent work on this question converges on grounding generation in retrieved evidence{}. \
         Several systems pair a learned retriever with a generator and report consistent factual gains{}, \
         while others show that the quality of the retrieval component dominates end-task accuracy{}.\n\n",
        cite(0),
        cite(1),
        cite(2)
    ));
    draft.push_str(&format!(
        "Methodologically, the literature spans single-pass retrieval, iterative retrieval interleaved \
         with generation{}, and joint training of retriever and reader{}. Evaluation is concentrated on \
         open-domain question-answering benchmarks{}, which limits how far the conclusions transfer to \
         specialised domains.\n\n",
        cite(3),
        cite(4),
        cite(5)
    ));
    draft.push_str(&format!(
        "The evidence is not uniform. Comparisons between dense and sparse retrieval point in different \
         directions{}, and the value of longer retrieved contexts appears to depend on model scale{}.\n\n",
        cite(6),
        cite(7)
    ));
    draft.push_str(&format!(
        "Open problems remain. Few studies measure whether generated statements are faithful to the cited \
         sources{}, evaluation outside English and Wikipedia-derived corpora is scarce{}, and the cost of \
         multi-step retrieval is rarely reported. Taken together{}{}, these works motivate pipelines that \
         keep intermediate evidence inspectable.\n",
        cite(8),
        cite(9),
        if all.is_empty() { "" } else { " " },
        all
    ));
    json!({ "draft_markdown": draft }).to_string()
}

fn is_bib_line(line: &str) -> bool {
    line.strip_prefix('R')
        .and_then(|rest| rest.split_once(':'))
        .is_some_and(|(n, _)| !n.is_empty() && n.chars().all(|c| c.is_ascii_digit()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(system: &str, user: &str) -> CompletionRequest {
        CompletionRequest {
            system_text: system.into(),
            user_text: user.into(),
            model: "mock".into(),
            max_tokens: 10,
            temperature: 0.2,
        }
    }

    #[test]
    fn block_lookup() {
        let u = "QUESTION:\nq\n\nTITLE:\nT1\n\nABSTRACT:\na";
        assert_eq!(block(u, "QUESTION"), Some("q"));
        assert_eq!(block(u, "TITLE"), Some("T1"));
        assert_eq!(block(u, "ABSTRACT"), Some("a"));
        assert_eq!(block(u, "NOPE"), None);
    }

    #[test]
    fn extraction_has_five_arrays() {
        let out = respond(&req("signature: extraction\n", "TITLE:\nX"));
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        for k in ["claims", "methods", "datasets", "results", "limitations"] {
            assert!(v[k].is_array(), "{k}");
        }
    }

    #[test]
    fn synthesis_shape() {
        let v: serde_json::Value = serde_json::from_str(&synthesis()).unwrap();
        assert_eq!(v["consensus"].as_array().unwrap().len(), 4);
        assert_eq!(v["contradictions"].as_array().unwrap().len(), 2);
        assert_eq!(v["open_gaps"].as_array().unwrap().len(), 3);
    }

    #[test]
    fn writer_cites_only_known_labels() {
        let bib = "QUESTION:\nq\n\nBIBLIOGRAPHY:\nR1: A (2020, arxiv)\nR2: B (2021, arxiv)\nR3: C (n.d., arxiv)";
        let out = respond(&req("signature: writer\n", bib));
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        let draft = v["draft_markdown"].as_str().unwrap();
        assert!(draft.len() >= 1000);
        assert!(draft.contains("[R1]") && draft.contains("[R3]"));
        assert!(!draft.contains("[R4]"));
    }

    #[test]
    fn unknown_signature_yields_empty_object() {
        assert_eq!(respond(&req("whatever", "")), "{}");
    }

    #[test]
    fn deterministic() {
        let r = req("signature: extraction\n", "TITLE:\nSame");
        assert_eq!(respond(&r), respond(&r));
    }
}
