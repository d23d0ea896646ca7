use crate::llm::{OutputShape, Signature};

pub const EXTRACTION_FIELDS: [&str; 5] = ["claims", "methods", "datasets", "results", "limitations"];
pub const SYNTHESIS_FIELDS: [&str; 3] = ["consensus", "contradictions", "open_gaps"];
pub const DRAFT_FIELD: &str = "draft_markdown";

pub fn extraction() -> Signature {
    Signature::new(
        "extraction",
        "You extract structured findings from a single scientific abstract. \
         Use only information stated in the abstract. Keep each item short.",
        1024,
    )
    .input("question", "the research question guiding the review")
    .input("title", "title of the paper")
    .input("abstract", "abstract of the paper")
    .output("claims", "main claims the paper makes", OutputShape::StringArray)
    .output("methods", "methods or techniques used", OutputShape::StringArray)
    .output("datasets", "datasets or benchmarks used", OutputShape::StringArray)
    .output("results", "reported results", OutputShape::StringArray)
    .output("limitations", "limitations stated or evident", OutputShape::StringArray)
}

pub fn synthesis() -> Signature {
    Signature::new(
        "synthesis",
        "You consolidate structured extractions from several papers into a cross-paper synthesis. \
         Identify recurring patterns and disagreements rather than summarising papers one by one.",
        1024,
    )
    .input("question", "the research question guiding the review")
    .input("extractions", "structured extractions, one block per paper")
    .output("consensus", "points most papers agree on", OutputShape::StringArray)
    .output(
        "contradictions",
        "points where papers disagree",
        OutputShape::StringArray,
    )
    .output(
        "open_gaps",
        "open problems and missing evidence",
        OutputShape::StringArray,
    )
}

pub fn writer() -> Signature {
    Signature::new(
        "writer",
        "You write a concise related-work section in markdown. Cite papers only with their \
         bracketed labels from the bibliography, for example [R1] or [R2]. Do not invent labels \
         and do not write a references list; it is added separately.",
        2048,
    )
    .input("question", "the research question guiding the review")
    .input("consensus", "consensus points from the synthesis")
    .input("contradictions", "contradictions from the synthesis")
    .input("open_gaps", "open gaps from the synthesis")
    .input("bibliography", "one line per paper: label, title, year, source")
    .output(DRAFT_FIELD, "the related-work draft in markdown", OutputShape::String)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn signatures_are_valid() {
        for sig in [extraction(), synthesis(), writer()] {
            sig.validate().unwrap();
        }
        assert_eq!(extraction().output_names(), EXTRACTION_FIELDS);
        assert_eq!(synthesis().output_names(), SYNTHESIS_FIELDS);
        assert_eq!(writer().max_tokens, 2048);
    }
}
