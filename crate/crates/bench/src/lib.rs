//! Input generators shared by the benches.

use researchpilot::search::SourceResult;
use researchpilot::{Paper, Source};

/// `n` papers from `source`; every third title repeats so dedup has work.
pub fn papers(source: Source, n: usize) -> Vec<Paper> {
    (0..n)
        .map(|i| Paper {
            id: format!("{source}-{i}"),
            title: if i % 3 == 0 {
                format!("Shared Title {}", i / 3)
            } else {
                format!("{source} distinct title {i}")
            },
            abstract_text: format!("Abstract {i} about retrieval and generation."),
            source,
            url: format!("https://example.org/{source}/{i}"),
            year: Some(2020),
            authors: vec!["A. Author".into()],
            doi: (i % 2 == 0).then(|| format!("10.1/{}", i / 2)),
        })
        .collect()
}

pub fn source_pair(n: usize) -> [SourceResult; 2] {
    [
        SourceResult::ok(Source::SemanticScholar, papers(Source::SemanticScholar, n)),
        SourceResult::ok(Source::Arxiv, papers(Source::Arxiv, n)),
    ]
}

/// Deterministic pseudo-abstracts of roughly `words` words.
pub fn texts(count: usize, words: usize) -> Vec<String> {
    const VOCAB: [&str; 12] = [
        "retrieval",
        "dense",
        "sparse",
        "augmented",
        "generation",
        "factuality",
        "benchmark",
        "passage",
        "ranking",
        "transformer",
        "citation",
        "survey",
    ];
    (0..count)
        .map(|i| {
            (0..words)
                .map(|j| VOCAB[(i * 7 + j * 13 + j * j) % VOCAB.len()])
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect()
}
