//! Regenerates the committed corpus fixtures under `tests/data/`: five
//! banner-wrapped synthetic documents, their parse sidecar, and the frozen
//! build manifest the fixture test pins against.
//!
//! ```text
//! cargo run -p styleforge-core --example make_test_fixtures
//! ```

use std::path::PathBuf;

use styleforge_core::author::TagScheme;
use styleforge_core::corpus::{
    build_corpus, split_corpus, CleanConfig, CorpusConfig, SidecarParses,
};
use styleforge_core::fixtures::synth_corpus;
use styleforge_core::util;

const PER_AUTHOR: usize = 40;
const SEED: u64 = 6060;
const SPLIT_SEED: u64 = 99;

fn main() {
    let data_dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data");
    let docs_dir = data_dir.join("docs");
    std::fs::create_dir_all(&docs_dir).unwrap();

    let synth = synth_corpus(PER_AUTHOR, SEED);

    // Wrap each document in front/back matter so the fixture exercises the
    // boundary-marker stripping path.
    let mut wrapped_docs = Vec::new();
    for doc in &synth.docs {
        let body = format!(
            "Synthetic Fixture Library\nCatalog page, not part of the text.\n\n\
             *** START OF THE FIXTURE DOCUMENT {} ***\n{}\n\
             *** END OF THE FIXTURE DOCUMENT {} ***\n\nAppendix junk follows.\n",
            doc.source, doc.text, doc.source
        );
        let file = docs_dir.join(format!("{}_{}.txt", doc.author.index(), doc.source));
        std::fs::write(&file, &body).unwrap();
        wrapped_docs.push(styleforge_core::corpus::RawDoc {
            author: doc.author,
            source: format!("{}_{}.txt", doc.author.index(), doc.source),
            text: body,
        });
    }

    #[derive(serde::Serialize)]
    struct ParseRow<'a> {
        text: &'a str,
        parse: &'a str,
    }
    let rows: Vec<ParseRow> = synth
        .parses
        .iter()
        .map(|(text, parse)| ParseRow { text, parse })
        .collect();
    util::write_jsonl(&data_dir.join("parses.jsonl"), &rows).unwrap();

    // Build once with the exact settings the fixture test uses and pin the
    // resulting manifest.
    let provider = SidecarParses(synth.parses.clone());
    let config = CorpusConfig {
        clean: CleanConfig::strict(),
        ..Default::default()
    };
    let (corpus, rejections) = build_corpus(
        &wrapped_docs,
        &TagScheme::default_scheme(),
        &config,
        &provider,
    )
    .unwrap();
    let corpus = split_corpus(corpus, 0.2, SPLIT_SEED).unwrap();
    util::write_json_pretty(
        &data_dir.join("frozen_manifest.json"),
        &corpus.manifest(&rejections),
    )
    .unwrap();

    println!(
        "wrote {} docs, {} parses, manifest with {} records",
        wrapped_docs.len(),
        rows.len(),
        corpus.records.len()
    );
}
