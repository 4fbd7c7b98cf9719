//! Stage implementations shared by the subcommands and the pipeline runner.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::json;

use styleforge_core::author::{AuthorId, TagScheme};
use styleforge_core::backend::{
    extend_tokenizer, load_checkpoint, save_checkpoint, CheckpointManifest, ModelConfig,
    ReferenceModel, Tokenizer,
};
use styleforge_core::corpus::{
    build_corpus, scheme_hash, split_corpus, CleanConfig, Corpus, CorpusConfig, NoParses,
    ParseProvider, RawDoc, SidecarParses, Split,
};
use styleforge_core::detector::{
    agreement_matrix, confidence_filter, train_detector, Detector, DetectorHyper,
};
use styleforge_core::fixtures;
use styleforge_core::generation::{
    fine_tune, generate, generate_batch, pretrain_base, seed_vocabulary, FineTuneHyper,
    FineTuneMethod, GeneratedSet, GenerationConfig, GenerationPlan, Seed, StyleGenerator,
};
use styleforge_core::synfeat::{self, feature_vectors, FeatureVector, FEATURE_NAMES};
use styleforge_core::util;
use styleforge_core::xai::{
    aggregate_profiles, classifier_token_ranking, enrichment_profile, tag_attribution_heatmap,
    TagSpan,
};

use crate::config::{
    CorpusSection, DetectorSection, EvaluateSection, ExplainSection, FinetuneSection,
    GenerateSection, ModelSection, PipelineConfig, SynfeatSection,
};
use crate::errors::config_err;
use crate::manifest::StageRun;

pub struct Ctx {
    pub backend: String,
    pub manifest_dir: PathBuf,
    pub seed: u64,
}

impl Ctx {
    pub fn new(backend: &str, manifest_dir: &Path, seed: u64) -> Ctx {
        Ctx {
            backend: backend.to_string(),
            manifest_dir: manifest_dir.to_path_buf(),
            seed,
        }
    }
}

// ---------------------------------------------------------------------------
// corpus
// ---------------------------------------------------------------------------

/// Documents live either in per-author subdirectories named after the scheme
/// (e.g. `Dickens/novel.txt`) or as flat files with a leading author index
/// (`0_tale.txt`).
fn load_docs(input_dir: &Path, scheme: &TagScheme) -> Result<Vec<RawDoc>> {
    let mut docs = Vec::new();
    let by_name: BTreeMap<String, AuthorId> = AuthorId::all()
        .map(|a| (scheme.name_for(a).to_lowercase(), a))
        .collect();

    let mut entries: Vec<PathBuf> = std::fs::read_dir(input_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();

    for entry in entries {
        if entry.is_dir() {
            let dir_name = entry
                .file_name()
                .unwrap_or_default()
                .to_string_lossy()
                .to_lowercase();
            if let Some(&author) = by_name.get(&dir_name) {
                let mut files: Vec<PathBuf> = std::fs::read_dir(&entry)?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| p.extension().is_some_and(|x| x == "txt"))
                    .collect();
                files.sort();
                for file in files {
                    docs.push(RawDoc {
                        author,
                        source: file.display().to_string(),
                        text: std::fs::read_to_string(&file)?,
                    });
                }
            }
        } else if entry.extension().is_some_and(|x| x == "txt") {
            let name = entry
                .file_name()
                .unwrap_or_default()
                .to_string_lossy()
                .to_string();
            let index = name
                .chars()
                .next()
                .and_then(|c| c.to_digit(10))
                .filter(|_| name.chars().nth(1).is_some_and(|c| c == '_' || c == '-'));
            if let Some(index) = index {
                let author = AuthorId::new(index as usize)
                    .map_err(|e| config_err(format!("{name}: {e}")))?;
                docs.push(RawDoc {
                    author,
                    source: entry.display().to_string(),
                    text: std::fs::read_to_string(&entry)?,
                });
            }
        }
    }
    if docs.is_empty() {
        return Err(config_err(format!(
            "no documents found under {} (expected author subdirectories or N_*.txt files)",
            input_dir.display()
        )));
    }
    Ok(docs)
}

pub fn stage_corpus(ctx: &Ctx, section: &CorpusSection, out_dir: &Path) -> Result<()> {
    let mut run = StageRun::new("corpus", &ctx.backend, serde_json::to_value(section)?);
    run.input_dir(&section.input_dir)?;
    if let Some(parses) = &section.parses {
        run.input_file(parses)?;
    }
    if let Some(scheme_path) = &section.scheme {
        run.input_file(scheme_path)?;
    }
    run.seed("split", ctx.seed);

    let scheme: TagScheme = match &section.scheme {
        Some(path) => util::read_json(path).context("reading scheme file")?,
        None => TagScheme::default_scheme(),
    };
    let docs = load_docs(&section.input_dir, &scheme)?;
    let parses: Box<dyn ParseProvider> = match &section.parses {
        Some(path) => Box::new(SidecarParses::from_jsonl(path)?),
        None => Box::new(NoParses),
    };
    let config = CorpusConfig {
        min_words: section.min_words,
        max_words: section.max_words,
        clean: CleanConfig {
            strict: section.strict_markers,
            ..Default::default()
        },
    };
    let (corpus, rejections) = build_corpus(&docs, &scheme, &config, parses.as_ref())?;
    let corpus = split_corpus(corpus, section.test_fraction, ctx.seed)?;
    corpus.save(out_dir, &rejections)?;

    for name in ["corpus.jsonl", "manifest.json", "scheme.json"] {
        run.output_file(&out_dir.join(name));
    }
    run.finish(&ctx.manifest_dir)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// finetune
// ---------------------------------------------------------------------------

fn generator_tokenizer(corpus: &Corpus, vocab_words: usize) -> Result<Tokenizer> {
    let tagged: Vec<String> = corpus
        .split_records(Split::Train)
        .map(|r| styleforge_core::corpus::format_example(r, &corpus.scheme))
        .collect();
    let base = Tokenizer::from_texts(tagged.iter().map(|s| s.as_str()), vocab_words);
    Ok(extend_tokenizer(&base, &corpus.scheme)?)
}

pub fn save_generator(
    dir: &Path,
    generator: &StyleGenerator,
    training: serde_json::Value,
) -> Result<()> {
    let manifest = CheckpointManifest {
        model: generator.model.config.clone(),
        lora: generator.model.lora.as_ref().map(|l| l.config.clone()),
        scheme_hash: Some(scheme_hash(&generator.scheme)),
        training: Some(json!({ "method": generator.method.to_string(), "report": training })),
    };
    save_checkpoint(dir, &generator.model, &generator.tokenizer, &manifest)?;
    util::write_json_pretty(&dir.join("scheme.json"), &generator.scheme)?;
    Ok(())
}

pub fn load_generator(dir: &Path) -> Result<StyleGenerator> {
    let (model, tokenizer, manifest) = load_checkpoint(dir)?;
    let scheme: TagScheme = util::read_json(&dir.join("scheme.json"))
        .with_context(|| format!("reading scheme from {}", dir.display()))?;
    let method = manifest
        .training
        .as_ref()
        .and_then(|t| t.get("method"))
        .and_then(|m| m.as_str())
        .map(|m| {
            if m == "lora" {
                FineTuneMethod::Lora
            } else {
                FineTuneMethod::Fft
            }
        })
        .unwrap_or(if manifest.lora.is_some() {
            FineTuneMethod::Lora
        } else {
            FineTuneMethod::Fft
        });
    Ok(StyleGenerator {
        model,
        tokenizer,
        scheme,
        method,
    })
}

pub fn stage_finetune(
    ctx: &Ctx,
    corpus_dir: &Path,
    model_section: &ModelSection,
    section: &FinetuneSection,
    method: FineTuneMethod,
    out_dir: &Path,
) -> Result<()> {
    let stage_name = format!("finetune-{method}");
    let mut run = StageRun::new(
        &stage_name,
        &ctx.backend,
        json!({ "model": model_section, "finetune": section, "method": method.to_string() }),
    );
    run.input_file(&corpus_dir.join("corpus.jsonl"))?;
    run.seed("init", ctx.seed);

    let corpus = Corpus::load(corpus_dir)?;
    let tokenizer = generator_tokenizer(&corpus, model_section.vocab_words)?;
    let mut base = ReferenceModel::new(
        ModelConfig::causal_lm(
            model_section.layers,
            model_section.heads,
            model_section.embed_dim,
            tokenizer.vocab_size(),
            model_section.context,
        )
        .with_seed(ctx.seed),
    )?;

    let mut hyper = FineTuneHyper {
        epochs: section.epochs,
        batch_size: section.batch_size,
        adam: styleforge_core::backend::AdamHyper::with_lr(section.lr),
        lora: styleforge_core::backend::LoraConfig {
            rank: section.lora_rank,
            alpha: section.lora_alpha,
            ..Default::default()
        },
        shuffle_seed: ctx.seed,
    };
    let pretrain_report = if section.pretrain_epochs > 0 {
        let pre = FineTuneHyper {
            epochs: section.pretrain_epochs,
            ..hyper.clone()
        };
        Some(pretrain_base(&mut base, &corpus, &tokenizer, &pre)?)
    } else {
        None
    };
    hyper.shuffle_seed = ctx.seed.wrapping_add(1);
    let (generator, report) = fine_tune(&base, &tokenizer, &corpus, method, &hyper)?;

    save_generator(
        out_dir,
        &generator,
        json!({ "finetune": report, "pretrain": pretrain_report }),
    )?;
    for name in [
        "weights.bin",
        "tokenizer.json",
        "config.json",
        "scheme.json",
    ] {
        run.output_file(&out_dir.join(name));
    }
    run.finish(&ctx.manifest_dir)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

pub fn stage_generate(
    ctx: &Ctx,
    model_dir: &Path,
    corpus_dir: Option<&Path>,
    section: &GenerateSection,
    method_override: Option<FineTuneMethod>,
    out_file: &Path,
) -> Result<()> {
    let mut run = StageRun::new(
        &format!(
            "generate-{}",
            model_dir
                .file_name()
                .map(|s| s.to_string_lossy().to_string())
                .unwrap_or_default()
        ),
        &ctx.backend,
        serde_json::to_value(section)?,
    );
    run.input_file(&model_dir.join("weights.bin"))?;
    if let Some(dir) = corpus_dir {
        run.input_file(&dir.join("corpus.jsonl"))?;
    }
    run.seed("generation", ctx.seed);

    let mut generator = load_generator(model_dir)?;
    if let Some(method) = method_override {
        generator.method = method;
    }
    let seed_vocab = match corpus_dir {
        Some(dir) => seed_vocabulary(&Corpus::load(dir)?, section.seed_words),
        None => Vec::new(),
    };
    let config = GenerationConfig {
        temperature: section.temperature,
        max_new_tokens: section.max_new_tokens,
        sample: true,
        rng_seed: ctx.seed,
        capture_trace: false,
    };
    let plan = GenerationPlan::uniform(section.per_author);
    let set = generate_batch(&generator, &plan, &seed_vocab, &config)?;
    if let Some(parent) = out_file.parent() {
        std::fs::create_dir_all(parent)?;
    }
    set.save(out_file)?;
    for warning in &set.report.warnings {
        eprintln!("warning: {warning}");
    }

    run.output_file(out_file);
    run.output_file(&out_file.with_extension("report.json"));
    run.finish(&ctx.manifest_dir)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

pub fn save_detector(dir: &Path, detector: &Detector, training: serde_json::Value) -> Result<()> {
    let manifest = CheckpointManifest {
        model: detector.model.config.clone(),
        lora: None,
        scheme_hash: Some(scheme_hash(&detector.scheme)),
        training: Some(training),
    };
    save_checkpoint(dir, &detector.model, &detector.tokenizer, &manifest)?;
    util::write_json_pretty(&dir.join("scheme.json"), &detector.scheme)?;
    Ok(())
}

pub fn load_detector(dir: &Path) -> Result<Detector> {
    let (model, tokenizer, _) = load_checkpoint(dir)?;
    let scheme: TagScheme = util::read_json(&dir.join("scheme.json"))?;
    Ok(Detector::new(model, tokenizer, scheme)?)
}

/// Loads the detector checkpoint, or trains one from `corpus_dir` when the
/// checkpoint does not exist yet.
pub fn detector_or_train(
    ctx: &Ctx,
    detector_dir: &Path,
    corpus_dir: Option<&Path>,
    section: &DetectorSection,
) -> Result<Detector> {
    if detector_dir.join("config.json").is_file() {
        return load_detector(detector_dir);
    }
    let corpus_dir = corpus_dir.ok_or_else(|| {
        config_err(format!(
            "detector checkpoint {} not found and no --corpus given to train one",
            detector_dir.display()
        ))
    })?;
    let mut run = StageRun::new("detector", &ctx.backend, serde_json::to_value(section)?);
    run.input_file(&corpus_dir.join("corpus.jsonl"))?;
    run.seed("detector", ctx.seed);

    let corpus = Corpus::load(corpus_dir)?;
    let texts: Vec<String> = corpus
        .split_records(Split::Train)
        .map(|r| r.text.clone())
        .collect();
    let tokenizer = Tokenizer::from_texts(texts.iter().map(|s| s.as_str()), section.vocab_words);
    let model = ReferenceModel::new(
        ModelConfig::classifier(
            section.layers,
            section.heads,
            section.embed_dim,
            tokenizer.vocab_size(),
            section.context,
            styleforge_core::author::AUTHOR_COUNT,
        )
        .with_seed(ctx.seed.wrapping_add(2)),
    )?;
    let hyper = DetectorHyper {
        epochs: section.epochs,
        batch_size: section.batch_size,
        adam: styleforge_core::backend::AdamHyper::with_lr(section.lr),
        patience: section.patience,
        shuffle_seed: ctx.seed.wrapping_add(3),
    };
    let (detector, report) = train_detector(model, tokenizer, &corpus, &hyper)?;
    save_detector(detector_dir, &detector, serde_json::to_value(&report)?)?;
    util::write_json_pretty(&detector_dir.join("detector_report.json"), &report)?;
    for name in [
        "weights.bin",
        "tokenizer.json",
        "config.json",
        "scheme.json",
        "detector_report.json",
    ] {
        run.output_file(&detector_dir.join(name));
    }
    run.finish(&ctx.manifest_dir)?;
    Ok(detector)
}

#[derive(Serialize)]
struct AgreementReport<'a> {
    method: String,
    authors: Vec<String>,
    counts: &'a [[u64; 5]; 5],
    total: u64,
    agreement_rate: f64,
    tie_count: u64,
}

pub fn stage_evaluate(
    ctx: &Ctx,
    detector_dir: &Path,
    corpus_dir: Option<&Path>,
    generated_file: &Path,
    section: &EvaluateSection,
    detector_section: &DetectorSection,
    out_dir: &Path,
) -> Result<()> {
    let detector = detector_or_train(ctx, detector_dir, corpus_dir, detector_section)?;

    let stage_name = format!(
        "evaluate-{}",
        generated_file
            .file_stem()
            .map(|s| s.to_string_lossy().to_string())
            .unwrap_or_default()
    );
    let mut run = StageRun::new(&stage_name, &ctx.backend, serde_json::to_value(section)?);
    run.input_file(generated_file)?;
    run.input_file(&detector_dir.join("weights.bin"))?;

    let method = if generated_file.to_string_lossy().contains("lora") {
        FineTuneMethod::Lora
    } else {
        FineTuneMethod::Fft
    };
    let set = GeneratedSet::load(generated_file, method)?;
    let outcome = agreement_matrix(&detector, &set)?;
    let filtered = confidence_filter(&outcome.predictions, section.threshold);

    std::fs::create_dir_all(out_dir)?;
    util::write_jsonl(&out_dir.join("predictions.jsonl"), &outcome.predictions)?;
    let agreement = AgreementReport {
        method: method.to_string(),
        authors: AuthorId::all()
            .map(|a| detector.scheme.name_for(a).to_string())
            .collect(),
        counts: &outcome.matrix.counts,
        total: outcome.matrix.total(),
        agreement_rate: outcome.matrix.agreement_rate(),
        tie_count: outcome.tie_count,
    };
    util::write_json_pretty(&out_dir.join("agreement.json"), &agreement)?;
    util::write_json_pretty(&out_dir.join("filtered_report.json"), &filtered)?;

    for name in [
        "predictions.jsonl",
        "agreement.json",
        "filtered_report.json",
    ] {
        run.output_file(&out_dir.join(name));
    }
    run.finish(&ctx.manifest_dir)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// synfeat
// ---------------------------------------------------------------------------

fn generated_to_records(
    set: &GeneratedSet,
    parses: &dyn ParseProvider,
) -> Vec<styleforge_core::corpus::SentenceRecord> {
    set.items
        .iter()
        .map(|item| styleforge_core::corpus::SentenceRecord {
            text: item.text.clone(),
            author: item.author,
            split: Split::Test,
            source_doc: "generated".into(),
            parse: parses.parse_for(&item.text),
            word_count: util::word_count(&item.text),
        })
        .collect()
}

#[derive(Serialize)]
struct FeatureRow<'a> {
    population: &'a str,
    author: String,
    index: usize,
    values: &'a BTreeMap<String, f64>,
}

pub fn stage_synfeat(
    ctx: &Ctx,
    real_file: &Path,
    generated_file: &Path,
    parses_file: Option<&Path>,
    section: &SynfeatSection,
    out_dir: &Path,
) -> Result<()> {
    let mut run = StageRun::new("synfeat", &ctx.backend, serde_json::to_value(section)?);
    run.input_file(real_file)?;
    run.input_file(generated_file)?;
    if let Some(p) = parses_file {
        run.input_file(p)?;
    }

    let real_records: Vec<styleforge_core::corpus::SentenceRecord> = util::read_jsonl(real_file)?;
    let parses: Box<dyn ParseProvider> = match parses_file {
        Some(path) => Box::new(SidecarParses::from_jsonl(path)?),
        None => Box::new(NoParses),
    };
    let generated_set = GeneratedSet::load(generated_file, FineTuneMethod::Fft)?;
    let generated_records = generated_to_records(&generated_set, parses.as_ref());

    let real_features = feature_vectors(&real_records);
    let generated_features = feature_vectors(&generated_records);

    let features: Vec<String> = if section.features == "all" {
        FEATURE_NAMES.iter().map(|s| s.to_string()).collect()
    } else {
        section
            .features
            .split(',')
            .map(|s| s.trim().to_string())
            .collect()
    };
    for name in &features {
        if !FEATURE_NAMES.contains(&name.as_str()) {
            return Err(config_err(format!("unknown feature {name}")));
        }
    }

    std::fs::create_dir_all(out_dir)?;

    // features.jsonl for both populations.
    {
        let mut rows: Vec<serde_json::Value> = Vec::new();
        for (population, records, feats) in [
            ("real", &real_records, &real_features),
            ("generated", &generated_records, &generated_features),
        ] {
            for (i, (record, fv)) in records.iter().zip(feats).enumerate() {
                rows.push(serde_json::to_value(FeatureRow {
                    population,
                    author: record.author.to_string(),
                    index: i,
                    values: &fv.values,
                })?);
            }
        }
        util::write_jsonl(&out_dir.join("features.jsonl"), &rows)?;
    }

    // Histograms per feature x author x population over shared edges, plus
    // the pooled "all" slice and a divergence table.
    let mut histograms: Vec<synfeat::Histogram> = Vec::new();
    let mut divergence_rows = vec!["feature,author,jsd,real_count,generated_count".to_string()];
    let author_slices: Vec<(String, Option<AuthorId>)> = std::iter::once(("all".to_string(), None))
        .chain(AuthorId::all().map(|a| (a.to_string(), Some(a))))
        .collect();
    for feature in &features {
        for (slice_name, author) in &author_slices {
            let select = |records: &[styleforge_core::corpus::SentenceRecord],
                          feats: &[FeatureVector]| {
                records
                    .iter()
                    .zip(feats)
                    .filter(|(r, _)| author.is_none_or(|a| r.author == a))
                    .filter_map(|(_, fv)| fv.get(feature))
                    .collect::<Vec<f64>>()
            };
            let real_vals = select(&real_records, &real_features);
            let gen_vals = select(&generated_records, &generated_features);
            if real_vals.is_empty() && gen_vals.is_empty() {
                continue;
            }
            let edges = synfeat::shared_edges(&real_vals, &gen_vals, section.bins);
            if !real_vals.is_empty() {
                histograms.push(synfeat::bin_values(
                    &real_vals, &edges, feature, "real", slice_name,
                ));
            }
            if !gen_vals.is_empty() {
                histograms.push(synfeat::bin_values(
                    &gen_vals,
                    &edges,
                    feature,
                    "generated",
                    slice_name,
                ));
            }
            if slice_name == "all" && !real_vals.is_empty() && !gen_vals.is_empty() {
                let ra = synfeat::bin_values(&real_vals, &edges, feature, "real", slice_name);
                let ga = synfeat::bin_values(&gen_vals, &edges, feature, "generated", slice_name);
                let jsd = synfeat::jensen_shannon(&ra, &ga)?;
                divergence_rows.push(format!(
                    "{feature},all,{jsd},{},{}",
                    real_vals.len(),
                    gen_vals.len()
                ));
            }
        }
    }
    util::write_json_pretty(&out_dir.join("histograms.json"), &histograms)?;
    std::fs::write(
        out_dir.join("divergence.csv"),
        divergence_rows.join("\n") + "\n",
    )?;

    for name in ["features.jsonl", "histograms.json", "divergence.csv"] {
        run.output_file(&out_dir.join(name));
    }
    run.finish(&ctx.manifest_dir)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// explain
// ---------------------------------------------------------------------------

pub fn stage_explain_ae(
    ctx: &Ctx,
    model_dir: &Path,
    section: &ExplainSection,
    out_dir: &Path,
) -> Result<()> {
    let mut run = StageRun::new("explain-ae", &ctx.backend, serde_json::to_value(section)?);
    run.input_file(&model_dir.join("weights.bin"))?;
    run.seed("ae", ctx.seed);

    let generator = load_generator(model_dir)?;
    std::fs::create_dir_all(out_dir)?;

    let mut rows = vec!["tag,layer,to_tag_mass,enrichment,samples".to_string()];
    for author in AuthorId::all() {
        let mut profiles = Vec::new();
        for i in 0..section
            .ae_samples
            .div_ceil(styleforge_core::author::AUTHOR_COUNT)
        {
            let config = GenerationConfig {
                rng_seed: ctx.seed.wrapping_add((author.index() * 10_000 + i) as u64),
                max_new_tokens: 32,
                capture_trace: true,
                ..Default::default()
            };
            let raw = generate(
                &generator.model,
                &generator.tokenizer,
                &generator.scheme,
                &Seed::tag_only(author),
                &config,
            )?;
            if let Some(trace) = &raw.trace {
                if trace.valid_len >= 2 {
                    profiles.push(enrichment_profile(trace, &TagSpan::leading_tag())?);
                }
            }
        }
        let aggregate = aggregate_profiles(&profiles)?;
        for (layer, stats) in aggregate.layers.iter().enumerate() {
            rows.push(format!(
                "{},{layer},{},{},{}",
                generator.scheme.tag_for(author),
                stats.to_tag_mass,
                stats.enrichment,
                aggregate.samples
            ));
        }
    }
    std::fs::write(out_dir.join("enrichment.csv"), rows.join("\n") + "\n")?;

    run.output_file(&out_dir.join("enrichment.csv"));
    run.finish(&ctx.manifest_dir)?;
    Ok(())
}

pub fn stage_explain_ig_gen(
    ctx: &Ctx,
    model_dir: &Path,
    input_file: &Path,
    section: &ExplainSection,
    out_dir: &Path,
) -> Result<()> {
    let mut run = StageRun::new(
        "explain-ig-gen",
        &ctx.backend,
        serde_json::to_value(section)?,
    );
    run.input_file(&model_dir.join("weights.bin"))?;
    run.input_file(input_file)?;
    run.seed("ig", ctx.seed);

    let generator = load_generator(model_dir)?;
    let set = GeneratedSet::load(input_file, FineTuneMethod::Fft)?;
    std::fs::create_dir_all(out_dir)?;

    for (i, item) in set.items.iter().take(section.ig_samples).enumerate() {
        // Re-generate from the stored seed string so the heatmap deterministically
        // matches a concrete token sequence.
        let rendered = &item.seed;
        let author = item.author;
        let mut extra: Vec<&str> = rendered.split_whitespace().collect();
        if !extra.is_empty() {
            extra.remove(0);
        }
        let seed = Seed::with_words(author, &extra);
        let config = GenerationConfig {
            rng_seed: ctx.seed.wrapping_add(i as u64),
            max_new_tokens: 16,
            capture_trace: false,
            ..Default::default()
        };
        let raw = generate(
            &generator.model,
            &generator.tokenizer,
            &generator.scheme,
            &seed,
            &config,
        )?;
        if raw.token_ids.len() <= raw.prompt_len {
            continue;
        }
        let heatmap =
            tag_attribution_heatmap(&generator.model, &generator.tokenizer, &raw, section.steps)?;
        let path = out_dir.join(format!("ig_heatmap_{i}.json"));
        util::write_json_pretty(&path, &heatmap)?;
        run.output_file(&path);
    }
    run.finish(&ctx.manifest_dir)?;
    Ok(())
}

pub fn stage_explain_ig_cls(
    ctx: &Ctx,
    detector_dir: &Path,
    corpus_file: &Path,
    section: &ExplainSection,
    out_dir: &Path,
) -> Result<()> {
    let mut run = StageRun::new(
        "explain-ig-cls",
        &ctx.backend,
        serde_json::to_value(section)?,
    );
    run.input_file(&detector_dir.join("weights.bin"))?;
    run.input_file(corpus_file)?;

    let detector = load_detector(detector_dir)?;
    let records: Vec<styleforge_core::corpus::SentenceRecord> = util::read_jsonl(corpus_file)?;
    std::fs::create_dir_all(out_dir)?;

    let mut all: BTreeMap<String, serde_json::Value> = BTreeMap::new();
    for author in AuthorId::all() {
        let subset: Vec<styleforge_core::corpus::SentenceRecord> = records
            .iter()
            .filter(|r| r.author == author && r.split == Split::Test)
            .take(section.cls_sentences)
            .cloned()
            .collect();
        let subset = if subset.is_empty() {
            records
                .iter()
                .filter(|r| r.author == author)
                .take(section.cls_sentences)
                .cloned()
                .collect()
        } else {
            subset
        };
        let ranking =
            classifier_token_ranking(&detector, &subset, author, section.steps, section.top_k)?;
        all.insert(
            detector.scheme.name_for(author).to_string(),
            serde_json::to_value(&ranking)?,
        );
    }
    util::write_json_pretty(&out_dir.join("top_tokens.json"), &all)?;

    run.output_file(&out_dir.join("top_tokens.json"));
    run.finish(&ctx.manifest_dir)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// pipeline
// ---------------------------------------------------------------------------

/// Runs every stage in dependency order. Each stage writes its own manifest;
/// a failure leaves the outputs of earlier stages intact.
pub fn run_pipeline(config: &PipelineConfig) -> Result<()> {
    let out = &config.pipeline.out_dir;
    let ctx = Ctx::new(
        &config.pipeline.backend,
        &out.join("manifests"),
        config.pipeline.seed,
    );
    std::fs::create_dir_all(out)?;

    let corpus_dir = out.join("corpus");
    stage_corpus(&ctx, &config.corpus, &corpus_dir)?;

    let fft_dir = out.join("models/fft");
    let lora_dir = out.join("models/lora");
    stage_finetune(
        &ctx,
        &corpus_dir,
        &config.model,
        &config.finetune,
        FineTuneMethod::Fft,
        &fft_dir,
    )?;
    stage_finetune(
        &ctx,
        &corpus_dir,
        &config.model,
        &config.finetune,
        FineTuneMethod::Lora,
        &lora_dir,
    )?;

    let gen_fft = out.join("generated/fft.jsonl");
    let gen_lora = out.join("generated/lora.jsonl");
    stage_generate(
        &ctx,
        &fft_dir,
        Some(&corpus_dir),
        &config.generate,
        None,
        &gen_fft,
    )?;
    stage_generate(
        &ctx,
        &lora_dir,
        Some(&corpus_dir),
        &config.generate,
        None,
        &gen_lora,
    )?;

    let detector_dir = out.join("models/detector");
    stage_evaluate(
        &ctx,
        &detector_dir,
        Some(&corpus_dir),
        &gen_fft,
        &config.evaluate,
        &config.detector,
        &out.join("eval/fft"),
    )?;
    stage_evaluate(
        &ctx,
        &detector_dir,
        Some(&corpus_dir),
        &gen_lora,
        &config.evaluate,
        &config.detector,
        &out.join("eval/lora"),
    )?;

    stage_synfeat(
        &ctx,
        &corpus_dir.join("corpus.jsonl"),
        &gen_fft,
        None,
        &config.synfeat,
        &out.join("synfeat"),
    )?;

    stage_explain_ae(&ctx, &fft_dir, &config.explain, &out.join("explain"))?;
    stage_explain_ig_gen(
        &ctx,
        &fft_dir,
        &gen_fft,
        &config.explain,
        &out.join("explain"),
    )?;
    stage_explain_ig_cls(
        &ctx,
        &detector_dir,
        &corpus_dir.join("corpus.jsonl"),
        &config.explain,
        &out.join("explain"),
    )?;
    Ok(())
}

/// Writes a small self-contained demo tree (synthetic documents plus a config
/// file) so the pipeline can run without external data.
pub fn write_demo_inputs(dir: &Path, per_author: usize, seed: u64) -> Result<()> {
    let synth = fixtures::synth_corpus(per_author, seed);
    let docs_dir = dir.join("docs");
    std::fs::create_dir_all(&docs_dir)?;
    for doc in &synth.docs {
        let author_index = doc.author.index();
        std::fs::write(
            docs_dir.join(format!("{author_index}_{}.txt", doc.source)),
            &doc.text,
        )?;
    }
    #[derive(Serialize)]
    struct ParseRow<'a> {
        text: &'a str,
        parse: &'a str,
    }
    let rows: Vec<ParseRow> = synth
        .parses
        .iter()
        .map(|(text, parse)| ParseRow { text, parse })
        .collect();
    util::write_jsonl(&dir.join("parses.jsonl"), &rows)?;
    Ok(())
}
