//! Stage runners (a)–(e). Each stage writes into its own directory under the run directory
//! together with a manifest; a stage whose configuration slice, inputs and outputs are
//! unchanged is not run again.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use log::info;
use serde::Serialize;
use serde_json::json;

use super::config::{Ablation, PipelineConfig};
use super::manifest::{sha256_bytes, sha256_file, Manifest, MANIFEST_FILE};
use crate::align::{align_models, apply_alignment};
use crate::backtranslate::{read_pseudo_corpus, synthesize_pseudo_parallel, train_reverse_model, write_pseudo_corpus, ModelTranslator};
use crate::embed::{finalize, train_embeddings, transfer_init, EmbeddingModel};
use crate::error::{Error, Result};
use crate::evalfair::{bleu, BleuScore};
use crate::mtmodel::{
    build_model, finetune, load_model, save_model, train, translate_batch, DecodeOptions, HeadKind, Seq2SeqModel, TrainReport,
    Vocab,
};
use crate::textproc::{apply_bpe_corpus, learn_bpe, learn_joint_bpe, restore_surfaces_lenient, write_lines, BpeCodes, MonoCorpus, Origin, ParallelCorpus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    A,
    B,
    C,
    D,
    E,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::A, Stage::B, Stage::C, Stage::D, Stage::E];

    pub fn letter(self) -> char {
        match self {
            Stage::A => 'a',
            Stage::B => 'b',
            Stage::C => 'c',
            Stage::D => 'd',
            Stage::E => 'e',
        }
    }

    fn fail(self, reason: impl fmt::Display) -> Error {
        Error::Stage {
            stage: self.letter(),
            reason: reason.to_string(),
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| s.len() == 1 && s.starts_with(st.letter()))
            .ok_or_else(|| Error::invalid(format!("unknown stage `{s}` (a, b, c, d, e)")))
    }
}

#[derive(Debug, Clone)]
pub struct StageOutcome {
    pub stage: Stage,
    pub dir: PathBuf,
    pub manifest: Manifest,
    /// The stage was up to date and did not run.
    pub cached: bool,
}

impl StageOutcome {
    /// Test-set BLEU recorded by stages (b) and (e).
    pub fn test_bleu(&self) -> Option<f64> {
        self.manifest.notes.get("test_bleu").and_then(|v| v.as_f64())
    }
}

/// Stage directory name: the letter, plus the ablations that change this stage's output.
pub fn stage_dir_name(cfg: &PipelineConfig, stage: Stage) -> String {
    let f = &cfg.ablation;
    let softmax = f.head_kind == HeadKind::Softmax;
    let tags: &[(bool, Ablation)] = &[
        (softmax, Ablation::Softmax),
        (f.random_init, Ablation::RandomInit),
        (f.embeddings_from_scratch, Ablation::ScratchEmbeddings),
    ];
    let relevant = |a: Ablation| match stage {
        Stage::A | Stage::C => false,
        Stage::B => a == Ablation::Softmax,
        Stage::D => a == Ablation::ScratchEmbeddings,
        Stage::E => true,
    };
    let mut name = stage.letter().to_string();
    for (on, a) in tags {
        if *on && relevant(*a) {
            name.push('-');
            name.push_str(a.name());
        }
    }
    name
}

pub fn stage_dir(cfg: &PipelineConfig, stage: Stage) -> PathBuf {
    cfg.run_dir.join(stage_dir_name(cfg, stage))
}

/// A copy of `cfg` with `ablation` switched on.
pub fn with_ablation(cfg: &PipelineConfig, ablation: Ablation) -> PipelineConfig {
    let mut c = cfg.clone();
    ablation.apply(&mut c.ablation);
    c
}

fn a_file(cfg: &PipelineConfig, name: &str) -> PathBuf {
    stage_dir(cfg, Stage::A).join(name)
}

fn inputs(cfg: &PipelineConfig, stage: Stage) -> Vec<PathBuf> {
    let d = &cfg.data;
    let a = |n: &str| a_file(cfg, n);
    let mut v = match stage {
        Stage::A => {
            let mut v = vec![
                d.train_src.clone(),
                d.train_std.clone(),
                d.tgt_mono.clone(),
                d.dev_src.clone(),
                d.dev_tgt.clone(),
                d.test_src.clone(),
            ];
            v.extend(d.std_mono.iter().chain(&d.dev_std).cloned());
            v
        }
        Stage::B => vec![
            a("train.src.bpe"),
            a("train.std.bpe"),
            a("std.emb"),
            a("joint.codes"),
            a("test.src.bpe"),
            d.test_tgt.clone(),
        ],
        Stage::C => vec![a("train.src.bpe"), a("train.std.bpe"), a("tgt_mono.bpe"), a("src.codes")],
        Stage::D => vec![a("std.emb"), a("tgt_mono.bpe")],
        Stage::E => {
            let mut v = vec![
                stage_dir(cfg, Stage::C).join("pseudo.src"),
                stage_dir(cfg, Stage::C).join("pseudo.tgt"),
                stage_dir(cfg, Stage::D).join("tgt.emb"),
                a("dev.src.bpe"),
                a("dev.tgt.bpe"),
                a("test.src.bpe"),
                a("joint.codes"),
                d.test_tgt.clone(),
            ];
            if cfg.ablation.random_init {
                v.extend([a("train.src.bpe"), a("std.emb")]);
            } else {
                v.push(stage_dir(cfg, Stage::B).join("model.bin"));
            }
            v
        }
    };
    if d.dev_std.is_some() && matches!(stage, Stage::B | Stage::C) {
        v.extend([a("dev.src.bpe"), a("dev.std.bpe")]);
    }
    if stage == Stage::C {
        v.extend(d.tgt_mono_src.iter().cloned());
    }
    v
}

/// The part of the configuration a stage's outputs depend on, besides its input files.
fn config_key(cfg: &PipelineConfig, stage: Stage) -> serde_json::Value {
    match stage {
        Stage::A => json!({ "bpe": cfg.bpe, "embeddings": cfg.embeddings }),
        Stage::B => json!({ "model": cfg.forward_model(), "train": cfg.train_b, "decode": cfg.decode }),
        Stage::C => json!({ "model": cfg.reverse_model, "train": cfg.train_c, "decode": cfg.decode }),
        Stage::D => json!({
            "embeddings": cfg.tgt_skipgram(),
            "from_scratch": cfg.ablation.embeddings_from_scratch,
        }),
        Stage::E => json!({
            "model": cfg.forward_model(),
            "train": cfg.train_e,
            "decode": cfg.decode,
            "ablation": cfg.ablation,
        }),
    }
}

type Notes = BTreeMap<String, serde_json::Value>;

/// Runs one stage, or reuses its previous outputs when nothing it depends on changed.
/// `force` always reruns.
pub fn run_stage(cfg: &PipelineConfig, stage: Stage, force: bool) -> Result<StageOutcome> {
    cfg.validate().map_err(|e| stage.fail(format!("invalid configuration: {e}")))?;
    let dir = stage_dir(cfg, stage);
    let mut input_sums = BTreeMap::new();
    for p in inputs(cfg, stage) {
        if !p.is_file() {
            return Err(stage.fail(format!("missing dependency {}", p.display())));
        }
        input_sums.insert(p.display().to_string(), sha256_file(&p).map_err(|e| stage.fail(e))?);
    }
    let key = serde_json::to_vec(&config_key(cfg, stage)).map_err(|e| stage.fail(e))?;
    let config_hash = sha256_bytes(&key);

    let manifest_path = dir.join(MANIFEST_FILE);
    if !force && manifest_path.is_file() {
        if let Ok(m) = Manifest::read(&manifest_path) {
            if m.config_hash == config_hash && m.inputs == input_sums && m.outputs_intact(&dir) {
                info!("stage ({stage}) up to date in {}", dir.display());
                return Ok(StageOutcome {
                    stage,
                    dir,
                    manifest: m,
                    cached: true,
                });
            }
        }
    }

    if dir.exists() {
        std::fs::remove_dir_all(&dir).map_err(|e| stage.fail(e))?;
    }
    std::fs::create_dir_all(&dir).map_err(|e| stage.fail(e))?;
    info!("stage ({stage}) running in {}", dir.display());
    let start = Instant::now();
    let mut notes = match stage {
        Stage::A => stage_a(cfg, &dir),
        Stage::B => stage_b(cfg, &dir),
        Stage::C => stage_c(cfg, &dir),
        Stage::D => stage_d(cfg, &dir),
        Stage::E => stage_e(cfg, &dir),
    }
    .map_err(|e| match e {
        Error::Stage { .. } => e,
        other => stage.fail(other),
    })?;
    notes.insert("seconds".into(), json!(start.elapsed().as_secs_f64()));

    let mut outputs = BTreeMap::new();
    let mut names: Vec<String> = std::fs::read_dir(&dir)
        .map_err(|e| stage.fail(e))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_file())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    for name in names {
        let sum = sha256_file(&dir.join(&name)).map_err(|e| stage.fail(e))?;
        info!("stage ({stage}) {name} sha256 {sum}");
        outputs.insert(name, sum);
    }
    let manifest = Manifest {
        stage: stage.letter(),
        dir: stage_dir_name(cfg, stage),
        config_hash,
        inputs: input_sums,
        outputs,
        notes,
    };
    manifest.write(&manifest_path).map_err(|e| stage.fail(e))?;
    Ok(StageOutcome {
        stage,
        dir,
        manifest,
        cached: false,
    })
}

pub fn run_stage_a(cfg: &PipelineConfig) -> Result<StageOutcome> {
    run_stage(cfg, Stage::A, false)
}

pub fn run_stage_b(cfg: &PipelineConfig) -> Result<StageOutcome> {
    run_stage(cfg, Stage::B, false)
}

pub fn run_stage_c(cfg: &PipelineConfig) -> Result<StageOutcome> {
    run_stage(cfg, Stage::C, false)
}

pub fn run_stage_d(cfg: &PipelineConfig) -> Result<StageOutcome> {
    run_stage(cfg, Stage::D, false)
}

pub fn run_stage_e(cfg: &PipelineConfig) -> Result<StageOutcome> {
    run_stage(cfg, Stage::E, false)
}

/// Stages (a) through (e) in order.
pub fn run_all(cfg: &PipelineConfig, force: bool) -> Result<Vec<StageOutcome>> {
    Stage::ALL.into_iter().map(|s| run_stage(cfg, s, force)).collect()
}

fn read_mono(path: &Path, tag: &str) -> Result<MonoCorpus> {
    MonoCorpus::read(path, tag)
}

fn segment_to(codes: &BpeCodes, corpus: &MonoCorpus, path: &Path) -> Result<Vec<String>> {
    let lines: Vec<String> = apply_bpe_corpus(codes, &corpus.sentences)
        .into_iter()
        .map(|t| t.join(" "))
        .collect();
    write_lines(path, &lines)?;
    Ok(lines)
}

fn stage_a(cfg: &PipelineConfig, dir: &Path) -> Result<Notes> {
    let d = &cfg.data;
    let train = ParallelCorpus::read(&d.train_src, &d.train_std, Origin::Gold)?;
    let src = train.src_side("src");
    let std = train.tgt_side("std");
    let mut std_all = std.clone();
    if let Some(p) = &d.std_mono {
        std_all.sentences.extend(read_mono(p, "std")?.sentences);
    }
    let tgt_mono = read_mono(&d.tgt_mono, "tgt")?;

    let src_codes = learn_bpe(&src, cfg.bpe.src_merges)?;
    let joint = learn_joint_bpe(&std_all, &tgt_mono, cfg.bpe.joint_merges)?;
    src_codes.save(dir.join("src.codes"))?;
    joint.save(dir.join("joint.codes"))?;

    segment_to(&src_codes, &src, &dir.join("train.src.bpe"))?;
    segment_to(&joint, &std, &dir.join("train.std.bpe"))?;
    let std_all_bpe = segment_to(&joint, &std_all, &dir.join("std_all.bpe"))?;
    let tgt_bpe = segment_to(&joint, &tgt_mono, &dir.join("tgt_mono.bpe"))?;
    segment_to(&src_codes, &read_mono(&d.dev_src, "src")?, &dir.join("dev.src.bpe"))?;
    segment_to(&joint, &read_mono(&d.dev_tgt, "tgt")?, &dir.join("dev.tgt.bpe"))?;
    if let Some(p) = &d.dev_std {
        segment_to(&joint, &read_mono(p, "std")?, &dir.join("dev.std.bpe"))?;
    }
    segment_to(&src_codes, &read_mono(&d.test_src, "src")?, &dir.join("test.src.bpe"))?;

    let emb = finalize(train_embeddings(&MonoCorpus::new("std", std_all_bpe)?, &cfg.embeddings, None)?);
    emb.save(dir.join("std.emb"))?;

    let shared = shared_token_count(&MonoCorpus::new("std", std_all.sentences.clone())?, &tgt_mono, &joint);
    let mut notes = Notes::new();
    notes.insert("src_merges".into(), json!(src_codes.num_merges()));
    notes.insert("joint_merges".into(), json!(joint.num_merges()));
    notes.insert("std_embedding_vocab".into(), json!(emb.len()));
    notes.insert("tgt_mono_tokens".into(), json!(tgt_bpe.iter().map(|s| s.split_whitespace().count()).sum::<usize>()));
    notes.insert("shared_std_tgt_subwords".into(), json!(shared));
    Ok(notes)
}

/// Subword types that occur on both sides once each side is segmented with `codes`.
pub fn shared_token_count(std: &MonoCorpus, tgt: &MonoCorpus, codes: &BpeCodes) -> usize {
    shared_token_count_separate(std, codes, tgt, codes)
}

/// Like [`shared_token_count`] with separate codes per side.
pub fn shared_token_count_separate(std: &MonoCorpus, std_codes: &BpeCodes, tgt: &MonoCorpus, tgt_codes: &BpeCodes) -> usize {
    let types = |c: &MonoCorpus, codes: &BpeCodes| -> HashSet<String> {
        apply_bpe_corpus(codes, &c.sentences).into_iter().flatten().collect()
    };
    types(std, std_codes).intersection(&types(tgt, tgt_codes)).count()
}

/// Pairs whose target tokens are all in `known`.
fn known_targets(pairs: ParallelCorpus, known: &HashSet<&str>) -> Option<ParallelCorpus> {
    let kept: Vec<(String, String)> = pairs
        .pairs
        .into_iter()
        .filter(|(_, t)| t.split_whitespace().all(|w| known.contains(w)))
        .collect();
    if kept.is_empty() {
        return None;
    }
    ParallelCorpus::new(kept, Origin::Gold).ok()
}

fn report_notes(report: &TrainReport, notes: &mut Notes) {
    notes.insert("train_steps".into(), json!(report.steps));
    notes.insert("final_train_loss".into(), json!(report.final_loss()));
    notes.insert("best_step".into(), json!(report.best_step));
    notes.insert("stopped_early".into(), json!(report.stopped_early));
}

fn decode_options(cfg: &PipelineConfig) -> DecodeOptions {
    DecodeOptions {
        beam: cfg.decode.beam,
        max_len: Some(cfg.decode.max_len),
        map_unknown: true,
        ..DecodeOptions::default()
    }
}

/// Translates the test sources, writes `test.hyp` and `scores.json`, and scores against the
/// raw tgt references.
fn evaluate(cfg: &PipelineConfig, model: &Seq2SeqModel, dir: &Path) -> Result<BleuScore> {
    let src = read_mono(&a_file(cfg, "test.src.bpe"), "src")?;
    let marker = BpeCodes::load(a_file(cfg, "joint.codes"))?.marker().to_string();
    let out = translate_batch(model, &src.sentences, &decode_options(cfg))?;
    let hyps: Vec<String> = out.iter().map(|t| restore_surfaces_lenient(&t.tokens, &marker)).collect();
    write_lines(dir.join("test.hyp"), &hyps)?;
    let refs = read_mono(&cfg.data.test_tgt, "tgt")?;
    let score = bleu(&hyps, &refs.sentences)?;
    write_json(&dir.join("scores.json"), &score)?;
    Ok(score)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::invalid(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

fn stage_b(cfg: &PipelineConfig, dir: &Path) -> Result<Notes> {
    let train_data = ParallelCorpus::read(a_file(cfg, "train.src.bpe"), a_file(cfg, "train.std.bpe"), Origin::Gold)?;
    let emb = EmbeddingModel::load(a_file(cfg, "std.emb"))?;
    let srcs: Vec<&str> = train_data.pairs.iter().map(|p| p.0.as_str()).collect();
    let mut model = build_model(&cfg.forward_model(), &Vocab::from_sentences(&srcs), &emb)?;
    let valid = match cfg.data.dev_std {
        Some(_) => {
            let known: HashSet<&str> = emb.vocab().iter().map(String::as_str).collect();
            let dev = ParallelCorpus::read(a_file(cfg, "dev.src.bpe"), a_file(cfg, "dev.std.bpe"), Origin::Gold)?;
            known_targets(dev, &known)
        }
        None => None,
    };
    let report = train(&mut model, &train_data, valid.as_ref(), &cfg.train_b)?;
    save_model(&model, &dir.join("model.bin"))?;
    let score = evaluate(cfg, &model, dir)?;
    info!("stage (b) src→std model scores {:.2} BLEU against tgt references", score.score);
    let mut notes = Notes::new();
    report_notes(&report, &mut notes);
    notes.insert("test_bleu".into(), json!(score.score));
    Ok(notes)
}

fn stage_c(cfg: &PipelineConfig, dir: &Path) -> Result<Notes> {
    let train_data = ParallelCorpus::read(a_file(cfg, "train.std.bpe"), a_file(cfg, "train.src.bpe"), Origin::Gold)?;
    let valid = match cfg.data.dev_std {
        Some(_) => {
            let known: HashSet<&str> = train_data.pairs.iter().flat_map(|p| p.1.split_whitespace()).collect();
            let dev = ParallelCorpus::read(a_file(cfg, "dev.std.bpe"), a_file(cfg, "dev.src.bpe"), Origin::Gold)?;
            known_targets(dev, &known)
        }
        None => None,
    };
    let model = train_reverse_model(&train_data, &cfg.reverse_model, &cfg.train_c, valid.as_ref())?;
    save_model(&model, &dir.join("reverse.bin"))?;

    let tgt_mono = read_mono(&a_file(cfg, "tgt_mono.bpe"), "tgt")?;
    let translator = ModelTranslator {
        model: &model,
        options: decode_options(cfg),
    };
    let (pseudo, stats) = synthesize_pseudo_parallel(&translator, &tgt_mono)?;
    write_pseudo_corpus(&pseudo, &stats, &dir.join("pseudo"))?;

    let mut notes = Notes::new();
    notes.insert(
        "bpe_codes".into(),
        json!("the reverse model reads std/tgt text segmented with the joint codes of stage (a) and writes src segmented with the src codes of stage (a)"),
    );
    notes.insert("synthesis".into(), json!(stats));
    if let Some(gold_path) = &cfg.data.tgt_mono_src {
        let gold = read_mono(gold_path, "src")?;
        let marker = BpeCodes::load(a_file(cfg, "src.codes"))?.marker().to_string();
        // kept pairs follow input order with the tgt side unchanged
        let mut hyps = Vec::new();
        let mut refs = Vec::new();
        let mut kept = pseudo.pairs.iter().peekable();
        for (t, g) in tgt_mono.sentences.iter().zip(&gold.sentences) {
            if let Some((s, _)) = kept.next_if(|p| &p.1 == t) {
                let toks: Vec<&str> = s.split_whitespace().collect();
                hyps.push(restore_surfaces_lenient(&toks, &marker));
                refs.push(g.clone());
            }
        }
        if !hyps.is_empty() {
            let score = bleu(&hyps, &refs)?;
            info!("stage (c) pseudo src scores {:.2} BLEU against the known src", score.score);
            notes.insert("pseudo_src_bleu".into(), json!(score.score));
        }
    }
    Ok(notes)
}

fn stage_d(cfg: &PipelineConfig, dir: &Path) -> Result<Notes> {
    let std_emb = EmbeddingModel::load(a_file(cfg, "std.emb"))?;
    let tgt_mono = read_mono(&a_file(cfg, "tgt_mono.bpe"), "tgt")?;
    let sg = cfg.tgt_skipgram();
    let trained = if cfg.ablation.embeddings_from_scratch {
        train_embeddings(&tgt_mono, &sg, None)?
    } else {
        let mut tokens: Vec<String> = tgt_mono.words().map(str::to_string).collect();
        tokens.sort();
        tokens.dedup();
        let init = transfer_init(&std_emb, &tokens)?;
        train_embeddings(&tgt_mono, &sg, Some(&init))?
    };
    let tgt = finalize(trained);
    let (seeds, map) = align_models(&std_emb, &tgt)?;
    let aligned = apply_alignment(&map, &tgt)?;
    aligned.save(dir.join("tgt.emb"))?;
    map.save(dir.join("alignment.map"))?;
    let mut notes = Notes::new();
    notes.insert("tgt_embedding_vocab".into(), json!(aligned.len()));
    notes.insert("seed_pairs".into(), json!(seeds.len()));
    notes.insert("from_scratch".into(), json!(cfg.ablation.embeddings_from_scratch));
    Ok(notes)
}

fn stage_e(cfg: &PipelineConfig, dir: &Path) -> Result<Notes> {
    let tgt_emb = EmbeddingModel::load(stage_dir(cfg, Stage::D).join("tgt.emb"))?;
    let (pseudo, _) = read_pseudo_corpus(&stage_dir(cfg, Stage::C).join("pseudo"))?;
    let mut model = if cfg.ablation.random_init {
        let src = read_mono(&a_file(cfg, "train.src.bpe"), "src")?;
        let std_emb = EmbeddingModel::load(a_file(cfg, "std.emb"))?;
        build_model(&cfg.forward_model(), &Vocab::from_sentences(&src.sentences), &std_emb)?
    } else {
        let m = load_model(&stage_dir(cfg, Stage::B).join("model.bin"))?;
        if m.config() != &cfg.forward_model() {
            return Err(Stage::E.fail("the stage (b) model was built with a different model configuration; rerun stage (b)"));
        }
        m
    };
    let known: HashSet<&str> = tgt_emb.vocab().iter().map(String::as_str).collect();
    let dev = ParallelCorpus::read(a_file(cfg, "dev.src.bpe"), a_file(cfg, "dev.tgt.bpe"), Origin::Gold)?;
    let valid = known_targets(dev, &known);
    let report = finetune(&mut model, &tgt_emb, &pseudo, valid.as_ref(), &cfg.train_e)?;
    save_model(&model, &dir.join("model.bin"))?;
    let score = evaluate(cfg, &model, dir)?;
    info!("stage (e) src→tgt model scores {:.2} BLEU", score.score);
    let mut notes = Notes::new();
    report_notes(&report, &mut notes);
    notes.insert("validation_pairs".into(), json!(valid.as_ref().map_or(0, ParallelCorpus::len)));
    notes.insert("test_bleu".into(), json!(score.score));
    Ok(notes)
}
