use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::Deserialize;

use varmt::align::{align_models, apply_alignment, AlignmentMap};
use varmt::backtranslate::{synthesize_pseudo_parallel, write_pseudo_corpus, ModelTranslator};
use varmt::embed::{finalize, train_embeddings, transfer_init, EmbeddingModel, SkipgramConfig};
use varmt::evalfair::{bleu, read_named_values, unfairness_from_bleu, BenefitVector};
use varmt::mtmodel::{
    build_model, finetune, load_model, save_model, train, translate_batch, DecodeOptions, ModelConfig, TrainConfig, Vocab,
};
use varmt::pipeline::{
    run_stage, write_synthetic_experiment, Ablation, PipelineConfig, Stage, SynthSettings,
};
use varmt::textproc::{apply_bpe_corpus, learn_bpe, learn_joint_bpe, restore_surfaces_lenient, write_lines, BpeCodes, MonoCorpus, Origin, ParallelCorpus, DEFAULT_MARKER};
use varmt::vmf::gradient_check;

#[derive(Parser)]
#[command(name = "varmt", version, about = "Continuous-output translation into related low-resource varieties")]
struct Cli {
    /// Log level (error, warn, info, debug).
    #[arg(long, global = true, default_value = "info")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Learn BPE merges on one corpus, or jointly on two.
    LearnBpe {
        #[arg(long)]
        input: PathBuf,
        /// Second corpus for joint codes.
        #[arg(long)]
        joint: Option<PathBuf>,
        #[arg(long, default_value_t = 24_000)]
        merges: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Segment a corpus with learned codes.
    ApplyBpe {
        #[arg(long)]
        codes: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Undo BPE segmentation.
    RestoreBpe {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = DEFAULT_MARKER)]
        marker: String,
    },
    /// Train skip-gram subword embeddings.
    TrainEmbeddings {
        #[arg(long)]
        corpus: PathBuf,
        /// TOML file with skip-gram settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write word2vec text vectors.
        #[arg(long)]
        text: Option<PathBuf>,
    },
    /// Initialize embeddings for a new corpus from a parent model and continue training.
    TransferEmbeddings {
        #[arg(long)]
        parent: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit an orthogonal map from tgt embeddings onto std embeddings over shared tokens.
    AlignEmbeddings {
        #[arg(long)]
        std: PathBuf,
        #[arg(long)]
        tgt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rotate an embedding model with a saved alignment.
    ApplyAlignment {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare vMF loss gradients with finite differences.
    VmfCheck {
        #[arg(long, value_delimiter = ',', default_value = "3,50,300")]
        dims: Vec<usize>,
        #[arg(long, default_value_t = 100)]
        pairs: usize,
        #[arg(long, default_value_t = 0.02)]
        lambda1: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Train a src→std model that predicts pretrained target embeddings.
    TrainMt {
        #[arg(long)]
        src: PathBuf,
        #[arg(long)]
        tgt: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        /// TOML file with optional [model] and [train] tables.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, requires = "valid_tgt")]
        valid_src: Option<PathBuf>,
        #[arg(long)]
        valid_tgt: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Swap in new target embeddings and continue training.
    FinetuneMt {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        src: PathBuf,
        #[arg(long)]
        tgt: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Translate one segmented sentence per line.
    Translate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 5)]
        beam: usize,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Translate tgt monolingual text into a pseudo-parallel corpus.
    Backtranslate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        mono: PathBuf,
        #[arg(long, default_value_t = 5)]
        beam: usize,
        /// Writes STEM.src, STEM.tgt and STEM.stats.
        #[arg(long)]
        out: PathBuf,
    },
    /// Corpus BLEU of hypotheses against references.
    Evaluate {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
    },
    /// Averages, max−min and generalized-entropy unfairness over per-variety BLEU.
    FairnessReport {
        /// `name<TAB>BLEU` lines.
        #[arg(long)]
        scores: PathBuf,
        /// `name<TAB>population` lines.
        #[arg(long)]
        pops: PathBuf,
        #[arg(long, default_value_t = 2.0)]
        alpha: f64,
        /// Comma-separated groups for the averages; all groups when absent.
        #[arg(long, value_delimiter = ',')]
        avg_groups: Option<Vec<String>>,
    },
    /// Run pipeline stages.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
        /// a, b, c, d, e or all.
        #[arg(long, default_value = "all")]
        stage: String,
        #[arg(long)]
        ablation: Option<Ablation>,
        /// Rerun stages even when their outputs are up to date.
        #[arg(long)]
        force: bool,
    },
    /// Write a synthetic src/std/tgt experiment and its pipeline config.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 20_000)]
        pairs: usize,
        #[arg(long, default_value_t = 2_000)]
        tgt_mono: usize,
    },
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct MtConfigFile {
    model: ModelConfig,
    train: TrainConfig,
}

fn read_toml<T: for<'de> Deserialize<'de> + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

fn mono(path: &Path) -> Result<MonoCorpus> {
    MonoCorpus::read(path, "text").with_context(|| format!("reading {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::LearnBpe { input, joint, merges, out } => {
            let codes = match joint {
                Some(j) => learn_joint_bpe(&mono(&input)?, &mono(&j)?, merges)?,
                None => learn_bpe(&mono(&input)?, merges)?,
            };
            codes.save(&out)?;
            eprintln!("{} merges", codes.num_merges());
        }
        Command::ApplyBpe { codes, input, out } => {
            let codes = BpeCodes::load(&codes)?;
            let lines: Vec<String> = apply_bpe_corpus(&codes, &mono(&input)?.sentences)
                .into_iter()
                .map(|t| t.join(" "))
                .collect();
            write_lines(&out, &lines)?;
        }
        Command::RestoreBpe { input, out, marker } => {
            let lines: Vec<String> = mono(&input)?
                .sentences
                .iter()
                .map(|s| restore_surfaces_lenient(&s.split_whitespace().collect::<Vec<_>>(), &marker))
                .collect();
            write_lines(&out, &lines)?;
        }
        Command::TrainEmbeddings { corpus, config, out, text } => {
            let cfg: SkipgramConfig = read_toml(config.as_deref())?;
            let model = finalize(train_embeddings(&mono(&corpus)?, &cfg, None)?);
            model.save(&out)?;
            if let Some(t) = text {
                model.save_text(&t)?;
            }
            eprintln!("{} tokens, dim {}", model.len(), model.dim());
        }
        Command::TransferEmbeddings { parent, corpus, config, out } => {
            let parent = EmbeddingModel::load(&parent)?;
            let mut cfg: SkipgramConfig = read_toml(config.as_deref())?;
            let (lo, hi) = parent.ngram_range();
            cfg.dim = parent.dim();
            cfg.bucket_count = parent.bucket_count();
            (cfg.min_n, cfg.max_n) = (lo, hi);
            let corpus = mono(&corpus)?;
            let mut tokens: Vec<String> = corpus.words().map(str::to_string).collect();
            tokens.sort();
            tokens.dedup();
            let init = transfer_init(&parent, &tokens)?;
            finalize(train_embeddings(&corpus, &cfg, Some(&init))?).save(&out)?;
        }
        Command::AlignEmbeddings { std, tgt, out } => {
            let (seeds, map) = align_models(&EmbeddingModel::load(&std)?, &EmbeddingModel::load(&tgt)?)?;
            map.save(&out)?;
            eprintln!("{} seed pairs, orthogonality error {:.2e}", seeds.len(), map.orthogonality_error());
        }
        Command::ApplyAlignment { map, embeddings, out } => {
            let map = AlignmentMap::load(&map)?;
            apply_alignment(&map, &EmbeddingModel::load(&embeddings)?)?.save(&out)?;
        }
        Command::VmfCheck { dims, pairs, lambda1, seed } => {
            let rows = gradient_check(&dims, &[0.0, lambda1], pairs, 1e-5, seed)?;
            for r in &rows {
                println!("dim={}\tlambda1={}\tpairs={}\tmax_rel_error={:.3e}", r.dim, r.lambda1, r.pairs, r.max_rel_error);
            }
            if rows.iter().any(|r| r.max_rel_error >= 1e-4) {
                bail!("gradient check failed");
            }
        }
        Command::TrainMt { src, tgt, embeddings, config, valid_src, valid_tgt, out } => {
            let cfg: MtConfigFile = read_toml(config.as_deref())?;
            let data = ParallelCorpus::read(&src, &tgt, Origin::Gold)?;
            let emb = EmbeddingModel::load(&embeddings)?;
            let srcs: Vec<&str> = data.pairs.iter().map(|p| p.0.as_str()).collect();
            let mut model = build_model(&cfg.model, &Vocab::from_sentences(&srcs), &emb)?;
            let valid = match (valid_src, valid_tgt) {
                (Some(s), Some(t)) => Some(ParallelCorpus::read(&s, &t, Origin::Gold)?),
                _ => None,
            };
            let report = train(&mut model, &data, valid.as_ref(), &cfg.train)?;
            save_model(&model, &out)?;
            eprintln!("{} steps, final loss {:.4}", report.steps, report.final_loss().unwrap_or(f64::NAN));
        }
        Command::FinetuneMt { model, embeddings, src, tgt, config, out } => {
            let cfg: MtConfigFile = read_toml(config.as_deref())?;
            let mut model = load_model(&model)?;
            let data = ParallelCorpus::read(&src, &tgt, Origin::Pseudo)?;
            let report = finetune(&mut model, &EmbeddingModel::load(&embeddings)?, &data, None, &cfg.train)?;
            save_model(&model, &out)?;
            eprintln!("{} steps, final loss {:.4}", report.steps, report.final_loss().unwrap_or(f64::NAN));
        }
        Command::Translate { model, input, beam, out } => {
            let model = load_model(&model)?;
            let opts = DecodeOptions {
                beam,
                map_unknown: true,
                ..DecodeOptions::default()
            };
            let lines: Vec<String> = translate_batch(&model, &mono(&input)?.sentences, &opts)?
                .into_iter()
                .map(|t| t.tokens.join(" "))
                .collect();
            match out {
                Some(p) => write_lines(&p, &lines)?,
                None => lines.iter().for_each(|l| println!("{l}")),
            }
        }
        Command::Backtranslate { model, mono: mono_path, beam, out } => {
            let model = load_model(&model)?;
            let mut translator = ModelTranslator::new(&model);
            translator.options.beam = beam;
            let (corpus, stats) = synthesize_pseudo_parallel(&translator, &mono(&mono_path)?)?;
            write_pseudo_corpus(&corpus, &stats, &out)?;
            eprintln!("kept {} of {} ({} dropped)", stats.kept, stats.input_sentences, stats.dropped);
        }
        Command::Evaluate { hyp, reference } => {
            let score = bleu(&mono(&hyp)?.sentences, &mono(&reference)?.sentences)?;
            println!("BLEU = {:.2} {:.1}/{:.1}/{:.1}/{:.1} (BP = {:.3} ratio = {:.3} hyp_len = {} ref_len = {})",
                score.score,
                score.precisions[0],
                score.precisions[1],
                score.precisions[2],
                score.precisions[3],
                score.brevity_penalty,
                score.hyp_len as f64 / score.ref_len.max(1) as f64,
                score.hyp_len,
                score.ref_len);
        }
        Command::FairnessReport { scores, pops, alpha, avg_groups } => {
            let benefits = BenefitVector::from_named(&read_named_values(&scores)?, &read_named_values(&pops)?)?;
            print!("{}", unfairness_from_bleu(&benefits, alpha, avg_groups.as_deref())?);
        }
        Command::Pipeline { config, stage, ablation, force } => {
            let mut cfg = PipelineConfig::load(&config)?;
            if let Some(a) = ablation {
                a.apply(&mut cfg.ablation);
            }
            let stages: Vec<Stage> = if stage == "all" { Stage::ALL.to_vec() } else { vec![stage.parse()?] };
            for s in stages {
                let o = run_stage(&cfg, s, force)?;
                let bleu = o.test_bleu().map(|b| format!("\ttest BLEU {b:.2}")).unwrap_or_default();
                println!("stage {s}\t{}\t{}{bleu}", o.dir.display(), if o.cached { "cached" } else { "done" });
            }
        }
        Command::Synth { out, seed, pairs, tgt_mono } => {
            let settings = SynthSettings {
                seed,
                train_pairs: pairs,
                tgt_mono,
                ..SynthSettings::default()
            };
            let cfg = write_synthetic_experiment(&out, &settings)?;
            println!("{}", cfg.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
