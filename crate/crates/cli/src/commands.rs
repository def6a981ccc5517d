// SPDX-License-Identifier: Apache-2.0

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use lexalign_core::lora::{inject, merge, LoraModel};
use lexalign_core::model::{MicroTransformer, Vocabulary};
use lexalign_core::numcore::{Rng, Tensor};
use lexalign_core::probe::{
    build_report, evaluate_alignment, scan_layers, AlignmentReport, LayerScanResult,
};
use lexalign_core::synth::{
    generate_world, pretrain_toy, split_pairs, Split, SyntheticWorld, WordPairSet,
};
use lexalign_core::trainer::{train_tli, TrainingLog};
use lexalign_core::viz::{
    pca_2d, render_layer_curve, render_projection, tsne_2d, Figure, Projection2D,
};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const CONFIG_FILE: &str = "config.toml";
pub const PAIRS_FILE: &str = "pairs.csv";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const WORLD_DIR: &str = "world";
pub const BASE_CHECKPOINT: &str = "base.ckpt";
pub const PRETRAIN_LOSS_FILE: &str = "pretrain_loss.csv";
pub const SCAN_FILE: &str = "scan.json";
pub const LAYER_CURVE_FIGURE: &str = "layer_curve.svg";
pub const ADAPTER_CHECKPOINT: &str = "adapters.lora";
pub const TRAINING_LOG: &str = "training_log.jsonl";
pub const MERGED_CHECKPOINT: &str = "merged.ckpt";
pub const EVAL_REPORT: &str = "eval_report.md";
pub const EVAL_JSON: &str = "eval_report.json";

/// Creates `out_dir/<UTC timestamp>-seed<N>` (with a numeric suffix if
/// taken) and writes the resolved config into it.
pub fn create_run_dir(cfg: &RunConfig) -> CliResult<PathBuf> {
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
    let base = format!("{stamp}-seed{}", cfg.seed);
    let mut dir = cfg.out_dir.join(&base);
    let mut k = 1;
    while dir.exists() {
        dir = cfg.out_dir.join(format!("{base}-{k}"));
        k += 1;
    }
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Io(dir.clone(), e))?;
    write_text(&dir.join(CONFIG_FILE), &cfg.to_toml()?)?;
    Ok(dir)
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::Io(path.to_path_buf(), e))
}

fn input<'a>(value: &'a Option<PathBuf>, key: &'static str) -> CliResult<&'a Path> {
    let path = value.as_deref().ok_or(CliError::Unset(key))?;
    if !path.exists() {
        return Err(CliError::MissingInput(key, path.to_path_buf()));
    }
    Ok(path)
}

// Stages. Each writes its artifacts into `dir` and returns what later
// stages need.

pub fn stage_gen_data(
    cfg: &RunConfig,
    dir: &Path,
) -> CliResult<(SyntheticWorld, Vocabulary, WordPairSet)> {
    let world = generate_world(&cfg.world())?;
    let world_dir = dir.join(WORLD_DIR);
    std::fs::create_dir_all(&world_dir).map_err(|e| CliError::Io(world_dir.clone(), e))?;
    world.save(&world_dir)?;
    let vocab = world.vocabulary()?;
    vocab.save(&dir.join(VOCAB_FILE))?;
    let pairs = split_pairs(&world.lexicon_pairs()?, cfg.control_fraction, cfg.seed)?;
    pairs.save(&dir.join(PAIRS_FILE))?;
    Ok((world, vocab, pairs))
}

pub fn stage_pretrain(
    cfg: &RunConfig,
    dir: &Path,
    world: &SyntheticWorld,
    vocab: &Vocabulary,
) -> CliResult<MicroTransformer> {
    let init = MicroTransformer::new(cfg.model(), &mut Rng::new(cfg.seed))?;
    let (model, log) = pretrain_toy(&init, vocab, world, &cfg.pretrain())?;
    model.save_checkpoint(&dir.join(BASE_CHECKPOINT))?;
    let mut csv = String::from("step,loss\n");
    for (i, l) in log.losses.iter().enumerate() {
        let _ = writeln!(csv, "{i},{l}");
    }
    write_text(&dir.join(PRETRAIN_LOSS_FILE), &csv)?;
    Ok(model)
}

/// Scans every pair, trained and control alike.
pub fn stage_scan(
    dir: &Path,
    model: &MicroTransformer,
    vocab: &Vocabulary,
    pairs: &WordPairSet,
) -> CliResult<LayerScanResult> {
    let scan = scan_layers(model, vocab, pairs)?;
    let json = serde_json::to_string_pretty(&scan).map_err(|e| CliError::Config(e.to_string()))?;
    write_text(&dir.join(SCAN_FILE), &json)?;
    render_layer_curve(&scan, scan.peak_layer, &dir.join(LAYER_CURVE_FIGURE))?;
    Ok(scan)
}

/// Trains on the `trained` split only.
pub fn stage_train(
    cfg: &RunConfig,
    dir: &Path,
    model: &MicroTransformer,
    vocab: &Vocabulary,
    pairs: &WordPairSet,
    target_layer: usize,
) -> CliResult<(LoraModel, TrainingLog)> {
    let lora = inject(model, &cfg.lora(), &mut Rng::derive(cfg.seed, 0x10_4A))?;
    let (trained, log) = train_tli(
        &lora,
        vocab,
        &pairs.subset(Split::Trained),
        &cfg.tli(target_layer),
    )?;
    trained.save_adapters(&dir.join(ADAPTER_CHECKPOINT))?;
    log.save(&dir.join(TRAINING_LOG))?;
    Ok((trained, log))
}

pub fn stage_merge(dir: &Path, lora: &LoraModel) -> CliResult<MicroTransformer> {
    let merged = merge(lora)?;
    merged.save_checkpoint(&dir.join(MERGED_CHECKPOINT))?;
    Ok(merged)
}

/// Final-layer comparison, trained and control sets reported separately.
pub fn stage_eval(
    cfg: &RunConfig,
    dir: &Path,
    pre: &MicroTransformer,
    post: &MicroTransformer,
    vocab: &Vocabulary,
    pairs: &WordPairSet,
) -> CliResult<Vec<AlignmentReport>> {
    let layer = pre.config.final_layer();
    let mut reports = Vec::new();
    for split in [Split::Trained, Split::Control] {
        let set = pairs.subset(split);
        if set.is_empty() {
            continue;
        }
        let before = evaluate_alignment(pre, vocab, &set, layer)?;
        let after = evaluate_alignment(post, vocab, &set, layer)?;
        reports.push(build_report(
            split.as_str(),
            &before,
            &after,
            &set,
            layer,
            cfg.tails,
        )?);
    }
    let limit = (cfg.table2_rows > 0).then_some(cfg.table2_rows);
    let mut text = format!("# Alignment at layer {layer}\n\n");
    text.push_str(&AlignmentReport::table1(&reports));
    for r in &reports {
        let _ = write!(text, "\n## {}\n\n", r.label);
        text.push_str(&r.table2(limit));
    }
    write_text(&dir.join(EVAL_REPORT), &text)?;
    let json =
        serde_json::to_string_pretty(&reports).map_err(|e| CliError::Config(e.to_string()))?;
    write_text(&dir.join(EVAL_JSON), &json)?;
    Ok(reports)
}

/// Final-layer embeddings of the pairs named by `projection_sources`, or
/// else of the first `projection_pairs` pairs (trained
/// first, then control) projected with PCA and t-SNE, before and after.
pub fn stage_project(
    cfg: &RunConfig,
    dir: &Path,
    pre: &MicroTransformer,
    post: &MicroTransformer,
    vocab: &Vocabulary,
    pairs: &WordPairSet,
) -> CliResult<Vec<Figure>> {
    let chosen: Vec<_> = match &cfg.projection_sources {
        Some(list) => list
            .iter()
            .map(|w| {
                pairs
                    .pairs()
                    .iter()
                    .find(|p| &p.source == w)
                    .cloned()
                    .ok_or_else(|| {
                        CliError::Config(format!("projection source {w:?} is not in the pair file"))
                    })
            })
            .collect::<CliResult<_>>()?,
        None => pairs
            .subset(Split::Trained)
            .pairs()
            .iter()
            .chain(pairs.subset(Split::Control).pairs())
            .take(cfg.projection_pairs)
            .cloned()
            .collect(),
    };
    let sources: Vec<String> = chosen.iter().map(|p| p.source.clone()).collect();
    let targets: Vec<String> = chosen.iter().map(|p| p.target.clone()).collect();
    let layer = pre.config.final_layer();
    let mut figures = Vec::new();
    for (tag, model) in [("pre", pre), ("post", post)] {
        let rows = sources
            .iter()
            .chain(&targets)
            .map(|w| model.embed_word(vocab, w, layer).map(Tensor::into_data))
            .collect::<Result<Vec<_>, _>>()?;
        let x = Tensor::from_rows(&rows)?;
        let pca = pca_2d(&x)?;
        let proj = Projection2D::from_pairs(&pca.coords, &sources, &targets)?;
        figures.push(render_projection(
            &proj,
            &format!("PCA, layer {layer}, {tag}-TLI"),
            &dir.join(format!("pca_{tag}.svg")),
        )?);
        let y = tsne_2d(&x, &cfg.tsne())?;
        let proj = Projection2D::from_pairs(&y, &sources, &targets)?;
        figures.push(render_projection(
            &proj,
            &format!("t-SNE, layer {layer}, {tag}-TLI"),
            &dir.join(format!("tsne_{tag}.svg")),
        )?);
    }
    Ok(figures)
}

// Commands.

/// Everything `cmd_all` produced.
#[derive(Debug, Clone)]
pub struct RunOutputs {
    pub dir: PathBuf,
    pub scan: LayerScanResult,
    pub target_layer: usize,
    pub log: TrainingLog,
    pub reports: Vec<AlignmentReport>,
    pub figures: Vec<Figure>,
}

pub fn cmd_gen_data(cfg: &RunConfig) -> CliResult<PathBuf> {
    let dir = create_run_dir(cfg)?;
    stage_gen_data(cfg, &dir)?;
    Ok(dir)
}

/// Regenerates the world from the config (it is a pure function of it) and
/// pretrains on it.
pub fn cmd_pretrain(cfg: &RunConfig) -> CliResult<PathBuf> {
    let dir = create_run_dir(cfg)?;
    let world = generate_world(&cfg.world())?;
    let vocab = world.vocabulary()?;
    vocab.save(&dir.join(VOCAB_FILE))?;
    stage_pretrain(cfg, &dir, &world, &vocab)?;
    Ok(dir)
}

fn load_base(cfg: &RunConfig) -> CliResult<(MicroTransformer, Vocabulary, WordPairSet)> {
    let model_path = input(&cfg.base_checkpoint, "base_checkpoint")?;
    let vocab_path = input(&cfg.vocab_file, "vocab_file")?;
    let pairs_path = input(&cfg.pairs_file, "pairs_file")?;
    Ok((
        MicroTransformer::load_checkpoint(model_path)?,
        Vocabulary::load(vocab_path)?,
        WordPairSet::load(pairs_path)?,
    ))
}

pub fn cmd_scan(cfg: &RunConfig) -> CliResult<(PathBuf, LayerScanResult)> {
    let (model, vocab, pairs) = load_base(cfg)?;
    let dir = create_run_dir(cfg)?;
    let scan = stage_scan(&dir, &model, &vocab, &pairs)?;
    Ok((dir, scan))
}

/// Target layer: `target_layer` if set, else the peak recorded in
/// `scan_file`, else the peak of a fresh scan.
pub fn cmd_train(cfg: &RunConfig) -> CliResult<(PathBuf, usize)> {
    let (model, vocab, pairs) = load_base(cfg)?;
    let dir = create_run_dir(cfg)?;
    let layer = match (cfg.target_layer, &cfg.scan_file) {
        (Some(l), _) => l,
        (None, Some(_)) => {
            let path = input(&cfg.scan_file, "scan_file")?;
            let text =
                std::fs::read_to_string(path).map_err(|e| CliError::Io(path.to_path_buf(), e))?;
            let scan: LayerScanResult = serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            scan.peak_layer
        }
        (None, None) => stage_scan(&dir, &model, &vocab, &pairs)?.peak_layer,
    };
    stage_train(cfg, &dir, &model, &vocab, &pairs, layer)?;
    Ok((dir, layer))
}

pub fn cmd_merge(cfg: &RunConfig) -> CliResult<PathBuf> {
    let base = MicroTransformer::load_checkpoint(input(&cfg.base_checkpoint, "base_checkpoint")?)?;
    let lora =
        LoraModel::load_adapters(&base, input(&cfg.adapter_checkpoint, "adapter_checkpoint")?)?;
    let dir = create_run_dir(cfg)?;
    stage_merge(&dir, &lora)?;
    Ok(dir)
}

/// The post-TLI model is `merged_checkpoint`, or the base with
/// `adapter_checkpoint` merged in.
fn load_post(cfg: &RunConfig, base: &MicroTransformer) -> CliResult<MicroTransformer> {
    if cfg.merged_checkpoint.is_some() {
        return Ok(MicroTransformer::load_checkpoint(input(
            &cfg.merged_checkpoint,
            "merged_checkpoint",
        )?)?);
    }
    let path = input(&cfg.adapter_checkpoint, "adapter_checkpoint").map_err(|e| match e {
        CliError::Unset(_) => CliError::Unset("merged_checkpoint"),
        other => other,
    })?;
    Ok(merge(&LoraModel::load_adapters(base, path)?)?)
}

pub fn cmd_eval(cfg: &RunConfig) -> CliResult<(PathBuf, Vec<AlignmentReport>)> {
    let (pre, vocab, pairs) = load_base(cfg)?;
    let post = load_post(cfg, &pre)?;
    let dir = create_run_dir(cfg)?;
    let reports = stage_eval(cfg, &dir, &pre, &post, &vocab, &pairs)?;
    Ok((dir, reports))
}

pub fn cmd_project(cfg: &RunConfig) -> CliResult<(PathBuf, Vec<Figure>)> {
    let (pre, vocab, pairs) = load_base(cfg)?;
    let post = load_post(cfg, &pre)?;
    let dir = create_run_dir(cfg)?;
    let figures = stage_project(cfg, &dir, &pre, &post, &vocab, &pairs)?;
    Ok((dir, figures))
}

/// gen-data → pretrain → scan → train → merge → eval → project, all in one
/// run directory.
pub fn cmd_all(cfg: &RunConfig) -> CliResult<RunOutputs> {
    let dir = create_run_dir(cfg)?;
    let (world, vocab, pairs) = stage_gen_data(cfg, &dir)?;
    let base = stage_pretrain(cfg, &dir, &world, &vocab)?;
    let scan = stage_scan(&dir, &base, &vocab, &pairs)?;
    let target_layer = cfg.target_layer.unwrap_or(scan.peak_layer);
    let (lora, log) = stage_train(cfg, &dir, &base, &vocab, &pairs, target_layer)?;
    let merged = stage_merge(&dir, &lora)?;
    let reports = stage_eval(cfg, &dir, &base, &merged, &vocab, &pairs)?;
    let figures = stage_project(cfg, &dir, &base, &merged, &vocab, &pairs)?;
    Ok(RunOutputs {
        dir,
        scan,
        target_layer,
        log,
        reports,
        figures,
    })
}
