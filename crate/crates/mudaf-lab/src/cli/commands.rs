//! Implementations of the five subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;

use super::manifest::{
    sha256_file, ExperimentSnapshot, InitSpec, RunLock, RunManifest,
};
use super::{
    GenDataArgs, MaskEvalArgs, ReportArgs, ScoreHeadsArgs, TrainArgs, TrainMode,
};
use crate::analysis::export::{save_table, Heatmap};
use crate::analysis::masking::{masking_experiment, MaskingReport, MaskingSpec};
use crate::analysis::{self, HeadScoreTable};
use crate::corpus::{self, Corpus, CorpusConfig, MdqaSample};
use crate::derive_seed;
use crate::error::{LabError, Result};
use crate::model::{Checkpoint, HeadId, Model, ModelConfig, TraceRequest};
use crate::selection::{self, SelectionConfig, SelectionMode};
use crate::train::{train_run, StepMetrics, TrainConfig, TrainOutcome};

/// Stream tag separating the fresh-init RNG from the training stream.
const INIT_STREAM: u64 = 0x4953;

fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| LabError::Format(format!("{}: {e}", path.display())))
}

fn save_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(value).map_err(|e| LabError::Format(e.to_string()))?;
    fs::write(path, json).map_err(|e| LabError::io(path, e))
}

pub fn gen_data(args: &GenDataArgs) -> Result<()> {
    let config: CorpusConfig = match &args.corpus_config {
        Some(path) => load_json(path)?,
        None => CorpusConfig::default(),
    };
    if args.out.exists() && !args.force {
        return Err(LabError::Usage(format!(
            "refusing to overwrite {} without --force",
            args.out.display()
        )));
    }
    let seed = super::resolve_seed(Some(args.seed), 0)?;
    let corpus = Corpus::new(config)?;
    let samples = corpus.generate_many(args.n, seed)?;
    corpus::save_jsonl(&samples, &args.out)?;
    println!(
        "wrote {} samples ({} tokens each on average) to {}",
        samples.len(),
        if samples.is_empty() {
            0
        } else {
            samples.iter().map(|s| s.layout.tokens.len()).sum::<usize>() / samples.len()
        },
        args.out.display()
    );
    Ok(())
}

fn dataset_eval_id(path: &Path) -> Result<String> {
    let digest = sha256_file(path)?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(format!("{name}@{}", &digest[..8]))
}

pub fn score_heads(args: &ScoreHeadsArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let samples = corpus::load_jsonl(&args.dataset)?;
    let eval_id = dataset_eval_id(&args.dataset)?;
    let table = analysis::score_heads(
        &ckpt.model,
        &samples,
        args.epsilon,
        args.attribution.into(),
        &eval_id,
    )?;
    let csv_path = PathBuf::from(format!("{}.csv", args.out.display()));
    let json_path = PathBuf::from(format!("{}.json", args.out.display()));
    save_table(&table, &csv_path, &json_path)?;
    let top_n = ((table.entries.len() as f64 * args.top_fraction).ceil() as usize).max(1);
    println!("scored {} heads over {} samples (epsilon {})", table.entries.len(), samples.len(), args.epsilon);
    for entry in table.ranked().into_iter().take(top_n) {
        println!("  #{:<3} head {:<6} f1 {:.4}  em {:.4}", entry.rank, entry.head.to_string(), entry.f1, entry.em);
    }
    println!("tables written to {} and {}", csv_path.display(), json_path.display());
    Ok(())
}

/// Resolves the target-head set for a training mode.
fn resolve_heads(
    args: &TrainArgs,
    mode: TrainMode,
    seed: u64,
) -> Result<(Vec<HeadId>, Option<SelectionConfig>)> {
    match mode {
        TrainMode::Vanilla => {
            if args.heads.is_some() {
                eprintln!("warning: --heads is ignored in vanilla mode");
            }
            Ok((Vec::new(), None))
        }
        TrainMode::Mudaf | TrainMode::MudafWeak => {
            let spec = args.heads.as_deref().unwrap_or("auto");
            if spec != "auto" {
                return Ok((selection::load_head_set(Path::new(spec))?, None));
            }
            let scores_path = args.scores.as_ref().ok_or_else(|| {
                LabError::Config("--heads auto requires --scores <table.json>".into())
            })?;
            let table: HeadScoreTable = crate::analysis::export::load_table(scores_path)?;
            let mut sel: SelectionConfig = match &args.selection_config {
                Some(path) => load_json(path)?,
                None => SelectionConfig::default(),
            };
            if args.selection_config.is_none() {
                sel.seed = seed;
            }
            if mode == TrainMode::MudafWeak {
                sel.mode = SelectionMode::Weak;
            }
            let heads = selection::select(&table, &sel)?;
            Ok((heads, Some(sel)))
        }
    }
}

fn build_snapshot(args: &TrainArgs) -> Result<ExperimentSnapshot> {
    let corpus_config: CorpusConfig = match &args.corpus_config {
        Some(path) => load_json(path)?,
        None => CorpusConfig::default(),
    };
    let corpus = Corpus::new(corpus_config.clone())?;
    let dataset_path = args.dataset.as_ref().expect("clap enforces dataset without manifest");
    let dataset_sha256 = sha256_file(dataset_path)?;

    let model_config: ModelConfig = match &args.model_config {
        Some(path) => load_json(path)?,
        None => ModelConfig::toy(corpus.vocab().size()),
    };
    model_config.validate()?;
    if model_config.vocab_size != corpus.vocab().size() {
        return Err(LabError::Config(format!(
            "model vocab_size {} does not match corpus vocabulary {}",
            model_config.vocab_size,
            corpus.vocab().size()
        )));
    }

    let mut train_config: TrainConfig = match &args.train_config {
        Some(path) => load_json(path)?,
        None => TrainConfig::default(),
    };
    let master_seed = super::resolve_seed(args.seed, train_config.master_seed)?;
    train_config.master_seed = master_seed;

    let (target_heads, selection) = resolve_heads(args, args.mode, master_seed)?;
    match args.mode {
        TrainMode::Vanilla => {
            train_config.lambda = 0.0;
            train_config.target_heads = Vec::new();
            train_config.shuffle_passages = true;
        }
        TrainMode::Mudaf | TrainMode::MudafWeak => {
            train_config.target_heads = target_heads.clone();
            train_config.shuffle_passages = false;
        }
    }
    train_config.validate()?;

    let init = match &args.init_checkpoint {
        Some(path) => InitSpec::Checkpoint {
            path: path.display().to_string(),
            blob_sha256: sha256_file(&path.join(crate::model::checkpoint::BLOB_FILE))?,
        },
        None => InitSpec::Fresh,
    };

    Ok(ExperimentSnapshot {
        mode: args.mode.as_str().into(),
        master_seed,
        corpus_config,
        model_config,
        train_config,
        selection,
        target_heads,
        dataset_path: dataset_path.display().to_string(),
        dataset_sha256,
        init,
    })
}

/// Runs training from flags or a recorded manifest, laying out the run
/// directory: config/, checkpoints/final/, metrics.jsonl, manifest.json.
pub fn train(args: &TrainArgs) -> Result<TrainOutcome> {
    let snapshot = match &args.from_manifest {
        Some(path) => RunManifest::load(path)?.experiment,
        None => build_snapshot(args)?,
    };

    // Inputs are pinned by hash so a replayed manifest cannot silently see
    // different data.
    let dataset_path = PathBuf::from(&snapshot.dataset_path);
    let found = sha256_file(&dataset_path)?;
    if found != snapshot.dataset_sha256 {
        return Err(LabError::Input(format!(
            "dataset {} hash {} does not match recorded {}",
            dataset_path.display(),
            found,
            snapshot.dataset_sha256
        )));
    }
    let dataset = corpus::load_jsonl(&dataset_path)?;
    let corpus = Corpus::new(snapshot.corpus_config.clone())?;

    let start = match &snapshot.init {
        InitSpec::Fresh => {
            let model = Model::new_random(
                snapshot.model_config.clone(),
                derive_seed(snapshot.master_seed, INIT_STREAM),
            )?;
            Checkpoint::new(model, 0, snapshot.master_seed)
        }
        InitSpec::Checkpoint { path, blob_sha256 } => {
            let dir = PathBuf::from(path);
            let found = sha256_file(&dir.join(crate::model::checkpoint::BLOB_FILE))?;
            if &found != blob_sha256 {
                return Err(LabError::Input(format!(
                    "init checkpoint {} blob hash changed since the manifest was recorded",
                    dir.display()
                )));
            }
            let ckpt = Checkpoint::load(&dir)?;
            if ckpt.model.config() != &snapshot.model_config {
                return Err(LabError::Config(
                    "init checkpoint config disagrees with the experiment model config".into(),
                ));
            }
            ckpt
        }
    };

    fs::create_dir_all(&args.run_dir).map_err(|e| LabError::io(&args.run_dir, e))?;
    let occupied = fs::read_dir(&args.run_dir)
        .map_err(|e| LabError::io(&args.run_dir, e))?
        .next()
        .is_some();
    if occupied && !args.resume {
        return Err(LabError::Usage(format!(
            "run directory {} is not empty; pass --resume to reuse it",
            args.run_dir.display()
        )));
    }
    let _lock = RunLock::acquire(&args.run_dir)?;

    let config_dir = args.run_dir.join("config");
    fs::create_dir_all(&config_dir).map_err(|e| LabError::io(&config_dir, e))?;
    save_json(&snapshot.corpus_config, &config_dir.join("corpus.json"))?;
    save_json(&snapshot.model_config, &config_dir.join("model.json"))?;
    save_json(&snapshot.train_config, &config_dir.join("train.json"))?;
    save_json(&snapshot.target_heads, &config_dir.join("heads.json"))?;

    eprintln!(
        "training: mode {}, {} steps, batch {}, {} target heads, seed {}",
        snapshot.mode,
        snapshot.train_config.steps,
        snapshot.train_config.batch_size,
        snapshot.target_heads.len(),
        snapshot.master_seed
    );
    let outcome = train_run(&start, &snapshot.train_config, &dataset, &corpus)?;

    write_metrics(&outcome.metrics, &args.run_dir.join("metrics.jsonl"))?;
    let final_dir = args.run_dir.join("checkpoints").join("final");
    outcome.checkpoint.save(&final_dir)?;

    let mut manifest = RunManifest::new(snapshot);
    for rel in [
        "config/corpus.json",
        "config/model.json",
        "config/train.json",
        "config/heads.json",
        "metrics.jsonl",
        "checkpoints/final/manifest.json",
        "checkpoints/final/weights.bin",
    ] {
        manifest.record_artifact(&args.run_dir, rel)?;
    }
    manifest.save(&args.run_dir.join("manifest.json"))?;

    if let Some(last) = outcome.metrics.last() {
        println!(
            "finished at step {}: clm {:.4}, con {:.4}, total {:.4}",
            last.step, last.clm, last.con, last.total
        );
    }
    println!("run directory: {}", args.run_dir.display());
    Ok(outcome)
}

fn write_metrics(metrics: &[StepMetrics], path: &Path) -> Result<()> {
    let mut out = String::new();
    for m in metrics {
        out.push_str(&serde_json::to_string(m).map_err(|e| LabError::Format(e.to_string()))?);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| LabError::io(path, e))
}

pub fn mask_eval(args: &MaskEvalArgs) -> Result<()> {
    use super::StrategyArg;
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let samples = corpus::load_jsonl(&args.dataset)?;
    let seed = super::resolve_seed(args.seed, 0)?;

    let want_top = matches!(args.strategy, StrategyArg::Top | StrategyArg::All);
    let want_random = matches!(args.strategy, StrategyArg::Random | StrategyArg::All);
    let want_niah = matches!(args.strategy, StrategyArg::NiahProxy | StrategyArg::All);
    if matches!(args.strategy, StrategyArg::Top) && args.scores.is_none() {
        return Err(LabError::Config("--strategy top requires --scores".into()));
    }
    if matches!(args.strategy, StrategyArg::NiahProxy) && args.niah_scores.is_none() {
        return Err(LabError::Config("--strategy niah-proxy requires --niah-scores".into()));
    }

    let top_table = match (&args.scores, want_top) {
        (Some(path), true) => Some(crate::analysis::export::load_table(path)?),
        _ => None,
    };
    let niah_table = match (&args.niah_scores, want_niah) {
        (Some(path), true) => Some(crate::analysis::export::load_table(path)?),
        _ => None,
    };

    let vocab = Corpus::new(CorpusConfig::default())?.vocab().clone();
    let spec = MaskingSpec {
        k: args.k,
        repeats: if want_random { args.repeats } else { 0 },
        seed,
        top_scores: top_table.as_ref(),
        niah_scores: niah_table.as_ref(),
    };
    let report = masking_experiment(&ckpt.model, &samples, &spec, vocab.eos_id())?;

    save_json(&report, &args.out)?;
    let csv_path = args.out.with_extension("csv");
    fs::write(&csv_path, masking_report_csv(&report)).map_err(|e| LabError::io(&csv_path, e))?;

    println!(
        "baseline: em {:.4}, token-f1 {:.4} ({} samples, k = {})",
        report.baseline.exact_match, report.baseline.token_f1, samples.len(), report.k
    );
    for c in &report.conditions {
        println!(
            "{:<12} em {:.4} (drop {:+.4}), token-f1 {:.4}, {} run(s)",
            c.name,
            c.mean_exact_match,
            c.mean_exact_match - report.baseline.exact_match,
            c.mean_token_f1,
            c.runs.len()
        );
    }
    println!("report written to {} and {}", args.out.display(), csv_path.display());
    Ok(())
}

fn masking_report_csv(report: &MaskingReport) -> String {
    let mut out = String::from("condition,run,seed,exact_match,token_f1,masked_heads\n");
    out.push_str(&format!(
        "baseline,0,,{},{},\n",
        report.baseline.exact_match, report.baseline.token_f1
    ));
    for c in &report.conditions {
        for (i, r) in c.runs.iter().enumerate() {
            let heads: Vec<String> = r.masked.iter().map(|h| h.to_string()).collect();
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                c.name,
                i,
                r.seed.map(|s| s.to_string()).unwrap_or_default(),
                r.exact_match,
                r.token_f1,
                heads.join(" ")
            ));
        }
    }
    out
}

pub fn report(args: &ReportArgs) -> Result<()> {
    let reports_dir = args.run_dir.join("reports");
    fs::create_dir_all(&reports_dir).map_err(|e| LabError::io(&reports_dir, e))?;
    let mut produced = Vec::new();

    let before_path =
        args.before.clone().unwrap_or_else(|| args.run_dir.join("scores").join("before.json"));
    let after_path =
        args.after.clone().unwrap_or_else(|| args.run_dir.join("scores").join("after.json"));
    let heads_path =
        args.heads.clone().unwrap_or_else(|| args.run_dir.join("config").join("heads.json"));
    let selected: Vec<HeadId> = if heads_path.exists() {
        selection::load_head_set(&heads_path)?
    } else {
        Vec::new()
    };

    if before_path.exists() && after_path.exists() {
        let before = crate::analysis::export::load_table(&before_path)?;
        let after = crate::analysis::export::load_table(&after_path)?;
        let csv = score_improvement_csv(&before, &after, &selected);
        let csv_path = reports_dir.join("score_improvement.csv");
        fs::write(&csv_path, csv).map_err(|e| LabError::io(&csv_path, e))?;
        produced.push(csv_path.display().to_string());

        // Bar data for the selected heads (all heads when none recorded).
        let subjects: Vec<HeadId> = if selected.is_empty() {
            before.entries.iter().map(|e| e.head).collect()
        } else {
            selected.clone()
        };
        let labels: Vec<String> = subjects.iter().map(|h| h.to_string()).collect();
        let deltas: Vec<f64> = subjects
            .iter()
            .map(|&h| {
                let b = before.get(h).map(|e| e.f1).unwrap_or(0.0);
                let a = after.get(h).map(|e| e.f1).unwrap_or(0.0);
                a - b
            })
            .collect();
        let svg_path = reports_dir.join("score_improvement.svg");
        fs::write(&svg_path, bar_chart_svg(&labels, &deltas))
            .map_err(|e| LabError::io(&svg_path, e))?;
        produced.push(svg_path.display().to_string());
    }

    let ckpt_path = args
        .checkpoint
        .clone()
        .unwrap_or_else(|| args.run_dir.join("checkpoints").join("final"));
    if let Some(dataset) = &args.dataset {
        if !selected.is_empty() && ckpt_path.join(crate::model::checkpoint::MANIFEST_FILE).exists()
        {
            let ckpt = Checkpoint::load(&ckpt_path)?;
            let samples = corpus::load_jsonl(dataset)?;
            let sample = samples.get(args.sample_index).ok_or_else(|| {
                LabError::Input(format!(
                    "sample index {} out of range for {} samples",
                    args.sample_index,
                    samples.len()
                ))
            })?;
            let hm = passage_heatmap(&ckpt.model, sample, &selected)?;
            let csv_path = reports_dir.join("heatmap.csv");
            let svg_path = reports_dir.join("heatmap.svg");
            hm.save(&csv_path, &svg_path)?;
            produced.push(csv_path.display().to_string());
            produced.push(svg_path.display().to_string());
        }
    }

    if produced.is_empty() {
        return Err(LabError::Usage(
            "no report inputs found: need scores/before.json + scores/after.json, \
             or --dataset with a checkpoint and head set"
                .into(),
        ));
    }
    for p in &produced {
        println!("wrote {p}");
    }
    Ok(())
}

fn score_improvement_csv(
    before: &HeadScoreTable,
    after: &HeadScoreTable,
    selected: &[HeadId],
) -> String {
    let mut out =
        String::from("layer,head,f1_before,f1_after,delta,rank_before,rank_after,selected\n");
    for b in &before.entries {
        let a = after.get(b.head);
        let f1_after = a.map(|e| e.f1).unwrap_or(0.0);
        let rank_after = a.map(|e| e.rank).unwrap_or(0);
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            b.head.layer,
            b.head.head,
            b.f1,
            f1_after,
            f1_after - b.f1,
            b.rank,
            rank_after,
            selected.contains(&b.head) as u8
        ));
    }
    out
}

/// Mean passage-attention heatmap: one row per layer holding selected
/// heads, one column per passage, at the prompt-final attribution token.
fn passage_heatmap(model: &Model, sample: &MdqaSample, heads: &[HeadId]) -> Result<Heatmap> {
    let qi = sample.layout.prompt_last_token_index;
    let opts = crate::model::ForwardOptions {
        traces: heads.iter().map(|&head| TraceRequest { head, query_index: qi }).collect(),
        ..Default::default()
    };
    let (_, traces) = model.forward(&sample.layout.tokens, &opts)?;
    let mut layers: Vec<usize> = heads.iter().map(|h| h.layer).collect();
    layers.sort_unstable();
    layers.dedup();
    let n_passages = sample.layout.passage_spans.len();
    let mut values = vec![0.0; layers.len() * n_passages];
    for (r, &layer) in layers.iter().enumerate() {
        let layer_traces: Vec<_> = traces.iter().filter(|t| t.head.layer == layer).collect();
        for t in &layer_traces {
            let pa = analysis::passage_attention_mass(t, &sample.layout)?;
            for (k, &w) in pa.weights.iter().enumerate() {
                values[r * n_passages + k] += w / layer_traces.len() as f64;
            }
        }
    }
    Ok(Heatmap {
        row_labels: layers.iter().map(|l| format!("layer {l}")).collect(),
        col_labels: (0..n_passages).map(|k| format!("p{k}")).collect(),
        values,
    })
}

/// Minimal bar chart around a zero baseline; values may be negative.
fn bar_chart_svg(labels: &[String], values: &[f64]) -> String {
    const BAR: usize = 34;
    const H: usize = 220;
    const PAD: usize = 30;
    let width = PAD * 2 + labels.len() * BAR;
    let span = values.iter().fold(0.1f64, |m, v| m.max(v.abs()));
    let mid = H / 2;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{}\" \
         font-family=\"monospace\" font-size=\"9\">\n",
        H + 30
    );
    svg.push_str(&format!(
        "<line x1=\"{PAD}\" y1=\"{mid}\" x2=\"{}\" y2=\"{mid}\" stroke=\"#888\"/>\n",
        width - PAD
    ));
    for (i, (label, &v)) in labels.iter().zip(values.iter()).enumerate() {
        let h = ((v.abs() / span) * (mid as f64 - 10.0)) as usize;
        let x = PAD + i * BAR + 4;
        let (y, fill) = if v >= 0.0 { (mid - h, "#2a7") } else { (mid, "#c55") };
        svg.push_str(&format!(
            "<rect x=\"{x}\" y=\"{y}\" width=\"{}\" height=\"{h}\" fill=\"{fill}\"/>\n",
            BAR - 8
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{label}</text>\n",
            x + (BAR - 8) / 2,
            H + 14
        ));
    }
    svg.push_str("</svg>\n");
    svg
}
