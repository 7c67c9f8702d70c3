use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;

use anyhow::Context;
use clap::{Args, ValueEnum};
use prefse_core::control::{enhance as run_condition, EnhanceReport, EnhancementCondition};
use prefse_core::eval::{
    compare_conditions, confusion_labels, logistic_probe_accuracy, silhouette, tsne, TsneConfig,
};
use prefse_core::mtlnet::{
    embed_samples, evaluate_samples, load_samples, train as train_model, write_history_csv, LayerTag, ModelConfig,
    ModelWeights, TaskMode, TrainConfig,
};
use prefse_core::preference::{
    fit_preferences, new_session, simulate_responses, write_session_log, Line, PreferenceFunction, SimulatedUser,
};
use prefse_core::scenes::{build_dataset, build_manifest, load_pairs, render, DatasetConfig, DatasetManifest, SceneLabel, Split};
use prefse_core::signal::{write_wav_bytes, SampleFormat, StftParams};
use serde::{Deserialize, Serialize};

use crate::{CliError, CliResult, Ctx, ManifestArg};

fn runtime<E: Into<anyhow::Error>>(context: &'static str) -> impl FnOnce(E) -> CliError {
    move |e| CliError::Runtime(e.into().context(context))
}

fn load_manifest(ctx: &Ctx, arg: &ManifestArg) -> CliResult<(DatasetManifest, PathBuf)> {
    let path = ctx.require(&arg.manifest, "dataset manifest (run `synth` first)")?;
    let manifest = DatasetManifest::load(&path).map_err(runtime("loading manifest"))?;
    let base = path.parent().map(PathBuf::from).unwrap_or_default();
    Ok((manifest, base))
}

fn load_weights(ctx: &Ctx, path: &std::path::Path) -> CliResult<ModelWeights> {
    let full = ctx.require(path, "model weights (run `train` first)")?;
    ModelWeights::load(&full).map_err(runtime("loading weights"))
}

fn load_preferences(ctx: &Ctx, path: &std::path::Path) -> CliResult<PreferenceFunction> {
    let full = ctx.require(path, "preference function (run `elicit` first)")?;
    let text = std::fs::read_to_string(&full).map_err(runtime("reading preferences"))?;
    serde_json::from_str(&text).map_err(runtime("parsing preferences"))
}

fn csv_bytes<F>(build: F) -> CliResult<Vec<u8>>
where
    F: FnOnce(&mut csv::Writer<Vec<u8>>) -> csv::Result<()>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    build(&mut w).map_err(runtime("building CSV"))?;
    w.into_inner().map_err(|e| CliError::Runtime(anyhow::anyhow!("flushing CSV: {e}")))
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Desk,
    Tiny,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value = "desk")]
    pub preset: Preset,
    /// CSV of `clean,noise,scene,split` WAV pairs to use instead of synthesis.
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    /// Write only the manifest; stems are rendered on demand from seeds.
    #[arg(long)]
    pub manifest_only: bool,
}

pub fn synth(ctx: &Ctx, a: SynthArgs) -> CliResult<()> {
    let config = match a.preset {
        Preset::Desk => DatasetConfig::desk(ctx.seed),
        Preset::Tiny => DatasetConfig::tiny(ctx.seed),
    };
    let manifest = if let Some(pairs) = &a.pairs {
        let pairs = ctx.require(pairs, "pairs CSV")?;
        let m = load_pairs(&pairs, &config.snr_grid_db).map_err(runtime("loading pairs"))?;
        m.save(ctx.out_dir.join("manifest.json")).map_err(runtime("saving manifest"))?;
        m
    } else if a.manifest_only {
        let m = build_manifest(&config).map_err(runtime("building manifest"))?;
        m.save(ctx.out_dir.join("manifest.json")).map_err(runtime("saving manifest"))?;
        m
    } else {
        build_dataset(&config, &ctx.out_dir).map_err(runtime("building dataset"))?
    };
    log::info!("manifest with {} records, hash {}", manifest.records.len(), manifest.hash());
    Ok(())
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub manifest: ManifestArg,
    /// multi, snr or asc.
    #[arg(long, default_value = "multi")]
    pub task: String,
    #[arg(long, default_value_t = TrainConfig::default().epochs)]
    pub epochs: usize,
    #[arg(long, default_value_t = TrainConfig::default().lr)]
    pub lr: f64,
    #[arg(long, default_value_t = TrainConfig::default().batch)]
    pub batch: usize,
    /// Weight of the scene cross-entropy in multi-task training.
    #[arg(long, default_value_t = TrainConfig::default().lambda)]
    pub lambda: f64,
    #[arg(long, default_value_t = TrainConfig::default().patience)]
    pub patience: usize,
    /// Random training crop in frames; 0 trains on whole utterances.
    #[arg(long, default_value_t = TrainConfig::default().crop_frames.unwrap_or(0))]
    pub crop: usize,
    /// Centre crop of validation utterances in frames; 0 keeps them whole.
    #[arg(long, default_value_t = TrainConfig::default().val_crop_frames.unwrap_or(0))]
    pub val_crop: usize,
    /// Cosine learning-rate floor as a fraction of `--lr`; 1 keeps it constant.
    #[arg(long, default_value_t = TrainConfig::default().cosine_floor.unwrap_or(1.0))]
    pub cosine_floor: f64,
    /// Width multiplier of the network.
    #[arg(long, default_value_t = ModelConfig::desk().scale_factor)]
    pub scale: f64,
}

#[derive(Serialize)]
struct TrainSummary {
    task: TaskMode,
    best_epoch: usize,
    epochs_run: usize,
    parameters: usize,
    val: prefse_core::mtlnet::SplitMetrics,
    test: prefse_core::mtlnet::SplitMetrics,
}

pub fn train(ctx: &Ctx, a: TrainArgs) -> CliResult<()> {
    let mode: TaskMode = a.task.parse().map_err(|e: prefse_core::mtlnet::MtlError| CliError::Usage(e.to_string()))?;
    let (manifest, base) = load_manifest(ctx, &a.manifest)?;
    let config = ModelConfig { scale_factor: a.scale, ..ModelConfig::desk() };
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let nonzero = |v: usize| (v > 0).then_some(v);
    let hyper = TrainConfig {
        mode,
        lr: a.lr,
        epochs: a.epochs,
        batch: a.batch,
        lambda: a.lambda,
        seed: ctx.seed,
        patience: a.patience,
        crop_frames: nonzero(a.crop),
        val_crop_frames: nonzero(a.val_crop),
        cosine_floor: (a.cosine_floor < 1.0).then_some(a.cosine_floor),
        ..TrainConfig::default()
    };
    let outcome = train_model(&manifest, &config, &hyper, Some(&base)).map_err(runtime("training"))?;
    let test_samples = load_samples(&manifest, Split::Test, Some(&base)).map_err(runtime("loading test split"))?;
    let test = evaluate_samples(&outcome.weights, &test_samples).map_err(runtime("evaluating test split"))?;
    let tag = mode.name();
    ctx.write(&format!("weights_{tag}.psew"), &outcome.weights.to_bytes())?;
    write_history_csv(&outcome.history, &ctx.out_dir.join(format!("history_{tag}.csv"))).map_err(runtime("writing history"))?;
    let summary = TrainSummary {
        task: mode,
        best_epoch: outcome.best_epoch,
        epochs_run: outcome.history.len(),
        parameters: outcome.weights.network().n_params(),
        val: outcome.best_val,
        test,
    };
    ctx.write_json(&format!("train_{tag}.json"), &summary)?;
    log::info!("best epoch {} of {}; test {:?}, accuracy {:?}", summary.best_epoch, summary.epochs_run, summary.test.snr, summary.test.accuracy);
    Ok(())
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ElicitArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub manifest: ManifestArg,
    /// Drive the session with a simulated listener (required; live sessions go through `serve`).
    #[arg(long)]
    pub simulated: bool,
    /// Slope of the listener's target enhancement level `p* = beta * snr + gamma`.
    #[arg(long, default_value_t = -0.055, allow_hyphen_values = true)]
    pub beta: f64,
    #[arg(long, default_value_t = 0.5)]
    pub gamma: f64,
    /// Per-scene override `scene:beta:gamma`; repeatable.
    #[arg(long = "scene-line", allow_hyphen_values = true)]
    pub scene_lines: Vec<String>,
    #[arg(long, default_value_t = 0.05)]
    pub deadband: f64,
    /// Probability that a response is replaced by one of the other two.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 1)]
    pub grid_repeats: usize,
}

#[derive(Serialize)]
struct RecoveryRow {
    target_a: Line,
    fitted_a: Line,
    abs_beta_error: f64,
    abs_gamma_error: f64,
}

pub fn elicit(ctx: &Ctx, a: ElicitArgs) -> CliResult<()> {
    if !a.simulated {
        return Err(CliError::Usage("only --simulated elicitation runs from the CLI; use `serve` for live sessions".into()));
    }
    let mut targets = [Line { beta: a.beta, gamma: a.gamma }; SceneLabel::COUNT];
    for spec in &a.scene_lines {
        let parts: Vec<&str> = spec.split(':').collect();
        let parsed = match parts.as_slice() {
            [scene, beta, gamma] => scene.parse::<SceneLabel>().ok().zip(beta.parse().ok()).zip(gamma.parse().ok()),
            _ => None,
        };
        let ((scene, beta), gamma) =
            parsed.ok_or_else(|| CliError::Usage(format!("bad --scene-line '{spec}', expected scene:beta:gamma")))?;
        targets[scene.index()] = Line { beta, gamma };
    }
    let user = SimulatedUser { targets, deadband: a.deadband, noise_prob: a.noise };
    user.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let (manifest, _) = load_manifest(ctx, &a.manifest)?;
    let session = new_session(&manifest, a.grid_repeats, ctx.seed).map_err(runtime("planning session"))?;
    let session = simulate_responses(&user, session, ctx.seed).map_err(runtime("simulating responses"))?;
    let mut log = Vec::new();
    write_session_log(&session, &mut log).map_err(runtime("writing session log"))?;
    ctx.write("session.jsonl", &log)?;
    let pref = fit_preferences(&session.log).map_err(runtime("fitting preferences"))?;
    ctx.write_json("preferences.json", &pref)?;
    let recovery: BTreeMap<SceneLabel, RecoveryRow> = SceneLabel::ALL
        .into_iter()
        .map(|scene| {
            let t = user.targets[scene.index()];
            let target_a = Line { beta: -t.beta, gamma: 1.0 - t.gamma };
            let fitted_a = pref.line(scene);
            let row = RecoveryRow {
                target_a,
                fitted_a,
                abs_beta_error: (fitted_a.beta - target_a.beta).abs(),
                abs_gamma_error: (fitted_a.gamma - target_a.gamma).abs(),
            };
            (scene, row)
        })
        .collect();
    ctx.write_json("elicit.json", &recovery)?;
    for (scene, r) in &recovery {
        log::info!("{scene}: A = {:.4} snr + {:.4} (|dβ| {:.4}, |dγ| {:.4})", r.fitted_a.beta, r.fitted_a.gamma, r.abs_beta_error, r.abs_gamma_error);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum ConditionArg {
    Noisy,
    MaxSe,
    Plse,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EnhanceArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub manifest: ManifestArg,
    #[arg(long, default_value = "weights_multi.psew")]
    pub weights: PathBuf,
    #[arg(long, default_value = "preferences.json")]
    pub preferences: PathBuf,
    /// Conditions to run; defaults to all three.
    #[arg(long, value_enum, value_delimiter = ',')]
    pub conditions: Vec<ConditionArg>,
    /// Enhance only this record id.
    #[arg(long)]
    pub record: Option<String>,
}

pub fn enhance(ctx: &Ctx, a: EnhanceArgs) -> CliResult<()> {
    let (manifest, base) = load_manifest(ctx, &a.manifest)?;
    let wanted = if a.conditions.is_empty() {
        vec![ConditionArg::Noisy, ConditionArg::MaxSe, ConditionArg::Plse]
    } else {
        a.conditions.clone()
    };
    let needs_model = wanted.contains(&ConditionArg::Plse);
    let weights = needs_model.then(|| load_weights(ctx, &a.weights)).transpose()?;
    let conditions: Vec<EnhancementCondition> = wanted
        .iter()
        .map(|c| -> CliResult<_> {
            Ok(match c {
                ConditionArg::Noisy => EnhancementCondition::Noisy,
                ConditionArg::MaxSe => EnhancementCondition::MaxSe,
                ConditionArg::Plse => EnhancementCondition::Plse { preferences: load_preferences(ctx, &a.preferences)? },
            })
        })
        .collect::<CliResult<_>>()?;
    let records: Vec<_> = match &a.record {
        Some(id) => vec![manifest.get(id).ok_or_else(|| CliError::Usage(format!("unknown record '{id}'")))?],
        None => manifest.split(Split::Test),
    };
    let mut reports: Vec<EnhanceReport> = Vec::new();
    for record in records {
        let stems = render(record, Some(&base)).map_err(runtime("rendering stems"))?;
        for condition in &conditions {
            let (clip, report) = run_condition(record, condition, weights.as_ref(), &stems, StftParams::default())
                .map_err(runtime("enhancing"))?;
            ctx.write(
                &format!("enhanced/{}/{}.wav", condition.name(), record.id),
                &write_wav_bytes(&clip, SampleFormat::Float32),
            )?;
            reports.push(report);
        }
    }
    let mut jsonl = Vec::new();
    for r in &reports {
        serde_json::to_writer(&mut jsonl, r).map_err(runtime("encoding report"))?;
        jsonl.push(b'\n');
    }
    ctx.write("enhance_reports.jsonl", &jsonl)?;
    ctx.write("enhance_reports.csv", &csv_bytes(|w| reports.iter().try_for_each(|r| w.serialize(r)))?)?;
    log::info!("{} reports written", reports.len());
    Ok(())
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EvaluateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub manifest: ManifestArg,
    #[arg(long, default_value = "weights_multi.psew")]
    pub weights: PathBuf,
    #[arg(long, default_value = "preferences.json")]
    pub preferences: PathBuf,
}

pub fn evaluate(ctx: &Ctx, a: EvaluateArgs) -> CliResult<()> {
    let (manifest, base) = load_manifest(ctx, &a.manifest)?;
    let weights = load_weights(ctx, &a.weights)?;
    let pref = load_preferences(ctx, &a.preferences)?;
    let samples = load_samples(&manifest, Split::Test, Some(&base)).map_err(runtime("loading test split"))?;
    let metrics = evaluate_samples(&weights, &samples).map_err(runtime("evaluating"))?;
    ctx.write("predictions.csv", &csv_bytes(|w| metrics.outcomes.iter().try_for_each(|o| w.serialize(o)))?)?;
    ctx.write(
        "metrics.csv",
        &csv_bytes(|w| {
            w.write_record(["task", "n", "lcc", "srcc", "mse", "accuracy"])?;
            let (n, lcc, srcc, mse) = match &metrics.snr {
                Some(r) => (r.n.to_string(), r.lcc.to_string(), r.srcc.to_string(), r.mse.to_string()),
                None => (samples.len().to_string(), String::new(), String::new(), String::new()),
            };
            let acc = metrics.accuracy.map(|v| v.to_string()).unwrap_or_default();
            w.write_record([weights.mode().name(), &n, &lcc, &srcc, &mse, &acc])
        })?,
    )?;
    let confusion = if weights.mode().has_asc() {
        let (truth, pred): (Vec<SceneLabel>, Vec<SceneLabel>) =
            metrics.outcomes.iter().filter_map(|o| o.scene_pred.map(|p| (o.scene_true, p))).unzip();
        let cm = confusion_labels(&truth, &pred).map_err(runtime("tallying confusion"))?;
        ctx.write(
            "confusion.csv",
            &csv_bytes(|w| {
                let mut header = vec!["true\\pred".to_string()];
                header.extend(SceneLabel::ALL.iter().map(|s| s.name().to_string()));
                w.write_record(&header)?;
                for (scene, row) in SceneLabel::ALL.iter().zip(cm.counts) {
                    let mut rec = vec![scene.name().to_string()];
                    rec.extend(row.iter().map(u64::to_string));
                    w.write_record(&rec)?;
                }
                Ok(())
            })?,
        )?;
        Some(cm)
    } else {
        None
    };
    let plse = weights.mode() == TaskMode::Multi;
    let table = compare_conditions(&manifest, plse.then_some(&weights), plse.then_some(&pref), Some(&base), StftParams::default())
        .map_err(runtime("comparing conditions"))?;
    let mut buf = Vec::new();
    table.write_csv(&mut buf).map_err(runtime("writing conditions"))?;
    ctx.write("conditions.csv", &buf)?;
    ctx.write_json(
        "metrics.json",
        &serde_json::json!({
            "task": weights.mode(),
            "snr": metrics.snr,
            "accuracy": metrics.accuracy,
            "confusion": confusion,
            "conditions": table.summaries,
        }),
    )?;
    log::info!("test {:?}, accuracy {:?}", metrics.snr, metrics.accuracy);
    Ok(())
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EmbeddingsArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub manifest: ManifestArg,
    #[arg(long, default_value = "weights_multi.psew")]
    pub weights: PathBuf,
    /// attention or final_linear.
    #[arg(long, default_value = "attention")]
    pub layer: String,
    #[arg(long, default_value_t = TsneConfig::default().perplexity)]
    pub perplexity: f64,
    #[arg(long, default_value_t = TsneConfig::default().iterations)]
    pub iterations: usize,
}

pub fn embeddings(ctx: &Ctx, a: EmbeddingsArgs) -> CliResult<()> {
    let layer: LayerTag = a.layer.parse().map_err(|e: prefse_core::mtlnet::MtlError| CliError::Usage(e.to_string()))?;
    let (manifest, base) = load_manifest(ctx, &a.manifest)?;
    let weights = load_weights(ctx, &a.weights)?;
    let samples = load_samples(&manifest, Split::Test, Some(&base)).map_err(runtime("loading test split"))?;
    let rows = embed_samples(&weights, &samples, layer).map_err(runtime("embedding"))?;
    let tag = &a.layer;
    ctx.write(
        &format!("embeddings_{tag}.csv"),
        &csv_bytes(|w| {
            let d = rows.first().map_or(0, |r| r.vector.len());
            let mut header = vec!["id".to_string(), "scene".into(), "snr".into()];
            header.extend((0..d).map(|i| format!("v{i}")));
            w.write_record(&header)?;
            for r in &rows {
                let mut rec = vec![r.id.clone(), r.scene.name().to_string(), r.snr_db.to_string()];
                rec.extend(r.vector.iter().map(f64::to_string));
                w.write_record(&rec)?;
            }
            Ok(())
        })?,
    )?;
    let vectors: Vec<Vec<f64>> = rows.iter().map(|r| r.vector.clone()).collect();
    let labels: Vec<usize> = rows.iter().map(|r| r.scene.index()).collect();
    let config = TsneConfig { perplexity: a.perplexity, iterations: a.iterations, seed: ctx.seed, ..TsneConfig::default() };
    let map = tsne(&vectors, &config).map_err(runtime("running t-SNE"))?;
    ctx.write(
        &format!("tsne_{tag}.csv"),
        &csv_bytes(|w| {
            w.write_record(["id", "scene", "snr", "x", "y"])?;
            for (r, c) in rows.iter().zip(&map.coords) {
                w.write_record([r.id.clone(), r.scene.name().to_string(), r.snr_db.to_string(), c[0].to_string(), c[1].to_string()])?;
            }
            Ok(())
        })?,
    )?;
    let summary = serde_json::json!({
        "layer": tag,
        "task": weights.mode(),
        "n": rows.len(),
        "perplexity": map.perplexity,
        "max_entropy_error": map.max_entropy_error,
        "kl_history": map.kl_history,
        "silhouette_tsne": silhouette(&map.coords, &labels).ok(),
        "silhouette_raw": silhouette(&vectors, &labels).ok(),
        "probe_accuracy": logistic_probe_accuracy(&vectors, &labels, 500).ok(),
    });
    ctx.write_json(&format!("tsne_{tag}.json"), &summary)?;
    Ok(())
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ServeArgs {
    #[arg(long, env = "PORT", default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long, default_value = "journal.jsonl")]
    pub journal: PathBuf,
    /// Reveal scene and SNR in stimulus metadata.
    #[arg(long)]
    pub reveal: bool,
}

pub fn serve(ctx: &Ctx, a: ServeArgs) -> CliResult<()> {
    let manifest = a.manifest.as_ref().map(|m| ctx.require(m, "dataset manifest")).transpose()?;
    let weights = a.weights.as_ref().map(|w| ctx.require(w, "model weights")).transpose()?;
    let addr: SocketAddr = format!("{}:{}", a.host, a.port)
        .parse()
        .map_err(|e| CliError::Usage(format!("bad listen address: {e}")))?;
    let config = prefse_service::ServeConfig { addr, manifest, weights, journal: ctx.path(&a.journal), reveal: a.reveal };
    let rt = tokio::runtime::Runtime::new().context("starting runtime")?;
    rt.block_on(prefse_service::serve(config)).map_err(runtime("serving"))
}
