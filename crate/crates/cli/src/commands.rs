use std::io::Write;
use std::path::{Path, PathBuf};

use retinexdual_core::checkpoint;
use retinexdual_core::config::ABLATION_KEYS;
use retinexdual_core::data::{load_paired_dataset, read_image, synthetic_pairs, write_paired_dataset, write_png, PairedSample};
use retinexdual_core::metrics::{count_params, frequency_gap, psnr_images, ssim_metric, Verdict};
use retinexdual_core::training::{fit, FitOutputs};
use retinexdual_core::{Error, ParamStore, RetinexDual, RunConfig};
use serde::Serialize;
use serde_json::json;

use crate::args::{AblateArgs, AnalyzeArgs, Command, CountArgs, EvaluateArgs, RestoreArgs, SynthesizeArgs, TrainArgs};
use crate::error::CliResult;
use crate::tiling::{check_tile, restore_image};

/// Line-delimited JSON records to stdout and, optionally, a table file.
struct Records<'a> {
    out: &'a mut dyn Write,
    file: Option<std::io::BufWriter<std::fs::File>>,
}

impl<'a> Records<'a> {
    fn new(out: &'a mut dyn Write, table: Option<PathBuf>) -> CliResult<Self> {
        let file = match table {
            Some(path) => {
                if let Some(dir) = path.parent() {
                    create_dir(dir)?;
                }
                let f = std::fs::File::create(&path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
                Some(std::io::BufWriter::new(f))
            }
            None => None,
        };
        Ok(Self { out, file })
    }

    fn emit(&mut self, record: &impl Serialize) -> CliResult<()> {
        let line = serde_json::to_string(record).expect("records serialize");
        writeln!(self.out, "{line}")?;
        if let Some(f) = &mut self.file {
            writeln!(f, "{line}")?;
        }
        Ok(())
    }

    fn finish(mut self) -> CliResult<()> {
        self.out.flush()?;
        if let Some(f) = &mut self.file {
            f.flush()?;
        }
        Ok(())
    }
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    Ok(())
}

fn load_dataset(root: &Path) -> CliResult<Vec<PairedSample>> {
    let data = load_paired_dataset(root)?;
    if data.is_empty() {
        return Err(Error::Data(format!("no image pairs under {}", root.display())).into());
    }
    Ok(data)
}

fn load_checkpoint(path: &Path) -> CliResult<(RunConfig, RetinexDual, ParamStore<f32>)> {
    let (cfg, store) = checkpoint::load(path)?;
    let model = RetinexDual::new(&cfg.model);
    Ok((cfg, model, store))
}

/// Execute one command, writing its records to `out`.
pub fn run(command: Command, out: &mut dyn Write) -> CliResult<()> {
    match command {
        Command::Train(a) => train(a, out),
        Command::Restore(a) => restore(a, out),
        Command::Evaluate(a) => evaluate(a, out),
        Command::AnalyzeFrequency(a) => analyze(a, out),
        Command::CountParams(a) => count(a, out),
        Command::Ablate(a) => ablate(a, out),
        Command::Synthesize(a) => synthesize(a, out),
    }
}

fn train(a: TrainArgs, out: &mut dyn Write) -> CliResult<()> {
    let cfg = a.config.build()?;
    let data = load_dataset(&a.data)?;
    let val = a.val.as_deref().map(load_dataset).transpose()?.unwrap_or_default();
    create_dir(&a.out)?;
    let config_path = a.out.join("config.toml");
    std::fs::write(&config_path, cfg.to_toml()).map_err(|e| Error::io(format!("writing {}", config_path.display()), e))?;
    let outputs = FitOutputs { dir: a.out.clone() };
    let summary = fit(cfg, &data, &val, Some(&outputs))?;
    let last = summary.records.last().expect("at least one step");
    let mut rec = Records::new(out, None)?;
    rec.emit(&json!({
        "command": "train",
        "steps": summary.records.len(),
        "final_loss": last.loss,
        "best_val_psnr": summary.best_val_psnr,
        "last": outputs.last(),
        "best": outputs.best(),
        "log": outputs.log(),
    }))?;
    rec.finish()
}

fn image_inputs(input: &Path) -> CliResult<Vec<PathBuf>> {
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    let entries = std::fs::read_dir(input).map_err(|e| Error::io(format!("listing {}", input.display()), e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(format!("listing {}", input.display()), e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if path.is_file() && matches!(ext.as_deref(), Some("png" | "jpg" | "jpeg")) {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(Error::Data(format!("no images under {}", input.display())).into());
    }
    Ok(files)
}

fn restore(a: RestoreArgs, out: &mut dyn Write) -> CliResult<()> {
    check_tile(a.tile)?;
    let (cfg, model, store) = load_checkpoint(&a.checkpoint)?;
    if a.config.is_explicit() && a.config.build()?.model != cfg.model {
        return Err(Error::config("model", "the requested configuration does not describe the checkpoint's model").into());
    }
    let files = image_inputs(&a.input)?;
    create_dir(&a.out)?;
    let mut rec = Records::new(out, None)?;
    for path in files {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("image").to_string();
        let image = read_image(&path, &stem)?;
        let (restored, tiled) = restore_image(&model, &store, &image, a.tile)?;
        let target = a.out.join(format!("{stem}_restored.png"));
        write_png(&restored, &target)?;
        rec.emit(&json!({
            "identifier": stem,
            "output": target,
            "height": image.height(),
            "width": image.width(),
            "tiled": tiled,
        }))?;
    }
    rec.finish()
}

#[derive(Serialize)]
struct EvalRow<'a> {
    identifier: &'a str,
    psnr: f64,
    ssim: f64,
}

fn evaluate(a: EvaluateArgs, out: &mut dyn Write) -> CliResult<()> {
    check_tile(a.tile)?;
    let (_, model, store) = load_checkpoint(&a.checkpoint)?;
    let data = load_dataset(&a.data)?;
    let mut rec = Records::new(out, a.out.map(|d| d.join("metrics.jsonl")))?;
    let (mut sp, mut ss) = (0.0, 0.0);
    for s in &data {
        let (restored, _) = restore_image(&model, &store, &s.degraded, a.tile)?;
        let row = EvalRow {
            identifier: &s.identifier,
            psnr: psnr_images(&restored, &s.clean)?,
            ssim: ssim_metric(&restored, &s.clean)?,
        };
        sp += row.psnr;
        ss += row.ssim;
        rec.emit(&row)?;
    }
    let n = data.len() as f64;
    rec.emit(&json!({ "summary": "evaluate", "count": data.len(), "mean_psnr": sp / n, "mean_ssim": ss / n }))?;
    rec.finish()
}

fn analyze(a: AnalyzeArgs, out: &mut dyn Write) -> CliResult<()> {
    let data = load_paired_dataset(&a.data)?;
    if data.is_empty() {
        return Err(Error::Data(format!("frequency analysis needs at least one pair; {} is empty", a.data.display())).into());
    }
    let mut rec = Records::new(out, a.out.map(|d| d.join("frequency.jsonl")))?;
    let mut global = 0;
    for s in &data {
        let r = frequency_gap(&s.degraded, &s.clean)?;
        if r.verdict == Verdict::GlobalDominant {
            global += 1;
        }
        rec.emit(&json!({
            "identifier": s.identifier,
            "psnr_spatial": r.psnr_spatial,
            "psnr_frequency": r.psnr_frequency,
            "verdict": r.verdict,
        }))?;
    }
    rec.emit(&json!({
        "summary": "analyze-frequency",
        "count": data.len(),
        "global_dominant": global,
        "local_dominant": data.len() - global,
        "global_fraction": global as f64 / data.len() as f64,
    }))?;
    rec.finish()
}

fn param_record(cfg: &RunConfig) -> serde_json::Value {
    let counts = count_params(&RetinexDual::new(&cfg.model).init::<f32>(0));
    let groups: serde_json::Map<String, serde_json::Value> =
        counts.groups.iter().map(|(g, n)| (g.clone(), json!(n))).collect();
    json!({ "preset": cfg.preset, "groups": groups, "total": counts.total })
}

fn count(a: CountArgs, out: &mut dyn Write) -> CliResult<()> {
    let cfg = a.config.build()?;
    let mut rec = Records::new(out, None)?;
    rec.emit(&param_record(&cfg))?;
    rec.finish()
}

fn ablate(a: AblateArgs, out: &mut dyn Write) -> CliResult<()> {
    let base = a.config.build()?;
    let keys: Vec<String> =
        if a.variants.is_empty() { ABLATION_KEYS.iter().map(|k| k.to_string()).collect() } else { a.variants.clone() };
    // every variant is validated before any training starts
    let mut variants = vec![("baseline".to_string(), base.clone())];
    for key in &keys {
        let mut cfg = base.clone();
        cfg.apply_ablation(&format!("{key}=off"))?;
        variants.push((key.clone(), cfg));
    }
    let data = load_dataset(&a.data)?;
    let val = match &a.val {
        Some(v) => load_dataset(v)?,
        None => data.clone(),
    };
    create_dir(&a.out)?;
    let mut rec = Records::new(out, Some(a.out.join("ablation.jsonl")))?;
    for (name, cfg) in variants {
        let outputs = FitOutputs { dir: a.out.join(name.replace('.', "_")) };
        let params = param_record(&cfg)["total"].clone();
        let summary = fit(cfg, &data, &[], Some(&outputs))?;
        let (psnr, ssim) = summary.trainer.evaluate(&val)?;
        rec.emit(&json!({
            "variant": name,
            "params": params,
            "final_loss": summary.records.last().map(|r| r.loss),
            "psnr": psnr,
            "ssim": ssim,
        }))?;
    }
    rec.finish()
}

fn synthesize(a: SynthesizeArgs, out: &mut dyn Write) -> CliResult<()> {
    let kind = a.kind.parse()?;
    if a.count == 0 {
        return Err(Error::config("count", "must be positive").into());
    }
    let samples = synthetic_pairs(kind, a.count, a.height, a.width, a.seed);
    write_paired_dataset(&a.out, &samples)?;
    let mut rec = Records::new(out, None)?;
    rec.emit(&json!({ "command": "synthesize", "kind": kind, "count": a.count, "root": a.out }))?;
    rec.finish()
}
