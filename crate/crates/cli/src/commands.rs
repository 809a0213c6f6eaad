use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::sync::Arc;

use dipme_core::classifier::{predict_batch, train_from, Checkpoint};
use dipme_core::evaluation::{
    confusion, confusion_csv, confusion_png, evaluate, folder_holdout, kfold, leave_one_operator_out, length_sweep,
    metrics, metrics_table, prepare, run_split, stratified_holdout, sweep_table, ConfusionMatrix, EvalConfig, Protocol,
    ProtocolReport, Sample, SplitPlan,
};
use dipme_core::mapping::{
    composite, node_training_set, record_dip, simulate_scene_dip, train_node_model, ColorMap, Scene, SubsurfaceMap,
};
use dipme_core::preprocess::{sliding_windows, ProcessedWindow};
use dipme_core::recording::{read_jsonl, write_jsonl, RawRecording};
use dipme_core::sensor::CalibrationParams;
use dipme_core::simulator::{default_media_library, derive_seed, generate_dataset, Simulator};
use serde::Serialize;
use serde_json::json;

use crate::{Cli, CliError, Command, Global, RunConfig};

pub fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = resolve(&cli.global)?;
    match cli.command {
        Command::Simulate { n_per_class, operators } => simulate(cfg, n_per_class, operators),
        Command::Train {
            dataset,
            epochs,
            resume,
            augment,
            node_model,
        } => {
            let mut cfg = cfg;
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            if augment {
                cfg.eval.augment_stride = Some((cfg.mce.window_len / 2).max(1));
            }
            if node_model {
                train_nodes(&cfg)
            } else {
                let dataset = dataset.ok_or_else(|| CliError::Validation("--dataset is required".into()))?;
                train(&cfg, &dataset, resume.as_deref())
            }
        }
        Command::Eval {
            dataset,
            checkpoint,
            protocol,
        } => eval(&cfg, &dataset, checkpoint.as_deref(), protocol.unwrap_or(cfg.eval.protocol)),
        Command::Sweep { dataset, lengths } => {
            let mut cfg = cfg;
            if let Some(l) = lengths {
                cfg.eval.lengths = l;
                cfg.validate()?;
            }
            sweep(&cfg, &dataset)
        }
        Command::Serve {
            checkpoint,
            port,
            instant_sampling,
            persist,
        } => {
            let mut cfg = cfg;
            cfg.serve.port = port.unwrap_or(cfg.serve.port);
            cfg.serve.instant_sampling |= instant_sampling;
            cfg.serve.persist = persist.or(cfg.serve.persist);
            serve(&cfg, &checkpoint)
        }
        Command::Plot { report, map, scale } => plot(&cfg, report.as_deref(), map.as_deref(), scale),
        Command::MapDemo { checkpoint, dips } => {
            let mut cfg = cfg;
            cfg.mapping.demo_dips = dips.unwrap_or(cfg.mapping.demo_dips);
            cfg.validate()?;
            map_demo(&cfg, checkpoint.as_deref())
        }
    }
}

fn resolve(g: &Global) -> Result<RunConfig, CliError> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(o) = &g.out {
        cfg.out.clone_from(o);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cfg: &RunConfig) -> Result<&Path, CliError> {
    std::fs::create_dir_all(&cfg.out).map_err(|e| CliError::Runtime(format!("{}: {e}", cfg.out.display())))?;
    Ok(&cfg.out)
}

fn runtime(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Runtime(format!("{}: {e}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(runtime(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let f = File::create(path).map_err(runtime(path))?;
    serde_json::to_writer_pretty(BufWriter::new(f), value).map_err(|e| CliError::Runtime(e.to_string()))
}

/// Records the resolved configuration, seeds and outputs next to the
/// outputs, so that `--config <out>/config.toml` reruns the command.
fn manifest(cfg: &RunConfig, command: &str, outputs: &[&str], extra: serde_json::Value) -> Result<(), CliError> {
    let out = out_dir(cfg)?;
    write_text(&out.join("config.toml"), &cfg.to_toml())?;
    let m = json!({
        "tool": "dipme",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "seeds": { "master": cfg.seed, "dataset": cfg.seed, "split": cfg.seed, "train": cfg.train_config().seed },
        "config": cfg,
        "outputs": outputs,
        "details": extra,
    });
    write_json(&out.join("manifest.json"), &m)
}

fn read_dataset(path: &Path) -> Result<Vec<RawRecording>, CliError> {
    let f = File::open(path).map_err(|e| CliError::Validation(format!("dataset {}: {e}", path.display())))?;
    let recs = read_jsonl(BufReader::new(f)).map_err(|e| CliError::Validation(format!("dataset {}: {e}", path.display())))?;
    if recs.is_empty() {
        return Err(CliError::Validation(format!("dataset {} is empty", path.display())));
    }
    Ok(recs)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint<f32>, CliError> {
    Checkpoint::load(path).map_err(|e| CliError::Validation(format!("checkpoint {}: {e}", path.display())))
}

fn simulator(cfg: &RunConfig) -> Result<Simulator, CliError> {
    Ok(Simulator::new(cfg.simulator.clone())?)
}

fn simulate(mut cfg: RunConfig, n_per_class: Option<usize>, operators: Option<usize>) -> Result<(), CliError> {
    cfg.dataset.n_per_class = n_per_class.unwrap_or(cfg.dataset.n_per_class);
    cfg.dataset.operators = operators.unwrap_or(cfg.dataset.operators);
    cfg.validate()?;
    let recs = generate_dataset(
        &simulator(&cfg)?,
        &default_media_library(),
        cfg.dataset.n_per_class,
        &cfg.dataset.profiles(),
        &CalibrationParams::default(),
        cfg.seed,
    )?;
    let path = out_dir(&cfg)?.join("dataset.jsonl");
    let f = File::create(&path).map_err(runtime(&path))?;
    write_jsonl(BufWriter::new(f), &recs).map_err(runtime(&path))?;
    manifest(&cfg, "simulate", &["dataset.jsonl"], json!({ "recordings": recs.len() }))?;
    println!("wrote {} recordings to {}", recs.len(), path.display());
    Ok(())
}

fn eval_config(cfg: &RunConfig) -> EvalConfig {
    EvalConfig {
        mce: cfg.mce.clone(),
        train: cfg.train_config(),
        preprocess: cfg.preprocess.clone(),
        augment_stride: cfg.eval.augment_stride,
        dtw_k: cfg.eval.dtw_k,
    }
}

fn samples(cfg: &RunConfig, dataset: &Path) -> Result<Vec<Sample<f32>>, CliError> {
    Ok(prepare::<f32>(&read_dataset(dataset)?, &cfg.preprocess)?)
}

fn labels(samples: &[Sample<f32>]) -> Vec<usize> {
    samples.iter().map(|s| s.label).collect()
}

fn windows(
    samples: &[Sample<f32>],
    ids: &[usize],
    len: usize,
    stride: Option<usize>,
) -> Result<Vec<ProcessedWindow<f32>>, CliError> {
    let mut out = Vec::new();
    for &i in ids {
        let s = &samples[i];
        let ws = sliding_windows(&s.series, len, stride.unwrap_or(usize::MAX), Some(s.label), s.id)?;
        if ws.is_empty() {
            return Err(CliError::Validation(format!(
                "recording {:#x} has {} samples, fewer than the window of {len}",
                s.id,
                s.series.len()
            )));
        }
        out.extend(ws);
    }
    Ok(out)
}

fn train(cfg: &RunConfig, dataset: &Path, resume: Option<&Path>) -> Result<(), CliError> {
    let samples = samples(cfg, dataset)?;
    let split = stratified_holdout(&labels(&samples), cfg.eval.holdout_test, cfg.seed)?.splits.remove(0);
    let ecfg = eval_config(cfg);
    let (ck, accuracy, dtw) = match resume {
        None => {
            let (out, ck) = run_split(&samples, &split, cfg.mce.window_len, &ecfg, cfg.seed)?;
            (ck, out.accuracy(), out.dtw_accuracy())
        }
        Some(path) => {
            let mut ck = load_checkpoint(path)?;
            let len = ck.params.config.window_len;
            let mut train_w = windows(&samples, &split.train, len, ecfg.augment_stride)?;
            let mut test_w = windows(&samples, &split.test, len, None)?;
            train_w.iter_mut().chain(test_w.iter_mut()).for_each(|w| ck.norm.apply(w));
            let outcome = train_from(ck.params.clone(), &train_w, None, &ecfg.train)?;
            let mut history = ck.history.take().unwrap_or_default();
            let offset = history.epochs.len();
            history.epochs.extend(outcome.history.epochs.into_iter().map(|mut e| {
                e.epoch += offset;
                e
            }));
            history.diverged_at = outcome.history.diverged_at.map(|d| d + offset).or(history.diverged_at);
            history.clamp_warnings += outcome.history.clamp_warnings;
            ck.params = outcome.params;
            ck.history = Some(history);
            ck.train_config = Some(ecfg.train.clone());
            let preds = predict_batch(&ck.params, &test_w)?;
            let hits = preds.iter().zip(&test_w).filter(|(p, w)| Some(p.class) == w.label).count();
            (ck, hits as f64 / test_w.len() as f64, None)
        }
    };
    let history = ck.history.clone().unwrap_or_default();
    if let Some(epoch) = history.diverged_at {
        return Err(CliError::Runtime(format!("training diverged at epoch {epoch}; checkpoint not written")));
    }
    let out = out_dir(cfg)?;
    ck.save(&out.join("checkpoint.json"))?;
    write_json(&out.join("history.json"), &history)?;
    let summary = json!({
        "held_out": split.test.len(),
        "accuracy": accuracy,
        "dtw_accuracy": dtw,
        "epochs": history.epochs.len(),
        "final_train_loss": history.epochs.last().map(|e| e.train_loss),
    });
    write_json(&out.join("metrics.json"), &summary)?;
    manifest(cfg, "train", &["checkpoint.json", "history.json", "metrics.json"], summary.clone())?;
    println!("held-out accuracy {:.2}% on {} recordings", 100.0 * accuracy, split.test.len());
    if let Some(d) = dtw {
        println!("DTW+KNN accuracy  {:.2}%", 100.0 * d);
    }
    Ok(())
}

fn train_nodes(cfg: &RunConfig) -> Result<(), CliError> {
    let dips = node_training_set(
        &simulator(cfg)?,
        &default_media_library(),
        cfg.mapping.node_per_class,
        cfg.mapping.node_scene_dips,
        &cfg.dataset.profiles(),
        &CalibrationParams::default(),
        cfg.seed,
    )?;
    let ck = train_node_model::<f32>(&dips, &cfg.preprocess, &cfg.mce, &cfg.train_config())?;
    let history = ck.history.clone().unwrap_or_default();
    if let Some(epoch) = history.diverged_at {
        return Err(CliError::Runtime(format!("training diverged at epoch {epoch}; checkpoint not written")));
    }
    let out = out_dir(cfg)?;
    ck.save(&out.join("node_model.json"))?;
    write_json(&out.join("history.json"), &history)?;
    let acc = history.epochs.last().map(|e| e.train_accuracy);
    manifest(cfg, "train --node-model", &["node_model.json", "history.json"], json!({ "dips": dips.len(), "train_accuracy": acc }))?;
    println!("node model trained on {} dips, final training accuracy {:?}", dips.len(), acc);
    Ok(())
}

fn plan(cfg: &RunConfig, samples: &[Sample<f32>], protocol: Protocol) -> Result<SplitPlan, CliError> {
    let labels = labels(samples);
    let ops: Vec<usize> = samples.iter().map(|s| s.operator).collect();
    let e = &cfg.eval;
    Ok(match protocol {
        Protocol::Kfold => kfold(&labels, e.folds, cfg.seed)?,
        Protocol::LeaveOneOperatorOut => leave_one_operator_out(&ops, e.loo_group)?,
        Protocol::FolderHoldout => folder_holdout(&labels, &ops, e.folders, e.folders_held_out, cfg.seed)?,
        Protocol::Holdout => stratified_holdout(&labels, e.holdout_test, cfg.seed)?,
    })
}

/// Per-split accuracies with their mean, one row per fold or operator group.
fn split_table(report: &ProtocolReport, samples: &[Sample<f32>]) -> String {
    let mut out = format!("{:<8} {:>6} {:>10} {:>10}  {}\n", "split", "n_test", "mce", "dtw", "operators");
    for (i, s) in report.splits.iter().enumerate() {
        let mut ops: Vec<usize> = s.test_ids.iter().map(|&t| samples[t].operator).collect();
        ops.sort_unstable();
        ops.dedup();
        let dtw = s.dtw_accuracy().map_or("-".into(), |a| format!("{:.2}%", 100.0 * a));
        let _ = writeln!(out, "{:<8} {:>6} {:>9.2}% {:>10}  {:?}", i, s.labels.len(), 100.0 * s.accuracy(), dtw, ops);
    }
    let dtw = report.dtw.as_ref().map_or("-".into(), |d| format!("{:.2}%", 100.0 * d.mean_accuracy));
    let _ = writeln!(out, "{:<8} {:>6} {:>9.2}% {:>10}", "mean", "", 100.0 * report.mce.mean_accuracy, dtw);
    out
}

fn write_confusion(out: &Path, name: &str, cm: &ConfusionMatrix) -> Result<(), CliError> {
    write_text(&out.join(format!("{name}.csv")), &confusion_csv(cm))?;
    let png = out.join(format!("{name}.png"));
    confusion_png(cm, 40)
        .save(&png)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", png.display())))
}

fn eval(cfg: &RunConfig, dataset: &Path, checkpoint: Option<&Path>, protocol: Protocol) -> Result<(), CliError> {
    let ck = checkpoint.map(load_checkpoint).transpose()?;
    let mut cfg = cfg.clone();
    if let Some(ck) = &ck {
        cfg.mce = ck.params.config.clone();
        cfg.preprocess = ck.preprocess.clone();
        if let Some(tc) = &ck.train_config {
            cfg.train = tc.clone();
        }
    }
    let samples = samples(&cfg, dataset)?;
    let out = out_dir(&cfg)?.to_path_buf();
    if let (Some(ck), Protocol::Holdout) = (&ck, protocol) {
        // Score the checkpoint as it is on every recording.
        let all: Vec<usize> = (0..samples.len()).collect();
        let mut ws = windows(&samples, &all, ck.params.config.window_len, None)?;
        ws.iter_mut().for_each(|w| ck.norm.apply(w));
        let preds: Vec<usize> = predict_batch(&ck.params, &ws)?.iter().map(|p| p.class).collect();
        let cm = confusion(&preds, &labels(&samples))?;
        let m = metrics(&cm)?;
        let table = metrics_table(&[("MCE", &m)]);
        write_json(&out.join("report.json"), &json!({ "protocol": "checkpoint", "confusion": cm, "metrics": m }))?;
        write_text(&out.join("metrics.txt"), &table)?;
        write_confusion(&out, "confusion_mce", &cm)?;
        manifest(&cfg, "eval", &["report.json", "metrics.txt", "confusion_mce.csv", "confusion_mce.png"], json!({ "protocol": "checkpoint" }))?;
        print!("{table}");
        return Ok(());
    }
    let plan = plan(&cfg, &samples, protocol)?;
    let report = evaluate(&samples, &plan, cfg.mce.window_len, &eval_config(&cfg))?;
    let mut rows = vec![("MCE", &report.mce.metrics)];
    if let Some(d) = &report.dtw {
        rows.push(("DTW+KNN", &d.metrics));
    }
    let text = format!("{}\n{}", metrics_table(&rows), split_table(&report, &samples));
    write_json(&out.join("report.json"), &report)?;
    write_text(&out.join("metrics.txt"), &text)?;
    write_confusion(&out, "confusion_mce", &report.mce.confusion)?;
    let mut outputs = vec!["report.json", "metrics.txt", "confusion_mce.csv", "confusion_mce.png"];
    if let Some(d) = &report.dtw {
        write_confusion(&out, "confusion_dtw", &d.confusion)?;
        outputs.extend(["confusion_dtw.csv", "confusion_dtw.png"]);
    }
    manifest(&cfg, "eval", &outputs, json!({ "protocol": protocol, "splits": plan.splits.len() }))?;
    print!("{text}");
    Ok(())
}

fn sweep(cfg: &RunConfig, dataset: &Path) -> Result<(), CliError> {
    let samples = samples(cfg, dataset)?;
    let split = stratified_holdout(&labels(&samples), cfg.eval.holdout_test, cfg.seed)?.splits.remove(0);
    let rows = length_sweep(&samples, &split, &cfg.eval.lengths, &eval_config(cfg));
    let out = out_dir(cfg)?;
    let table = sweep_table(&rows);
    write_json(&out.join("sweep.json"), &rows)?;
    write_text(&out.join("sweep.txt"), &table)?;
    manifest(cfg, "sweep", &["sweep.json", "sweep.txt"], json!({ "failed": rows.iter().filter(|r| r.error.is_some()).count() }))?;
    print!("{table}");
    Ok(())
}

fn engine(cfg: &RunConfig) -> Result<dipme_service::Engine, CliError> {
    Ok(dipme_service::Engine {
        simulator: simulator(cfg)?,
        grid: cfg.mapping.grid.clone(),
        ..dipme_service::Engine::default()
    })
}

fn serve(cfg: &RunConfig, checkpoint: &Path) -> Result<(), CliError> {
    let model = load_checkpoint(checkpoint)?;
    let config = dipme_service::ServiceConfig {
        sampling_delay: if cfg.serve.instant_sampling {
            std::time::Duration::ZERO
        } else {
            dipme_service::REAL_TIME_SAMPLING
        },
        persist_path: cfg.serve.persist.clone(),
        ..dipme_service::ServiceConfig::default()
    };
    let state = dipme_service::AppState::restore(model, engine(cfg)?, config)
        .map_err(|e| CliError::Validation(e.to_string()))?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let addr = format!("{}:{}", cfg.serve.host, cfg.serve.port);
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .map_err(|e| CliError::Runtime(format!("cannot bind {addr}: {e}")))?;
        dipme_service::serve(listener, Arc::new(state), dipme_service::shutdown_signal())
            .await
            .map_err(|e| CliError::Runtime(e.to_string()))
    })
}

fn plot(cfg: &RunConfig, report: Option<&Path>, map: Option<&Path>, scale: u32) -> Result<(), CliError> {
    let out = out_dir(cfg)?;
    if let Some(path) = report {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| CliError::Validation(e.to_string()))?;
        let cm = v.get("confusion").or_else(|| v.get("mce").and_then(|m| m.get("confusion")));
        let cm: ConfusionMatrix = cm
            .cloned()
            .ok_or_else(|| CliError::Validation(format!("{} holds no confusion matrix", path.display())))
            .and_then(|c| serde_json::from_value(c).map_err(|e| CliError::Validation(e.to_string())))?;
        write_confusion(out, "confusion", &cm)?;
        println!("wrote {}", out.join("confusion.png").display());
    }
    if let Some(path) = map {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        let m = SubsurfaceMap::from_json(&text).map_err(|e| CliError::Validation(e.to_string()))?;
        let png = out.join("map.png");
        m.save_png(&png, scale)?;
        println!("wrote {}", png.display());
    }
    Ok(())
}

fn map_demo(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<(), CliError> {
    let sim = simulator(cfg)?;
    let lib = default_media_library();
    let calib = CalibrationParams::default();
    let model: Checkpoint<f32> = match checkpoint {
        Some(p) => load_checkpoint(p)?,
        None => {
            let dips = node_training_set(
                &sim,
                &lib,
                cfg.mapping.node_per_class,
                cfg.mapping.node_scene_dips,
                &cfg.dataset.profiles(),
                &calib,
                cfg.seed,
            )?;
            train_node_model(&dips, &cfg.preprocess, &cfg.mce, &cfg.train_config())?
        }
    };
    let scene = Scene::default();
    let n = cfg.mapping.demo_dips;
    let op = cfg.dataset.profiles().remove(0);
    let mut events = Vec::with_capacity(n);
    for i in 0..n {
        let x = scene.width * (i as f64 + 0.5) / n as f64;
        let rec = simulate_scene_dip(&sim, &scene, &lib, x, &op, &calib, derive_seed(cfg.seed, i as u64))?;
        events.push(record_dip::<f32, _>(&model, x, &rec, i as f64)?);
    }
    let map = composite(&events, &cfg.mapping.grid, &ColorMap::default())?;
    let agreement = map.agreement(&scene);
    let out = out_dir(cfg)?;
    write_text(&out.join("map.json"), &map.to_json()?)?;
    map.save_png(&out.join("map.png"), 10)?;
    write_json(&out.join("events.json"), &events)?;
    manifest(cfg, "map-demo", &["map.json", "map.png", "events.json"], json!({ "dips": n, "agreement": agreement }))?;
    match agreement {
        Some(a) => println!("{n} dips, agreement {:.1}% of confident cells", 100.0 * a),
        None => println!("{n} dips, no confident cells"),
    }
    Ok(())
}
