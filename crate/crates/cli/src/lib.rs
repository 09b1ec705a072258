//! Subcommands of the `dggn` binary.

pub mod config;

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use dggn::diagram::{load_annotations, save_annotations, DiagramGraph};
use dggn::knowledge::{knowledge, KnowledgeSentence};
use dggn::metrics::{gate_statistics, order_variance_study, per_step_means, predict_dataset, report, EvalReport};
use dggn::model::EDGE_THRESHOLD;
use dggn::synth::generate;
use dggn::train::{Checkpoint, LossRecord, Trainer};
use serde::Serialize;

use config::{CommonArgs, EvalArgs, ModelArgs, RunConfig, SynthArgs, TrainArgs};

#[derive(Parser, Debug)]
#[command(name = "dggn", version, about = "Relation-graph generation for diagrams")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic annotation set.
    Synth {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        synth: SynthArgs,
        #[arg(long, default_value_t = 200)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        /// Move the last N diagrams into a separate file.
        #[arg(long, requires = "holdout_out")]
        holdout: Option<usize>,
        #[arg(long)]
        holdout_out: Option<PathBuf>,
    },
    /// Train a relation model; writes checkpoint.json, loss.csv and
    /// run-config.json into the output directory.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Continue from a checkpoint; model flags are then ignored.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score a checkpoint on an annotated set.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        eval: EvalArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Metric CSV (metric, value, config_hash).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Generate relation graphs for every diagram in a file.
    Infer {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = EDGE_THRESHOLD)]
        threshold: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Knowledge sentences from generated graphs.
    Sentences {
        #[arg(long)]
        graphs: PathBuf,
        /// Line-oriented text; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Structured records (diagram, text, category, provenance).
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Update-gate statistics and the candidate-order study for one or
    /// more checkpoints.
    Diag {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        eval: EvalArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, required = true)]
        checkpoint: Vec<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        /// Diagram whose per-step gate means are written.
        #[arg(long, default_value_t = 0)]
        step_diagram: usize,
    },
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            common,
            synth,
            count,
            out,
            holdout,
            holdout_out,
        } => {
            let mut cfg = common.base()?;
            synth.apply(&mut cfg.synth);
            cfg.log("synth");
            let mut data = generate(&cfg.synth, count)?;
            if let (Some(k), Some(path)) = (holdout, holdout_out) {
                if k > data.len() {
                    bail!("holdout {k} exceeds count {}", data.len());
                }
                let rest = data.split_off(data.len() - k);
                save_annotations(&path, &rest)?;
                log::info!("wrote {} diagrams to {}", rest.len(), path.display());
            }
            save_annotations(&out, &data)?;
            log::info!("wrote {} diagrams to {}", data.len(), out.display());
            Ok(())
        }
        Command::Train {
            common,
            model,
            train,
            data,
            out_dir,
            resume,
        } => {
            let mut cfg = common.base()?;
            let dataset = load_annotations(&data)?;
            fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
            let trainer = match resume {
                Some(path) => {
                    let mut ck = Checkpoint::load(&path)?;
                    train.apply(&mut ck.train);
                    cfg.model = ck.model.config.clone();
                    cfg.train = ck.train.clone();
                    Trainer::resume(&dataset, ck)?
                }
                None => {
                    model.apply(&mut cfg.model);
                    train.apply(&mut cfg.train);
                    Trainer::new(&dataset, cfg.model.clone(), cfg.train.clone())?
                }
            };
            cfg.log("train");
            write_json(&out_dir.join("run-config.json"), &cfg)?;
            run_training(trainer, &out_dir)
        }
        Command::Eval {
            common,
            eval,
            data,
            checkpoint,
            out,
            json,
        } => {
            let (cfg, ck) = with_checkpoint(&common, &eval, &checkpoint)?;
            cfg.log("eval");
            let dataset = load_annotations(&data)?;
            let preds = predict_dataset(&ck.model, &dataset)?;
            let rep = report(&preds, &dataset, &cfg.eval)?;
            let rows = metric_rows(&rep);
            let hash = cfg.hash();
            print!("{}", render_table(&rows, &hash));
            if let Some(path) = out {
                let mut w = csv::Writer::from_path(&path)?;
                w.write_record(["metric", "value", "config_hash"])?;
                for (name, value) in &rows {
                    w.write_record([name.as_str(), &fmt_value(*value), &hash])?;
                }
                w.flush()?;
            }
            if let Some(path) = json {
                write_json(&path, &rep)?;
            }
            Ok(())
        }
        Command::Infer {
            common,
            data,
            checkpoint,
            threshold,
            out,
        } => {
            let (cfg, ck) = with_checkpoint(&common, &EvalArgs::default(), &checkpoint)?;
            cfg.log("infer");
            let dataset = load_annotations(&data)?;
            let graphs: Vec<DiagramGraph> = predict_dataset(&ck.model, &dataset)?
                .iter()
                .map(|p| p.graph(threshold))
                .collect();
            write_json(&out, &graphs)?;
            log::info!("wrote {} graphs to {}", graphs.len(), out.display());
            Ok(())
        }
        Command::Sentences { graphs, out, json } => {
            let text = fs::read_to_string(&graphs).with_context(|| format!("reading {}", graphs.display()))?;
            let graphs: Vec<DiagramGraph> = serde_json::from_str(&text)
                .or_else(|_| serde_json::from_str::<DiagramGraph>(&text).map(|g| vec![g]))
                .with_context(|| "expected a graph or a list of graphs")?;
            let per: Vec<Vec<KnowledgeSentence>> = graphs.iter().map(knowledge).collect();
            let mut lines = String::new();
            for (i, s) in per.iter().enumerate() {
                lines.push_str(&format!("# diagram {i}\n"));
                lines.push_str(&dggn::knowledge::to_lines(s));
            }
            match out {
                Some(p) => fs::write(&p, lines).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{lines}"),
            }
            if let Some(p) = json {
                #[derive(Serialize)]
                struct Record<'a> {
                    diagram: usize,
                    #[serde(flatten)]
                    sentence: &'a KnowledgeSentence,
                }
                let recs: Vec<Record> = per
                    .iter()
                    .enumerate()
                    .flat_map(|(diagram, v)| v.iter().map(move |sentence| Record { diagram, sentence }))
                    .collect();
                write_json(&p, &recs)?;
            }
            Ok(())
        }
        Command::Diag {
            common,
            eval,
            data,
            checkpoint,
            out_dir,
            step_diagram,
        } => {
            let dataset = load_annotations(&data)?;
            fs::create_dir_all(&out_dir)?;
            let mut gates = csv::Writer::from_path(out_dir.join("gates.csv"))?;
            gates.write_record(["model", "mode", "mean", "q1", "q3", "count", "config_hash"])?;
            let mut steps = csv::Writer::from_path(out_dir.join("gate_steps.csv"))?;
            steps.write_record(["model", "step", "mean"])?;
            let mut order = csv::Writer::from_path(out_dir.join("order.csv"))?;
            order.write_record(["model", "trial", "ap50"])?;
            let mut summary = csv::Writer::from_path(out_dir.join("order_summary.csv"))?;
            summary.write_record(["model", "mode", "variance", "std", "config_hash"])?;
            for path in &checkpoint {
                let (cfg, ck) = with_checkpoint(&common, &eval, path)?;
                cfg.log("diag");
                let hash = cfg.hash();
                let label = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default();
                let mode = format!("{:?}", ck.model.config.mode);
                let preds = predict_dataset(&ck.model, &dataset)?;
                let traces: Vec<Vec<Vec<f64>>> = preds.iter().map(|p| p.gates.clone()).collect();
                match gate_statistics(&traces) {
                    Ok(g) => {
                        gates.write_record([
                            label.as_str(),
                            &mode,
                            &fmt_value(Some(g.mean)),
                            &fmt_value(Some(g.q1)),
                            &fmt_value(Some(g.q3)),
                            &g.count.to_string(),
                            &hash,
                        ])?;
                        println!(
                            "{label} ({mode}): gate mean {:.6} q1 {:.6} q3 {:.6}",
                            g.mean, g.q1, g.q3
                        );
                    }
                    Err(_) => log::warn!("{label}: no update gates in mode {mode}"),
                }
                if let Some(trace) = traces.get(step_diagram) {
                    for (t, m) in per_step_means(trace).iter().enumerate() {
                        steps.write_record([label.as_str(), &t.to_string(), &fmt_value(Some(*m))])?;
                    }
                }
                let study = order_variance_study(&ck.model, &dataset, cfg.eval.order_trials, cfg.eval.seed)?;
                for (t, ap) in study.ap50.iter().enumerate() {
                    order.write_record([label.as_str(), &t.to_string(), &fmt_value(Some(*ap))])?;
                }
                summary.write_record([
                    label.as_str(),
                    &mode,
                    &fmt_value(Some(study.variance)),
                    &fmt_value(Some(study.std)),
                    &hash,
                ])?;
                println!(
                    "{label} ({mode}): AP50 variance {:.6e} std {:.6e}",
                    study.variance, study.std
                );
            }
            for w in [&mut gates, &mut steps, &mut order, &mut summary] {
                w.flush()?;
            }
            Ok(())
        }
    }
}

fn with_checkpoint(common: &CommonArgs, eval: &EvalArgs, path: &Path) -> Result<(RunConfig, Checkpoint)> {
    let ck = Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    let mut cfg = common.base()?;
    eval.apply(&mut cfg.eval);
    cfg.model = ck.model.config.clone();
    cfg.train = ck.train.clone();
    Ok((cfg, ck))
}

fn run_training(mut trainer: Trainer, out_dir: &Path) -> Result<()> {
    let loss_path = out_dir.join("loss.csv");
    let resumed = trainer.iteration() > 0 && loss_path.exists();
    let file = fs::OpenOptions::new()
        .create(true)
        .append(resumed)
        .write(true)
        .truncate(!resumed)
        .open(&loss_path)
        .with_context(|| format!("opening {}", loss_path.display()))?;
    let mut w = csv::WriterBuilder::new().has_headers(!resumed).from_writer(file);
    let mut write_err = None;
    let result = trainer.run(|r: &LossRecord| {
        if write_err.is_none() {
            write_err = w.serialize(r).err();
        }
    });
    w.flush()?;
    if let Some(e) = write_err {
        return Err(e.into());
    }
    match result {
        Ok(_) => {
            trainer.checkpoint().save(out_dir.join("checkpoint.json"))?;
            log::info!("saved checkpoint at iteration {}", trainer.iteration());
            Ok(())
        }
        Err(dggn::Error::Diverged { iteration, checkpoint }) => {
            let path = out_dir.join("diverged-checkpoint.json");
            checkpoint.save(&path)?;
            bail!(
                "training diverged at iteration {iteration}; last good state saved to {}",
                path.display()
            )
        }
        Err(e) => Err(e.into()),
    }
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

fn fmt_value(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"))
}

pub fn metric_rows(rep: &EvalReport) -> Vec<(String, Option<f64>)> {
    let mut rows = vec![("mAP".to_string(), rep.map)];
    rows.extend(rep.ap.iter().map(|&(t, a)| (format!("AP@{t:.1}"), a)));
    rows.push(("IoU_node".into(), Some(rep.iou_node)));
    rows.push(("IoU_edge".into(), Some(rep.iou_edge)));
    rows.extend(rep.recall.iter().map(|&(k, r)| (format!("R@{k}"), r)));
    if let Some(g) = rep.gates {
        rows.push(("gate_mean".into(), Some(g.mean)));
    }
    rows
}

pub fn render_table(rows: &[(String, Option<f64>)], hash: &str) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(6).max(6);
    let mut s = format!("{:<width$}  {:>10}\n", "metric", "value");
    for (name, v) in rows {
        s.push_str(&format!("{name:<width$}  {:>10}\n", fmt_value(*v)));
    }
    s.push_str(&format!("config {hash}\n"));
    s
}
