use std::fmt::Write as _;
use std::path::Path;

use anyhow::{anyhow, ensure, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use setrans::autodiff::{Scalar, Tape};
use setrans::augment::{self, Band};
use setrans::data::checkpoint::decode_meta;
use setrans::data::pgm::encode_pgm;
use setrans::data::synth::{summarize, synth_asc, synth_asd, synth_ust, AscSynth, AsdSynth, UstSynth};
use setrans::data::{load_checkpoint, load_manifest, read_wav_at, save_checkpoint, LabeledClip, Manifest};
use setrans::dataset::{examples_from_manifest, Example};
use setrans::features::{LogMelExtractor, ASD_SHIFT, ASD_WINDOW};
use setrans::matrix::Matrix;
use setrans::model::SETransModel;
use setrans::objectives::EvalReport;
use setrans::training::{self, Augmentation, TrainLog};
use setrans::Task;

use crate::config::{Resolved, RunConfig};
use crate::output::{clip_stem, matrix_csv, parse_matrix_csv, Staging};
use crate::{AugmentArgs, EvalArgs, ExtractArgs, InspectArgs, Mode, SynthArgs, TrainArgs};

/// What a command produced, for printing or for callers that drive the CLI in-process.
#[derive(Debug)]
pub enum Outcome {
    Synth(SynthOutcome),
    Extract(String),
    Train(TrainOutcome),
    Eval(EvalReport),
    Augment(AugmentOutcome),
    Inspect(InspectOutcome),
}

impl Outcome {
    /// Human-readable summary for the terminal.
    pub fn text(&self) -> String {
        match self {
            Outcome::Synth(s) => s.summary.clone(),
            Outcome::Extract(s) => s.clone(),
            Outcome::Train(t) => {
                let last = t.log.last().expect("log has the untrained row");
                let metric = last.metric.map(|m| format!(", train metric {m:.4}")).unwrap_or_default();
                format!(
                    "trained {} parameters for {} epochs: loss {:.6}{metric}\n",
                    t.param_count, last.epoch, last.loss
                )
            }
            Outcome::Eval(r) => r.to_text(),
            Outcome::Augment(a) => a.header.clone() + "\n",
            Outcome::Inspect(i) => format!(
                "top channel {} (gate {:.4}), predicted class {}\n",
                i.top_channel, i.top_weight, i.predicted_class
            ),
        }
    }
}

#[derive(Debug)]
pub struct SynthOutcome {
    pub manifest: Manifest,
    pub summary: String,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub log: TrainLog,
    pub param_count: usize,
    pub resolved: Resolved,
}

#[derive(Debug)]
pub struct AugmentOutcome {
    pub header: String,
    /// Share of cells taken from the first input (FMix, mixup) or kept (SpecAugment).
    pub lambda: Option<f64>,
}

#[derive(Debug)]
pub struct InspectOutcome {
    pub top_channel: usize,
    pub top_weight: f64,
    pub predicted_class: usize,
}

pub fn synth(args: &SynthArgs) -> Result<SynthOutcome> {
    if let Some(d) = args.duration {
        ensure!(d.is_finite() && d > 0.0, "duration must be positive, got {d}");
    }
    let ds = match args.task {
        Task::Asc => {
            let d = AscSynth::default();
            synth_asc(&AscSynth { duration: args.duration.unwrap_or(d.duration), ..d }, args.seed)?
        }
        Task::Ust => {
            let d = UstSynth::default();
            synth_ust(&UstSynth { duration: args.duration.unwrap_or(d.duration), ..d }, args.seed)?
        }
        Task::Asd => {
            let d = AsdSynth::default();
            synth_asd(&AsdSynth { duration: args.duration.unwrap_or(d.duration), ..d }, args.seed)?
        }
    };
    let staging = Staging::new(&args.out)?;
    ds.write(staging.root())?;
    staging.commit()?;
    let manifest = ds.manifest(&args.out);
    Ok(SynthOutcome {
        summary: summary_text(&manifest.clips),
        manifest,
    })
}

fn summary_text(clips: &[LabeledClip]) -> String {
    let mut s = format!("{} clips\n", clips.len());
    for ((split, label), n) in summarize(clips.iter()) {
        writeln!(s, "{split:<5}  {label:<16}  {n}").unwrap();
    }
    s
}

fn open_manifest(path: &Path, task: Task) -> Result<Manifest> {
    let manifest = load_manifest(path)?;
    if let Some(t) = manifest.task() {
        ensure!(t == task, "{} holds {t} clips, but --task is {task}", path.display());
    }
    Ok(manifest)
}

/// Manifest clips in the order `examples_from_manifest` returns them.
fn selected(manifest: &Manifest, split: Option<setrans::data::Split>) -> Vec<&LabeledClip> {
    manifest
        .clips
        .iter()
        .filter(|c| split.is_none_or(|s| c.split == s))
        .collect()
}

pub fn extract(args: &ExtractArgs) -> Result<String> {
    let manifest = open_manifest(&args.manifest, args.task)?;
    let split = args.split.split();
    let examples = examples_from_manifest(&manifest, split, args.task)?;
    let staging = Staging::new(&args.out)?;
    let mut index = String::from("clip,features,frames,bands\n");
    for (clip, ex) in selected(&manifest, split).into_iter().zip(&examples) {
        let stem = clip_stem(&clip.path);
        staging.write(format!("{stem}.txt"), ex.features.to_text())?;
        staging.write(format!("{stem}.pgm"), encode_pgm(&ex.features))?;
        let (frames, bands) = ex.features.shape();
        writeln!(index, "{},{stem}.txt,{frames},{bands}", clip.path.display()).unwrap();
    }
    staging.write("features.csv", &index)?;
    staging.commit()?;
    let shape = examples.first().map(|e| e.features.shape()).unwrap_or((0, 0));
    Ok(format!("extracted {} clips of {}x{} log-mel features\n", examples.len(), shape.0, shape.1))
}

pub fn train(args: &TrainArgs) -> Result<TrainOutcome> {
    let run_config = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let manifest = open_manifest(&args.manifest, args.task)?;
    let n_classes = manifest.n_classes();
    ensure!(n_classes > 0, "{} holds no labeled clips", args.manifest.display());
    let resolved = run_config.resolve(args, n_classes)?;
    let data = examples_from_manifest(&manifest, args.split.split(), args.task)?;
    ensure!(!data.is_empty(), "no {:?} clips in {}", args.split, args.manifest.display());
    log::info!("training on {} clips: {:?}", data.len(), resolved);
    let staging = Staging::new(&args.out)?;
    let (log, param_count) = match resolved.mode {
        Mode::F32 => train_in::<f32>(&resolved, &data, &staging)?,
        Mode::F64 => train_in::<f64>(&resolved, &data, &staging)?,
    };
    staging.write("log.csv", log.to_csv())?;
    staging.write("config.json", serde_json::to_string_pretty(&resolved)? + "\n")?;
    staging.commit()?;
    Ok(TrainOutcome {
        log,
        param_count,
        resolved,
    })
}

fn train_in<T: Scalar>(resolved: &Resolved, data: &[Example], staging: &Staging) -> Result<(TrainLog, usize)> {
    let cfg = &resolved.train;
    let mut model = SETransModel::<T>::new(&resolved.model, cfg.seed)?;
    let log = training::train(&mut model, data, cfg, |row, model| {
        if let Some(k) = cfg.checkpoint_every {
            if row.epoch > 0 && row.epoch % k == 0 {
                let path = staging.path(format!("checkpoints/epoch_{:04}.setc", row.epoch));
                save_checkpoint(model, cfg.task, cfg.seed, &path)?;
            }
        }
        Ok(())
    })?;
    save_checkpoint(&model, cfg.task, cfg.seed, &staging.path("model.setc"))?;
    Ok((log, model.param_count()))
}

fn checkpoint_model<T: Scalar>(path: &Path) -> Result<(Task, SETransModel<T>)> {
    let ckpt = load_checkpoint::<f32>(path)?;
    Ok((ckpt.task, ckpt.model.cast()))
}

pub fn eval(args: &EvalArgs) -> Result<EvalReport> {
    let bytes = std::fs::read(&args.checkpoint).with_context(|| format!("cannot read {}", args.checkpoint.display()))?;
    let (meta, _) = decode_meta(&bytes)?;
    ensure!(meta.task == args.task, "checkpoint was trained for {}, not {}", meta.task, args.task);
    let manifest = open_manifest(&args.manifest, args.task)?;
    let split = args.split.split();
    let data = examples_from_manifest(&manifest, split, args.task)?;
    let report = match args.mode {
        Mode::F32 => eval_in::<f32>(args, &data)?,
        Mode::F64 => eval_in::<f64>(args, &data)?,
    };
    let staging = Staging::new(&args.out)?;
    staging.write("report.csv", report.to_csv())?;
    let clips = selected(&manifest, split);
    match &report {
        EvalReport::Asc(r) => {
            let n = r.confusion.len();
            let mut s = String::from("true_class");
            for c in 0..n {
                write!(s, ",pred{c}").unwrap();
            }
            s.push('\n');
            for (t, row) in r.confusion.iter().enumerate() {
                write!(s, "{t}").unwrap();
                for v in row {
                    write!(s, ",{v}").unwrap();
                }
                s.push('\n');
            }
            staging.write("confusion.csv", s)?;
            let mut p = String::from("clip,truth,prediction\n");
            for ((clip, t), y) in clips.iter().zip(&r.truths).zip(&r.predictions) {
                writeln!(p, "{},{t},{y}", clip.path.display()).unwrap();
            }
            staging.write("predictions.csv", p)?;
        }
        EvalReport::Ust(r) => {
            let mut s = String::from("curve,threshold,precision,recall\n");
            let curves = r
                .class_curves
                .iter()
                .enumerate()
                .filter_map(|(c, curve)| curve.as_ref().map(|curve| (format!("class{c}"), curve)))
                .chain(std::iter::once(("micro".to_string(), &r.micro_curve)));
            for (name, curve) in curves {
                for pt in &curve.points {
                    writeln!(s, "{name},{},{},{}", pt.threshold, pt.precision, pt.recall).unwrap();
                }
            }
            staging.write("prcurves.csv", s)?;
            let n = r.scores.cols();
            let mut p = String::from("clip");
            for c in 0..n {
                write!(p, ",score{c}").unwrap();
            }
            for c in 0..n {
                write!(p, ",truth{c}").unwrap();
            }
            p.push('\n');
            for (i, clip) in clips.iter().enumerate() {
                write!(p, "{}", clip.path.display()).unwrap();
                for v in r.scores.row(i).iter().chain(r.truths.row(i)) {
                    write!(p, ",{v}").unwrap();
                }
                p.push('\n');
            }
            staging.write("scores.csv", p)?;
        }
        EvalReport::Asd(r) => {
            let mut roc = String::from("section,domain,fpr,tpr\n");
            let mut scores = String::from("section,domain,anomalous,score\n");
            for sec in &r.sections {
                for (fpr, tpr) in &sec.roc {
                    writeln!(roc, "{},{},{fpr},{tpr}", sec.section, sec.domain).unwrap();
                }
                for (anomalous, list) in [(1, &sec.positive_scores), (0, &sec.negative_scores)] {
                    for v in list {
                        writeln!(scores, "{},{},{anomalous},{v}", sec.section, sec.domain).unwrap();
                    }
                }
            }
            staging.write("roc.csv", roc)?;
            staging.write("scores.csv", scores)?;
        }
    }
    staging.commit()?;
    Ok(report)
}

fn eval_in<T: Scalar>(args: &EvalArgs, data: &[Example]) -> Result<EvalReport> {
    let (task, model) = checkpoint_model::<T>(&args.checkpoint)?;
    Ok(training::evaluate(task, &model, data, args.batch_size)?)
}

fn load_matrix(path: &Path) -> Result<Matrix> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        parse_matrix_csv(&text).with_context(|| format!("{}: invalid feature CSV", path.display()))
    } else {
        Ok(Matrix::load(path)?)
    }
}

fn kept_mask(x: &Matrix, bands: &[Band]) -> Matrix {
    let ones = Matrix::new(x.rows(), x.cols(), vec![1.0; x.rows() * x.cols()]).expect("mask shape");
    augment::apply_bands(&ones, bands)
}

pub fn augment_demo(args: &AugmentArgs) -> Result<AugmentOutcome> {
    let method = Augmentation::from_name(&args.augment)?;
    let xi = load_matrix(&args.features)?;
    let xj = match &args.partner {
        Some(p) => load_matrix(p)?,
        None => {
            let rows: Vec<Vec<f64>> = (0..xi.rows()).rev().map(|r| xi.row(r).to_vec()).collect();
            Matrix::from_rows(&rows)?
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let staging = Staging::new(&args.out)?;
    let save = |name: &str, m: &Matrix| -> Result<()> {
        staging.write(format!("{name}.pgm"), encode_pgm(m))?;
        staging.write(format!("{name}.csv"), matrix_csv(m, "frame", "band"))
    };
    save("original", &xi)?;
    let cells = (xi.rows() * xi.cols()) as f64;
    let (header, lambda) = match method {
        Augmentation::None => ("none: features unchanged".to_string(), None),
        Augmentation::SpecAugment(cfg) => {
            let (out, bands) = augment::spec_augment(&xi, &cfg, &mut rng);
            let mask = kept_mask(&xi, &bands);
            let kept = mask.data().iter().sum::<f64>() / cells;
            save("mask", &mask)?;
            save("mixed", &out)?;
            (format!("specaugment: kept fraction = {kept} ({} bands)", bands.len()), Some(kept))
        }
        Augmentation::Mixup { alpha } => {
            let out = augment::mixup(&xi, &xj, &[1.0], &[0.0], alpha, &mut rng)?;
            save("partner", &xj)?;
            save("mixed", &out.mixed)?;
            let lambda = out.lambda;
            (format!("mixup: lambda = {lambda}"), Some(lambda))
        }
        Augmentation::FMix(cfg) => {
            let out = augment::fmix(&xi, &xj, &cfg, &mut rng)?;
            save("partner", &xj)?;
            save("mask", &out.mask)?;
            save("mixed", &out.mixed)?;
            let ones = out.mask.data().iter().filter(|&&m| m == 1.0).count();
            (
                format!("fmix: lambda = {} ({ones} of {} cells from the first input)", out.lambda, cells as usize),
                Some(out.lambda),
            )
        }
    };
    staging.write("summary.txt", format!("{header}\n"))?;
    staging.commit()?;
    Ok(AugmentOutcome { header, lambda })
}

fn load_sample(path: &Path, task: Task) -> Result<Matrix> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")) {
        let extractor = LogMelExtractor::new(task.feature_config())?;
        let audio = read_wav_at(path, extractor.config().sample_rate)?;
        Ok(extractor.extract(&audio)?.values)
    } else {
        load_matrix(path)
    }
}

pub fn inspect(args: &InspectArgs) -> Result<InspectOutcome> {
    match args.mode {
        Mode::F32 => inspect_in::<f32>(args),
        Mode::F64 => inspect_in::<f64>(args),
    }
}

fn inspect_in<T: Scalar>(args: &InspectArgs) -> Result<InspectOutcome> {
    let (task, model) = checkpoint_model::<T>(&args.checkpoint)?;
    let mut x = load_sample(&args.sample, task)?;
    if task == Task::Asd {
        let start = args.window * ASD_SHIFT;
        ensure!(
            start + ASD_WINDOW <= x.rows(),
            "window {} needs {} frames, the sample has {}",
            args.window,
            start + ASD_WINDOW,
            x.rows()
        );
        x = x.slice_rows(start, ASD_WINDOW);
    }
    let mut tape = Tape::new();
    let input = tape.leaf(model.input_tensor(&[&x])?, false);
    let trace = model.forward_eval(&mut tape, input)?;
    let staging = Staging::new(&args.out)?;

    let mut att = String::from("layer,query");
    let seq = model.config().seq_len;
    for k in 0..seq {
        write!(att, ",key{k}").unwrap();
    }
    att.push('\n');
    for (l, &a) in trace.attention.iter().enumerate() {
        let probs = tape
            .attention_probs(a)
            .ok_or_else(|| anyhow!("encoder layer {l} recorded no attention probabilities"))?
            .to_f64();
        let heads = probs.len() / (seq * seq);
        for q in 0..seq {
            write!(att, "{l},{q}").unwrap();
            for k in 0..seq {
                let mean = (0..heads).map(|h| probs[(h * seq + q) * seq + k]).sum::<f64>() / heads as f64;
                write!(att, ",{mean}").unwrap();
            }
            att.push('\n');
        }
    }
    staging.write("attention.csv", att)?;

    let mut se = String::from("block,unit,channel,weight\n");
    let mut gates = Vec::new();
    for (i, &w) in trace.se_weights.iter().enumerate() {
        let w = tape.value(w).to_f64();
        for (c, v) in w.iter().enumerate() {
            writeln!(se, "{},{},{c},{v}", i / 2, i % 2).unwrap();
        }
        gates.push(w);
    }
    staging.write("se_weights.csv", se)?;

    // The last gate of the second block weights the channels that leave it.
    let last = gates.last().ok_or_else(|| anyhow!("model has no SE layers"))?;
    let (top_channel, &top_weight) = last
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
        .expect("at least one channel");
    let block = tape.value(trace.block_output);
    let shape = block.shape().to_vec();
    let (t, f) = (shape[2], shape[3]);
    let values = block.to_f64();
    let plane = values[top_channel * t * f..(top_channel + 1) * t * f].to_vec();
    let map = Matrix::new(t, f, plane)?;
    staging.write("top_feature_map.csv", matrix_csv(&map, "frame", "band"))?;
    staging.write("top_feature_map.pgm", encode_pgm(&map))?;

    let logits = tape.value(trace.logits).to_f64();
    let predicted_class = logits
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .expect("at least one class");
    let mut summary = String::from("key,value\n");
    writeln!(summary, "task,{task}").unwrap();
    writeln!(summary, "top_channel,{top_channel}").unwrap();
    writeln!(summary, "top_weight,{top_weight}").unwrap();
    writeln!(summary, "predicted_class,{predicted_class}").unwrap();
    for (c, l) in logits.iter().enumerate() {
        writeln!(summary, "logit{c},{l}").unwrap();
    }
    staging.write("inspect.csv", summary)?;
    staging.commit()?;
    Ok(InspectOutcome {
        top_channel,
        top_weight,
        predicted_class,
    })
}
