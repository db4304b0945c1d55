use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use pwarpc::config::ExperimentConfig;
use pwarpc::evalkit::{evaluate, report, Curve, MetricRow, CURVES_SVG, METRICS_CSV};
use pwarpc::gradsuite::{gradcheck_suite, CheckKind};
use pwarpc::model::{Checkpoint, Objective, TrainData, Trainer};
use pwarpc::objectives::LossReport;
use pwarpc::synthdata::{load_pair, read_manifest, write_dataset, Dataset, InstancePair, Label, Split};
use pwarpc::warp::{sample_warp_detailed, warp_image, DenseWarp, Image};
use pwarpc::{Error, Result};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{EvalArgs, GradcheckArgs, MakeDatasetArgs, SampleWarpsArgs, TrainArgs};

pub const CONFIG_ECHO: &str = "config.echo";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const FINAL_CHECKPOINT: &str = "final.pwrc";
pub const TRAIN_LOG: &str = "logs/train.csv";
pub const EVAL_DIR: &str = "eval";

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write_file(p: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(p, contents).map_err(|e| Error::io(p, e))
}

fn step_checkpoint_name(step: u64) -> String {
    format!("step_{step:06}.pwrc")
}

/// Highest-step `step_NNNNNN.pwrc` in `dir`.
fn latest_checkpoint(dir: &Path) -> Result<Option<PathBuf>> {
    if !dir.is_dir() {
        return Ok(None);
    }
    let mut best: Option<(u64, PathBuf)> = None;
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let step = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("step_")?.strip_suffix(".pwrc")?.parse::<u64>().ok());
        if let Some(s) = step {
            if best.as_ref().is_none_or(|(b, _)| s > *b) {
                best = Some((s, path));
            }
        }
    }
    Ok(best.map(|(_, p)| p))
}

/// Pairs of one split, in manifest order.
fn load_split(dir: &Path, split: Split) -> Result<Vec<InstancePair>> {
    read_manifest(dir)?
        .iter()
        .filter(|r| r.split == split)
        .map(|r| load_pair(dir, r))
        .collect()
}

pub fn make_dataset(a: &MakeDatasetArgs) -> Result<ExitCode> {
    let mut cfg = ExperimentConfig::resolve(a.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.data.seed = s;
    }
    cfg.validate()?;
    create_dir(&a.out)?;
    let ds = Dataset::new(cfg.data.clone())?;
    let records = write_dataset(&ds, &a.out)?;
    write_file(&a.out.join(CONFIG_ECHO), cfg.to_text())?;
    for split in Split::ALL {
        let count = |label: Label| records.iter().filter(|r| r.split == split && r.label == label).count();
        println!(
            "{:<5} {} positive, {} negative",
            split.name(),
            count(Label::Positive),
            count(Label::Negative)
        );
    }
    println!("wrote {} pairs to {}", records.len(), a.out.display());
    Ok(ExitCode::SUCCESS)
}

/// Existing log lines up to and including `step`, or just the header.
fn log_prefix(path: &Path, step: u64) -> Result<String> {
    let mut out = format!("{}\n", LossReport::CSV_HEADER);
    if step == 0 || !path.exists() {
        return Ok(out);
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    for line in text.lines().skip(1) {
        let row_step = line.split(',').next().and_then(|s| s.parse::<u64>().ok());
        match row_step {
            Some(s) if s <= step => {
                out.push_str(line);
                out.push('\n');
            }
            _ => break,
        }
    }
    Ok(out)
}

pub fn train(a: &TrainArgs) -> Result<ExitCode> {
    let mut cfg = ExperimentConfig::resolve(a.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    if let Some(o) = &a.objective {
        cfg.train.objective = o.parse()?;
    }
    // Keypoint supervision runs without the unmatched state.
    if cfg.train.objective == Objective::Strong {
        cfg.encoder.unmatched_bin = false;
    }
    cfg.validate()?;
    let data = TrainData::from_pairs(load_split(&a.data, Split::Train)?);
    if data.positives.is_empty() {
        return Err(Error::Contract(format!("{} has no positive training pairs", a.data.display())));
    }

    let ck_dir = a.out.join(CHECKPOINT_DIR);
    let log_path = a.out.join(TRAIN_LOG);
    create_dir(&ck_dir)?;
    create_dir(log_path.parent().expect("log has a parent"))?;
    let mut trainer = match &a.resume {
        None => Trainer::new(cfg.train_config(), cfg.encoder.clone())?,
        Some(path) => {
            let path = match path {
                Some(p) => p.clone(),
                None => latest_checkpoint(&ck_dir)?.ok_or_else(|| {
                    Error::Contract(format!("--resume: no checkpoint in {}", ck_dir.display()))
                })?,
            };
            let ck = Checkpoint::load(&path)?;
            eprintln!("resuming from {} at step {}", path.display(), ck.step);
            Trainer::from_checkpoint(cfg.train_config(), cfg.encoder.clone(), &ck)?
        }
    };
    let steps = cfg.train.steps as u64;
    if trainer.step > steps {
        return Err(Error::Contract(format!(
            "checkpoint is at step {} beyond train.steps = {steps}",
            trainer.step
        )));
    }
    write_file(&a.out.join(CONFIG_ECHO), cfg.to_text())?;
    let prefix = log_prefix(&log_path, trainer.step)?;
    let file = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut log = BufWriter::new(file);
    log.write_all(prefix.as_bytes()).map_err(|e| Error::io(&log_path, e))?;

    let every = cfg.checkpoint_every as u64;
    let progress = (steps / 20).max(1);
    let start = Instant::now();
    while trainer.step < steps {
        let r = trainer.train_step(&data)?;
        let t = trainer.step;
        writeln!(log, "{}", r.csv_row(t as usize)).map_err(|e| Error::io(&log_path, e))?;
        if (every > 0 && t % every == 0) || t == steps {
            log.flush().map_err(|e| Error::io(&log_path, e))?;
            trainer.checkpoint().save(ck_dir.join(step_checkpoint_name(t)))?;
        }
        if t % progress == 0 || t == steps {
            eprintln!("step {t}/{steps} total {:.4} ({:.1}s)", r.total, start.elapsed().as_secs_f64());
        }
    }
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    trainer.checkpoint().save(ck_dir.join(FINAL_CHECKPOINT))?;
    println!("{}", ck_dir.join(FINAL_CHECKPOINT).display());
    Ok(ExitCode::SUCCESS)
}

/// Explicit `--config`, else the echo of the run that produced `checkpoint`,
/// else `PWCONFIG` or the defaults.
fn eval_config(explicit: Option<&Path>, checkpoint: &Path) -> Result<ExperimentConfig> {
    if explicit.is_some() {
        return ExperimentConfig::resolve(explicit);
    }
    let echo = checkpoint
        .parent()
        .and_then(Path::parent)
        .map(|d| d.join(CONFIG_ECHO))
        .filter(|p| p.is_file());
    match echo {
        Some(p) => ExperimentConfig::load(p),
        None => ExperimentConfig::resolve(None),
    }
}

fn checkpoint_label(path: &Path) -> String {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("checkpoint");
    match path.parent().and_then(Path::parent).and_then(Path::file_name).and_then(|s| s.to_str()) {
        Some(run) => format!("{run}/{stem}"),
        None => stem.to_string(),
    }
}

pub fn eval(a: &EvalArgs) -> Result<ExitCode> {
    let cfg = eval_config(a.config.as_deref(), &a.checkpoint[0])?;
    let split = match &a.split {
        Some(s) => s.parse().map_err(Error::Config)?,
        None => cfg.eval_split,
    };
    let (mut positives, mut negatives) = (Vec::new(), Vec::new());
    for p in load_split(&a.data, split)? {
        match p.label {
            Label::Positive => positives.push(p),
            Label::Negative => negatives.push(p),
        }
    }
    let mut rows: Vec<MetricRow> = Vec::new();
    let mut curves: Vec<Curve> = Vec::new();
    let several = a.checkpoint.len() > 1;
    for path in &a.checkpoint {
        let ck = Checkpoint::load(path)?;
        let trainer = Trainer::from_checkpoint(cfg.train_config(), cfg.encoder.clone(), &ck)?;
        let label = checkpoint_label(path);
        let e = evaluate(&trainer.enc, &positives, &negatives, &cfg.eval_config(), &label)?;
        for c in e.curves {
            let label = if several { format!("{label} {}", c.label) } else { c.label };
            curves.push(Curve { label, ..c });
        }
        rows.extend(e.rows);
    }
    let out = a.out.join(EVAL_DIR);
    report(&rows, &curves, &out)?;
    for r in &rows {
        let alpha = r.alpha.map(|v| format!("@{v}")).unwrap_or_default();
        println!("{:<24} {:<28} {:.4}", r.checkpoint, format!("{}{alpha}", r.metric), r.value);
    }
    println!("{}", out.join(METRICS_CSV).display());
    println!("{}", out.join(CURVES_SVG).display());
    Ok(ExitCode::SUCCESS)
}

pub fn gradcheck(a: &GradcheckArgs) -> Result<ExitCode> {
    let cfg = ExperimentConfig::resolve(a.config.as_deref())?;
    let seed = a.seed.unwrap_or(cfg.train.seed);
    let start = Instant::now();
    let outcomes = gradcheck_suite(seed)?;
    let mut failed = 0;
    for o in &outcomes {
        let kind = match o.kind {
            CheckKind::Primitive => "op",
            CheckKind::Composite => "loss",
        };
        let verdict = if o.passed() { "pass" } else { "FAIL" };
        failed += !o.passed() as usize;
        println!(
            "{kind:<5} {:<26} max_rel_error {:.3e}  tolerance {:.0e}  {verdict}",
            o.name, o.max_rel_error, o.tolerance
        );
    }
    println!(
        "{} checks, {failed} failed, {:.2}s",
        outcomes.len(),
        start.elapsed().as_secs_f64()
    );
    Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

/// Field rendered as colour: normalized x, normalized y, validity.
fn field_ppm(w: &DenseWarp) -> Image {
    let (sx, sy) = ((w.width() - 1) as f64, (w.height() - 1) as f64);
    Image::from_fn(w.width(), w.height(), 3, |x, y, c| {
        let p = w.at(x, y);
        match c {
            0 => (p[0] / sx) as f32,
            1 => (p[1] / sy) as f32,
            _ => w.is_valid(x, y) as u8 as f32,
        }
    })
}

/// Images placed side by side in rows of `cols`, separated by 2-pixel gaps.
fn tile(rows: &[Vec<Image>]) -> Image {
    let (w, h) = (rows[0][0].width(), rows[0][0].height());
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let gap = 2;
    let (tw, th) = (cols * (w + gap) - gap, rows.len() * (h + gap) - gap);
    let mut out = Image::from_fn(tw, th, 3, |_, _, _| 1.0);
    for (r, row) in rows.iter().enumerate() {
        for (c, img) in row.iter().enumerate() {
            for y in 0..h {
                for x in 0..w {
                    for ch in 0..3 {
                        out.set(c * (w + gap) + x, r * (h + gap) + y, ch, img.get(x, y, ch.min(img.channels() - 1)));
                    }
                }
            }
        }
    }
    out
}

pub fn sample_warps(a: &SampleWarpsArgs) -> Result<ExitCode> {
    let cfg = ExperimentConfig::resolve(a.config.as_deref())?;
    if a.n == 0 {
        return Err(Error::Parameter("--n must be at least 1".into()));
    }
    let seed = a.seed.unwrap_or(cfg.train.seed);
    create_dir(&a.out)?;
    let ds = Dataset::new(cfg.data.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut grid = Vec::with_capacity(a.n);
    for i in 0..a.n {
        let img = ds.pair(i % ds.len())?.image_a;
        let s = sample_warp_detailed(&mut rng, &cfg.train.warp, img.width(), img.height())?;
        let warped = warp_image(&img, &s.field)?;
        let field = field_ppm(&s.field);
        s.field.to_image().write_pwim(a.out.join(format!("warp_{i:03}.pwim")))?;
        field.write_ppm(a.out.join(format!("warp_{i:03}_field.ppm")))?;
        warped.write_ppm(a.out.join(format!("warp_{i:03}_warped.ppm")))?;
        println!(
            "warp_{i:03} {:?}{} valid {:.2} retries {}",
            s.kind,
            if s.flipped { " flipped" } else { "" },
            s.field.valid_fraction(),
            s.retries
        );
        grid.push(vec![img, warped, field]);
    }
    tile(&grid).write_ppm(a.out.join("grid.ppm"))?;
    println!("{}", a.out.join("grid.ppm").display());
    Ok(ExitCode::SUCCESS)
}
