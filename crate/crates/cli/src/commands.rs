use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use serde::Serialize;
use serde_json::{json, Value};

use cardioview::agent::{evaluate_observed, train_to_writer, QNetwork};
use cardioview::anatomy::{extract_features, fit_priors, score_view, PriorSet, ViewDefinition};
use cardioview::config::RunConfig;
use cardioview::env::{EnvSettings, StepRecord};
use cardioview::imaging::{load_mask, render_pgm, rotate_pose, save_mask, slice_volume, Axis};
use cardioview::nncore::{load_weights, save_weights};
use cardioview::phantom::{generate_phantom, load_volume, save_volume, LabeledVolume, PhantomSpec};
use cardioview::srg::{self, toy_fit, SrgConfig, SrgModule, SrgParams, ToyConfig, ToyTask};
use cardioview::{Error, Result};

use crate::{Command, Common};

/// File the effective configuration is echoed to in every output directory.
pub const RUN_CONFIG: &str = "run_config.json";
pub const METRICS: &str = "metrics.jsonl";

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NumericFault(_) => 2,
        _ => 1,
    }
}

pub fn run(cmd: Command) -> Result<ExitCode> {
    match cmd {
        Command::GenPhantom { common, out, count } => gen_phantom(&common, &out, count),
        Command::FitPriors { common, views, out } => fit_priors_cmd(&common, &views, &out),
        Command::ScoreView {
            common,
            mask,
            priors,
        } => score_view_cmd(&common, &mask, &priors),
        Command::Render {
            common,
            volume,
            out,
            rx,
            ry,
            rz,
            pgm,
        } => render(&common, &volume, &out, [rx, ry, rz], pgm.as_deref()),
        Command::Train {
            common,
            phantoms,
            priors,
            out,
        } => train_cmd(&common, phantoms, priors, &out),
        Command::Eval {
            common,
            phantoms,
            volume,
            priors,
            weights,
            episodes,
            out,
            log,
        } => eval_cmd(
            &common,
            phantoms,
            volume,
            priors,
            &weights,
            episodes,
            out.as_deref(),
            log.as_deref(),
        ),
        Command::SrgCheck {
            common,
            out,
            toy_steps,
        } => srg_check(&common, out.as_deref(), toy_steps),
    }
}

/// Seed of the `i`-th item derived from a base seed.
fn derive(base: u64, i: u64) -> u64 {
    base.wrapping_add(i)
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
        cfg.train.seed = s;
        cfg.phantom.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_json(v: &impl Serialize) -> Result<ExitCode> {
    println!("{}", serde_json::to_string(v)?);
    Ok(ExitCode::SUCCESS)
}

fn parent_dir(p: &Path) -> PathBuf {
    match p.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

/// Creates the parent directory of an output file.
fn prepare(p: &Path) -> Result<&Path> {
    fs::create_dir_all(parent_dir(p))?;
    Ok(p)
}

fn echo_config(cfg: &RunConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    cfg.save(&dir.join(RUN_CONFIG))
}

/// Header files (`*.json`) of a directory in name order, skipping echoed configs.
fn headers_in(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    v.retain(|p| {
        p.extension().is_some_and(|e| e == "json") && p.file_name().is_some_and(|n| n != RUN_CONFIG)
    });
    v.sort();
    if v.is_empty() {
        return Err(Error::Contract(format!(
            "no .json headers in {}",
            dir.display()
        )));
    }
    Ok(v)
}

fn load_volumes(dir: &Path) -> Result<Vec<Arc<LabeledVolume>>> {
    headers_in(dir)?
        .iter()
        .map(|p| load_volume(p).map(Arc::new))
        .collect()
}

fn require(p: Option<PathBuf>, what: &str) -> Result<PathBuf> {
    p.ok_or_else(|| {
        Error::Contract(format!(
            "--{what} is required (flag or config paths.{what})"
        ))
    })
}

fn gen_phantom(common: &Common, out: &Path, count: usize) -> Result<ExitCode> {
    let cfg = load_config(common)?;
    fs::create_dir_all(out)?;
    let mut written = Vec::with_capacity(count);
    for i in 0..count as u64 {
        let seed = derive(cfg.phantom.seed, i);
        let spec = PhantomSpec {
            seed,
            ..cfg.phantom.clone()
        };
        let v = generate_phantom(&spec)?;
        let path = out.join(format!("phantom_{seed:04}.json"));
        save_volume(&v, &path)?;
        log::info!("wrote {}", path.display());
        written.push(path);
    }
    echo_config(&cfg, out)?;
    print_json(&json!({ "written": written }))
}

fn fit_priors_cmd(common: &Common, views: &Path, out: &Path) -> Result<ExitCode> {
    let cfg = load_config(common)?;
    let view = ViewDefinition::a4c();
    let mut ensemble = Vec::new();
    for path in headers_in(views)? {
        let header: Value = serde_json::from_slice(&fs::read(&path)?)?;
        // Volumes are cut at their recorded standard pose; masks are used as they are.
        let mask = if header.get("dims").is_some() {
            let v = load_volume(&path)?;
            slice_volume(&v, v.standard_pose(), &cfg.image)?
        } else if header.get("width").is_some() {
            load_mask(&path)?
        } else {
            return Err(Error::Format(format!(
                "{} is neither a volume nor a mask header",
                path.display()
            )));
        };
        ensemble.push(extract_features(&mask, &view));
    }
    let priors = fit_priors(&ensemble)?;
    priors.save(prepare(out)?)?;
    echo_config(&cfg, &parent_dir(out))?;
    print_json(&json!({ "ensemble_size": priors.ensemble_size, "out": out }))
}

fn score_view_cmd(common: &Common, mask: &Path, priors: &Path) -> Result<ExitCode> {
    let cfg = load_config(common)?;
    let priors = PriorSet::load(priors)?;
    let f = extract_features(&load_mask(mask)?, &ViewDefinition::a4c());
    print_json(&score_view(&f, &priors, &cfg.weights))
}

fn render(
    common: &Common,
    volume: &Path,
    out: &Path,
    angles: [f64; 3],
    pgm: Option<&Path>,
) -> Result<ExitCode> {
    let cfg = load_config(common)?;
    let v = load_volume(volume)?;
    let mut pose = v.standard_pose().clone();
    for (axis, deg) in Axis::ALL.into_iter().zip(angles) {
        pose = rotate_pose(&pose, axis, deg);
    }
    let mask = slice_volume(&v, &pose, &cfg.image)?;
    save_mask(&mask, prepare(out)?)?;
    if let Some(p) = pgm {
        render_pgm(&mask, prepare(p)?)?;
    }
    let f = extract_features(&mask, &ViewDefinition::a4c());
    let visible: Vec<&str> = cardioview::phantom::EntityLabel::ALL
        .iter()
        .filter(|&&e| f.is_visible(e))
        .map(|e| e.name())
        .collect();
    print_json(&json!({ "out": out, "visible": visible, "phi_all": f.phi_all }))
}

fn env_settings(cfg: &RunConfig, priors: &Path) -> Result<EnvSettings> {
    let mut s = EnvSettings::new(
        PriorSet::load(priors)?,
        cfg.weights.clone(),
        cfg.image.clone(),
        cfg.episode.clone(),
    );
    s.view = ViewDefinition::a4c();
    Ok(s)
}

fn train_cmd(
    common: &Common,
    phantoms: Option<PathBuf>,
    priors: Option<PathBuf>,
    out: &Path,
) -> Result<ExitCode> {
    let mut cfg = load_config(common)?;
    let phantoms = require(phantoms.or(cfg.paths.phantoms.clone()), "phantoms")?;
    let priors = require(priors.or(cfg.paths.priors.clone()), "priors")?;
    cfg.paths.phantoms = Some(phantoms.clone());
    cfg.paths.priors = Some(priors.clone());
    cfg.paths.out = Some(out.to_path_buf());
    let dir = parent_dir(out);
    echo_config(&cfg, &dir)?;

    let volumes = load_volumes(&phantoms)?;
    let settings = env_settings(&cfg, &priors)?;
    let metrics_path = dir.join(METRICS);
    let mut metrics = BufWriter::new(File::create(&metrics_path)?);
    let outcome = train_to_writer(settings, volumes, &cfg.train, &mut metrics)?;
    metrics.flush()?;
    save_weights(prepare(out)?, &outcome.weights.named())?;
    let last = outcome.metrics.last();
    print_json(&json!({
        "weights": out,
        "weights_step": outcome.weights_step,
        "metrics": metrics_path,
        "steps": cfg.train.total_steps,
        "last_eval_success": last.and_then(|m| m.eval_success),
        "last_eval_mean_steps": last.and_then(|m| m.eval_mean_steps),
    }))
}

#[allow(clippy::too_many_arguments)]
fn eval_cmd(
    common: &Common,
    phantoms: Option<PathBuf>,
    volume: Option<PathBuf>,
    priors: Option<PathBuf>,
    weights: &Path,
    episodes: usize,
    out: Option<&Path>,
    log: Option<&Path>,
) -> Result<ExitCode> {
    let mut cfg = load_config(common)?;
    let priors = require(priors.or(cfg.paths.priors.clone()), "priors")?;
    let volumes = match (volume, phantoms.or(cfg.paths.phantoms.clone())) {
        (Some(v), _) => vec![Arc::new(load_volume(&v)?)],
        (None, Some(d)) => load_volumes(&d)?,
        (None, None) => return Err(Error::Contract("--phantoms or --volume is required".into())),
    };
    cfg.paths.priors = Some(priors.clone());
    let q = QNetwork::from_named(load_weights(weights)?)?;
    let settings = env_settings(&cfg, &priors)?;

    let mut log_out = log
        .map(|p| prepare(p).and_then(|p| Ok(File::create(p)?)))
        .transpose()?
        .map(BufWriter::new);
    let report = evaluate_observed(
        &q,
        settings,
        &volumes,
        episodes,
        cfg.seed,
        |ep, rec: &StepRecord| {
            if let Some(w) = log_out.as_mut() {
                let mut line = serde_json::to_value(rec)?;
                line["episode"] = json!(ep);
                serde_json::to_writer(&mut *w, &line)?;
                w.write_all(b"\n")?;
            }
            Ok(())
        },
    )?;
    if let Some(mut w) = log_out {
        w.flush()?;
    }
    if let Some(p) = out {
        fs::write(prepare(p)?, serde_json::to_string_pretty(&report)? + "\n")?;
        echo_config(&cfg, &parent_dir(p))?;
    }
    print_json(&report)
}

#[derive(Serialize)]
struct GradEntry {
    seed: u64,
    max_rel_error: f64,
    coords_checked: usize,
    passed: bool,
}

fn srg_check(common: &Common, out: Option<&Path>, toy_steps: usize) -> Result<ExitCode> {
    let cfg = load_config(common)?;
    let small = SrgConfig {
        channels: 4,
        height: 8,
        width: 8,
        pooled_height: 4,
        pooled_width: 4,
        heads: 2,
        ..Default::default()
    };

    let mut grads = Vec::new();
    for s in 0..3 {
        let seed = derive(cfg.seed, s);
        let rep = srg::gradient_check(&small, seed)?;
        grads.push(GradEntry {
            seed,
            max_rel_error: rep.max_rel_error,
            coords_checked: rep.coords_checked,
            passed: rep.passed(1e-4) && rep.coords_checked == rep.coords_total,
        });
    }

    let shapes = [
        (4, 8, 8, 4, 4, 2),
        (2, 5, 7, 2, 3, 1),
        (6, 12, 9, 3, 3, 3),
        (8, 16, 16, 4, 4, 4),
        (4, 3, 10, 3, 5, 2),
    ];
    let mut shapes_ok = true;
    let mut worst_row = 0.0f64;
    for (i, &(c, h, w, ph, pw, heads)) in shapes.iter().enumerate() {
        let sc = SrgConfig {
            channels: c,
            height: h,
            width: w,
            pooled_height: ph,
            pooled_width: pw,
            heads,
            ..Default::default()
        };
        let seed = derive(cfg.seed, i as u64);
        let mut m = SrgModule::new(sc.clone(), SrgParams::init(&sc, seed)?)?;
        let x = cardioview::nncore::Tensor::uniform(
            &[c, h, w],
            1.0,
            &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed),
        );
        let y = m.forward(&x)?;
        shapes_ok &= y.shape() == x.shape();
        let a = m.cache().expect("cached by forward").attention();
        for row in a.data().chunks(sc.nodes()) {
            worst_row = worst_row.max((row.iter().sum::<f64>() - 1.0).abs());
        }
    }

    let toy_cfg = ToyConfig {
        steps: toy_steps,
        seed: cfg.seed,
        ..Default::default()
    };
    let toy = toy_fit(&toy_cfg)?;
    let control = toy_fit(&ToyConfig {
        task: ToyTask::RandomLabel,
        ..toy_cfg
    })?;
    let toy_ok = !toy.diverged && toy.reduction >= 0.9 && toy.final_loss < 0.1 * control.final_loss;

    let passed = grads.iter().all(|g| g.passed) && shapes_ok && worst_row <= 1e-12 && toy_ok;
    let report = json!({
        "passed": passed,
        "gradient": grads,
        "shapes_preserved": shapes_ok,
        "max_attention_row_error": worst_row,
        "toy": { "passed": toy_ok, "offset_copy": toy, "random_label_control": control },
    });
    if let Some(p) = out {
        fs::write(prepare(p)?, serde_json::to_string_pretty(&report)? + "\n")?;
        echo_config(&cfg, &parent_dir(p))?;
    }
    print_json(&report)?;
    Ok(if passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}
