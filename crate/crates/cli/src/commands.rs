use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::json;

use poivre_core::canvas::save_raster;
use poivre_core::evalbench::{
    emit_report, evaluate, load_tasks, sweep_t, EvalConfig, EvalRun, ReportFormat,
};
use poivre_core::geometry::{Point, TargetRegion};
use poivre_core::reward::{process_reward_telescoped, process_reward_weighted, weight_bound_holds};
use poivre_core::rollout::{run_poivre_frames, Policy, PolicyFactory, RolloutConfig};
use poivre_core::task::{save_trajectories, ImageRef, PointingTask};
use poivre_core::toylab::scene::generate_task;
use poivre_core::toylab::train::initial_checkpoint;
use poivre_core::toylab::{held_out_tasks, train as train_toy, SceneConfig, ToyCheckpoint, ToyPolicyFactory};
use poivre_vlm::{EndpointConfig, VlmClient, VlmFactory};

use crate::config::RunConfig;
use crate::manifest::RunManifest;
use crate::{CliError, Flags};

const CHECKPOINT_EVERY: u64 = 50;

fn core<E: Into<poivre_core::Error>>(e: E) -> CliError {
    CliError::Core(e.into())
}

fn out_dir(flags: &Flags, sub: &str) -> PathBuf {
    flags.out.clone().unwrap_or_else(|| PathBuf::from("poivre-out").join(sub))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(core)?;
    text.push('\n');
    std::fs::write(path, text).map_err(core)
}

pub fn train(flags: &Flags) -> Result<(), CliError> {
    if flags.endpoint.is_some() || flags.model.is_some() {
        return Err(CliError::Usage(
            "train works on the toy policy only; remote endpoints are evaluation-only".into(),
        ));
    }
    if flags.checkpoint.is_some() {
        return Err(CliError::Usage("train starts from scratch; drop --checkpoint".into()));
    }
    let mut cfg = flags.resolve()?;
    // a shared config file may carry evaluation settings; train has no use for them
    let dropped_endpoint = cfg.endpoint.take().is_some();
    let dropped_checkpoint = cfg.eval.checkpoint.take().is_some();
    if dropped_endpoint || dropped_checkpoint {
        tracing::warn!("ignoring endpoint and checkpoint settings from the config file");
    }
    start(RunManifest::new("train", cfg, out_dir(flags, "train")))
}

pub fn eval(flags: &Flags) -> Result<(), CliError> {
    let cfg = flags.resolve()?;
    start(RunManifest::new("eval", cfg, out_dir(flags, "eval")))
}

pub fn sweep(flags: &Flags) -> Result<(), CliError> {
    let cfg = flags.resolve()?;
    start(RunManifest::new("sweep", cfg, out_dir(flags, "sweep")))
}

pub fn infer(flags: &Flags) -> Result<(), CliError> {
    let cfg = flags.resolve()?;
    start(RunManifest::new("infer", cfg, out_dir(flags, "infer")))
}

pub fn reward(flags: &Flags) -> Result<(), CliError> {
    let mut cfg = flags.resolve()?;
    let distances = match (&flags.distances, &flags.distances_file) {
        (Some(d), None) => d.clone(),
        (None, Some(p)) => read_distances(p)?,
        (Some(_), Some(_)) => {
            return Err(CliError::Usage("give --distances or --distances-file, not both".into()))
        }
        (None, None) => return Err(CliError::Usage("reward needs --distances or --distances-file".into())),
    };
    if flags.turns.is_none() && flags.config.is_none() {
        cfg.train.reward.turns = distances.len();
    }
    let mut manifest = RunManifest::new("reward", cfg, flags.out.clone().unwrap_or_default());
    manifest.distances = Some(distances);
    if flags.out.is_some() {
        start(manifest)
    } else {
        check(&manifest)?;
        run(&manifest)
    }
}

pub fn replay(path: &Path, out: Option<PathBuf>) -> Result<(), CliError> {
    let mut manifest = RunManifest::load(path)?;
    if let Some(o) = out {
        manifest.out_dir = o;
    }
    tracing::info!(subcommand = %manifest.subcommand, out = %manifest.out_dir.display(), "replaying");
    start(manifest)
}

/// Validates, writes the manifest, then runs.
fn start(manifest: RunManifest) -> Result<(), CliError> {
    check(&manifest)?;
    manifest.write()?;
    run(&manifest)
}

fn check(m: &RunManifest) -> Result<(), CliError> {
    let cfg = &m.config;
    match m.subcommand.as_str() {
        "train" => {
            if cfg.endpoint.is_some() {
                return Err(CliError::Usage(
                    "train works on the toy policy only; remote endpoints are evaluation-only".into(),
                ));
            }
            if cfg.eval.checkpoint.is_some() {
                return Err(CliError::Usage("train starts from scratch; drop --checkpoint".into()));
            }
            cfg.train.validate().map_err(core)?;
        }
        "eval" | "sweep" | "infer" => {
            if cfg.endpoint.is_some() && cfg.eval.checkpoint.is_some() {
                return Err(CliError::Usage("give --checkpoint or --endpoint, not both".into()));
            }
            if m.subcommand != "infer" && cfg.endpoint.is_none() && cfg.eval.checkpoint.is_none() {
                return Err(CliError::Usage(format!("{} needs --checkpoint or --endpoint", m.subcommand)));
            }
            if cfg.eval.turns < 1 {
                return Err(CliError::Usage("--turns must be at least 1".into()));
            }
            if m.subcommand == "sweep" && (cfg.eval.t_values.is_empty() || cfg.eval.t_values.contains(&0)) {
                return Err(CliError::Usage("--t-values must be a non-empty list of values >= 1".into()));
            }
            cfg.eval.format.parse::<ReportFormat>().map_err(core)?;
            if let Some(ep) = &cfg.endpoint {
                ep.validate()?;
            }
            if m.subcommand == "infer" && cfg.infer.image.is_some() && cfg.infer.query.is_none() {
                return Err(CliError::Usage("infer with --image needs --query".into()));
            }
        }
        "reward" => {
            let d = m.distances.as_deref().unwrap_or_default();
            if d.len() != cfg.train.reward.turns {
                return Err(CliError::Usage(format!(
                    "--turns {} but {} distances given",
                    cfg.train.reward.turns,
                    d.len()
                )));
            }
            cfg.train.reward.validate().map_err(core)?;
        }
        other => return Err(CliError::Config(format!("unknown subcommand {other:?} in manifest"))),
    }
    Ok(())
}

fn run(m: &RunManifest) -> Result<(), CliError> {
    match m.subcommand.as_str() {
        "train" => run_train(m),
        "eval" => run_eval(m),
        "sweep" => run_sweep(m),
        "infer" => run_infer(m),
        "reward" => run_reward(m),
        other => Err(CliError::Config(format!("unknown subcommand {other:?}"))),
    }
}

fn read_distances(path: &Path) -> Result<Vec<f64>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => core(poivre_core::Error::MissingFile(path.to_path_buf())),
        _ => core(e),
    })?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        for tok in line.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty()) {
            let v = tok.parse::<f64>().map_err(|_| {
                core(poivre_core::Error::schema(i + 1, "distances", format!("not a number: {tok:?}")))
            })?;
            out.push(v);
        }
    }
    Ok(out)
}

fn run_reward(m: &RunManifest) -> Result<(), CliError> {
    let cfg = m.config.train.reward;
    let d = m.distances.as_deref().unwrap_or_default();
    let tel = process_reward_telescoped(d, &cfg).map_err(core)?;
    let wtd = process_reward_weighted(d, &cfg).map_err(core)?;
    let diff = (tel - wtd).abs();
    println!("process_reward_telescoped {tel:.9}");
    println!("process_reward_weighted   {wtd:.9}");
    println!("difference                {diff:.3e}");
    let bound = (cfg.gamma < 1.0)
        .then(|| weight_bound_holds(cfg.turns, cfg.gamma))
        .transpose()
        .map_err(core)?;
    if let Some(b) = bound {
        println!("weight_bound_holds        {b}");
    }
    if !m.out_dir.as_os_str().is_empty() {
        write_json(
            &m.out_dir.join("reward.json"),
            &json!({
                "distances": d,
                "sigma": cfg.sigma,
                "gamma": cfg.gamma,
                "turns": cfg.turns,
                "telescoped": tel,
                "weighted": wtd,
                "difference": diff,
                "weight_bound_holds": bound,
            }),
        )?;
    }
    Ok(())
}

fn run_train(m: &RunManifest) -> Result<(), CliError> {
    let cfg = &m.config.train;
    let dir = &m.out_dir;
    std::fs::create_dir_all(dir.join("checkpoints")).map_err(core)?;
    let mut metrics = BufWriter::new(File::create(dir.join("metrics.jsonl")).map_err(core)?);
    let started = Instant::now();
    let total = cfg.grpo.iterations as u64;
    let result = train_toy(cfg, |stats, ckpt| {
        serde_json::to_writer(&mut metrics, stats)?;
        metrics.write_all(b"\n")?;
        let done = stats.iteration + 1;
        if done % CHECKPOINT_EVERY == 0 && done < total {
            ckpt.save(&dir.join("checkpoints").join(format!("iter_{done:05}.json")))?;
        }
        if done % 10 == 0 || done == total {
            tracing::info!(
                iteration = done,
                reward = format!("{:.4}", stats.mean_reward),
                d1 = format!("{:.2}", stats.mean_first_distance),
                d_final = format!("{:.2}", stats.mean_final_distance),
                kl = format!("{:.4}", stats.kl),
                "step"
            );
        }
        Ok(())
    });
    metrics.flush().map_err(core)?;
    let run = result.map_err(core)?;
    run.checkpoint.save(&dir.join("checkpoint.json")).map_err(core)?;
    let secs = started.elapsed().as_secs_f64();
    write_json(&dir.join("timing.json"), &json!({"wall_clock_secs": secs}))?;
    if let Some(last) = run.stats.last() {
        println!(
            "trained {} iterations in {secs:.1}s: reward {:.4}, d_1 {:.3}, d_T {:.3}",
            run.stats.len(),
            last.mean_reward,
            last.mean_first_distance,
            last.mean_final_distance
        );
    }
    println!("checkpoint: {}", dir.join("checkpoint.json").display());
    Ok(())
}

/// A toy checkpoint or a remote model behind one factory type.
enum AnyFactory {
    Toy(ToyPolicyFactory),
    Remote(VlmFactory),
}

impl PolicyFactory for AnyFactory {
    type Policy = Box<dyn Policy>;

    fn spawn(&self, task: &PointingTask, stream: u64) -> poivre_core::Result<Box<dyn Policy>> {
        Ok(match self {
            AnyFactory::Toy(f) => Box::new(f.spawn(task, stream)?),
            AnyFactory::Remote(f) => Box::new(f.spawn(task, stream)?),
        })
    }

    fn id(&self) -> String {
        match self {
            AnyFactory::Toy(f) => f.id(),
            AnyFactory::Remote(f) => f.id(),
        }
    }
}

struct Setup {
    factory: AnyFactory,
    /// Scene the toy policy was trained on, or the default one.
    scene: SceneConfig,
    rollout: RolloutConfig,
    parallelism: Option<usize>,
}

fn remote_client(ep: &EndpointConfig) -> Result<VlmClient, CliError> {
    let key = match &ep.api_key_env {
        Some(var) => match std::env::var(var) {
            Ok(k) => Some(k),
            Err(_) => {
                tracing::warn!("{var} is not set; sending requests without an API key");
                None
            }
        },
        None => None,
    };
    Ok(VlmClient::with_key(ep.clone(), key)?)
}

fn setup(cfg: &RunConfig) -> Result<Setup, CliError> {
    let mut rollout;
    let (factory, scene, parallelism) = if let Some(ep) = &cfg.endpoint {
        rollout = RolloutConfig::default();
        let factory = AnyFactory::Remote(VlmFactory::new(remote_client(ep)?));
        (factory, SceneConfig::default(), Some(ep.parallelism))
    } else {
        let ckpt = match &cfg.eval.checkpoint {
            Some(p) => ToyCheckpoint::load(p).map_err(core)?,
            None => {
                tracing::warn!("no checkpoint given; using the untrained toy policy");
                initial_checkpoint(&cfg.train)
            }
        };
        rollout = ckpt.rollout.clone();
        let mut f = ckpt.factory(cfg.seed).map_err(core)?;
        f.greedy = !cfg.eval.sample;
        (AnyFactory::Toy(f), ckpt.scene.clone(), None)
    };
    rollout.turns = cfg.eval.turns;
    rollout.on_parse_failure = cfg.eval.on_parse_failure;
    Ok(Setup {
        factory,
        scene,
        rollout,
        parallelism,
    })
}

fn eval_tasks(cfg: &RunConfig, scene: &SceneConfig) -> Result<(String, Vec<PointingTask>), CliError> {
    match &cfg.eval.dataset {
        Some(p) => {
            let tasks = load_tasks(p).map_err(core)?;
            if tasks.is_empty() {
                return Err(core(poivre_core::Error::invalid(format!("{} has no records", p.display()))));
            }
            let id = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "dataset".into());
            Ok((id, tasks))
        }
        None => {
            let n = cfg.eval.toy_tasks;
            Ok((format!("toy-heldout-{n}"), held_out_tasks(scene, n).map_err(core)?))
        }
    }
}

fn eval_config(cfg: &RunConfig, s: &Setup, dataset_id: String) -> EvalConfig {
    EvalConfig {
        dataset_id,
        seed: cfg.seed,
        rule: cfg.eval.rule,
        rollout: s.rollout.clone(),
        compute_w2p: cfg.eval.w2p,
        parallelism: s.parallelism,
    }
}

fn write_run(dir: &Path, suffix: &str, run: &EvalRun, format: ReportFormat) -> Result<(), CliError> {
    let ext = match format {
        ReportFormat::Json => "json",
        ReportFormat::Csv => "csv",
    };
    emit_report(&run.report, &dir.join(format!("report{suffix}.{ext}")), format).map_err(core)?;
    save_trajectories(&dir.join(format!("trajectories{suffix}.jsonl")), &run.trajectories).map_err(core)
}

fn summary_line(run: &EvalRun) -> String {
    let r = &run.report;
    let d: Vec<String> = r.mean_distance_per_turn.iter().map(|d| format!("{d:.3}")).collect();
    format!(
        "T={} tasks={} success={:.2}% (first point {:.2}%) mean d per turn [{}]",
        r.turns,
        r.outcomes.len(),
        r.success_rate,
        r.success_rate_first_point,
        d.join(", ")
    )
}

fn run_eval(m: &RunManifest) -> Result<(), CliError> {
    let cfg = &m.config;
    let s = setup(cfg)?;
    let (id, tasks) = eval_tasks(cfg, &s.scene)?;
    let format: ReportFormat = cfg.eval.format.parse().map_err(core)?;
    let run = evaluate(&s.factory, &tasks, &eval_config(cfg, &s, id)).map_err(core)?;
    write_run(&m.out_dir, "", &run, format)?;
    write_json(&m.out_dir.join("timing.json"), &run.timing)?;
    println!("{}", summary_line(&run));
    Ok(())
}

fn run_sweep(m: &RunManifest) -> Result<(), CliError> {
    let cfg = &m.config;
    let s = setup(cfg)?;
    let (id, tasks) = eval_tasks(cfg, &s.scene)?;
    let format: ReportFormat = cfg.eval.format.parse().map_err(core)?;
    let runs = sweep_t(&s.factory, &tasks, &cfg.eval.t_values, &eval_config(cfg, &s, id)).map_err(core)?;
    let mut summary = Vec::new();
    for run in &runs {
        let r = &run.report;
        write_run(&m.out_dir, &format!("_T{}", r.turns), run, format)?;
        summary.push(json!({
            "turns": r.turns,
            "success_rate": r.success_rate,
            "mean_distance_per_turn": r.mean_distance_per_turn,
            "mean_final_distance": r.mean_distance_per_turn.last(),
        }));
        println!("{}", summary_line(run));
    }
    write_json(&m.out_dir.join("sweep.json"), &summary)?;
    let timing: Vec<_> = runs.iter().map(|r| &r.timing).collect();
    write_json(&m.out_dir.join("timing.json"), &timing)?;
    Ok(())
}

fn run_infer(m: &RunManifest) -> Result<(), CliError> {
    let cfg = &m.config;
    let s = setup(cfg)?;
    let task = match (&cfg.infer.image, &cfg.infer.query) {
        (Some(image), Some(query)) => {
            // No ground truth: distances are measured to the image center.
            tracing::warn!("no target for a free image; distances are to the image center");
            let whole = TargetRegion::polygon(vec![
                Point::new(0.0, 0.0),
                Point::new(100.0, 0.0),
                Point::new(100.0, 100.0),
                Point::new(0.0, 100.0),
            ])
            .map_err(core)?;
            PointingTask::new("infer", ImageRef::Path(image.clone()), query.clone(), vec![whole])
                .map_err(core)?
        }
        _ => generate_task(&s.scene, cfg.infer.toy_seed).map_err(core)?,
    };
    let mut policy = s.factory.spawn(&task, poivre_core::seeding::stable_seed(&[cfg.seed, 0]))?;
    let out = run_poivre_frames(&mut policy, &task, &s.rollout).map_err(|e| core(e.source))?;
    for (t, frame) in out.frames.iter().enumerate() {
        save_raster(frame, m.out_dir.join(format!("I_{t}.png"))).map_err(core)?;
    }
    write_json(&m.out_dir.join("trajectory.json"), &out.trajectory)?;
    println!("query: {}", task.query());
    for (t, (pts, d)) in out.trajectory.points.iter().zip(&out.trajectory.distances).enumerate() {
        let p: Vec<String> = pts.iter().map(|p| format!("({:.2}, {:.2})", p.x, p.y)).collect();
        println!("turn {}: {} d={d:.3}", t + 1, p.join(" "));
    }
    println!("frames written to {}", m.out_dir.display());
    Ok(())
}
