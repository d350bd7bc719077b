use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use threadfit::benchmark::{load_suite, run_benchmark, write_suite, BenchmarkSettings, DEFAULT_GOALS};
use threadfit::grasp::{direct_plan, plan, simulate_grasp};
use threadfit::reconstruct::reconstruct;
use threadfit::scene::{
    plot_csv, to_json, PlanRecord, ResultDocument, ScenarioTag, SceneFile, SimulationRecord,
    ToolConfig,
};
use threadfit::suite;
use threadfit::Error;

const PLOT_SAMPLES: usize = 200;

#[derive(Parser)]
#[command(name = "threadfit", version, about = "Reconstruct thin threads from stereo points and plan grasps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a spline to a scene and write a result document.
    Reconstruct {
        scene: PathBuf,
        #[command(flatten)]
        common: Common,
        /// Plot CSV path; defaults to the output path with a `.csv` extension.
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Plan a capture-slide-grasp to a goal parameter and append it.
    Plan {
        result: PathBuf,
        #[arg(long)]
        goal: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Replay every plan in a result document against its ground truth.
    Simulate {
        result: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Direct versus capture-slide-grasp trials over a suite of scenes.
    Benchmark {
        /// Directory of scene files; the built-in suite when omitted.
        suite_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seeds: usize,
        #[arg(long, default_value_t = DEFAULT_GOALS)]
        goals: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Write synthetic scenes: the whole default suite into a directory, or
    /// one scenario into a file.
    Synth {
        #[arg(long, value_parser = parse_tag)]
        scenario: Option<ScenarioTag>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    control_points: Option<usize>,
    #[arg(long)]
    slide_prob: Option<f64>,
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long)]
    quad_order: Option<usize>,
}

impl Common {
    /// Defaults, then the config file, then flags.
    fn config(&self, base: Option<ToolConfig>) -> Result<ToolConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => ToolConfig::load(path)?,
            None => base.unwrap_or_default(),
        };
        if let Some(v) = self.max_iters {
            cfg.reconstruct.max_iters = v;
        }
        if let Some(v) = self.control_points {
            cfg.reconstruct.control_points = v;
        }
        if let Some(v) = self.quad_order {
            cfg.reconstruct.quad_order = v;
        }
        if let Some(v) = self.slide_prob {
            cfg.grasp.slide_prob = v;
        }
        if let Some(v) = self.grid {
            cfg.grasp.grid_size = v;
        }
        cfg.grasp.validate()?;
        Ok(cfg)
    }
}

fn parse_tag(s: &str) -> Result<ScenarioTag, String> {
    ScenarioTag::ALL
        .into_iter()
        .find(|t| t.name().eq_ignore_ascii_case(s))
        .ok_or_else(|| format!("unknown scenario `{s}`"))
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Error> {
    match out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            std::fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_reconstruct(scene_path: &Path, common: &Common, plot: Option<&Path>) -> Result<(), Error> {
    let mut scene = SceneFile::load(scene_path)?;
    if let Some(seed) = common.seed {
        scene = scene.reseeded(seed)?;
    }
    let cfg = common.config(None)?;
    let rel = cfg.reliability.clone().unwrap_or_else(|| scene.reliability.clone());
    let result = reconstruct(
        &scene.observations()?,
        &scene.camera,
        &rel,
        &cfg.reconstruct,
        &cfg.solver,
    )?;
    let csv = plot_csv(&result, PLOT_SAMPLES, &cfg.grasp);
    let doc = ResultDocument::new(&scene, &cfg, result);
    emit(common.out.as_deref(), &doc.to_json())?;
    let plot = plot
        .map(Path::to_path_buf)
        .or_else(|| common.out.as_ref().map(|p| p.with_extension("csv")));
    if let Some(p) = plot {
        emit(Some(&p), &csv)?;
    }
    let r = &doc.reconstruction;
    eprintln!(
        "iterations={} speed_cv={:.3e} length={:.6} max_violation={:.3e} widenings={}",
        r.iterations,
        r.speed_cv,
        r.total_length,
        r.max_violation(),
        r.widenings
    );
    Ok(())
}

fn cmd_plan(result_path: &Path, goal: f64, common: &Common) -> Result<(), Error> {
    let mut doc = ResultDocument::load(result_path)?;
    let cfg = common.config(Some(doc.config.clone()))?;
    let csg = plan(&doc.reconstruction, goal, &cfg.grasp)?;
    let direct = direct_plan(&doc.reconstruction, goal, &cfg.grasp)?;
    println!(
        "goal={} capture={} waypoints={} success_probability={:.6} direct_probability={:.6}",
        csg.goal_param,
        csg.capture_param,
        csg.waypoints(),
        csg.success_probability,
        direct.success_probability
    );
    doc.config.grasp = cfg.grasp;
    doc.plans.push(PlanRecord { goal, csg, direct });
    let out = common.out.as_deref().unwrap_or(result_path);
    emit(Some(out), &doc.to_json())
}

fn cmd_simulate(result_path: &Path, common: &Common) -> Result<(), Error> {
    let mut doc = ResultDocument::load(result_path)?;
    let cfg = common.config(Some(doc.config.clone()))?;
    let truth = doc
        .ground_truth
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter("result document has no ground truth".into()))?
        .to_spline()
        .map(threadfit::observation::synth::GroundTruth::new)?;
    if doc.plans.is_empty() {
        return Err(Error::InvalidParameter("result document has no plans".into()));
    }
    doc.simulations = doc
        .plans
        .iter()
        .map(|p| SimulationRecord {
            goal: p.goal,
            csg: simulate_grasp(&p.csg, &truth, &cfg.grasp),
            direct: simulate_grasp(&p.direct, &truth, &cfg.grasp),
        })
        .collect();
    for s in &doc.simulations {
        println!("goal={} csg={:?} direct={:?}", s.goal, s.csg, s.direct);
    }
    let out = common.out.as_deref().unwrap_or(result_path);
    emit(Some(out), &doc.to_json())
}

fn cmd_benchmark(
    suite_dir: Option<&Path>,
    seeds: usize,
    goals: usize,
    common: &Common,
) -> Result<(), Error> {
    let base_seed = common.seed.unwrap_or(0);
    let scenes = match suite_dir {
        Some(dir) => load_suite(dir)?
            .into_iter()
            .map(|s| match &s.synthesis {
                Some(syn) if common.seed.is_some() => s.reseeded(syn.seed.wrapping_add(base_seed)),
                _ => Ok(s),
            })
            .collect::<Result<Vec<_>, _>>()?,
        None => suite::default_suite(base_seed)?,
    };
    let settings = BenchmarkSettings {
        seeds,
        goals,
        config: common.config(None)?,
    };
    let report = run_benchmark(&scenes, &settings);
    for f in &report.failures {
        eprintln!("run failed: scene={} seed={} error={} ({})", f.scene, f.seed, f.code, f.message);
    }
    print!("{}", report.table());
    if let Some(out) = &common.out {
        emit(Some(out), &to_json(&report))?;
    }
    Ok(())
}

fn cmd_synth(scenario: Option<ScenarioTag>, common: &Common) -> Result<(), Error> {
    let seed = common.seed.unwrap_or(0);
    match scenario {
        Some(tag) => emit(common.out.as_deref(), &suite::scenario(tag, seed)?.to_json()),
        None => {
            let dir = common
                .out
                .as_deref()
                .ok_or_else(|| Error::InvalidParameter("--out directory required".into()))?;
            write_suite(dir, &suite::default_suite(seed)?)
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InfeasibleAfterRetries { .. } => 3,
        e if e.is_input_error() => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Reconstruct { scene, common, plot } => cmd_reconstruct(scene, common, plot.as_deref()),
        Command::Plan { result, goal, common } => cmd_plan(result, *goal, common),
        Command::Simulate { result, common } => cmd_simulate(result, common),
        Command::Benchmark {
            suite_dir,
            seeds,
            goals,
            common,
        } => cmd_benchmark(suite_dir.as_deref(), *seeds, *goals, common),
        Command::Synth { scenario, common } => cmd_synth(*scenario, common),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let report = serde_json::json!({
                "error": e.code(),
                "message": e.to_string(),
            });
            eprintln!("{report}");
            ExitCode::from(exit_code(&e))
        }
    }
}
