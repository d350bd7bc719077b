//! Direct versus capture-slide-grasp trials over a scene suite.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grasp::{direct_plan, plan, simulate_grasp, GraspOutcome};
use crate::reconstruct::reconstruct;
use crate::scene::{tool_version, SceneFile, ToolConfig, SCHEMA_VERSION};

pub const DEFAULT_GOALS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSettings {
    pub seeds: usize,
    pub goals: usize,
    pub config: ToolConfig,
}

impl Default for BenchmarkSettings {
    fn default() -> Self {
        Self {
            seeds: 1,
            goals: DEFAULT_GOALS,
            config: ToolConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeCounts {
    pub success: usize,
    pub capture_miss: usize,
    pub slip: usize,
}

impl OutcomeCounts {
    fn record(&mut self, o: GraspOutcome) {
        match o {
            GraspOutcome::Success => self.success += 1,
            GraspOutcome::CaptureMiss => self.capture_miss += 1,
            GraspOutcome::SlipDuringSlide => self.slip += 1,
        }
    }

    fn add(&mut self, other: &Self) {
        self.success += other.success;
        self.capture_miss += other.capture_miss;
        self.slip += other.slip;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRow {
    pub scenario: String,
    pub runs: usize,
    pub failed_runs: usize,
    pub trials: usize,
    pub direct: OutcomeCounts,
    pub csg: OutcomeCounts,
    /// Trials where the planner chose to slide.
    pub csg_slides: usize,
}

impl ScenarioRow {
    pub fn direct_rate(&self) -> f64 {
        rate(self.direct.success, self.trials)
    }

    pub fn csg_rate(&self) -> f64 {
        rate(self.csg.success, self.trials)
    }

    fn add(&mut self, other: &Self) {
        self.runs += other.runs;
        self.failed_runs += other.failed_runs;
        self.trials += other.trials;
        self.direct.add(&other.direct);
        self.csg.add(&other.csg);
        self.csg_slides += other.csg_slides;
    }
}

fn rate(k: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        k as f64 / n as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub scene: String,
    pub seed: u64,
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub schema_version: u32,
    pub tool_version: String,
    pub settings: BenchmarkSettings,
    pub rows: Vec<ScenarioRow>,
    pub total: ScenarioRow,
    pub failures: Vec<RunFailure>,
}

/// Evenly spaced goal parameters including both ends.
pub fn goal_params(goals: usize) -> Vec<f64> {
    match goals {
        0 => vec![],
        1 => vec![0.5],
        g => (0..g).map(|i| i as f64 / (g - 1) as f64).collect(),
    }
}

struct Job<'a> {
    scene: &'a SceneFile,
    seed: u64,
}

fn run_job(job: &Job, settings: &BenchmarkSettings) -> Result<ScenarioRow> {
    let cfg = &settings.config;
    let scene = job.scene.reseeded(job.seed)?;
    let truth = scene
        .truth()?
        .ok_or_else(|| Error::InvalidParameter("scene has no ground truth".into()))?;
    let rel = cfg.reliability.clone().unwrap_or_else(|| scene.reliability.clone());
    let result = reconstruct(
        &scene.observations()?,
        &scene.camera,
        &rel,
        &cfg.reconstruct,
        &cfg.solver,
    )?;
    let mut row = ScenarioRow {
        runs: 1,
        ..Default::default()
    };
    for goal in goal_params(settings.goals) {
        let csg = plan(&result, goal, &cfg.grasp)?;
        let direct = direct_plan(&result, goal, &cfg.grasp)?;
        row.trials += 1;
        row.csg_slides += usize::from(!csg.is_direct());
        row.csg.record(simulate_grasp(&csg, &truth, &cfg.grasp));
        row.direct.record(simulate_grasp(&direct, &truth, &cfg.grasp));
    }
    Ok(row)
}

fn scenario_name(scene: &SceneFile) -> String {
    scene
        .metadata
        .tag
        .map(|t| t.name().to_string())
        .unwrap_or_else(|| "Untagged".to_string())
}

/// Runs every scene under `settings.seeds` noise draws. Scenes without a
/// synthesis recipe run once. Results do not depend on thread scheduling.
pub fn run_benchmark(scenes: &[SceneFile], settings: &BenchmarkSettings) -> BenchmarkReport {
    let mut jobs = Vec::new();
    for scene in scenes {
        match &scene.synthesis {
            Some(syn) => jobs.extend((0..settings.seeds as u64).map(|k| Job {
                scene,
                seed: syn.seed.wrapping_add(k),
            })),
            None => jobs.push(Job { scene, seed: 0 }),
        }
    }
    let outcomes: Vec<Result<ScenarioRow>> =
        jobs.par_iter().map(|job| run_job(job, settings)).collect();

    let order = |name: &str| {
        crate::scene::ScenarioTag::ALL
            .iter()
            .position(|t| t.name() == name)
            .unwrap_or(usize::MAX)
    };
    let mut rows: BTreeMap<(usize, String), ScenarioRow> = BTreeMap::new();
    let mut failures = Vec::new();
    for (job, outcome) in jobs.iter().zip(outcomes) {
        let name = scenario_name(job.scene);
        let entry = rows
            .entry((order(&name), name.clone()))
            .or_insert_with(|| ScenarioRow {
                scenario: name,
                ..Default::default()
            });
        match outcome {
            Ok(row) => entry.add(&row),
            Err(e) => {
                entry.runs += 1;
                entry.failed_runs += 1;
                failures.push(RunFailure {
                    scene: job.scene.metadata.name.clone(),
                    seed: job.seed,
                    code: e.code().to_string(),
                    message: e.to_string(),
                });
            }
        }
    }
    let rows: Vec<ScenarioRow> = rows.into_values().collect();
    let mut total = ScenarioRow {
        scenario: "Total".into(),
        ..Default::default()
    };
    for r in &rows {
        total.add(r);
    }
    BenchmarkReport {
        schema_version: SCHEMA_VERSION,
        tool_version: tool_version(),
        settings: settings.clone(),
        rows,
        total,
        failures,
    }
}

impl BenchmarkReport {
    pub fn row(&self, scenario: &str) -> Option<&ScenarioRow> {
        self.rows.iter().find(|r| r.scenario == scenario)
    }

    /// Success-rate table, one line per scenario plus the total.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<12} {:>6} {:>7} {:>10} {:>10} {:>7}",
            "scenario", "runs", "trials", "direct", "csg", "slides"
        );
        for r in self.rows.iter().chain(std::iter::once(&self.total)) {
            let _ = writeln!(
                out,
                "{:<12} {:>6} {:>7} {:>9.1}% {:>9.1}% {:>7}",
                r.scenario,
                r.runs - r.failed_runs,
                r.trials,
                100.0 * r.direct_rate(),
                100.0 * r.csg_rate(),
                r.csg_slides
            );
        }
        out
    }
}

/// Scene files (`*.scene` or `*.json`) in `dir`, sorted by file name.
pub fn load_suite(dir: &Path) -> Result<Vec<SceneFile>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|x| x.to_str()),
                Some("scene") | Some("json")
            )
        })
        .collect();
    paths.sort();
    paths.iter().map(|p| SceneFile::load(p)).collect()
}

/// Writes `scenes` into `dir` as `<name>.scene`.
pub fn write_suite(dir: &Path, scenes: &[SceneFile]) -> Result<()> {
    for s in scenes {
        s.save(&dir.join(format!("{}.scene", s.metadata.name)))?;
    }
    Ok(())
}
