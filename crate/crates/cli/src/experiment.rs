//! `run`: run directories, manifests, seed workers and curve merging.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Child, Command};
use std::thread;
use std::time::Duration;

use alqa_core::data_model::{self, DataPool};
use alqa_core::orchestrator::{self, ExperimentConfig, LearningCurve, OracleBinding, Oracle, SeedState, SimulatedOracle};
use alqa_core::Error as CoreError;
use alqa_service::service::CreateRun;
use alqa_service::{HttpQueue, HumanOracle};
use anyhow::{anyhow, bail, ensure, Context, Result};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{self, write_json};
use crate::{OracleKind, RunArgs};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CURVES_FILE: &str = "curves.csv";

/// Snapshot of one experiment run. The config never changes once written;
/// resuming with a different config or dataset is refused.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub created_at: DateTime<Utc>,
    pub config: ExperimentConfig,
    pub dataset_dir: PathBuf,
    pub dataset_hash: String,
    /// Artifact name to path relative to the run directory.
    pub artifacts: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn read(dir: &Path) -> Result<Option<Self>> {
        let path = dir.join(MANIFEST_FILE);
        if !path.is_file() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        Ok(Some(serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?))
    }
}

pub struct LoadedConfig {
    pub config: ExperimentConfig,
    /// Dataset directory, resolved against the config file's directory.
    pub data_dir: PathBuf,
}

pub fn load_config(path: &Path, oracle: Option<OracleKind>) -> Result<LoadedConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut config = ExperimentConfig::from_json(&text).with_context(|| format!("invalid config {}", path.display()))?;
    match (oracle, &config.oracle) {
        (Some(OracleKind::Simulated), _) => config.oracle = OracleBinding::Simulated,
        (Some(OracleKind::Human), OracleBinding::Simulated) => {
            config.oracle = serde_json::from_value(serde_json::json!({ "kind": "human" }))?;
        }
        _ => {}
    }
    let dir = config
        .data
        .dir
        .clone()
        .ok_or_else(|| anyhow!("{}: data.dir is required", path.display()))?;
    let data_dir = if dir.is_absolute() {
        dir
    } else {
        path.parent().unwrap_or(Path::new(".")).join(dir)
    };
    data::ensure_dataset(&data_dir)?;
    Ok(LoadedConfig { config, data_dir })
}

/// First 12 hex digits of the SHA-256 of a value's JSON encoding.
pub fn short_hash<T: Serialize>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    Ok(hex::encode(Sha256::digest(&bytes))[..12].to_owned())
}

pub fn derive_run_id(config: &ExperimentConfig) -> Result<String> {
    Ok(format!(
        "{}-{}-{}",
        config.strategy.kind.as_str(),
        config.perspective,
        short_hash(config)?
    ))
}

pub fn load_pool(config: &ExperimentConfig, data_dir: &Path) -> Result<DataPool> {
    let records = data::load_records(data_dir, config.perspective)?;
    Ok(data_model::split_dataset(
        records,
        config.data.train_count,
        config.data.val_fraction,
        config.data.split_seed,
    )?)
}

fn canonical(dir: &Path) -> PathBuf {
    fs::canonicalize(dir).unwrap_or_else(|_| dir.to_owned())
}

/// Creates the manifest on first use; afterwards checks it still matches.
fn open_run(run_dir: &Path, run_id: &str, config: &ExperimentConfig, data_dir: &Path) -> Result<RunManifest> {
    let dataset_hash = data_model::dataset_hash(data_dir)?;
    if let Some(m) = RunManifest::read(run_dir)? {
        ensure!(
            m.config == *config,
            "{} was created with a different config; use a new run id",
            run_dir.display()
        );
        ensure!(
            m.dataset_hash == dataset_hash,
            "dataset at {} changed since the run was created",
            data_dir.display()
        );
        return Ok(m);
    }
    fs::create_dir_all(run_dir).with_context(|| format!("creating {}", run_dir.display()))?;
    let m = RunManifest {
        run_id: run_id.to_owned(),
        created_at: Utc::now(),
        config: config.clone(),
        dataset_dir: canonical(data_dir),
        dataset_hash,
        artifacts: BTreeMap::new(),
    };
    write_json(&run_dir.join(MANIFEST_FILE), &m)?;
    Ok(m)
}

fn register_with_service(url: &str, run_id: &str, config: &ExperimentConfig, data_dir: &Path, pool: &DataPool) -> Result<()> {
    let req = CreateRun {
        run_id: Some(run_id.to_owned()),
        perspective: config.perspective,
        dataset_dir: Some(canonical(data_dir)),
        config: serde_json::to_value(config)?,
        pool: pool.train_universe(),
        held_out: pool.validation.iter().chain(&pool.test).map(|r| r.id.clone()).collect::<BTreeSet<_>>(),
    };
    if HttpQueue::new(url).ensure_run(&req)? {
        log::info!("registered run {run_id} with {url}");
    }
    Ok(())
}

fn oracle_for(config: &ExperimentConfig, service: Option<&str>, run_id: &str, pool: &DataPool) -> Result<Box<dyn Oracle>> {
    Ok(match &config.oracle {
        OracleBinding::Simulated => Box::new(SimulatedOracle::for_pool(pool)),
        OracleBinding::Human { timeout_s, poll_ms } => {
            let url = service.ok_or_else(|| anyhow!("the human oracle needs --service URL"))?;
            Box::new(HumanOracle::new(
                HttpQueue::new(url),
                run_id,
                Duration::from_secs(*timeout_s),
                Duration::from_millis(*poll_ms),
            ))
        }
    })
}

fn suspended(e: CoreError, run_dir: &Path) -> anyhow::Error {
    match e {
        CoreError::OracleTimeout { pending } => anyhow!(
            "run suspended: {pending} labels still pending; rerun the same command to resume {}",
            run_dir.display()
        ),
        other => other.into(),
    }
}

pub fn run(args: &RunArgs) -> Result<()> {
    ensure!(args.parallel >= 1, "--parallel must be >= 1");
    let LoadedConfig { config, data_dir } = load_config(&args.config, args.oracle)?;
    let run_id = match &args.run_id {
        Some(id) => id.clone(),
        None => derive_run_id(&config)?,
    };
    ensure!(
        !run_id.is_empty() && run_id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_'),
        "invalid run id `{run_id}`"
    );
    let run_dir = crate::run_root().join(&run_id);

    if let Some(seed) = args.worker_seed {
        ensure!(config.seeds.contains(&seed), "seed {seed} is not in the config");
        ensure!(
            RunManifest::read(&run_dir)?.is_some_and(|m| m.config == config),
            "worker started without a matching manifest in {}",
            run_dir.display()
        );
        let pool = load_pool(&config, &data_dir)?;
        let mut oracle = oracle_for(&config, args.service.as_deref(), &run_id, &pool)?;
        orchestrator::run_seed(&config, &pool, seed, oracle.as_mut(), Some(&run_dir), &mut |_| {})
            .map_err(|e| suspended(e, &run_dir))?;
        return Ok(());
    }

    let mut manifest = open_run(&run_dir, &run_id, &config, &data_dir)?;
    let pending: Vec<u64> = config
        .seeds
        .iter()
        .copied()
        .filter(|&s| !SeedState::load(&run_dir, s).ok().flatten().is_some_and(|st| st.finished))
        .collect();

    if !pending.is_empty() {
        let pool = load_pool(&config, &data_dir)?;
        if let (OracleBinding::Human { .. }, Some(url)) = (&config.oracle, args.service.as_deref()) {
            register_with_service(url, &run_id, &config, &data_dir, &pool)?;
        }
        if args.parallel > 1 && pending.len() > 1 {
            run_workers(args, &run_id, &pending)?;
        } else {
            let mut oracle = oracle_for(&config, args.service.as_deref(), &run_id, &pool)?;
            for &seed in &pending {
                orchestrator::run_seed(&config, &pool, seed, oracle.as_mut(), Some(&run_dir), &mut |_| {})
                    .map_err(|e| suspended(e, &run_dir))?;
            }
        }
    }

    let curves = collect_curves(&run_dir, &config)?;
    let csv_path = run_dir.join(CURVES_FILE);
    fs::write(&csv_path, orchestrator::curves_to_csv(&curves)).with_context(|| format!("writing {}", csv_path.display()))?;
    manifest.artifacts.insert("curves".into(), CURVES_FILE.into());
    for s in &config.seeds {
        manifest.artifacts.insert(format!("seed_{s}"), format!("state_seed{s}.json"));
    }
    write_json(&run_dir.join(MANIFEST_FILE), &manifest)?;
    println!("{}", run_dir.display());
    Ok(())
}

/// Runs each pending seed in its own process, at most `--parallel` at once.
fn run_workers(args: &RunArgs, run_id: &str, seeds: &[u64]) -> Result<()> {
    let exe = std::env::current_exe().context("locating the alqa executable")?;
    let config = canonical(&args.config);
    let spawn = |seed: u64| -> Result<Child> {
        let mut cmd = Command::new(&exe);
        cmd.arg("run")
            .arg("--config")
            .arg(&config)
            .args(["--run-id", run_id])
            .args(["--worker-seed", &seed.to_string()]);
        if let Some(o) = args.oracle {
            cmd.args(["--oracle", if o == OracleKind::Human { "human" } else { "simulated" }]);
        }
        if let Some(url) = &args.service {
            cmd.args(["--service", url]);
        }
        cmd.spawn().with_context(|| format!("spawning worker for seed {seed}"))
    };

    let mut queue = seeds.iter().copied();
    let mut running: Vec<(u64, Child)> = Vec::new();
    let mut failed = Vec::new();
    loop {
        while running.len() < args.parallel {
            match queue.next() {
                Some(seed) => running.push((seed, spawn(seed)?)),
                None => break,
            }
        }
        if running.is_empty() {
            break;
        }
        let mut still = Vec::with_capacity(running.len());
        for (seed, mut child) in running {
            match child.try_wait()? {
                Some(status) if !status.success() => failed.push(seed),
                Some(_) => {}
                None => still.push((seed, child)),
            }
        }
        running = still;
        thread::sleep(Duration::from_millis(200));
    }
    if !failed.is_empty() {
        bail!("seed workers failed for seeds {failed:?}; rerun to resume");
    }
    Ok(())
}

fn collect_curves(run_dir: &Path, config: &ExperimentConfig) -> Result<Vec<LearningCurve>> {
    config
        .seeds
        .iter()
        .map(|&seed| {
            let st = SeedState::load(run_dir, seed)?.ok_or_else(|| anyhow!("seed {seed} has no state"))?;
            ensure!(st.finished, "seed {seed} did not finish");
            Ok(LearningCurve {
                strategy: config.strategy.kind,
                seed,
                checkpoints: st.checkpoints,
            })
        })
        .collect()
}

/// Learning curves of a finished run directory.
pub fn read_curves(run_dir: &Path) -> Result<Vec<LearningCurve>> {
    let path = run_dir.join(CURVES_FILE);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let curves = orchestrator::curves_from_csv(&text).with_context(|| format!("parsing {}", path.display()))?;
    ensure!(!curves.is_empty(), "{} holds no curves", path.display());
    Ok(curves)
}
