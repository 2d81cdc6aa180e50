//! Run-directory artifacts: excitation collection, training output and the
//! plot-ready exports.
//!
//! ```text
//! <out>/config.snapshot          resolved configuration
//! <out>/trajectory.csv           t,u,y excitation record (collect)
//! <out>/pe_report.txt            persistency-of-excitation report (collect)
//! <out>/rewards.csv              episode,cumulative_reward,seed
//! <out>/seed_<s>/rollout_<ep>.csv
//! <out>/seed_<s>/checkpoint_<ep>
//! <out>/seed_<s>/rollout_eval.csv
//! <out>/seed_<s>/controller_eval.csv
//! <out>/rewards_median_iqr.csv   episode,median,q25,q75 (export)
//! <out>/occupancy.csv            episode,bin,lower,upper,mean_time (export)
//! <out>/rollout_sample.csv       evaluation rollout of the first seed (export)
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::behavior::{build_hankel, HankelModel, Trajectory, RANK_TOLERANCE};
use crate::config::{RunConfig, SNAPSHOT_FILE};
use crate::env::{collect_excitation, free_run_rms, RolloutRecord, TankEnv};
use crate::error::{Error, Result};
use crate::nn::Checkpoint;
use crate::rl::{train_seeds, EpisodeOutcome, SeedSummary, TrainObserver};

pub const REWARDS_FILE: &str = "rewards.csv";
pub const PE_REPORT_FILE: &str = "pe_report.txt";
pub const MEDIAN_IQR_FILE: &str = "rewards_median_iqr.csv";
pub const OCCUPANCY_FILE: &str = "occupancy.csv";
pub const ROLLOUT_SAMPLE_FILE: &str = "rollout_sample.csv";
pub const EVAL_ROLLOUT_FILE: &str = "rollout_eval.csv";
pub const EVAL_CONTROLLER_FILE: &str = "controller_eval.csv";
/// Number of equal-width level bins over `[0, level_max]` in the occupancy
/// export.
pub const OCCUPANCY_BINS: usize = 20;

pub fn seed_dir(root: &Path, seed: u64) -> PathBuf {
    root.join(format!("seed_{seed}"))
}

pub fn rollout_path(root: &Path, seed: u64, episode: usize) -> PathBuf {
    seed_dir(root, seed).join(format!("rollout_{episode}.csv"))
}

pub fn checkpoint_path(root: &Path, seed: u64, episode: usize) -> PathBuf {
    seed_dir(root, seed).join(format!("checkpoint_{episode}"))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn create_file(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn open_file(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?))
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(create_file(path)?);
    for row in rows {
        wr.serialize(row)?;
    }
    wr.flush().map_err(|e| Error::io(path, e))
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut rd = csv::Reader::from_reader(open_file(path)?);
    rd.deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| Error::Format {
            what: "run csv",
            reason: format!("{}: {e}", path.display()),
        })
}

/// Outcome of an excitation collection.
#[derive(Debug, Clone, PartialEq)]
pub struct CollectReport {
    pub samples: usize,
    /// Required excitation order `2L + 1`.
    pub required: usize,
    pub rank: usize,
    /// Smallest over largest singular value of the input Hankel matrix.
    pub margin: f64,
    /// Free-run RMS of the internal model on its own record.
    pub free_run_rms: f64,
    pub trajectory: PathBuf,
}

impl CollectReport {
    pub fn to_text(&self) -> String {
        format!(
            "samples {}\nrequired_order {}\nrank {}\nsingular_value_margin {:e}\nrank_tolerance {:e}\nfree_run_rms {:e}\n",
            self.samples, self.required, self.rank, self.margin, RANK_TOLERANCE, self.free_run_rms
        )
    }
}

/// Runs the excitation experiment of `cfg` and writes the trajectory and
/// its report into `cfg.out_dir`. Fails with
/// [`Error::NotPersistentlyExciting`] when the input is not rich enough.
pub fn collect(cfg: &RunConfig) -> Result<CollectReport> {
    cfg.validate()?;
    let noise_seed = (cfg.noise && cfg.excitation.noise).then_some(cfg.collect_seed);
    let mut env = TankEnv::new(cfg.tank.clone(), &cfg.pid, cfg.excitation.level, noise_seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.collect_seed);
    let traj = collect_excitation(&mut env, &cfg.excitation, cfg.hankel.order, &mut rng)?;
    let required = 2 * cfg.hankel.order + 1;
    let sv = build_hankel(&traj.inputs()[..traj.len() - 1], required)?.singular_values();
    let s_max = sv.max();
    let rank = sv.iter().filter(|&&s| s > RANK_TOLERANCE * s_max).count();
    let model = HankelModel::new(&traj, cfg.hankel.order, cfg.hankel.ridge)?;
    let rms = free_run_rms(&model, &traj).unwrap_or(f64::INFINITY);

    create_dir(&cfg.out_dir)?;
    let path = cfg.trajectory_path();
    let mut w = create_file(&path)?;
    traj.write_csv(&mut w)?;
    w.flush().map_err(|e| Error::io(&path, e))?;
    let report = CollectReport {
        samples: traj.len(),
        required,
        rank,
        margin: sv.min() / s_max,
        free_run_rms: rms,
        trajectory: path,
    };
    let report_path = cfg.out_dir.join(PE_REPORT_FILE);
    std::fs::write(&report_path, report.to_text()).map_err(|e| Error::io(&report_path, e))?;
    Ok(report)
}

pub fn load_trajectory(path: &Path) -> Result<Trajectory> {
    Trajectory::read_csv(open_file(path)?)
}

/// Writes per-episode rollouts, checkpoints and the evaluation logs of one
/// seed.
pub struct SeedWriter {
    root: PathBuf,
    seed: u64,
}

impl SeedWriter {
    pub fn new(root: &Path, seed: u64) -> Result<Self> {
        create_dir(&seed_dir(root, seed))?;
        Ok(Self {
            root: root.to_path_buf(),
            seed,
        })
    }
}

impl TrainObserver for SeedWriter {
    fn episode(&mut self, index: usize, outcome: &EpisodeOutcome) -> Result<()> {
        write_csv(&rollout_path(&self.root, self.seed, index), &outcome.records)
    }

    fn checkpoint(&mut self, index: usize, checkpoint: &Checkpoint) -> Result<()> {
        let path = checkpoint_path(&self.root, self.seed, index);
        let mut w = create_file(&path)?;
        checkpoint.write(&mut w).map_err(|e| Error::io(&path, e))?;
        w.flush().map_err(|e| Error::io(&path, e))
    }

    fn evaluation(&mut self, outcome: &EpisodeOutcome) -> Result<()> {
        let dir = seed_dir(&self.root, self.seed);
        write_csv(&dir.join(EVAL_ROLLOUT_FILE), &outcome.records)?;
        write_csv(&dir.join(EVAL_CONTROLLER_FILE), &outcome.logs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardRow {
    pub episode: usize,
    pub cumulative_reward: f64,
    pub seed: u64,
}

/// Trains every seed of `cfg` from the trajectory at
/// [`RunConfig::trajectory_path`] and fills `cfg.out_dir`.
pub fn train(cfg: &RunConfig) -> Result<Vec<SeedSummary>> {
    cfg.validate()?;
    let traj_path = cfg.trajectory_path();
    if !traj_path.is_file() {
        return Err(Error::Config(format!(
            "no excitation record at {}; run collect first",
            traj_path.display()
        )));
    }
    let traj = load_trajectory(&traj_path)?;
    let model = Arc::new(HankelModel::new(&traj, cfg.hankel.order, cfg.hankel.ridge)?);
    let root = cfg.out_dir.clone();
    create_dir(&root)?;
    cfg.write_snapshot(&root)?;
    let summaries = train_seeds(cfg, model, |seed| SeedWriter::new(&root, seed))?;
    let rows: Vec<RewardRow> = summaries
        .iter()
        .flat_map(|s| {
            s.rewards.iter().enumerate().map(|(episode, &r)| RewardRow {
                episode,
                cumulative_reward: r,
                seed: s.seed,
            })
        })
        .collect();
    write_csv(&root.join(REWARDS_FILE), &rows)?;
    Ok(summaries)
}

pub fn read_rewards(path: &Path) -> Result<Vec<RewardRow>> {
    read_csv(path)
}

/// Sample quantile by linear interpolation between order statistics
/// (Hyndman-Fan type 7). `sorted` must be ascending and nonempty.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MedianIqrRow {
    pub episode: usize,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyRow {
    pub episode: usize,
    pub bin: usize,
    pub lower: f64,
    pub upper: f64,
    /// Steps spent in the bin, averaged over seeds.
    pub mean_time: f64,
}

/// Median and interquartile range of the cumulative reward across seeds,
/// per episode.
pub fn median_iqr(rows: &[RewardRow]) -> Vec<MedianIqrRow> {
    let mut by_episode: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in rows {
        by_episode.entry(r.episode).or_default().push(r.cumulative_reward);
    }
    by_episode
        .into_iter()
        .map(|(episode, mut v)| {
            v.sort_by(f64::total_cmp);
            MedianIqrRow {
                episode,
                median: quantile(&v, 0.5),
                q25: quantile(&v, 0.25),
                q75: quantile(&v, 0.75),
            }
        })
        .collect()
}

/// Time-step histogram of the true level in `bins` equal bins over
/// `[0, level_max]`; levels outside the range fall into the end bins.
pub fn occupancy(records: &[RolloutRecord], level_max: f64, bins: usize) -> Vec<usize> {
    let mut counts = vec![0; bins];
    for r in records {
        let b = ((r.l / level_max) * bins as f64).floor();
        counts[(b.max(0.0) as usize).min(bins - 1)] += 1;
    }
    counts
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExportSummary {
    pub episodes: usize,
    pub seeds: Vec<u64>,
}

/// Derives the plot-ready CSVs from a finished run directory. Rewriting is
/// idempotent.
pub fn export(root: &Path) -> Result<ExportSummary> {
    let malformed = |reason: String| Error::Format {
        what: "run directory",
        reason,
    };
    let cfg = RunConfig::load(&root.join(SNAPSHOT_FILE))?;
    let rewards = read_rewards(&root.join(REWARDS_FILE))?;
    let mut seeds: Vec<u64> = rewards.iter().map(|r| r.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    if seeds.is_empty() {
        seeds = cfg.seeds.clone();
    }
    let episodes = rewards.iter().map(|r| r.episode + 1).max().unwrap_or(0);
    for &seed in &seeds {
        let count = rewards.iter().filter(|r| r.seed == seed).count();
        if count != episodes {
            return Err(malformed(format!("seed {seed} has {count} of {episodes} episodes")));
        }
    }
    write_csv(&root.join(MEDIAN_IQR_FILE), &median_iqr(&rewards))?;

    let mut occ = Vec::with_capacity(episodes * OCCUPANCY_BINS);
    let width = cfg.tank.level_max / OCCUPANCY_BINS as f64;
    for episode in 0..episodes {
        let mut total = vec![0usize; OCCUPANCY_BINS];
        for &seed in &seeds {
            let records: Vec<RolloutRecord> = read_csv(&rollout_path(root, seed, episode))?;
            for (t, c) in total.iter_mut().zip(occupancy(&records, cfg.tank.level_max, OCCUPANCY_BINS)) {
                *t += c;
            }
        }
        occ.extend(total.into_iter().enumerate().map(|(bin, c)| OccupancyRow {
            episode,
            bin,
            lower: bin as f64 * width,
            upper: (bin + 1) as f64 * width,
            mean_time: c as f64 / seeds.len() as f64,
        }));
    }
    write_csv(&root.join(OCCUPANCY_FILE), &occ)?;

    let sample = seed_dir(root, seeds[0]).join(EVAL_ROLLOUT_FILE);
    let records: Vec<RolloutRecord> = read_csv(&sample)?;
    write_csv(&root.join(ROLLOUT_SAMPLE_FILE), &records)?;
    Ok(ExportSummary { episodes, seeds })
}
