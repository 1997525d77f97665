//! The server side of training: sample K clients, collect their updates,
//! aggregate, step the optimizer, snapshot — repeated until the iteration
//! budget runs out or the parameters stop moving.
//!
//! The server only ever sees [`ClientUpdate`] values. Client-side computation
//! is injected through [`UpdateSource`], so nothing in this module can reach
//! into a client's history.

pub mod snapshot;
pub mod update_log;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{AdaptiveConfig, AggregationMode, RunConfig, CONVERGENCE_PATIENCE};
use crate::error::{Error, Result};
use crate::frecency::{ModelParams, NUM_WEIGHTS};
use crate::rng::master;
use crate::rprop::{rprop_step, sign_vote, RpropState};

/// Per-round measurements a client reports alongside its gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UpdateMetrics {
    /// Mean ranking loss over the client's events this round.
    pub mean_loss: f64,
    /// Characters typed before each selection.
    pub chars_typed: Vec<u32>,
    /// Displayed rank of each selected suggestion (0-based).
    pub selected_ranks: Vec<u32>,
}

/// One client's contribution to one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientUpdate {
    pub client_id: u64,
    pub iteration: u64,
    /// Mean per-event gradient, or a sign vector in sign-vote mode.
    pub gradient: [f64; NUM_WEIGHTS],
    /// Number of search events behind this update.
    pub n_examples: u64,
    pub metrics: UpdateMetrics,
}

impl ClientUpdate {
    pub fn validate(&self) -> Result<()> {
        if self.n_examples == 0 {
            return Err(Error::Protocol(format!(
                "client {} reported an update with zero examples",
                self.client_id
            )));
        }
        if self.gradient.iter().any(|g| !g.is_finite()) {
            return Err(Error::Protocol(format!(
                "client {} reported a non-finite gradient",
                self.client_id
            )));
        }
        Ok(())
    }
}

/// Client computation as the server sees it: an opaque map from
/// (client, iteration, current model) to an update. Implementations decide
/// what a client's local data looks like; the protocol never can.
pub trait UpdateSource: Sync {
    /// Number of clients available for sampling.
    fn pool_size(&self) -> u64;

    /// One client's update for one iteration, or `None` when the client
    /// performed no searches this round.
    fn client_update(
        &self,
        client_id: u64,
        iteration: u64,
        model: &ModelParams,
    ) -> Result<Option<ClientUpdate>>;
}

/// Example-count-weighted mean of client gradients: sum of (n_i / N) * H_i,
/// accumulated in ascending client-id order so the floating-point result is
/// reproducible no matter how updates were produced.
pub fn weighted_average(updates: &[ClientUpdate]) -> Result<[f64; NUM_WEIGHTS]> {
    if updates.is_empty() {
        return Err(Error::Protocol("weighted_average over zero updates".into()));
    }
    let iteration = updates[0].iteration;
    if updates.iter().any(|u| u.iteration != iteration) {
        return Err(Error::Protocol("updates from mixed iterations".into()));
    }
    let mut ordered: Vec<&ClientUpdate> = updates.iter().collect();
    ordered.sort_by_key(|u| u.client_id);
    let total: u64 = ordered.iter().map(|u| u.n_examples).sum();
    let total = total as f64;
    let mut out = [0.0; NUM_WEIGHTS];
    for u in ordered {
        let w = u.n_examples as f64 / total;
        for (o, g) in out.iter_mut().zip(&u.gradient) {
            *o += w * g;
        }
    }
    Ok(out)
}

/// Early-close rule for a round: enough updates have arrived and they agree
/// (mean L1 distance to their componentwise mean strictly below the
/// threshold).
pub fn close_iteration_adaptively(pending: &[ClientUpdate], cfg: &AdaptiveConfig) -> bool {
    if (pending.len() as u64) < cfg.min_updates {
        return false;
    }
    let n = pending.len() as f64;
    let mut mean = [0.0; NUM_WEIGHTS];
    for u in pending {
        for (m, g) in mean.iter_mut().zip(&u.gradient) {
            *m += g / n;
        }
    }
    let dispersion: f64 = pending
        .iter()
        .map(|u| {
            u.gradient
                .iter()
                .zip(&mean)
                .map(|(g, m)| (g - m).abs())
                .sum::<f64>()
        })
        .sum::<f64>()
        / n;
    dispersion < cfg.variance_threshold
}

/// Mutable server state carried between iterations; everything needed to
/// resume a run bit-exactly lives here (and in snapshots).
#[derive(Debug, Clone)]
pub struct ServerState {
    /// Number of completed iterations; also the index of the next one.
    pub iteration: u64,
    pub params: ModelParams,
    pub rprop: RpropState,
    /// Client-sampling RNG; its stream position is persisted.
    pub rng: ChaCha8Rng,
    /// Consecutive iterations whose parameter change stayed below the
    /// convergence threshold.
    pub small_steps: u64,
    /// Most recent recorded round losses (capped at the rolling window),
    /// oldest first.
    pub recent_losses: Vec<f64>,
    seed: u64,
}

/// Width of the rolling loss window reported in the loss CSV.
pub const ROLLING_WINDOW: usize = 5;

impl ServerState {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        Ok(ServerState {
            iteration: 0,
            params: cfg.initial_params(),
            rprop: RpropState::new(cfg.rprop)?,
            rng: master(cfg.seed),
            small_steps: 0,
            recent_losses: Vec::new(),
            seed: cfg.seed,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub(crate) fn assemble(
        seed: u64,
        iteration: u64,
        params: ModelParams,
        rprop: RpropState,
        rng: ChaCha8Rng,
        small_steps: u64,
        recent_losses: Vec<f64>,
    ) -> Self {
        ServerState { iteration, params, rprop, rng, small_steps, recent_losses, seed }
    }
}

/// What one iteration produced, as recorded in the run record and loss CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: u64,
    /// File name of the snapshot written after this iteration.
    pub snapshot: String,
    pub aggregated: [f64; NUM_WEIGHTS],
    /// Mean/median of client-reported mean losses; `None` when no updates
    /// arrived.
    pub mean_loss: Option<f64>,
    pub median_loss: Option<f64>,
    pub num_updates: u64,
    /// Mean of the last up-to-5 recorded round losses.
    pub rolling_loss: Option<f64>,
    pub params_after: ModelParams,
}

/// Everything `run_training` hands back to the caller.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub seed: u64,
    pub iterations: Vec<IterationRecord>,
    pub final_params: ModelParams,
    pub wall_clock: Duration,
}

/// One iteration's outputs before persistence.
pub struct IterationOutcome {
    pub record: IterationRecord,
    /// Updates kept this round, ascending by client id.
    pub updates: Vec<ClientUpdate>,
}

/// Runs one federated round against the current state:
/// sample K distinct clients, collect their updates (in parallel; results are
/// reduced in a fixed order so thread count cannot matter), optionally close
/// the round early when updates agree, aggregate, and apply the optimizer.
/// A round with zero updates skips the optimizer step and is recorded as
/// empty.
pub fn run_iteration(
    state: &mut ServerState,
    source: &dyn UpdateSource,
    cfg: &RunConfig,
) -> Result<IterationOutcome> {
    let t = state.iteration;
    let pool = source.pool_size();
    if cfg.clients_per_iteration > pool {
        return Err(Error::Protocol(format!(
            "cannot sample {} clients from a pool of {pool}",
            cfg.clients_per_iteration
        )));
    }
    let mut chosen: Vec<u64> =
        rand::seq::index::sample(&mut state.rng, pool as usize, cfg.clients_per_iteration as usize)
            .iter()
            .map(|i| i as u64)
            .collect();
    // Clients "arrive" in ascending id order: a fixed, scheduler-independent
    // convention used both for adaptive closing and for aggregation.
    chosen.sort_unstable();

    let computed: Vec<Option<ClientUpdate>> = chosen
        .par_iter()
        .map(|&id| source.client_update(id, t, &state.params))
        .collect::<Result<_>>()?;
    let mut updates: Vec<ClientUpdate> = computed.into_iter().flatten().collect();
    for u in &updates {
        u.validate()?;
        if u.iteration != t {
            return Err(Error::Protocol(format!(
                "client {} answered for iteration {} during iteration {t}",
                u.client_id, u.iteration
            )));
        }
    }

    if cfg.adaptive.enabled {
        let mut cut = updates.len();
        for m in 1..=updates.len() {
            if close_iteration_adaptively(&updates[..m], &cfg.adaptive) {
                cut = m;
                break;
            }
        }
        updates.truncate(cut);
    }

    let params_before = state.params;
    let mut aggregated = [0.0; NUM_WEIGHTS];
    let (mean_loss, median_loss) = if updates.is_empty() {
        (None, None)
    } else {
        aggregated = match cfg.aggregation_mode {
            AggregationMode::WeightedAverage => weighted_average(&updates)?,
            AggregationMode::SignVote => {
                let signs: Vec<[f64; NUM_WEIGHTS]> =
                    updates.iter().map(|u| u.gradient).collect();
                sign_vote(&signs)?
            }
        };
        match rprop_step(&state.rprop, &aggregated, &state.params, &cfg.constraints) {
            Ok(step) => {
                state.params = step.params;
                state.rprop = step.state;
            }
            // A non-finite aggregate rejects the step but not the round.
            Err(Error::NonFiniteLoss { .. }) => {}
            Err(e) => return Err(e),
        }

        let mut losses: Vec<f64> = updates.iter().map(|u| u.metrics.mean_loss).collect();
        losses.sort_by(f64::total_cmp);
        let mean = losses.iter().sum::<f64>() / losses.len() as f64;
        let median = if losses.len() % 2 == 1 {
            losses[losses.len() / 2]
        } else {
            (losses[losses.len() / 2 - 1] + losses[losses.len() / 2]) / 2.0
        };
        (Some(mean), Some(median))
    };

    if let Some(m) = mean_loss {
        state.recent_losses.push(m);
        let overflow = state.recent_losses.len().saturating_sub(ROLLING_WINDOW);
        state.recent_losses.drain(..overflow);
    }
    let rolling_loss = if state.recent_losses.is_empty() {
        None
    } else {
        Some(state.recent_losses.iter().sum::<f64>() / state.recent_losses.len() as f64)
    };

    let delta_inf = state
        .params
        .to_vec()
        .iter()
        .zip(params_before.to_vec())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    if delta_inf < cfg.convergence.min_step_norm {
        state.small_steps += 1;
    } else {
        state.small_steps = 0;
    }

    state.iteration = t + 1;
    Ok(IterationOutcome {
        record: IterationRecord {
            iteration: t,
            snapshot: snapshot::file_name(t + 1),
            aggregated,
            mean_loss,
            median_loss,
            num_updates: updates.len() as u64,
            rolling_loss,
            params_after: state.params,
        },
        updates,
    })
}

/// Output paths of a training run inside its output directory.
pub struct RunPaths {
    pub dir: PathBuf,
    pub update_log: PathBuf,
    pub loss_csv: PathBuf,
}

impl RunPaths {
    pub fn new(dir: &Path) -> Self {
        RunPaths {
            dir: dir.to_path_buf(),
            update_log: dir.join("updates.jsonl"),
            loss_csv: dir.join("loss.csv"),
        }
    }

    pub fn snapshot(&self, iteration: u64) -> PathBuf {
        self.dir.join(snapshot::file_name(iteration))
    }
}

/// Drives a whole run: initialize (or resume from a snapshot), iterate,
/// persist snapshots, the update log, and the loss curve. Artifacts are
/// append-only so a resumed run continues the files a full run would have
/// written.
pub fn run_training(
    cfg: &RunConfig,
    source: &dyn UpdateSource,
    out_dir: &Path,
    resume: Option<&Path>,
) -> Result<RunRecord> {
    let start = Instant::now();
    let paths = RunPaths::new(out_dir);
    std::fs::create_dir_all(out_dir)?;

    let mut state = match resume {
        // The snapshot's seed wins over the config's: resuming continues the
        // run that produced the snapshot.
        Some(path) => snapshot::load(path)?.into_state()?,
        None => {
            let state = ServerState::new(cfg)?;
            snapshot::save(&paths.snapshot(0), &state)?;
            state
        }
    };

    let mut log = update_log::Appender::open(&paths.update_log)?;
    let mut csv = LossCsv::open(&paths.loss_csv)?;

    let mut iterations = Vec::new();
    for _ in 0..cfg.num_iterations {
        if let Some(cap) = cfg.convergence.max_iterations {
            if state.iteration >= cap {
                break;
            }
        }
        let outcome = run_iteration(&mut state, source, cfg)
            .map_err(|e| Error::Protocol(format!("iteration {}: {e}", state.iteration)))?;
        log.append_all(&outcome.updates)?;
        snapshot::save(&paths.snapshot(state.iteration), &state)?;
        csv.write_row(&outcome.record)?;
        iterations.push(outcome.record);
        if state.small_steps >= CONVERGENCE_PATIENCE {
            break;
        }
    }
    log.flush()?;
    csv.flush()?;

    Ok(RunRecord {
        seed: state.seed(),
        iterations,
        final_params: state.params,
        wall_clock: start.elapsed(),
    })
}

/// Append-mode writer for the loss curve CSV.
struct LossCsv {
    file: std::io::BufWriter<std::fs::File>,
}

pub const LOSS_CSV_HEADER: &str = "iteration,mean_loss,median_loss,num_updates,rolling5_loss";

impl LossCsv {
    fn open(path: &Path) -> Result<Self> {
        let fresh = !path.exists() || std::fs::metadata(path)?.len() == 0;
        let file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
        let mut out = LossCsv { file: std::io::BufWriter::new(file) };
        if fresh {
            writeln!(out.file, "{LOSS_CSV_HEADER}")?;
        }
        Ok(out)
    }

    fn write_row(&mut self, rec: &IterationRecord) -> Result<()> {
        let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        writeln!(
            self.file,
            "{},{},{},{},{}",
            rec.iteration,
            fmt(rec.mean_loss),
            fmt(rec.median_loss),
            rec.num_updates,
            fmt(rec.rolling_loss),
        )?;
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        self.file.flush()?;
        Ok(())
    }
}
