//! Joint training of pilot coefficients and estimator networks.
//!
//! One optimization step draws a batch of channel and noise realizations,
//! replays the receive chain per sample on a tape, averages the squared
//! estimation error, and applies plain SGD followed by a projection of each
//! pilot back onto its power ball.
//!
//! Batches are processed in parallel over chunks of a fixed size. Per-chunk
//! accumulation is sequential in sample order and the chunk results are
//! reduced sequentially in chunk order, so results are bit-identical for any
//! worker thread count.

use crate::cmat::{pack_split, CMat};
use crate::lmmse::{heuristic_pilots, lmmse_mse_closed_form};
use crate::mimo::{ChannelSampler, SystemConfig};
use crate::neural::{Gradients, NodeId, ParamRegistry, Tape};
use crate::pilot::StructuredPilotNet;
use crate::rng::{derive_seed, draw_cn_vec, seeded_rng};
use crate::sic::{sic_chain, EstimatorNet};
use crate::{Error, Result};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;

/// Samples per parallel work unit. Fixed so that the floating-point
/// reduction order never depends on the thread count.
pub const BATCH_CHUNK: usize = 25;

/// A training run aborts once every batch of an epoch stays above this
/// multiple of the starting loss.
pub const DIVERGENCE_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PilotInit {
    /// Random circular-Gaussian coefficients at a fixed budget fraction.
    Gaussian,
    /// Start from the phase-pattern pilots normalized to the budget; falls
    /// back to random coefficients when the pilot shape has no pattern.
    Heuristic,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub train_samples: usize,
    pub test_samples: usize,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub seed: u64,
    pub pilot_init: PilotInit,
    /// Estimation order; `None` processes stronger power budgets first.
    pub sic_order: Option<Vec<usize>>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 5,
            batch_size: 200,
            learning_rate: 1e-3,
            train_samples: 100_000,
            test_samples: 10_000,
            hidden_width: 128,
            hidden_layers: 1,
            seed: 1,
            pilot_init: PilotInit::Heuristic,
            sic_order: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "epochs and batch size must be positive".into(),
            ));
        }
        if self.train_samples == 0 || self.test_samples == 0 {
            return Err(Error::Config("sample counts must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config(
                "learning rate must be finite and non-negative".into(),
            ));
        }
        if self.hidden_width == 0 {
            return Err(Error::Config("hidden width must be positive".into()));
        }
        Ok(())
    }
}

/// Noise variance for a pilot signal-to-noise ratio, with the convention
/// that a unit-budget user spread over the pilot length sees the given
/// per-symbol ratio.
pub fn snr_to_noise_variance(snr_db: f64, pilot_length: usize) -> f64 {
    1.0 / (10f64.powf(snr_db / 10.0) * pilot_length as f64)
}

/// Per-user power budgets from dB offsets around a unit budget.
pub fn budgets_from_offsets(offsets_db: &[f64]) -> Vec<f64> {
    offsets_db.iter().map(|o| 10f64.powf(o / 10.0)).collect()
}

/// Default budget staggering: +3, 0, -3 dB for three users, flat otherwise.
pub fn default_budget_offsets(users: usize) -> Vec<f64> {
    if users == 3 {
        vec![3.0, 0.0, -3.0]
    } else {
        vec![0.0; users]
    }
}

/// Indices sorted by power budget, strongest first; ties keep user order.
pub fn descending_budget_order(budgets: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..budgets.len()).collect();
    order.sort_by(|&a, &b| {
        budgets[b]
            .partial_cmp(&budgets[a])
            .expect("budgets validated finite")
    });
    order
}

/// One draw of every user's channel and the additive receiver noise, packed
/// for the tape.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub channels: Vec<Vec<f64>>,
    pub noise: Vec<f64>,
}

/// Deterministic sample source. Restarting a stream with the same seed
/// replays the identical sequence; the noise variance only scales the unit
/// noise draws, so streams at different operating points share their
/// randomness draw for draw.
pub struct SampleStream {
    sampler: ChannelSampler,
    rng: ChaCha8Rng,
    noise_len: usize,
    noise_scale: f64,
}

impl SampleStream {
    pub fn new(system: &SystemConfig, seed: u64) -> Result<Self> {
        let sampler = ChannelSampler::new(system, &system.iid_covariances())?;
        Ok(SampleStream {
            sampler,
            rng: seeded_rng(seed),
            noise_len: system.bs_antennas * system.pilot_length,
            noise_scale: system.noise_variance.sqrt(),
        })
    }

    pub fn next_sample(&mut self) -> TrainSample {
        let channels = self
            .sampler
            .draw(&mut self.rng)
            .into_iter()
            .map(|h| pack_split(&h))
            .collect();
        let mut noise = pack_split(&draw_cn_vec(&mut self.rng, self.noise_len, 1.0));
        noise.iter_mut().for_each(|z| *z *= self.noise_scale);
        TrainSample { channels, noise }
    }

    pub fn take(&mut self, count: usize) -> Vec<TrainSample> {
        (0..count).map(|_| self.next_sample()).collect()
    }
}

/// Pilot networks and estimator chain trained together.
pub struct JointModel {
    system: SystemConfig,
    pilots: Vec<StructuredPilotNet>,
    estimators: Vec<EstimatorNet>,
    order: Vec<usize>,
    registry: ParamRegistry,
}

impl JointModel {
    /// Builds the model with freshly initialized parameters. Parameter
    /// identities are allocated pilots first, then each user's layers, which
    /// fixes the checkpoint serialization order.
    pub fn new(system: &SystemConfig, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut registry = ParamRegistry::new();
        let mut rng = seeded_rng(derive_seed(cfg.seed, "init"));

        let warm_start = match cfg.pilot_init {
            PilotInit::Heuristic => heuristic_pilots(system, true).ok(),
            PilotInit::Gaussian => None,
        };
        let mut pilots = Vec::with_capacity(system.users);
        for k in 0..system.users {
            let pilot = match &warm_start {
                Some(mats) => StructuredPilotNet::new_from_pilot(
                    k,
                    &mats[k],
                    system.bs_antennas,
                    system.power_budgets[k],
                    &mut registry,
                )?,
                None => StructuredPilotNet::new_gaussian(
                    k,
                    system.user_antennas[k],
                    system.pilot_length,
                    system.bs_antennas,
                    system.power_budgets[k],
                    &mut rng,
                    &mut registry,
                )?,
            };
            pilots.push(pilot);
        }
        let estimators = (0..system.users)
            .map(|k| {
                EstimatorNet::new(
                    k,
                    system.bs_antennas,
                    system.pilot_length,
                    system.user_antennas[k],
                    cfg.hidden_width,
                    cfg.hidden_layers,
                    &mut rng,
                    &mut registry,
                )
            })
            .collect::<Result<Vec<_>>>()?;

        let order = match &cfg.sic_order {
            Some(order) => {
                crate::sic::check_order(order, system.users)?;
                order.clone()
            }
            None => descending_budget_order(&system.power_budgets),
        };
        Ok(JointModel {
            system: system.clone(),
            pilots,
            estimators,
            order,
            registry,
        })
    }

    pub fn system(&self) -> &SystemConfig {
        &self.system
    }

    pub fn pilots(&self) -> &[StructuredPilotNet] {
        &self.pilots
    }

    pub fn estimators(&self) -> &[EstimatorNet] {
        &self.estimators
    }

    pub fn estimators_mut(&mut self) -> &mut [EstimatorNet] {
        &mut self.estimators
    }

    pub fn pilots_mut(&mut self) -> &mut [StructuredPilotNet] {
        &mut self.pilots
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn registry(&self) -> &ParamRegistry {
        &self.registry
    }

    /// Current pilot matrices, by user.
    pub fn pilot_matrices(&self) -> Vec<CMat> {
        self.pilots.iter().map(|p| p.pilot_matrix()).collect()
    }

    /// Records one sample's receive chain and returns the summed squared
    /// estimation error node.
    fn record_sample_loss<'m>(
        &'m self,
        tape: &mut Tape<'m>,
        sample: &TrainSample,
    ) -> Result<NodeId> {
        let out = sic_chain(
            tape,
            &self.pilots,
            &self.estimators,
            &self.order,
            &sample.channels,
            &sample.noise,
        )?;
        let mut per_user = Vec::with_capacity(self.system.users);
        for k in 0..self.system.users {
            let target = tape.constant(&sample.channels[k]);
            per_user.push(tape.sq_diff(out.estimates[k], target)?);
        }
        tape.sum(&per_user)
    }

    /// SGD update followed by the pilot power projection. Parameters absent
    /// from the gradient map are left untouched.
    pub fn apply_update(&mut self, grads: &Gradients, learning_rate: f64) -> Result<()> {
        for pilot in &mut self.pilots {
            if let Some(g) = grads.get(pilot.param_id()) {
                let name = self.registry.name(pilot.param_id()).to_owned();
                crate::neural::sgd_step(pilot.coeffs_mut(), g, learning_rate, &name)?;
                pilot.project_power();
            }
        }
        for est in &mut self.estimators {
            for layer in est.layers_mut() {
                if let Some(g) = grads.get(layer.weight_id) {
                    let name = self.registry.name(layer.weight_id).to_owned();
                    crate::neural::sgd_step(&mut layer.weight, g, learning_rate, &name)?;
                }
                if let Some(g) = grads.get(layer.bias_id) {
                    let name = self.registry.name(layer.bias_id).to_owned();
                    crate::neural::sgd_step(&mut layer.bias, g, learning_rate, &name)?;
                }
            }
        }
        Ok(())
    }
}

/// Mean loss and, optionally, mean gradients over a batch. Chunked in fixed
/// units so the arithmetic is reproducible under any parallelism.
fn batch_pass(
    model: &JointModel,
    batch: &[TrainSample],
    with_grad: bool,
) -> Result<(Gradients, f64)> {
    if batch.is_empty() {
        return Err(Error::Empty("batch of zero samples".into()));
    }
    let seed = 1.0 / batch.len() as f64;
    let chunks: Vec<Result<(Gradients, f64)>> = batch
        .par_chunks(BATCH_CHUNK)
        .map(|chunk| {
            let mut tape = Tape::new();
            let mut grads = Gradients::new();
            let mut loss = 0.0;
            for sample in chunk {
                tape.reset();
                let total = model.record_sample_loss(&mut tape, sample)?;
                loss += tape.value(total)[0];
                if with_grad {
                    tape.backward_into(seed, &mut grads)?;
                }
            }
            Ok((grads, loss))
        })
        .collect();

    let mut grads = Gradients::new();
    let mut loss = 0.0;
    for chunk in chunks {
        let (g, l) = chunk?;
        grads.accumulate(&g);
        loss += l;
    }
    Ok((grads, loss / batch.len() as f64))
}

/// One SGD step on a batch; returns the pre-update mean batch loss.
pub fn train_step(
    model: &mut JointModel,
    batch: &[TrainSample],
    learning_rate: f64,
) -> Result<f64> {
    let (grads, loss) = batch_pass(model, batch, true)?;
    model.apply_update(&grads, learning_rate)?;
    Ok(loss)
}

/// Mean estimation error of the current parameters over a sample set.
pub fn evaluate(model: &JointModel, samples: &[TrainSample]) -> Result<f64> {
    let (_, loss) = batch_pass(model, samples, false)?;
    Ok(loss)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    /// Mean training loss per epoch, in sample order.
    pub train_mse: Vec<f64>,
    /// Test-set error after each epoch, on the frozen test draw.
    pub test_mse: Vec<f64>,
    /// Test-set error of the untrained model.
    pub initial_test_mse: f64,
    /// Closed-form error of the phase-pattern pilots at their literal
    /// energy, when the shape admits them.
    pub baseline_literal: Option<f64>,
    /// Closed-form error of the phase-pattern pilots normalized to the
    /// power budget.
    pub baseline_fair: Option<f64>,
    /// Kept out of the serialized report so reruns write identical bytes.
    #[serde(skip)]
    pub wall_seconds: f64,
    pub diverged: bool,
}

/// Closed-form errors of the heuristic pilot construction under the current
/// system, literal and budget-normalized, when the shape admits it.
pub fn heuristic_baselines(system: &SystemConfig) -> (Option<f64>, Option<f64>) {
    let covs = system.iid_covariances();
    let noise_cov =
        CMat::identity(system.obs_dim()).scale(crate::cmat::C64::new(system.noise_variance, 0.0));
    let closed = |normalize: bool| -> Option<f64> {
        let pilots = heuristic_pilots(system, normalize).ok()?;
        lmmse_mse_closed_form(&pilots, &covs, &noise_cov).ok()
    };
    (closed(false), closed(true))
}

/// True when a completed epoch never came back under the divergence factor.
/// A NaN batch loss counts as above it.
fn epoch_ran_away(batch_losses: &[f64], initial: f64) -> bool {
    !batch_losses.is_empty()
        && batch_losses
            .iter()
            .all(|l| l.is_nan() || *l > DIVERGENCE_FACTOR * initial)
}

/// Full training loop: restarts the sample stream each epoch and evaluates
/// the frozen test set after every epoch. The run aborts with a divergence
/// error, carrying the partial report, when an entire epoch stays a factor
/// above the starting error or an update produces non-finite values.
pub fn train(model: &mut JointModel, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let start = Instant::now();
    let test_set =
        SampleStream::new(&model.system, derive_seed(cfg.seed, "test"))?.take(cfg.test_samples);
    let initial_test_mse = evaluate(model, &test_set)?;
    let (baseline_literal, baseline_fair) = heuristic_baselines(&model.system);

    let mut report = TrainReport {
        epochs_run: 0,
        train_mse: Vec::with_capacity(cfg.epochs),
        test_mse: Vec::with_capacity(cfg.epochs),
        initial_test_mse,
        baseline_literal,
        baseline_fair,
        wall_seconds: 0.0,
        diverged: false,
    };

    for epoch in 0..cfg.epochs {
        let mut stream = SampleStream::new(&model.system, derive_seed(cfg.seed, "train"))?;
        let mut losses = Vec::with_capacity(cfg.train_samples.div_ceil(cfg.batch_size));
        let mut loss_sum = 0.0;
        let mut remaining = cfg.train_samples;
        while remaining > 0 {
            let batch_len = remaining.min(cfg.batch_size);
            let batch = stream.take(batch_len);
            let loss = match train_step(model, &batch, cfg.learning_rate) {
                Ok(loss) => loss,
                Err(Error::NonFinite { .. }) => {
                    report.diverged = true;
                    report.wall_seconds = start.elapsed().as_secs_f64();
                    return Err(Error::Diverged {
                        epoch: epoch + 1,
                        report: Box::new(report),
                    });
                }
                Err(other) => return Err(other),
            };
            losses.push(loss);
            loss_sum += loss * batch_len as f64;
            remaining -= batch_len;
        }
        report.epochs_run = epoch + 1;
        report.train_mse.push(loss_sum / cfg.train_samples as f64);
        report.test_mse.push(evaluate(model, &test_set)?);
        if epoch_ran_away(&losses, initial_test_mse) {
            report.diverged = true;
            report.wall_seconds = start.elapsed().as_secs_f64();
            return Err(Error::Diverged {
                epoch: epoch + 1,
                report: Box::new(report),
            });
        }
    }
    report.wall_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepPoint {
    pub snr_db: f64,
    pub mse_proposed: f64,
    pub mse_lmmse_literal: f64,
    pub mse_lmmse_fair: f64,
}

/// Trains one model per operating point and pairs it with the closed-form
/// heuristic baselines. Every point reuses the same base seed, so the
/// channel draws coincide and the noise differs only by its scale.
pub fn snr_sweep(
    base_system: &SystemConfig,
    cfg: &TrainConfig,
    snr_list: &[f64],
) -> Result<Vec<SweepPoint>> {
    if snr_list.is_empty() {
        return Err(Error::Empty("sweep over zero operating points".into()));
    }
    let mut points = Vec::with_capacity(snr_list.len());
    for &snr_db in snr_list {
        let mut system = base_system.clone();
        system.noise_variance = snr_to_noise_variance(snr_db, system.pilot_length);
        let (literal, fair) = heuristic_baselines(&system);
        let (literal, fair) = match (literal, fair) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(Error::UnsupportedPilotShape {
                    user: 0,
                    m_tilde: system.user_antennas[0],
                    l: system.pilot_length,
                })
            }
        };
        let mut model = JointModel::new(&system, cfg)?;
        let report = train(&mut model, cfg)?;
        points.push(SweepPoint {
            snr_db,
            mse_proposed: *report.test_mse.last().expect("at least one epoch"),
            mse_lmmse_literal: literal,
            mse_lmmse_fair: fair,
        });
    }
    Ok(points)
}
