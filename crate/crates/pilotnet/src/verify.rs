//! Self-verification suite behind the `verify` command.
//!
//! Each check rederives a property of the pipeline against an independent
//! oracle: the Kronecker identity behind the transmission layer, reverse-mode
//! gradients against finite differences, the power projection against its
//! closed form, the analytic estimator error against Monte Carlo, and the
//! structural tying of the dense pilot expansion. Checks report pass or fail
//! with detail instead of erroring, so the caller can print a full run even
//! when something is broken. Fault injection deliberately corrupts the dense
//! expansion to demonstrate that the structure check has teeth.

use crate::cmat::{norm_sq, pack_split, unpack_split, CMat};
use crate::lmmse::{heuristic_pilots, lmmse_mse_closed_form, lmmse_mse_monte_carlo};
use crate::mimo::{expand_pilot, SystemConfig};
use crate::neural::{Activation, Gradients, Tape};
use crate::pilot::{project_onto_ball, verify_expansion_structure, StructuredPilotNet};
use crate::rng::{derive_seed, draw_cn_vec, seeded_rng};
use crate::sic::{sic_chain, EstimatorNet};
use crate::trainer::{JointModel, PilotInit, SampleStream, TrainConfig, TrainSample};

/// Hidden pre-activations closer to the kink than this get the sample
/// redrawn; finite differencing with a much smaller step is then safe.
pub const KINK_MARGIN: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn pass(name: &str, detail: String) -> Self {
        CheckResult {
            name: name.into(),
            passed: true,
            detail,
        }
    }

    fn fail(name: &str, detail: String) -> Self {
        CheckResult {
            name: name.into(),
            passed: false,
            detail,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct FaultInjection {
    /// Corrupts one entry of the dense pilot expansion before the structure
    /// check runs.
    pub corrupt_expansion: bool,
}

#[derive(Debug, Clone)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// vec(H X) against the dense expansion acting on vec(H), over random
/// shapes and draws.
pub fn check_vectorization(seed: u64, trials: usize) -> CheckResult {
    let name = "vectorization";
    let mut rng = seeded_rng(derive_seed(seed, "vectorization"));
    let mut worst = 0.0f64;
    for t in 0..trials {
        let n = 1 + (t % 4);
        let m = 1 + (t % 3);
        let l = 1 + (t % 5);
        let h = CMat::from_col_major(n, m, draw_cn_vec(&mut rng, n * m, 1.0)).unwrap();
        let x = CMat::from_col_major(m, l, draw_cn_vec(&mut rng, m * l, 1.0)).unwrap();
        let direct = h.matmul(&x).unwrap();
        let expanded = expand_pilot(&x, n);
        let via_expansion = expanded.matvec(h.as_vec()).unwrap();
        let err: f64 = direct
            .as_vec()
            .iter()
            .zip(&via_expansion)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        worst = worst.max(err);
    }
    if worst <= 1e-12 {
        CheckResult::pass(name, format!("{trials} shapes, worst error {worst:.2e}"))
    } else {
        CheckResult::fail(name, format!("worst error {worst:.2e} exceeds 1e-12"))
    }
}

fn forward_preacts_clear(est: &EstimatorNet, input: &[f64], margin: f64) -> bool {
    let mut x = input.to_vec();
    for layer in est.layers() {
        let mut pre = vec![0.0; layer.out_dim];
        for (i, p) in pre.iter_mut().enumerate() {
            let row = &layer.weight[i * layer.in_dim..(i + 1) * layer.in_dim];
            *p = layer.bias[i] + row.iter().zip(&x).map(|(w, v)| w * v).sum::<f64>();
        }
        if layer.activation == Activation::Relu {
            if pre.iter().any(|p| p.abs() < margin) {
                return false;
            }
            pre.iter_mut().for_each(|p| *p = p.max(0.0));
        }
        x = pre;
    }
    true
}

fn chain_loss(model: &JointModel, sample: &TrainSample) -> f64 {
    let mut tape = Tape::new();
    let out = sic_chain(
        &mut tape,
        model.pilots(),
        model.estimators(),
        model.order(),
        &sample.channels,
        &sample.noise,
    )
    .unwrap();
    let mut per_user = Vec::new();
    for k in 0..sample.channels.len() {
        let t = tape.constant(&sample.channels[k]);
        per_user.push(tape.sq_diff(out.estimates[k], t).unwrap());
    }
    let total = tape.sum(&per_user).unwrap();
    tape.value(total)[0]
}

fn chain_gradients(model: &JointModel, sample: &TrainSample) -> Gradients {
    let mut tape = Tape::new();
    let out = sic_chain(
        &mut tape,
        model.pilots(),
        model.estimators(),
        model.order(),
        &sample.channels,
        &sample.noise,
    )
    .unwrap();
    let mut per_user = Vec::new();
    for k in 0..sample.channels.len() {
        let t = tape.constant(&sample.channels[k]);
        per_user.push(tape.sq_diff(out.estimates[k], t).unwrap());
    }
    let _total = tape.sum(&per_user).unwrap();
    tape.backward(1.0).unwrap()
}

/// Residual inputs each estimator sees for one sample, in processing order.
fn estimator_inputs(model: &JointModel, sample: &TrainSample) -> Vec<Vec<f64>> {
    let mut tape = Tape::new();
    let out = sic_chain(
        &mut tape,
        model.pilots(),
        model.estimators(),
        model.order(),
        &sample.channels,
        &sample.noise,
    )
    .unwrap();
    let mut inputs = vec![tape.value(out.received).to_vec()];
    for r in &out.residuals[..out.residuals.len() - 1] {
        inputs.push(tape.value(*r).to_vec());
    }
    inputs
}

/// End-to-end finite-difference check of every parameter gradient on a
/// small two-user chain. Samples whose hidden pre-activations sit within
/// the kink margin are redrawn.
pub fn check_gradients(seed: u64, trials: usize, tol: f64) -> CheckResult {
    let name = "gradient";
    let system = SystemConfig::new(2, 2, vec![1, 1], 2, vec![1.0, 0.5], 0.05).unwrap();
    let cfg = TrainConfig {
        hidden_width: 8,
        hidden_layers: 2,
        seed: derive_seed(seed, "gradient"),
        pilot_init: PilotInit::Gaussian,
        ..TrainConfig::default()
    };
    let mut worst = 0.0f64;
    let mut redraws = 0usize;
    for trial in 0..trials {
        let mut model = JointModel::new(&system, &cfg).unwrap();
        let mut stream =
            SampleStream::new(&system, derive_seed(cfg.seed, &format!("sample{trial}"))).unwrap();
        let mut sample = stream.next_sample();
        let mut attempts = 0;
        loop {
            let inputs = estimator_inputs(&model, &sample);
            let clear = model.order().iter().zip(&inputs).all(|(&k, input)| {
                forward_preacts_clear(&model.estimators()[k], input, KINK_MARGIN)
            });
            if clear {
                break;
            }
            redraws += 1;
            attempts += 1;
            if attempts > 50 {
                return CheckResult::fail(
                    name,
                    "could not draw a sample clear of activation kinks".into(),
                );
            }
            sample = stream.next_sample();
        }

        let grads = chain_gradients(&model, &sample);
        let eps = 1e-6;

        let param_ids: Vec<_> = model
            .pilots()
            .iter()
            .map(|p| p.param_id())
            .chain(
                model
                    .estimators()
                    .iter()
                    .flat_map(|e| e.layers().iter().flat_map(|l| [l.weight_id, l.bias_id])),
            )
            .collect();

        for id in param_ids {
            let analytic = grads.get(id).map(|g| g.to_vec()).unwrap_or_default();
            for (i, a) in analytic.iter().enumerate() {
                let mut probe = |delta: f64| -> f64 {
                    perturb_param(&mut model, id, i, delta);
                    let v = chain_loss(&model, &sample);
                    perturb_param(&mut model, id, i, -delta);
                    v
                };
                let fd = (probe(eps) - probe(-eps)) / (2.0 * eps);
                let denom = a.abs().max(fd.abs()).max(1e-6);
                worst = worst.max((a - fd).abs() / denom);
            }
        }
    }
    if worst <= tol {
        CheckResult::pass(
            name,
            format!("{trials} chains, worst relative error {worst:.2e}, {redraws} redraws"),
        )
    } else {
        CheckResult::fail(
            name,
            format!("worst relative gradient error {worst:.2e} exceeds {tol:.0e}"),
        )
    }
}

fn perturb_param(model: &mut JointModel, id: crate::neural::ParamId, index: usize, delta: f64) {
    for pilot in model.pilots_mut() {
        if pilot.param_id() == id {
            pilot.coeffs_mut()[index] += delta;
            return;
        }
    }
    for est in model.estimators_mut() {
        for layer in est.layers_mut() {
            if layer.weight_id == id {
                layer.weight[index] += delta;
                return;
            }
            if layer.bias_id == id {
                layer.bias[index] += delta;
                return;
            }
        }
    }
    panic!("unknown parameter identity");
}

/// Projection against its closed form: interior points untouched, exterior
/// points scaled radially, distance matching the analytic value.
pub fn check_projection(seed: u64, inputs: usize, tol: f64) -> CheckResult {
    let name = "projection";
    let mut rng = seeded_rng(derive_seed(seed, "projection"));
    let mut worst = 0.0f64;
    for t in 0..inputs {
        let dim = 2 + (t % 6);
        let budget = 0.25 + 2.0 * ((t % 7) as f64) / 7.0;
        let spread = if t % 3 == 0 { 0.05 } else { 2.0 };
        let x = pack_split(&draw_cn_vec(&mut rng, dim, spread));
        let mut u = x.clone();
        project_onto_ball(&mut u, budget);

        let energy: f64 = x.iter().map(|v| v * v).sum();
        let scale = if energy <= budget {
            1.0
        } else {
            (budget / energy).sqrt()
        };
        let oracle: Vec<f64> = x.iter().map(|v| v * scale).collect();
        let dev: f64 = u
            .iter()
            .zip(&oracle)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let moved: f64 = u
            .iter()
            .zip(&x)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let oracle_dist = (energy.sqrt() - budget.sqrt()).max(0.0);
        worst = worst.max(dev).max((moved - oracle_dist).abs());

        let u_energy: f64 = u.iter().map(|v| v * v).sum();
        if u_energy > budget {
            return CheckResult::fail(name, format!("projected point infeasible at input {t}"));
        }
    }
    if worst <= tol {
        CheckResult::pass(
            name,
            format!("{inputs} inputs, worst deviation {worst:.2e}"),
        )
    } else {
        CheckResult::fail(
            name,
            format!("worst deviation {worst:.2e} exceeds {tol:.0e}"),
        )
    }
}

/// Closed-form estimator error against a Monte Carlo rerun of the whole
/// receive pipeline. The tolerance follows the sample count.
pub fn check_lmmse_monte_carlo(seed: u64, samples: usize, rel_tol: f64) -> CheckResult {
    let name = "lmmse_monte_carlo";
    let system = SystemConfig::new(
        3,
        4,
        vec![4, 4, 4],
        8,
        crate::trainer::budgets_from_offsets(&crate::trainer::default_budget_offsets(3)),
        crate::trainer::snr_to_noise_variance(25.0, 8),
    )
    .unwrap();
    let pilots = match heuristic_pilots(&system, true) {
        Ok(p) => p,
        Err(e) => return CheckResult::fail(name, format!("pilot construction failed: {e}")),
    };
    let covs = system.iid_covariances();
    let noise_cov =
        CMat::identity(system.obs_dim()).scale(crate::cmat::C64::new(system.noise_variance, 0.0));
    let closed = match lmmse_mse_closed_form(&pilots, &covs, &noise_cov) {
        Ok(v) => v,
        Err(e) => return CheckResult::fail(name, format!("closed form failed: {e}")),
    };
    let mc = match lmmse_mse_monte_carlo(
        &pilots,
        &covs,
        &system,
        samples,
        derive_seed(seed, "lmmse_mc"),
    ) {
        Ok(v) => v,
        Err(e) => return CheckResult::fail(name, format!("monte carlo failed: {e}")),
    };
    let rel = (closed - mc).abs() / closed;
    if rel <= rel_tol {
        CheckResult::pass(
            name,
            format!("closed {closed:.4}, monte carlo {mc:.4}, relative gap {rel:.3e}"),
        )
    } else {
        CheckResult::fail(
            name,
            format!("relative gap {rel:.3e} exceeds {rel_tol:.2e} ({samples} samples)"),
        )
    }
}

/// Structural tying of the dense transmission layer, optionally corrupted
/// through fault injection.
pub fn check_pilot_structure(seed: u64, faults: &FaultInjection) -> CheckResult {
    let name = "pilot_structure";
    let mut rng = seeded_rng(derive_seed(seed, "structure"));
    let mut registry = crate::neural::ParamRegistry::new();
    for trial in 0..20 {
        let m_tilde = 1 + (trial % 4);
        let l = 2 + (trial % 7);
        let n = 1 + (trial % 5);
        let net = match StructuredPilotNet::new_gaussian(
            0,
            m_tilde,
            l,
            n,
            1.0,
            &mut rng,
            &mut registry,
        ) {
            Ok(net) => net,
            Err(e) => return CheckResult::fail(name, format!("pilot construction failed: {e}")),
        };
        let mut expanded = net.expanded();
        if faults.corrupt_expansion && trial == 7 {
            let v = expanded.get(0, 0);
            expanded.set(0, 0, v + crate::cmat::C64::new(1e-9, 0.0));
        }
        if let Err(e) = verify_expansion_structure(&expanded, &net.pilot_matrix(), n) {
            return CheckResult::fail(name, format!("trial {trial}: {e}"));
        }
        // The free coefficients and the expansion must carry the same
        // energy; the copies contribute exactly n times each entry.
        let energy = norm_sq(&unpack_split(net.coeffs()));
        let expanded_energy = net.expanded().frob_norm_sq() / n as f64;
        if (energy - expanded_energy).abs() > 1e-12 * energy.max(1.0) {
            return CheckResult::fail(
                name,
                format!("trial {trial}: expansion energy drifted from coefficients"),
            );
        }
    }
    CheckResult::pass(name, "20 shapes, exact tying and zero fill".into())
}

/// Runs every check with CLI-scale parameters.
pub fn run_all(seed: u64, faults: &FaultInjection) -> VerifyReport {
    VerifyReport {
        checks: vec![
            check_vectorization(seed, 100),
            check_gradients(seed, 3, 1e-4),
            check_projection(seed, 200, 1e-10),
            check_lmmse_monte_carlo(seed, 10_000, 0.0632),
            check_pilot_structure(seed, faults),
        ],
    }
}
