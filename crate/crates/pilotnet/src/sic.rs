//! Successive-interference-cancellation estimator chain.
//!
//! Users are processed in a fixed order. Each estimator network reads the
//! current residual signal, produces that user's packed channel estimate,
//! and the estimate is re-encoded through the same pilot coefficients and
//! subtracted from the residual before the next user runs. Because the
//! cancellation reuses the live pilot parameters, the reverse pass delivers
//! pilot gradients from both the transmission and the cancellation sites,
//! and estimator gradients flow from every later user's loss as well as the
//! user's own.

use crate::neural::{Activation, DenseLayer, NodeId, ParamRegistry, Tape};
use crate::pilot::StructuredPilotNet;
use crate::{Error, Result};
use rand_chacha::ChaCha8Rng;

/// One user's channel estimator: a plain multilayer perceptron from the
/// packed residual to the packed channel estimate.
#[derive(Debug, Clone)]
pub struct EstimatorNet {
    layers: Vec<DenseLayer>,
    user_index: usize,
    input_dim: usize,
    output_dim: usize,
}

impl EstimatorNet {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        user_index: usize,
        bs_antennas: usize,
        pilot_length: usize,
        m_tilde: usize,
        hidden_width: usize,
        hidden_layers: usize,
        rng: &mut ChaCha8Rng,
        registry: &mut ParamRegistry,
    ) -> Result<Self> {
        if hidden_width == 0 {
            return Err(Error::Dimension(
                "estimator hidden width must be positive".into(),
            ));
        }
        let input_dim = 2 * bs_antennas * pilot_length;
        let output_dim = 2 * bs_antennas * m_tilde;
        let mut layers = Vec::with_capacity(hidden_layers + 1);
        let mut in_dim = input_dim;
        for v in 0..hidden_layers {
            layers.push(DenseLayer::glorot(
                in_dim,
                hidden_width,
                Activation::Relu,
                rng,
                registry,
                &format!("user{user_index}.layer{v}"),
            ));
            in_dim = hidden_width;
        }
        layers.push(DenseLayer::glorot(
            in_dim,
            output_dim,
            Activation::Identity,
            rng,
            registry,
            &format!("user{user_index}.layer{hidden_layers}"),
        ));
        Ok(EstimatorNet {
            layers,
            user_index,
            input_dim,
            output_dim,
        })
    }

    pub fn user_index(&self) -> usize {
        self.user_index
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    /// Records the estimator on the tape and returns the estimate node.
    pub fn forward<'m>(&'m self, tape: &mut Tape<'m>, input: NodeId) -> Result<NodeId> {
        let mut node = input;
        for layer in &self.layers {
            node = tape.forward_dense(layer, node)?;
        }
        Ok(node)
    }
}

/// Tape nodes produced by one pass of the chained receiver.
pub struct SicOutputs {
    /// Superposed received signal, packed.
    pub received: NodeId,
    /// Channel estimate per user, indexed by user (not processing position).
    pub estimates: Vec<NodeId>,
    /// Residual after each cancellation, in processing order; the last entry
    /// is what remains when every user has been subtracted.
    pub residuals: Vec<NodeId>,
}

/// Validates a processing order as a permutation of the user indices.
pub fn check_order(order: &[usize], users: usize) -> Result<()> {
    if order.len() != users {
        return Err(Error::Dimension(format!(
            "processing order lists {} users, model has {users}",
            order.len()
        )));
    }
    let mut seen = vec![false; users];
    for &k in order {
        if k >= users || seen[k] {
            return Err(Error::Dimension(format!(
                "processing order is not a permutation: {order:?}"
            )));
        }
        seen[k] = true;
    }
    Ok(())
}

/// Records the full receive chain for one sample: superposition of every
/// user's transmitted pilot block plus noise, then per-user estimation with
/// successive cancellation. `channels[k]` is packed vec of user k's channel
/// matrix; `noise` is the packed noise vector.
pub fn sic_chain<'m>(
    tape: &mut Tape<'m>,
    pilots: &'m [StructuredPilotNet],
    estimators: &'m [EstimatorNet],
    order: &[usize],
    channels: &[Vec<f64>],
    noise: &[f64],
) -> Result<SicOutputs> {
    let users = pilots.len();
    if estimators.len() != users || channels.len() != users {
        return Err(Error::Dimension(format!(
            "chain over {users} pilots, {} estimators, {} channels",
            estimators.len(),
            channels.len()
        )));
    }
    check_order(order, users)?;

    let mut terms = Vec::with_capacity(users + 1);
    for (pilot, channel) in pilots.iter().zip(channels) {
        let ch = tape.constant(channel);
        terms.push(pilot.tnn_forward(tape, ch)?);
    }
    terms.push(tape.constant(noise));
    let received = tape.sum(&terms)?;

    let mut estimates = vec![None; users];
    let mut residuals = Vec::with_capacity(users);
    let mut residual = received;
    for &k in order {
        let estimate = estimators[k].forward(tape, residual)?;
        let cancel = pilots[k].tnn_forward(tape, estimate)?;
        residual = tape.sub(residual, &[cancel])?;
        estimates[k] = Some(estimate);
        residuals.push(residual);
    }
    Ok(SicOutputs {
        received,
        estimates: estimates
            .into_iter()
            .map(|e| e.expect("order covers every user"))
            .collect(),
        residuals,
    })
}

/// Residual left after cancelling every user with its true channel instead
/// of an estimate. With exact priors the chain should return the noise
/// vector up to rounding, which bounds the arithmetic error of the
/// incremental residual updates.
pub fn residual_with_perfect_priors<'m>(
    tape: &mut Tape<'m>,
    pilots: &'m [StructuredPilotNet],
    order: &[usize],
    channels: &[Vec<f64>],
    noise: &[f64],
) -> Result<NodeId> {
    let users = pilots.len();
    if channels.len() != users {
        return Err(Error::Dimension(format!(
            "{users} pilots but {} channels",
            channels.len()
        )));
    }
    check_order(order, users)?;
    let mut ch_nodes = Vec::with_capacity(users);
    let mut terms = Vec::with_capacity(users + 1);
    for (pilot, channel) in pilots.iter().zip(channels) {
        let ch = tape.constant(channel);
        ch_nodes.push(ch);
        terms.push(pilot.tnn_forward(tape, ch)?);
    }
    terms.push(tape.constant(noise));
    let received = tape.sum(&terms)?;

    let mut residual = received;
    for &k in order {
        let cancel = pilots[k].tnn_forward(tape, ch_nodes[k])?;
        residual = tape.sub(residual, &[cancel])?;
    }
    Ok(residual)
}
