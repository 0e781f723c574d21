//! Trainable pilot networks with a structural weight constraint.
//!
//! A user's transmission layer, written as a dense matrix, must equal the
//! pilot expansion `transpose(X) (x) I_N`: every pilot coefficient appears at
//! N tape positions (one per receive antenna) and all remaining entries are
//! zero. Instead of learning the dense matrix and projecting back onto that
//! structure, the network stores only the M~ x L pilot coefficients and
//! applies them through a complex product, so the structure holds by
//! construction and the reverse pass sums the per-copy gradients into the
//! shared coefficients.

use crate::cmat::{norm_sq, pack_split, unpack_split, CMat};
use crate::mimo::expand_pilot;
use crate::neural::{NodeId, ParamId, ParamRegistry, Tape};
use crate::rng::draw_cn_vec;
use crate::{Error, Result};
use rand_chacha::ChaCha8Rng;

/// Fraction of the power budget used by random initial pilots, leaving the
/// first projected steps strictly inside the feasible ball.
pub const INIT_BUDGET_FRACTION: f64 = 0.9;

/// Pilot side of the joint model for one user.
#[derive(Debug, Clone)]
pub struct StructuredPilotNet {
    /// Packed complex coefficients of the M~ x L pilot matrix, column major.
    coeffs: Vec<f64>,
    user_index: usize,
    m_tilde: usize,
    pilot_length: usize,
    bs_antennas: usize,
    power_budget: f64,
    param_id: ParamId,
}

impl StructuredPilotNet {
    /// Random circular-Gaussian pilot scaled to a fixed fraction of the
    /// power budget.
    pub fn new_gaussian(
        user_index: usize,
        m_tilde: usize,
        pilot_length: usize,
        bs_antennas: usize,
        power_budget: f64,
        rng: &mut ChaCha8Rng,
        registry: &mut ParamRegistry,
    ) -> Result<Self> {
        if m_tilde == 0 || pilot_length == 0 || bs_antennas == 0 {
            return Err(Error::Dimension("pilot dimensions must be positive".into()));
        }
        if !(power_budget.is_finite() && power_budget > 0.0) {
            return Err(Error::Config(format!(
                "power budget for user {user_index} must be positive"
            )));
        }
        let raw = draw_cn_vec(rng, m_tilde * pilot_length, 1.0);
        let mut coeffs = pack_split(&raw);
        let energy = norm_sq(&raw);
        let scale = (INIT_BUDGET_FRACTION * power_budget / energy).sqrt();
        coeffs.iter_mut().for_each(|c| *c *= scale);
        let param_id = registry.alloc(format!("pilot{user_index}"), coeffs.len());
        Ok(StructuredPilotNet {
            coeffs,
            user_index,
            m_tilde,
            pilot_length,
            bs_antennas,
            power_budget,
            param_id,
        })
    }

    /// Warm start from an explicit pilot matrix, projected into the feasible
    /// ball in case its energy exceeds the budget.
    pub fn new_from_pilot(
        user_index: usize,
        pilot: &CMat,
        bs_antennas: usize,
        power_budget: f64,
        registry: &mut ParamRegistry,
    ) -> Result<Self> {
        if !(power_budget.is_finite() && power_budget > 0.0) {
            return Err(Error::Config(format!(
                "power budget for user {user_index} must be positive"
            )));
        }
        let mut net = StructuredPilotNet {
            coeffs: pack_split(pilot.as_vec()),
            user_index,
            m_tilde: pilot.rows(),
            pilot_length: pilot.cols(),
            bs_antennas,
            power_budget,
            param_id: registry.alloc(
                format!("pilot{user_index}"),
                2 * pilot.rows() * pilot.cols(),
            ),
        };
        net.project_power();
        Ok(net)
    }

    pub fn user_index(&self) -> usize {
        self.user_index
    }

    pub fn m_tilde(&self) -> usize {
        self.m_tilde
    }

    pub fn pilot_length(&self) -> usize {
        self.pilot_length
    }

    pub fn power_budget(&self) -> f64 {
        self.power_budget
    }

    pub fn param_id(&self) -> ParamId {
        self.param_id
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    /// Squared Frobenius norm of the pilot matrix.
    pub fn energy(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum()
    }

    /// Current pilot coefficients as an M~ x L matrix.
    pub fn pilot_matrix(&self) -> CMat {
        CMat::from_col_major(self.m_tilde, self.pilot_length, unpack_split(&self.coeffs))
            .expect("coefficient count matches pilot shape")
    }

    /// Dense transmission-layer weights transpose(X) (x) I_N. Training never
    /// touches this form; it exists for structural verification and for the
    /// closed-form estimator.
    pub fn expanded(&self) -> CMat {
        expand_pilot(&self.pilot_matrix(), self.bs_antennas)
    }

    /// Records the transmission layer vec(H X) on the tape. The channel node
    /// carries packed vec(H) with H of size N x M~.
    pub fn tnn_forward<'m>(&'m self, tape: &mut Tape<'m>, channel: NodeId) -> Result<NodeId> {
        tape.cplx_matmul(
            channel,
            &self.coeffs,
            self.param_id,
            self.bs_antennas,
            self.m_tilde,
            self.pilot_length,
        )
    }

    /// Projects the coefficients onto the power ball after a gradient step.
    pub fn project_power(&mut self) {
        project_onto_ball(&mut self.coeffs, self.power_budget);
    }

    pub fn is_feasible(&self) -> bool {
        self.energy() <= self.power_budget
    }
}

/// Euclidean projection of a packed vector onto the ball of squared norm at
/// most `budget`: points inside stay untouched, points outside move radially
/// to the boundary. Rounding can leave the rescaled point a few ulps outside,
/// so the scale is nudged down until the constraint holds.
pub fn project_onto_ball(coeffs: &mut [f64], budget: f64) {
    let energy: f64 = coeffs.iter().map(|c| c * c).sum();
    if energy <= budget {
        return;
    }
    let mut scale = (budget / energy).sqrt();
    loop {
        let scaled_energy: f64 = coeffs.iter().map(|c| (c * scale) * (c * scale)).sum();
        if scaled_energy <= budget {
            break;
        }
        scale *= 1.0 - 1e-15;
    }
    coeffs.iter_mut().for_each(|c| *c *= scale);
}

/// Checks that a dense transmission layer carries exactly the pilot
/// expansion: each coefficient replicated unchanged across its N copies and
/// every off-pattern entry exactly zero.
pub fn verify_expansion_structure(expanded: &CMat, pilot: &CMat, bs_antennas: usize) -> Result<()> {
    let n = bs_antennas;
    let (mt, l) = (pilot.rows(), pilot.cols());
    if expanded.rows() != l * n || expanded.cols() != mt * n {
        return Err(Error::Verification(format!(
            "expansion shape {}x{} does not match {}x{} pilot with {n} antennas",
            expanded.rows(),
            expanded.cols(),
            mt,
            l
        )));
    }
    for bc in 0..mt {
        for br in 0..l {
            let x = pilot.get(bc, br);
            for i in 0..n {
                for j in 0..n {
                    let v = expanded.get(br * n + i, bc * n + j);
                    if i == j {
                        if v != x {
                            return Err(Error::Verification(format!(
                                "tied copy ({i},{i}) of pilot entry ({bc},{br}) drifted: {v} vs {x}"
                            )));
                        }
                    } else if v != crate::cmat::C64::new(0.0, 0.0) {
                        return Err(Error::Verification(format!(
                            "off-pattern entry at block ({br},{bc}) offset ({i},{j}) is {v}"
                        )));
                    }
                }
            }
        }
    }
    Ok(())
}
