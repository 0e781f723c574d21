//! Closed-form LMMSE channel estimation for a fixed pilot set.
//!
//! With S the stacked expanded pilot matrix, C_h = blkdiag(R_1, ..., R_K)
//! and C_z the noise covariance, the per-user estimator is
//!
//! ```text
//! D_k = R_k Xbar_k^H (sum_i Xbar_i R_i Xbar_i^H + C_z)^{-1}
//! ```
//!
//! and the achieved mean squared error is
//!
//! ```text
//! E = tr( (C_h^{-1} + S^H C_z^{-1} S)^{-1} )
//! ```
//!
//! The shared inner matrix is factored once (Cholesky) and reused across
//! users; no explicit inverse of it is ever formed. When some R_k is
//! singular the trace formula falls back to the equivalent
//! `tr(C_h) - tr(Dbar S C_h)`, which needs no C_h^{-1}.

use crate::cmat::{CMat, C64};
use crate::mimo::{build_stacked_pilot, expand_pilot, pilot_energy, ChannelSampler, SystemConfig};
use crate::rng::{draw_cn, seeded_rng};
use crate::{Error, Result};
use nalgebra::{Cholesky, DMatrix};

/// LMMSE estimator for one pilot set and channel statistics.
#[derive(Debug, Clone)]
pub struct LmmseEstimator {
    /// Row-stacked estimator, stacked channel dim x observation dim.
    pub d_bar: CMat,
    /// Per-user row blocks of `d_bar`.
    pub per_user: Vec<CMat>,
    /// Receive antenna count the pilots were expanded with.
    pub bs_antennas: usize,
}

/// Infers the receive antenna count from pilot and covariance shapes and
/// validates consistency across users.
fn infer_bs_antennas(pilots: &[CMat], covariances: &[CMat]) -> Result<usize> {
    if pilots.is_empty() || pilots.len() != covariances.len() {
        return Err(Error::Dimension(format!(
            "{} pilots against {} covariances",
            pilots.len(),
            covariances.len()
        )));
    }
    let m0 = pilots[0].rows();
    if m0 == 0 || !covariances[0].rows().is_multiple_of(m0) {
        return Err(Error::Dimension(
            "covariance dimension is not a multiple of the pilot row count".into(),
        ));
    }
    let n = covariances[0].rows() / m0;
    for (k, (x, r)) in pilots.iter().zip(covariances).enumerate() {
        if r.rows() != r.cols() || r.rows() != n * x.rows() {
            return Err(Error::Dimension(format!(
                "user {k}: covariance {}x{} does not match pilot rows {} with {} receive antennas",
                r.rows(),
                r.cols(),
                x.rows(),
                n
            )));
        }
        if x.cols() != pilots[0].cols() {
            return Err(Error::Dimension(format!(
                "user {k}: pilot length {} differs from user 0 ({})",
                x.cols(),
                pilots[0].cols()
            )));
        }
    }
    Ok(n)
}

/// Builds the estimator. The inner matrix is factored once and shared by
/// every user block.
pub fn build_lmmse(
    pilots: &[CMat],
    covariances: &[CMat],
    noise_cov: &CMat,
) -> Result<LmmseEstimator> {
    let n = infer_bs_antennas(pilots, covariances)?;
    let l = pilots[0].cols();
    let obs = n * l;
    if noise_cov.rows() != obs || noise_cov.cols() != obs {
        return Err(Error::Dimension(format!(
            "noise covariance is {}x{}, expected {obs}x{obs}",
            noise_cov.rows(),
            noise_cov.cols()
        )));
    }

    // A = sum_k Xbar_k R_k Xbar_k^H + C_z, and W = [Xbar_1 R_1, ...] = S C_h.
    let mut a = noise_cov.clone();
    let mut w_blocks = Vec::with_capacity(pilots.len());
    for (x, r) in pilots.iter().zip(covariances) {
        let xb = expand_pilot(x, n);
        let xr = xb.matmul(r)?;
        a = a.add(&xr.matmul(&xb.adjoint())?)?;
        w_blocks.push(xr);
    }
    let w = CMat::hcat(&w_blocks)?;

    let chol = Cholesky::new(a.to_na()).ok_or(Error::SingularNoise)?;
    // V = A^{-1} S C_h, so Dbar = C_h S^H A^{-1} = V^H.
    let v = chol.solve(&w.to_na());
    let d_bar = CMat::from_na(&v).adjoint();

    let mut per_user = Vec::with_capacity(pilots.len());
    let mut row = 0;
    for r in covariances {
        let rows = r.rows();
        let block = CMat::from_fn(rows, obs, |i, j| d_bar.get(row + i, j));
        per_user.push(block);
        row += rows;
    }
    Ok(LmmseEstimator {
        d_bar,
        per_user,
        bs_antennas: n,
    })
}

/// Applies the estimator to one vectorized observation.
pub fn lmmse_estimate(est: &LmmseEstimator, y: &[C64]) -> Result<Vec<C64>> {
    est.d_bar.matvec(y)
}

/// Closed-form MSE of the LMMSE estimator for this pilot set.
///
/// Uses the information-form trace when C_h is invertible and falls back to
/// `tr(C_h) - tr(Dbar S C_h)` when it is not. A singular noise covariance is
/// an error in both paths.
pub fn lmmse_mse_closed_form(
    pilots: &[CMat],
    covariances: &[CMat],
    noise_cov: &CMat,
) -> Result<f64> {
    let n = infer_bs_antennas(pilots, covariances)?;
    let s = build_stacked_pilot(pilots, n)?;
    let c_h = CMat::block_diag(covariances)?;

    let chol_cz = Cholesky::new(noise_cov.to_na()).ok_or(Error::SingularNoise)?;
    match Cholesky::new(c_h.to_na()) {
        Some(chol_ch) => {
            let nm = c_h.rows();
            let s_na = s.to_na();
            let ch_inv = chol_ch.solve(&DMatrix::<C64>::identity(nm, nm));
            let b = ch_inv + s_na.adjoint() * chol_cz.solve(&s_na);
            let chol_b = Cholesky::new(b).ok_or_else(|| {
                Error::Dimension("information matrix lost positive definiteness".into())
            })?;
            let b_inv = chol_b.solve(&DMatrix::<C64>::identity(nm, nm));
            Ok((0..nm).map(|i| b_inv[(i, i)].re).sum())
        }
        None => mse_from_estimator(pilots, covariances, noise_cov, &s, &c_h),
    }
}

/// `tr(C_h) - tr(Dbar S C_h)`, valid for the optimal estimator even when
/// C_h has no inverse.
fn mse_from_estimator(
    pilots: &[CMat],
    covariances: &[CMat],
    noise_cov: &CMat,
    s: &CMat,
    c_h: &CMat,
) -> Result<f64> {
    let est = build_lmmse(pilots, covariances, noise_cov)?;
    let sch = s.matmul(c_h)?;
    let t = est.d_bar.matmul(&sch)?;
    let tr_ch: f64 = (0..c_h.rows()).map(|i| c_h.get(i, i).re).sum();
    let tr_t: f64 = (0..t.rows()).map(|i| t.get(i, i).re).sum();
    Ok(tr_ch - tr_t)
}

/// Monte-Carlo MSE of the estimator under i.i.d. noise CN(0, noise_var I).
pub fn lmmse_mse_monte_carlo(
    pilots: &[CMat],
    covariances: &[CMat],
    config: &SystemConfig,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    if samples == 0 {
        return Err(Error::Empty("zero Monte-Carlo samples".into()));
    }
    let obs = config.obs_dim();
    let noise_cov = CMat::identity(obs).scale(C64::new(config.noise_variance, 0.0));
    let est = build_lmmse(pilots, covariances, &noise_cov)?;
    let s = build_stacked_pilot(pilots, config.bs_antennas)?;
    let sampler = ChannelSampler::new(config, covariances)?;
    let mut rng = seeded_rng(seed);
    let mut acc = 0.0;
    for _ in 0..samples {
        let per_user = sampler.draw(&mut rng);
        let g: Vec<C64> = per_user.into_iter().flatten().collect();
        let mut y = s.matvec(&g)?;
        for v in y.iter_mut() {
            *v += draw_cn(&mut rng, config.noise_variance);
        }
        let ghat = est.d_bar.matvec(&y)?;
        acc += g
            .iter()
            .zip(&ghat)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>();
    }
    Ok(acc / samples as f64)
}

/// Diagonal phase generator behind the heuristic pilot family.
const HEURISTIC_PHASES: [f64; 4] = [
    0.0,
    std::f64::consts::PI,
    5.0 * std::f64::consts::PI / 6.0,
    2.0 * std::f64::consts::PI / 3.0,
];

/// Fixed heuristic pilot family: X_k = sqrt(p_k / 2) [U_k, U_k] with
/// U_k = D^(k-1) and D the diagonal unit-modulus generator above.
///
/// Only the 4-antenna, length-8 shape the family is defined for is accepted.
/// The literal matrices carry energy 4 p_k; with `normalize_to_budget` each
/// X_k is rescaled so tr(X_k X_k^H) = p_k and comparisons against
/// budget-constrained schemes are fair.
pub fn heuristic_pilots(config: &SystemConfig, normalize_to_budget: bool) -> Result<Vec<CMat>> {
    let m_gen = HEURISTIC_PHASES.len();
    for (k, &m) in config.user_antennas.iter().enumerate() {
        if m != m_gen || config.pilot_length != 2 * m_gen {
            return Err(Error::UnsupportedPilotShape {
                user: k,
                m_tilde: m,
                l: config.pilot_length,
            });
        }
    }
    let mut pilots = Vec::with_capacity(config.users);
    for k in 0..config.users {
        let p = config.power_budgets[k];
        let amp = (p / 2.0).sqrt();
        let mut x = CMat::zeros(m_gen, 2 * m_gen);
        for (m, &phase) in HEURISTIC_PHASES.iter().enumerate() {
            let u = C64::from_polar(amp, phase * k as f64);
            x.set(m, m, u);
            x.set(m, m_gen + m, u);
        }
        if normalize_to_budget {
            let scale = (p / pilot_energy(&x)).sqrt();
            pilots.push(x.scale(C64::new(scale, 0.0)));
        } else {
            pilots.push(x);
        }
    }
    Ok(pilots)
}
