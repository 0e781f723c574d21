//! Uplink multiuser MIMO signal model.
//!
//! K users with M_k transmit antennas each send pilot matrices X_k (M_k x L)
//! towards a base station with N receive antennas:
//!
//! ```text
//! Y = sum_k H_k X_k + Z            (matrix form, N x L)
//! y = S g + z                      (vectorized form)
//! S = [X_1^T (x) I_N, ..., X_K^T (x) I_N],  g = [vec(H_1); ...; vec(H_K)]
//! ```
//!
//! Vectorization is column stacking, so `vec(H X) = (X^T (x) I_N) vec(H)` and
//! the two forms describe the same observation.

use crate::cmat::{norm_sq, CMat, C64};
use crate::rng::{draw_cn, seeded_rng};
use crate::{Error, Result};
use nalgebra::DMatrix;
use rand_chacha::ChaCha8Rng;
use std::io::Write;

/// Dimensions, per-user power budgets and the noise level of one system.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    pub users: usize,
    pub bs_antennas: usize,
    pub user_antennas: Vec<usize>,
    pub pilot_length: usize,
    pub power_budgets: Vec<f64>,
    pub noise_variance: f64,
}

impl SystemConfig {
    pub fn new(
        users: usize,
        bs_antennas: usize,
        user_antennas: Vec<usize>,
        pilot_length: usize,
        power_budgets: Vec<f64>,
        noise_variance: f64,
    ) -> Result<Self> {
        if users == 0 || bs_antennas == 0 || pilot_length == 0 {
            return Err(Error::Config(
                "users, bs_antennas and pilot_length must all be at least 1".into(),
            ));
        }
        if user_antennas.len() != users || power_budgets.len() != users {
            return Err(Error::Config(format!(
                "per-user lists must have length {users} (got {} antennas, {} budgets)",
                user_antennas.len(),
                power_budgets.len()
            )));
        }
        if user_antennas.contains(&0) {
            return Err(Error::Config(
                "every user needs at least one antenna".into(),
            ));
        }
        if power_budgets.iter().any(|&p| !(p.is_finite() && p > 0.0)) {
            return Err(Error::Config(
                "power budgets must be positive and finite".into(),
            ));
        }
        if !(noise_variance.is_finite() && noise_variance > 0.0) {
            return Err(Error::Config(
                "noise variance must be positive and finite".into(),
            ));
        }
        Ok(SystemConfig {
            users,
            bs_antennas,
            user_antennas,
            pilot_length,
            power_budgets,
            noise_variance,
        })
    }

    /// Total transmit antennas M across users.
    pub fn total_user_antennas(&self) -> usize {
        self.user_antennas.iter().sum()
    }

    /// Length of the stacked channel vector g.
    pub fn stacked_dim(&self) -> usize {
        self.bs_antennas * self.total_user_antennas()
    }

    /// Length of the vectorized observation y.
    pub fn obs_dim(&self) -> usize {
        self.bs_antennas * self.pilot_length
    }

    /// Identity covariance for every user (i.i.d. Rayleigh entries).
    pub fn iid_covariances(&self) -> Vec<CMat> {
        self.user_antennas
            .iter()
            .map(|&m| CMat::identity(self.bs_antennas * m))
            .collect()
    }
}

/// One draw of all user channels.
#[derive(Debug, Clone)]
pub struct ChannelRealization {
    /// H_k, one N x M_k matrix per user.
    pub per_user: Vec<CMat>,
    /// g = [vec(H_1); ...; vec(H_K)].
    pub stacked: Vec<C64>,
    /// The covariances the draw used.
    pub covariances: Vec<CMat>,
}

/// One received pilot block in both equivalent forms.
#[derive(Debug, Clone)]
pub struct ReceivedSignal {
    /// Y, N x L.
    pub matrix_form: CMat,
    /// y = vec(Y), exactly the column stacking of `matrix_form`.
    pub vector_form: Vec<C64>,
}

/// Reusable channel sampler with precomputed covariance square roots.
#[derive(Debug)]
pub struct ChannelSampler {
    /// None marks an exact identity covariance (no transform needed).
    factors: Vec<Option<CMat>>,
    dims: Vec<usize>,
    bs_antennas: usize,
}

impl ChannelSampler {
    /// Validates the covariances (Hermitian PSD within 1e-10) and computes
    /// their square roots by eigendecomposition. Eigenvalues in [-1e-10, 0]
    /// are clamped to zero; anything lower is rejected.
    pub fn new(config: &SystemConfig, covariances: &[CMat]) -> Result<Self> {
        if covariances.len() != config.users {
            return Err(Error::Dimension(format!(
                "{} covariances for {} users",
                covariances.len(),
                config.users
            )));
        }
        let mut factors = Vec::with_capacity(config.users);
        let mut dims = Vec::with_capacity(config.users);
        for (k, r) in covariances.iter().enumerate() {
            let dim = config.bs_antennas * config.user_antennas[k];
            if r.rows() != dim || r.cols() != dim {
                return Err(Error::Dimension(format!(
                    "covariance for user {k} is {}x{}, expected {dim}x{dim}",
                    r.rows(),
                    r.cols()
                )));
            }
            if !r.is_hermitian(1e-10) {
                return Err(Error::NotHermitian { user: k });
            }
            dims.push(dim);
            if *r == CMat::identity(dim) {
                factors.push(None);
                continue;
            }
            factors.push(Some(psd_sqrt(r, k)?));
        }
        Ok(ChannelSampler {
            factors,
            dims,
            bs_antennas: config.bs_antennas,
        })
    }

    /// Draws per-user channel vectors h_k = vec(H_k) in user order.
    pub fn draw(&self, rng: &mut ChaCha8Rng) -> Vec<Vec<C64>> {
        self.factors
            .iter()
            .zip(&self.dims)
            .map(|(f, &dim)| {
                let w: Vec<C64> = (0..dim).map(|_| draw_cn(rng, 1.0)).collect();
                match f {
                    None => w,
                    Some(sqrt) => sqrt.matvec(&w).expect("factor shape fixed at build"),
                }
            })
            .collect()
    }

    pub fn user_matrix(&self, k: usize, h: &[C64]) -> CMat {
        let n = self.bs_antennas;
        CMat::from_col_major(n, self.dims[k] / n, h.to_vec()).expect("h length fixed at draw")
    }
}

fn psd_sqrt(r: &CMat, user: usize) -> Result<CMat> {
    let eig = nalgebra::SymmetricEigen::new(r.to_na());
    let mut lambda = eig.eigenvalues.clone();
    for v in lambda.iter_mut() {
        if *v < -1e-10 {
            return Err(Error::NotPsd {
                user,
                eigenvalue: *v,
            });
        }
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let dim = r.rows();
    let mut scaled = eig.eigenvectors.clone();
    for c in 0..dim {
        let s = lambda[c].sqrt();
        for rix in 0..dim {
            scaled[(rix, c)] *= C64::new(s, 0.0);
        }
    }
    let sqrt: DMatrix<C64> = &scaled * eig.eigenvectors.adjoint();
    Ok(CMat::from_na(&sqrt))
}

/// Draws one channel realization for every user, deterministically in `seed`.
pub fn sample_channel(
    config: &SystemConfig,
    covariances: &[CMat],
    seed: u64,
) -> Result<ChannelRealization> {
    let sampler = ChannelSampler::new(config, covariances)?;
    let mut rng = seeded_rng(seed);
    let per_user_vecs = sampler.draw(&mut rng);
    let mut stacked = Vec::with_capacity(config.stacked_dim());
    let mut per_user = Vec::with_capacity(config.users);
    for (k, h) in per_user_vecs.iter().enumerate() {
        stacked.extend_from_slice(h);
        per_user.push(sampler.user_matrix(k, h));
    }
    Ok(ChannelRealization {
        per_user,
        stacked,
        covariances: covariances.to_vec(),
    })
}

/// Materializes `X^T (x) I_n` (size nL x nM for X of size M x L).
///
/// The expansion never multiplies: entry X[m, l] is copied verbatim to its n
/// tied sites (row l*n + j, column m*n + j), everything else stays an exact
/// zero. This is what keeps the tying and zero-pattern constraints exact by
/// construction.
pub fn expand_pilot(x: &CMat, n: usize) -> CMat {
    let (m_tilde, l) = (x.rows(), x.cols());
    let mut out = CMat::zeros(n * l, n * m_tilde);
    for c in 0..l {
        for r in 0..m_tilde {
            let v = x.get(r, c);
            for j in 0..n {
                out.set(c * n + j, r * n + j, v);
            }
        }
    }
    out
}

/// Stacks the per-user expansions into S = [X_1^T (x) I_n, ...].
pub fn build_stacked_pilot(pilots: &[CMat], n: usize) -> Result<CMat> {
    if pilots.is_empty() {
        return Err(Error::Empty("no pilot matrices".into()));
    }
    let l = pilots[0].cols();
    for (k, x) in pilots.iter().enumerate() {
        if x.cols() != l {
            return Err(Error::Dimension(format!(
                "pilot for user {k} has length {} but user 0 has {l}",
                x.cols()
            )));
        }
    }
    let blocks: Vec<CMat> = pilots.iter().map(|x| expand_pilot(x, n)).collect();
    CMat::hcat(&blocks)
}

/// Received pilot block for one channel realization and noise draw.
///
/// Computes Y through the matrix form and cross-checks the vectorized form
/// S g + z against vec(Y); the stored `vector_form` is exactly vec(Y).
pub fn simulate_reception(
    pilots: &[CMat],
    channel: &ChannelRealization,
    noise: &[C64],
    config: &SystemConfig,
) -> Result<ReceivedSignal> {
    if pilots.len() != config.users || channel.per_user.len() != config.users {
        return Err(Error::Dimension(format!(
            "{} pilots and {} channels for {} users",
            pilots.len(),
            channel.per_user.len(),
            config.users
        )));
    }
    if noise.len() != config.obs_dim() {
        return Err(Error::Dimension(format!(
            "noise length {} but observation dimension is {}",
            noise.len(),
            config.obs_dim()
        )));
    }
    let n = config.bs_antennas;
    let l = config.pilot_length;
    let mut y_mat = CMat::from_col_major(n, l, noise.to_vec())?;
    for (k, x) in pilots.iter().enumerate() {
        if x.rows() != config.user_antennas[k] || x.cols() != l {
            return Err(Error::Dimension(format!(
                "pilot for user {k} is {}x{}, expected {}x{l}",
                x.rows(),
                x.cols(),
                config.user_antennas[k]
            )));
        }
        let hx = channel.per_user[k].matmul(x)?;
        y_mat = y_mat.add(&hx)?;
    }

    let s = build_stacked_pilot(pilots, n)?;
    let mut y_vec = s.matvec(&channel.stacked)?;
    for (v, z) in y_vec.iter_mut().zip(noise) {
        *v += z;
    }
    let diff: f64 = y_mat
        .as_vec()
        .iter()
        .zip(&y_vec)
        .map(|(a, b)| (a - b).norm_sqr())
        .sum();
    let scale = norm_sq(&y_vec).max(1.0);
    debug_assert!(
        diff.sqrt() <= 1e-12 * scale.sqrt(),
        "matrix and vector reception paths disagree: {diff:e}"
    );

    let vector_form = y_mat.as_vec().to_vec();
    Ok(ReceivedSignal {
        matrix_form: y_mat,
        vector_form,
    })
}

/// Pilot energy tr(X X^H) = squared Frobenius norm.
pub fn pilot_energy(x: &CMat) -> f64 {
    x.frob_norm_sq()
}

/// Writes a batch of channel and noise realizations as CSV.
///
/// Layout: two comment lines describing the schema, then a header row, then
/// one row per realization: the sample index, the stacked channel g with
/// interleaved real/imaginary parts, then the noise vector z the same way.
pub fn write_sample_batch_csv(
    path: &std::path::Path,
    config: &SystemConfig,
    covariances: &[CMat],
    count: usize,
    seed: u64,
) -> Result<()> {
    let sampler = ChannelSampler::new(config, covariances)?;
    let mut rng = seeded_rng(seed);
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    let gd = config.stacked_dim();
    let zd = config.obs_dim();
    writeln!(
        f,
        "# channel/noise sample batch: g has {gd} complex entries, z has {zd}, noise variance {}",
        config.noise_variance
    )?;
    writeln!(
        f,
        "# one row per realization; complex entries stored as re,im pairs"
    )?;
    let mut header = String::from("sample");
    for i in 0..gd {
        header.push_str(&format!(",g{i}_re,g{i}_im"));
    }
    for i in 0..zd {
        header.push_str(&format!(",z{i}_re,z{i}_im"));
    }
    writeln!(f, "{header}")?;
    for s in 0..count {
        let per_user = sampler.draw(&mut rng);
        let mut row = format!("{s}");
        for h in &per_user {
            for c in h {
                row.push_str(&format!(",{},{}", fmt_sig(c.re), fmt_sig(c.im)));
            }
        }
        for _ in 0..zd {
            let z = draw_cn(&mut rng, config.noise_variance);
            row.push_str(&format!(",{},{}", fmt_sig(z.re), fmt_sig(z.im)));
        }
        writeln!(f, "{row}")?;
    }
    Ok(())
}

/// Formats a float with nine significant digits, the fixed width used by all
/// CSV output so identical runs are byte-identical.
pub fn fmt_sig(x: f64) -> String {
    format!("{x:.8e}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::draw_cn_vec;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn cfg(users: usize, n: usize, m: usize, l: usize) -> SystemConfig {
        SystemConfig::new(users, n, vec![m; users], l, vec![1.0; users], 0.1).unwrap()
    }

    fn random_cmat(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> CMat {
        let data = draw_cn_vec(rng, rows * cols, 1.0);
        CMat::from_col_major(rows, cols, data).unwrap()
    }

    /// Independent Kronecker product oracle, plain double loop.
    fn kron_oracle(a: &CMat, b: &CMat) -> CMat {
        let mut out = CMat::zeros(a.rows() * b.rows(), a.cols() * b.cols());
        for ar in 0..a.rows() {
            for ac in 0..a.cols() {
                for br in 0..b.rows() {
                    for bc in 0..b.cols() {
                        out.set(
                            ar * b.rows() + br,
                            ac * b.cols() + bc,
                            a.get(ar, ac) * b.get(br, bc),
                        );
                    }
                }
            }
        }
        out
    }

    #[test]
    fn expand_pilot_matches_kron_oracle() {
        let mut rng = seeded_rng(3);
        for &(m, l, n) in &[(1usize, 1usize, 1usize), (2, 3, 2), (4, 8, 4), (3, 2, 5)] {
            let x = random_cmat(&mut rng, m, l);
            let expanded = expand_pilot(&x, n);
            let oracle = kron_oracle(&x.transpose(), &CMat::identity(n));
            assert_eq!(expanded.rows(), oracle.rows());
            assert_eq!(expanded.cols(), oracle.cols());
            for cix in 0..oracle.cols() {
                for rix in 0..oracle.rows() {
                    assert_eq!(expanded.get(rix, cix), oracle.get(rix, cix));
                }
            }
        }
    }

    #[test]
    fn expand_pilot_scalar_is_scaled_identity() {
        let x = CMat::from_col_major(1, 1, vec![c(2.0, -1.0)]).unwrap();
        let e = expand_pilot(&x, 3);
        for i in 0..3 {
            assert_eq!(e.get(i, i), c(2.0, -1.0));
        }
        assert_eq!(e.get(0, 1), c(0.0, 0.0));
    }

    #[test]
    fn expand_pilot_of_zero_is_zero() {
        let e = expand_pilot(&CMat::zeros(2, 3), 4);
        assert!(e.as_vec().iter().all(|v| *v == c(0.0, 0.0)));
    }

    #[test]
    fn vectorization_identity_holds_on_random_shapes() {
        let mut rng = seeded_rng(11);
        for _ in 0..100 {
            let n = 1 + (rng.next_u32() % 4) as usize;
            let m = 1 + (rng.next_u32() % 4) as usize;
            let l = 1 + (rng.next_u32() % 4) as usize;
            let h = random_cmat(&mut rng, n, m);
            let x = random_cmat(&mut rng, m, l);
            let direct = h.matmul(&x).unwrap();
            let via_kron = expand_pilot(&x, n).matvec(h.as_vec()).unwrap();
            let num: f64 = direct
                .as_vec()
                .iter()
                .zip(&via_kron)
                .map(|(a, b)| (a - b).norm_sqr())
                .sum();
            let den = norm_sq(&via_kron).max(1e-30);
            assert!(num.sqrt() <= 1e-12 * den.sqrt().max(1.0));
        }
    }

    use rand::RngCore;

    #[test]
    fn stacked_pilot_blocks_match_per_user_expansion() {
        let mut rng = seeded_rng(5);
        let x1 = random_cmat(&mut rng, 2, 3);
        let x2 = random_cmat(&mut rng, 1, 3);
        let s = build_stacked_pilot(&[x1.clone(), x2.clone()], 2).unwrap();
        assert_eq!(s.rows(), 6);
        assert_eq!(s.cols(), 6);
        let e1 = expand_pilot(&x1, 2);
        let e2 = expand_pilot(&x2, 2);
        for cix in 0..4 {
            for rix in 0..6 {
                assert_eq!(s.get(rix, cix), e1.get(rix, cix));
            }
        }
        for cix in 0..2 {
            for rix in 0..6 {
                assert_eq!(s.get(rix, 4 + cix), e2.get(rix, cix));
            }
        }
    }

    #[test]
    fn stacked_pilot_single_user_equals_expansion() {
        let mut rng = seeded_rng(6);
        let x = random_cmat(&mut rng, 3, 4);
        let s = build_stacked_pilot(std::slice::from_ref(&x), 2).unwrap();
        assert_eq!(s, expand_pilot(&x, 2));
    }

    #[test]
    fn stacked_pilot_rejects_mismatched_lengths() {
        let a = CMat::zeros(2, 3);
        let b = CMat::zeros(2, 4);
        assert!(build_stacked_pilot(&[a, b], 2).is_err());
    }

    #[test]
    fn sampler_identity_covariance_has_unit_entry_variance() {
        let config = cfg(1, 2, 2, 4);
        let covs = config.iid_covariances();
        let sampler = ChannelSampler::new(&config, &covs).unwrap();
        let mut rng = seeded_rng(17);
        let dim = 4;
        let mut acc = vec![0.0; dim];
        let draws = 100_000;
        for _ in 0..draws {
            let h = &sampler.draw(&mut rng)[0];
            for (a, v) in acc.iter_mut().zip(h) {
                *a += v.norm_sqr();
            }
        }
        for a in acc {
            let var = a / draws as f64;
            assert!((0.97..=1.03).contains(&var), "entry variance {var}");
        }
    }

    #[test]
    fn sampler_scales_by_covariance_diagonal() {
        let config = cfg(1, 2, 2, 4);
        let mut r = CMat::identity(4);
        r.set(0, 0, c(4.0, 0.0));
        let sampler = ChannelSampler::new(&config, &[r]).unwrap();
        let mut rng = seeded_rng(23);
        let mut acc = 0.0;
        let draws = 100_000;
        for _ in 0..draws {
            acc += sampler.draw(&mut rng)[0][0].norm_sqr();
        }
        let var = acc / draws as f64;
        assert!((var - 4.0).abs() / 4.0 < 0.03, "first entry variance {var}");
    }

    #[test]
    fn zero_covariance_gives_zero_channel() {
        let config = cfg(1, 2, 1, 4);
        let r = CMat::zeros(2, 2);
        let real = sample_channel(&config, &[r], 7).unwrap();
        assert!(real.stacked.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn sample_channel_is_deterministic_in_seed() {
        let config = cfg(2, 2, 2, 4);
        let covs = config.iid_covariances();
        let a = sample_channel(&config, &covs, 99).unwrap();
        let b = sample_channel(&config, &covs, 99).unwrap();
        assert_eq!(a.stacked, b.stacked);
        let c2 = sample_channel(&config, &covs, 100).unwrap();
        assert_ne!(a.stacked, c2.stacked);
    }

    #[test]
    fn non_hermitian_covariance_is_rejected() {
        let config = cfg(1, 1, 2, 4);
        let mut r = CMat::identity(2);
        r.set(0, 1, c(0.5, 0.0));
        match ChannelSampler::new(&config, &[r]) {
            Err(Error::NotHermitian { user }) => assert_eq!(user, 0),
            other => panic!("expected NotHermitian, got {other:?}"),
        }
    }

    #[test]
    fn indefinite_covariance_is_rejected() {
        let config = cfg(1, 1, 2, 4);
        let mut r = CMat::identity(2);
        r.set(1, 1, c(-1.0, 0.0));
        match ChannelSampler::new(&config, &[r]) {
            Err(Error::NotPsd { user, .. }) => assert_eq!(user, 0),
            other => panic!("expected NotPsd, got {other:?}"),
        }
    }

    #[test]
    fn tiny_negative_eigenvalues_are_clamped() {
        let config = cfg(1, 1, 2, 4);
        let mut r = CMat::identity(2);
        r.set(1, 1, c(-1e-11, 0.0));
        assert!(ChannelSampler::new(&config, &[r]).is_ok());
    }

    #[test]
    fn reception_identity_pilot_passes_channel_through() {
        let config = SystemConfig::new(1, 1, vec![2], 2, vec![1.0], 0.1).unwrap();
        let covs = config.iid_covariances();
        let channel = sample_channel(&config, &covs, 3).unwrap();
        let noise = vec![c(0.0, 0.0); 2];
        let x = CMat::identity(2);
        let rx = simulate_reception(&[x], &channel, &noise, &config).unwrap();
        assert_eq!(rx.vector_form, channel.stacked);
    }

    #[test]
    fn reception_zero_inputs_give_zero_output() {
        let config = cfg(2, 2, 2, 3);
        let covs: Vec<CMat> = config
            .user_antennas
            .iter()
            .map(|&m| CMat::zeros(2 * m, 2 * m))
            .collect();
        let channel = sample_channel(&config, &covs, 1).unwrap();
        let noise = vec![c(0.0, 0.0); config.obs_dim()];
        let pilots = vec![CMat::zeros(2, 3), CMat::zeros(2, 3)];
        let rx = simulate_reception(&pilots, &channel, &noise, &config).unwrap();
        assert!(rx.vector_form.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn reception_matrix_and_vector_paths_agree() {
        let mut rng = seeded_rng(31);
        let config = cfg(2, 3, 2, 4);
        let covs = config.iid_covariances();
        for trial in 0..100 {
            let channel = sample_channel(&config, &covs, 1000 + trial).unwrap();
            let noise = draw_cn_vec(&mut rng, config.obs_dim(), config.noise_variance);
            let pilots = vec![random_cmat(&mut rng, 2, 4), random_cmat(&mut rng, 2, 4)];
            let rx = simulate_reception(&pilots, &channel, &noise, &config).unwrap();
            // Independent vectorized route.
            let s = build_stacked_pilot(&pilots, config.bs_antennas).unwrap();
            let mut y = s.matvec(&channel.stacked).unwrap();
            for (v, z) in y.iter_mut().zip(&noise) {
                *v += z;
            }
            let num: f64 = rx
                .vector_form
                .iter()
                .zip(&y)
                .map(|(a, b)| (a - b).norm_sqr())
                .sum::<f64>()
                .sqrt();
            let den = norm_sq(&y).sqrt().max(1.0);
            assert!(num <= 1e-12 * den);
            // Stored forms are exactly vec-related.
            assert_eq!(rx.matrix_form.as_vec(), rx.vector_form.as_slice());
        }
    }

    #[test]
    fn reception_rejects_wrong_noise_length() {
        let config = cfg(1, 2, 2, 3);
        let covs = config.iid_covariances();
        let channel = sample_channel(&config, &covs, 3).unwrap();
        let noise = vec![c(0.0, 0.0); 5];
        let pilots = vec![CMat::zeros(2, 3)];
        assert!(simulate_reception(&pilots, &channel, &noise, &config).is_err());
    }

    #[test]
    fn pilot_energy_is_squared_frobenius_norm() {
        let x = CMat::from_col_major(1, 2, vec![c(1.0, 1.0), c(0.0, 2.0)]).unwrap();
        assert_eq!(pilot_energy(&x), 6.0);
        assert_eq!(pilot_energy(&CMat::zeros(3, 3)), 0.0);
        let sqrt_p = 1.5f64;
        let scaled = CMat::identity(3).scale(c(sqrt_p, 0.0));
        assert!((pilot_energy(&scaled) - 3.0 * sqrt_p * sqrt_p).abs() < 1e-12);
    }

    #[test]
    fn sample_batch_csv_has_documented_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("samples.csv");
        let config = cfg(2, 2, 1, 3);
        let covs = config.iid_covariances();
        write_sample_batch_csv(&path, &config, &covs, 4, 42).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with('#'));
        assert!(lines[1].starts_with('#'));
        assert!(lines[2].starts_with("sample,g0_re,g0_im"));
        assert_eq!(lines.len(), 3 + 4);
        // Columns: index + 2 per complex entry of g and z.
        let cols = lines[3].split(',').count();
        assert_eq!(cols, 1 + 2 * (config.stacked_dim() + config.obs_dim()));
        // First channel entry matches an independent redraw from the same seed.
        let redraw = sample_channel(&config, &covs, 42).unwrap();
        let first: f64 = lines[3].split(',').nth(1).unwrap().parse().unwrap();
        assert!((first - redraw.stacked[0].re).abs() < 1e-7);
    }
}
