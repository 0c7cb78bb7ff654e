//! Physical layer: geometry, spatial correlation, channel realizations,
//! pilot signaling and MMSE channel estimation.
//!
//! Every base station estimates the channels of every user in the area, so
//! downstream rate matrices do not depend on which BS ends up serving whom.
//! All randomness flows through caller-provided seeded generators; identical
//! seeds produce bit-identical outputs.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Eigenvalue cutoff (relative to the largest eigenvalue) below which a
/// correlation mode is dropped from the sampling factor.
const FACTOR_RANK_TOL: f64 = 1e-14;

/// Minimum UE-BS distance in meters; closer positions are clamped to avoid
/// singular pathloss.
pub const MIN_DISTANCE_M: f64 = 10.0;

pub fn dbm_to_watt(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// All physical and protocol constants of one network deployment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Number of base stations (cells).
    pub n_bs: usize,
    /// Antennas per base station.
    pub n_antennas: usize,
    /// Total users in the service area.
    pub n_users: usize,
    /// Uplink transmit power per user, watts.
    pub ul_power_w: f64,
    /// Receiver noise power, watts.
    pub noise_w: f64,
    /// Original dBm figures, kept for report headers.
    pub ul_power_dbm: f64,
    pub noise_dbm: f64,
    /// Communication bandwidth, Hz.
    pub bandwidth_hz: f64,
    /// Samples per coherence block, pilot samples, uplink-data samples.
    pub tau_c: usize,
    pub tau_p: usize,
    pub tau_u: usize,
    /// Edge of the square service area, meters.
    pub area_edge_m: f64,
    /// BS coordinates in meters.
    pub bs_positions: Vec<[f64; 2]>,
    /// Per-BS serving capacity d_m.
    pub capacities: Vec<usize>,
    /// Angular standard deviation of local scattering, degrees.
    pub asd_deg: f64,
    /// Antenna spacing in wavelengths.
    pub antenna_spacing: f64,
}

impl Default for NetworkConfig {
    /// The reference deployment: 4 BSs with 64 antennas on a 1 km square,
    /// 40 single-antenna users, 20 dBm uplink power, -94 dBm noise, 20 MHz,
    /// 200-sample coherence blocks with 10 pilots, capacity 15 per BS.
    fn default() -> Self {
        NetworkConfig {
            n_bs: 4,
            n_antennas: 64,
            n_users: 40,
            ul_power_w: dbm_to_watt(20.0),
            noise_w: dbm_to_watt(-94.0),
            ul_power_dbm: 20.0,
            noise_dbm: -94.0,
            bandwidth_hz: 20e6,
            tau_c: 200,
            tau_p: 10,
            tau_u: 190,
            area_edge_m: 1000.0,
            bs_positions: vec![
                [250.0, 250.0],
                [250.0, 750.0],
                [750.0, 250.0],
                [750.0, 750.0],
            ],
            capacities: vec![15, 15, 15, 15],
            asd_deg: 10.0,
            antenna_spacing: 0.5,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_bs == 0 || self.n_antennas == 0 || self.n_users == 0 {
            return Err(Error::domain("M, N and K must all be at least 1"));
        }
        if self.bs_positions.len() != self.n_bs {
            return Err(Error::domain(format!(
                "expected {} BS positions, got {}",
                self.n_bs,
                self.bs_positions.len()
            )));
        }
        if self.capacities.len() != self.n_bs {
            return Err(Error::domain(format!(
                "expected {} capacities, got {}",
                self.n_bs,
                self.capacities.len()
            )));
        }
        if !(self.ul_power_w > 0.0) || !(self.noise_w > 0.0) || !(self.bandwidth_hz > 0.0) {
            return Err(Error::domain("powers and bandwidth must be strictly positive"));
        }
        if self.tau_p + self.tau_u > self.tau_c {
            return Err(Error::domain(format!(
                "tau_p + tau_u = {} exceeds tau_c = {}",
                self.tau_p + self.tau_u,
                self.tau_c
            )));
        }
        if self.tau_p == 0 {
            return Err(Error::domain("tau_p must be at least 1"));
        }
        if !(self.area_edge_m > 0.0) || !(self.antenna_spacing > 0.0) || self.asd_deg < 0.0 {
            return Err(Error::domain(
                "area edge and antenna spacing must be positive, ASD nonnegative",
            ));
        }
        let total_capacity: usize = self.capacities.iter().sum();
        if total_capacity < self.n_users {
            return Err(Error::domain(format!(
                "sum of capacities {} cannot serve all {} users",
                total_capacity, self.n_users
            )));
        }
        Ok(())
    }

    /// Large-scale channel gain (linear) for a UE-BS distance in meters:
    /// urban-macro pathloss -148.1 - 37.6 log10(d_km), distance clamped at
    /// [`MIN_DISTANCE_M`].
    pub fn channel_gain(&self, distance_m: f64) -> f64 {
        let d_km = distance_m.max(MIN_DISTANCE_M) / 1000.0;
        let beta_db = -148.1 - 37.6 * d_km.log10();
        10f64.powf(beta_db / 10.0)
    }
}

/// Per-pair sampling/estimation structure. Scenarios built from geometry
/// carry the `R = D S D^H` form (D a unitary steering diagonal, S real PSD
/// Toeplitz), which keeps the hot channel-sampling and estimation kernels in
/// real arithmetic; hand-built scenarios fall back to a dense complex factor.
#[derive(Debug, Clone)]
pub(crate) enum PairStructure {
    Structured {
        /// Diagonal of D: unit-modulus steering phases, length N.
        steering: DVector<Complex64>,
        /// The real kernel matrix S with R = D S D^H.
        s_mat: DMatrix<f64>,
        /// Real factor of S (clamped eigendecomposition), N x r.
        factor: DMatrix<f64>,
    },
    Generic {
        /// Complex factor with factor * factor^H = R.
        factor: DMatrix<Complex64>,
    },
}

impl PairStructure {
    fn sample_dim(&self) -> usize {
        match self {
            PairStructure::Structured { factor, .. } => factor.ncols(),
            PairStructure::Generic { factor } => factor.ncols(),
        }
    }
}

/// One large-scale realization: user positions plus the derived per-(user, BS)
/// gains, spatial correlation matrices and their sampling factors.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub ue_positions: Vec<[f64; 2]>,
    /// gains[k][m] = average channel gain beta between user k and BS m.
    pub gains: Vec<Vec<f64>>,
    /// correlations[k][m] = N x N Hermitian PSD spatial correlation matrix.
    pub correlations: Vec<Vec<DMatrix<Complex64>>>,
    structure: Vec<Vec<PairStructure>>,
}

impl Scenario {
    pub fn n_users(&self) -> usize {
        self.gains.len()
    }

    pub fn n_bs(&self) -> usize {
        self.gains.first().map_or(0, Vec::len)
    }

    /// Dense sampling factor of pair (k, m): N x r with factor factor^H = R.
    pub fn sampling_factor(&self, k: usize, m: usize) -> DMatrix<Complex64> {
        match &self.structure[k][m] {
            PairStructure::Structured { steering, factor, .. } => {
                let mut dense = factor.map(|v| Complex64::new(v, 0.0));
                for row in 0..dense.nrows() {
                    let phase = steering[row];
                    for col in 0..dense.ncols() {
                        dense[(row, col)] *= phase;
                    }
                }
                dense
            }
            PairStructure::Generic { factor } => factor.clone(),
        }
    }

    /// Builds a scenario from explicit correlation matrices, factorizing each
    /// one by Hermitian eigendecomposition (negative eigenvalues clamped to
    /// zero). Intended for hand-constructed inputs; [`build_scenario`] is the
    /// geometric path.
    pub fn from_parts(
        ue_positions: Vec<[f64; 2]>,
        gains: Vec<Vec<f64>>,
        correlations: Vec<Vec<DMatrix<Complex64>>>,
    ) -> Result<Scenario> {
        let mut structure = Vec::with_capacity(correlations.len());
        for (k, row) in correlations.iter().enumerate() {
            let mut srow = Vec::with_capacity(row.len());
            for (m, r) in row.iter().enumerate() {
                let factor = hermitian_sqrt_factor(r).ok_or_else(|| {
                    Error::numerical(format!(
                        "eigendecomposition of correlation matrix failed at user {k}, BS {m}"
                    ))
                })?;
                srow.push(PairStructure::Generic { factor });
            }
            structure.push(srow);
        }
        Ok(Scenario { ue_positions, gains, correlations, structure })
    }

    /// Checks the Hermitian / trace / eigenvalue invariants on every
    /// correlation matrix. Quadratic-to-cubic in N per pair; meant for tests
    /// and the self-test suite, not hot paths.
    pub fn validate(&self) -> Result<()> {
        for (k, row) in self.correlations.iter().enumerate() {
            for (m, r) in row.iter().enumerate() {
                let n = r.nrows();
                let mut herm_err = 0f64;
                for s in 0..n {
                    for t in 0..n {
                        herm_err = herm_err.max((r[(s, t)] - r[(t, s)].conj()).norm());
                    }
                }
                if herm_err > 1e-12 * r.iter().map(|z| z.norm()).fold(1.0, f64::max) {
                    return Err(Error::numerical(format!(
                        "correlation matrix not Hermitian at user {k}, BS {m} (err {herm_err:.3e})"
                    )));
                }
                let trace: f64 = (0..n).map(|s| r[(s, s)].re).sum();
                let beta = self.gains[k][m];
                if (trace / n as f64 - beta).abs() > 1e-9 * beta.abs().max(f64::MIN_POSITIVE) {
                    return Err(Error::numerical(format!(
                        "trace(R)/N does not match gain at user {k}, BS {m}"
                    )));
                }
                if let Some(eig) = r.clone().try_symmetric_eigen(1e-13, 1024) {
                    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
                    if min < -1e-9 * trace.max(f64::MIN_POSITIVE) {
                        return Err(Error::numerical(format!(
                            "correlation matrix indefinite at user {k}, BS {m} (lambda_min {min:.3e})"
                        )));
                    }
                } else {
                    return Err(Error::numerical(format!(
                        "eigendecomposition failed at user {k}, BS {m}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Square-root factor of a Hermitian PSD matrix via eigendecomposition with
/// negative eigenvalues clamped to zero. Columns below `FACTOR_RANK_TOL`
/// relative to the top eigenvalue are dropped.
pub(crate) fn hermitian_sqrt_factor(r: &DMatrix<Complex64>) -> Option<DMatrix<Complex64>> {
    let n = r.nrows();
    if r.iter().all(|z| z.norm() == 0.0) {
        return Some(DMatrix::zeros(n, 0));
    }
    let eig = r.clone().try_symmetric_eigen(1e-13, 4096)?;
    let lambda_max = eig.eigenvalues.iter().cloned().fold(0f64, f64::max);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let kept: Vec<usize> = order
        .into_iter()
        .filter(|&i| eig.eigenvalues[i] > lambda_max * FACTOR_RANK_TOL)
        .collect();
    let mut factor = DMatrix::zeros(n, kept.len());
    for (col, &i) in kept.iter().enumerate() {
        let scale = eig.eigenvalues[i].max(0.0).sqrt();
        for row in 0..n {
            factor[(row, col)] = eig.eigenvectors[(row, i)] * scale;
        }
    }
    Some(factor)
}

/// Builds the large-scale scenario for the given user positions: urban-macro
/// pathloss gains and Gaussian local-scattering correlation matrices
/// `[R]_{s,t} = beta * exp(i 2 pi D (s-t) sin phi) * exp(-(sigma 2 pi D (s-t) cos phi)^2 / 2)`
/// for a uniform linear array with spacing `D` wavelengths and angular
/// standard deviation `sigma` radians.
pub fn build_scenario(cfg: &NetworkConfig, ue_positions: &[[f64; 2]]) -> Result<Scenario> {
    cfg.validate()?;
    if ue_positions.len() != cfg.n_users {
        return Err(Error::domain(format!(
            "expected {} user positions, got {}",
            cfg.n_users,
            ue_positions.len()
        )));
    }
    for (k, p) in ue_positions.iter().enumerate() {
        if !(0.0..=cfg.area_edge_m).contains(&p[0]) || !(0.0..=cfg.area_edge_m).contains(&p[1]) {
            return Err(Error::domain(format!(
                "user {k} position ({}, {}) outside [0, {}]^2",
                p[0], p[1], cfg.area_edge_m
            )));
        }
    }

    let n = cfg.n_antennas;
    let sigma_phi = cfg.asd_deg.to_radians();
    let mut gains = vec![vec![0f64; cfg.n_bs]; cfg.n_users];
    let mut correlations = Vec::with_capacity(cfg.n_users);
    let mut structure = Vec::with_capacity(cfg.n_users);

    for (k, ue) in ue_positions.iter().enumerate() {
        let mut r_row = Vec::with_capacity(cfg.n_bs);
        let mut s_row = Vec::with_capacity(cfg.n_bs);
        for (m, bs) in cfg.bs_positions.iter().enumerate() {
            let dx = ue[0] - bs[0];
            let dy = ue[1] - bs[1];
            let beta = cfg.channel_gain((dx * dx + dy * dy).sqrt());
            gains[k][m] = beta;

            let phi = dy.atan2(dx);
            let phase_step = 2.0 * std::f64::consts::PI * cfg.antenna_spacing * phi.sin();
            let decay = sigma_phi * 2.0 * std::f64::consts::PI * cfg.antenna_spacing * phi.cos();

            // R = D S D^H with D = diag(exp(i * phase_step * s)) unitary and
            // S the real Gaussian-kernel Toeplitz matrix; factorizing the
            // real S is cheaper than factorizing the complex R.
            let kernel: Vec<f64> =
                (0..n).map(|d| beta * (-0.5 * (decay * d as f64).powi(2)).exp()).collect();
            let steering = DVector::from_fn(n, |s, _| {
                Complex64::from_polar(1.0, phase_step * s as f64)
            });

            let r = DMatrix::from_fn(n, n, |s, t| {
                let d = s as isize - t as isize;
                let g = kernel[d.unsigned_abs()];
                steering[s] * steering[t].conj() * g
            });

            let s_mat = DMatrix::from_fn(n, n, |s, t| {
                kernel[(s as isize - t as isize).unsigned_abs()]
            });
            let eig = s_mat.clone().try_symmetric_eigen(1e-13, 4096).ok_or_else(|| {
                Error::numerical(format!(
                    "correlation factorization failed at user {k}, BS {m}"
                ))
            })?;
            let lambda_max = eig.eigenvalues.iter().cloned().fold(0f64, f64::max);
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| {
                eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap()
            });
            let kept: Vec<usize> = order
                .into_iter()
                .filter(|&i| eig.eigenvalues[i] > lambda_max * FACTOR_RANK_TOL)
                .collect();
            let mut factor = DMatrix::zeros(n, kept.len());
            for (col, &i) in kept.iter().enumerate() {
                let scale = eig.eigenvalues[i].max(0.0).sqrt();
                for row in 0..n {
                    factor[(row, col)] = eig.eigenvectors[(row, i)] * scale;
                }
            }

            r_row.push(r);
            s_row.push(PairStructure::Structured { steering, s_mat, factor });
        }
        correlations.push(r_row);
        structure.push(s_row);
    }

    Ok(Scenario { ue_positions: ue_positions.to_vec(), gains, correlations, structure })
}

/// y = S v for real S and complex v, carried out as two real matrix-vector
/// products.
fn real_mat_complex_vec(s: &DMatrix<f64>, v: &DVector<Complex64>) -> DVector<Complex64> {
    let n = s.nrows();
    let cols = s.ncols();
    let mut out_re = vec![0.0; n];
    let mut out_im = vec![0.0; n];
    let data = s.as_slice();
    for j in 0..cols {
        let (vr, vi) = (v[j].re, v[j].im);
        if vr == 0.0 && vi == 0.0 {
            continue;
        }
        let col = &data[j * n..(j + 1) * n];
        for i in 0..n {
            out_re[i] += col[i] * vr;
            out_im[i] += col[i] * vi;
        }
    }
    DVector::from_fn(n, |i, _| Complex64::new(out_re[i], out_im[i]))
}

/// Channel vectors of one coherence block: h[k][m] is the length-N channel
/// from user k to BS m.
#[derive(Debug, Clone)]
pub struct ChannelRealization {
    pub h: Vec<Vec<DVector<Complex64>>>,
}

/// Draws one correlated Rayleigh block: h[k][m] = F[k][m] * g with g a
/// standard circularly-symmetric complex Gaussian vector. The draw order is
/// fixed (users outer, BSs inner; real part before imaginary part) so a seeded
/// generator reproduces realizations bit-exactly.
pub fn sample_channels<R: Rng>(scn: &Scenario, rng: &mut R) -> ChannelRealization {
    let h = scn
        .structure
        .iter()
        .map(|row| {
            row.iter()
                .map(|pair| {
                    let g = DVector::from_fn(pair.sample_dim(), |_, _| complex_normal(rng));
                    match pair {
                        PairStructure::Structured { steering, factor, .. } => {
                            let mut h = real_mat_complex_vec(factor, &g);
                            for (slot, phase) in h.iter_mut().zip(steering.iter()) {
                                *slot *= phase;
                            }
                            h
                        }
                        PairStructure::Generic { factor } => factor * g,
                    }
                })
                .collect()
        })
        .collect();
    ChannelRealization { h }
}

/// One standard circularly-symmetric complex Gaussian scalar (variance 1).
#[inline]
pub fn complex_normal<R: Rng>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * std::f64::consts::FRAC_1_SQRT_2, im * std::f64::consts::FRAC_1_SQRT_2)
}

/// Pilot assignment plus the pilot sequence matrix.
///
/// Sequences are the columns of a scaled DFT matrix: entries of unit modulus,
/// mutually orthogonal, squared norm tau_p. With that scaling the despread
/// observation `Y phi* / (tau_p sqrt(p))` equals the channel plus pilot
/// contamination plus noise of covariance `sigma^2 / (tau_p p) I`, which is
/// the normalization the MMSE estimator expects.
#[derive(Debug, Clone)]
pub struct PilotPlan {
    /// pilot_index[k] in [0, tau_p) for every user.
    pub pilot_index: Vec<usize>,
    /// tau_p x tau_p matrix whose column a is pilot sequence a.
    pub pilot_matrix: DMatrix<Complex64>,
}

impl PilotPlan {
    /// Fixed round-robin assignment: user k transmits pilot k mod tau_p.
    /// Independent of the eventual association so rates stay
    /// association-free.
    pub fn round_robin(cfg: &NetworkConfig) -> PilotPlan {
        let tau_p = cfg.tau_p;
        let pilot_matrix = DMatrix::from_fn(tau_p, tau_p, |t, a| {
            Complex64::from_polar(
                1.0,
                -2.0 * std::f64::consts::PI * (a as f64) * (t as f64) / tau_p as f64,
            )
        });
        PilotPlan {
            pilot_index: (0..cfg.n_users).map(|k| k % tau_p).collect(),
            pilot_matrix,
        }
    }

    pub fn tau_p(&self) -> usize {
        self.pilot_matrix.nrows()
    }

    /// Users sharing pilot `a`.
    pub fn sharers(&self, a: usize) -> impl Iterator<Item = usize> + '_ {
        self.pilot_index
            .iter()
            .enumerate()
            .filter(move |(_, &p)| p == a)
            .map(|(k, _)| k)
    }

    /// Checks that the (1/sqrt(tau_p))-normalized sequences are orthonormal
    /// within 1e-12 and that every pilot index is in range.
    pub fn validate(&self) -> Result<()> {
        let tau_p = self.tau_p();
        let gram = self.pilot_matrix.adjoint() * &self.pilot_matrix;
        for a in 0..tau_p {
            for b in 0..tau_p {
                let want = if a == b { tau_p as f64 } else { 0.0 };
                if (gram[(a, b)] - Complex64::new(want, 0.0)).norm() > 1e-12 * tau_p as f64 {
                    return Err(Error::domain(format!(
                        "pilot sequences {a} and {b} are not orthogonal"
                    )));
                }
            }
        }
        if let Some(k) = self.pilot_index.iter().position(|&p| p >= tau_p) {
            return Err(Error::domain(format!("pilot index of user {k} out of range")));
        }
        Ok(())
    }
}

/// Received pilot-phase signal, one N x tau_p matrix per BS.
#[derive(Debug, Clone)]
pub struct PilotObservation {
    pub y: Vec<DMatrix<Complex64>>,
}

/// Superimposes every user's pilot at every BS and adds thermal noise:
/// `Y_m = sum_k sqrt(p) h[k][m] phi_{pilot(k)}^T + N_m`, noise entries iid
/// complex Gaussian with variance sigma^2.
pub fn received_pilots<R: Rng>(
    ch: &ChannelRealization,
    plan: &PilotPlan,
    cfg: &NetworkConfig,
    rng: &mut R,
) -> PilotObservation {
    let n = cfg.n_antennas;
    let tau_p = plan.tau_p();
    let sqrt_p = cfg.ul_power_w.sqrt();
    let noise_scale = cfg.noise_w.sqrt();
    let y = (0..cfg.n_bs)
        .map(|m| {
            let mut y_m = DMatrix::zeros(n, tau_p);
            for (k, h_rows) in ch.h.iter().enumerate() {
                let h = &h_rows[m];
                let pilot = plan.pilot_matrix.column(plan.pilot_index[k]);
                for t in 0..tau_p {
                    let coef = pilot[t] * sqrt_p;
                    for s in 0..n {
                        y_m[(s, t)] += h[s] * coef;
                    }
                }
            }
            for t in 0..tau_p {
                for s in 0..n {
                    y_m[(s, t)] += complex_normal(rng) * noise_scale;
                }
            }
            y_m
        })
        .collect();
    PilotObservation { y }
}

/// MMSE channel estimates plus the estimation statistics of Theorem-style
/// Bayesian estimation: Q per (pilot, BS), Phi = R Q^{-1} R and error
/// covariance C = R - Phi per (user, BS).
#[derive(Debug, Clone)]
pub struct ChannelEstimates {
    /// h_hat[k][m]: MMSE estimate of the channel of user k at BS m.
    pub h_hat: Vec<Vec<DVector<Complex64>>>,
    /// q[a][m]: despread-observation covariance for pilot a at BS m.
    pub q: Vec<Vec<DMatrix<Complex64>>>,
    /// phi[k][m]: covariance of the estimate.
    pub phi: Vec<Vec<DMatrix<Complex64>>>,
    /// c[k][m]: covariance of the estimation error.
    pub c: Vec<Vec<DMatrix<Complex64>>>,
}

impl ChannelEstimates {
    pub fn n_users(&self) -> usize {
        self.h_hat.len()
    }

    pub fn n_bs(&self) -> usize {
        self.h_hat.first().map_or(0, Vec::len)
    }
}

/// Scenario-level estimator state: everything the MMSE estimator needs that
/// does not depend on the fading realization. Building it once and reusing it
/// across coherence blocks is what makes Monte-Carlo rate evaluation cheap.
#[derive(Debug, Clone)]
pub struct EstimatorBank {
    /// q[a][m] = sum of R over users sharing pilot a + sigma^2/(tau_p p) I.
    pub q: Vec<Vec<DMatrix<Complex64>>>,
    chol_q: Vec<Vec<nalgebra::Cholesky<Complex64, nalgebra::Dyn>>>,
    /// gain[k][m] = R Q^{-1}, materialized only for pairs without the
    /// steering/kernel structure (structured pairs estimate through
    /// D S D^H Q^{-1} y instead).
    gain: Vec<Vec<Option<DMatrix<Complex64>>>>,
    /// phi[k][m] = R Q^{-1} R.
    pub phi: Vec<Vec<DMatrix<Complex64>>>,
    /// c[k][m] = R - phi.
    pub c: Vec<Vec<DMatrix<Complex64>>>,
    /// z[m] = sum_k c[k][m] + (sigma^2/p) I, the noise-plus-estimation-error
    /// covariance used by combiners.
    pub z: Vec<DMatrix<Complex64>>,
    /// 1 / (tau_p sqrt(p)), the despreading normalization.
    pub despread_scale: f64,
}

impl EstimatorBank {
    pub fn new(scn: &Scenario, plan: &PilotPlan, cfg: &NetworkConfig) -> Result<EstimatorBank> {
        let n = cfg.n_antennas;
        let tau_p = plan.tau_p();
        let k_users = scn.n_users();
        let m_bs = scn.n_bs();
        let q_reg = cfg.noise_w / (tau_p as f64 * cfg.ul_power_w);

        let mut q = vec![Vec::with_capacity(m_bs); tau_p];
        let mut chol = vec![Vec::with_capacity(m_bs); tau_p];
        for (a, (q_row, chol_row)) in q.iter_mut().zip(chol.iter_mut()).enumerate() {
            let sharers: Vec<usize> = plan.sharers(a).collect();
            for m in 0..m_bs {
                let mut q_am = DMatrix::from_diagonal_element(n, n, Complex64::new(q_reg, 0.0));
                for &k in &sharers {
                    q_am += &scn.correlations[k][m];
                }
                let factor = q_am.clone().cholesky().ok_or_else(|| {
                    Error::numerical(format!(
                        "despread covariance not positive definite for pilot {a}, BS {m}"
                    ))
                })?;
                q_row.push(q_am);
                chol_row.push(factor);
            }
        }

        let mut gain = Vec::with_capacity(k_users);
        let mut phi = Vec::with_capacity(k_users);
        let mut c = Vec::with_capacity(k_users);
        for k in 0..k_users {
            let a = plan.pilot_index[k];
            let mut gain_row = Vec::with_capacity(m_bs);
            let mut phi_row = Vec::with_capacity(m_bs);
            let mut c_row = Vec::with_capacity(m_bs);
            for m in 0..m_bs {
                let r = &scn.correlations[k][m];
                // phi = R Q^{-1} R = X^H X with X = L^{-1} R, one triangular
                // solve plus a Hermitian half-product.
                let x = chol[a][m]
                    .l_dirty()
                    .solve_lower_triangular(r)
                    .ok_or_else(|| {
                        Error::numerical(format!(
                            "singular despread covariance for user {k}, BS {m}"
                        ))
                    })?;
                let mut phi_km = DMatrix::zeros(n, n);
                for t in 0..n {
                    let col_t = x.column(t);
                    for s in 0..t {
                        let v = x.column(s).dotc(&col_t);
                        phi_km[(s, t)] = v;
                        phi_km[(t, s)] = v.conj();
                    }
                    phi_km[(t, t)] = Complex64::new(col_t.norm_squared(), 0.0);
                }
                if let PairStructure::Generic { .. } = scn.structure[k][m] {
                    gain_row.push(Some(chol[a][m].solve(r).adjoint()));
                } else {
                    gain_row.push(None);
                }
                c_row.push(r - &phi_km);
                phi_row.push(phi_km);
            }
            gain.push(gain_row);
            phi.push(phi_row);
            c.push(c_row);
        }

        let z_reg = cfg.noise_w / cfg.ul_power_w;
        let z = (0..m_bs)
            .map(|m| {
                let mut z_m = DMatrix::from_diagonal_element(n, n, Complex64::new(z_reg, 0.0));
                for c_row in &c {
                    z_m += &c_row[m];
                }
                z_m
            })
            .collect();

        Ok(EstimatorBank {
            q,
            chol_q: chol,
            gain,
            phi,
            c,
            z,
            despread_scale: 1.0 / (tau_p as f64 * cfg.ul_power_w.sqrt()),
        })
    }

    /// Despreads one pilot observation: y_eff[a][m] = Y_m phi_a* / (tau_p sqrt(p)).
    pub fn despread(&self, obs: &PilotObservation, plan: &PilotPlan) -> Vec<Vec<DVector<Complex64>>> {
        let tau_p = plan.tau_p();
        (0..tau_p)
            .map(|a| {
                let pilot = plan.pilot_matrix.column(a);
                obs.y
                    .iter()
                    .map(|y_m| {
                        let mut v = DVector::zeros(y_m.nrows());
                        for t in 0..tau_p {
                            let w = pilot[t].conj() * self.despread_scale;
                            v.axpy(w, &y_m.column(t), Complex64::new(1.0, 0.0));
                        }
                        v
                    })
                    .collect()
            })
            .collect()
    }

    /// MMSE estimates for one coherence block given the despread
    /// observations. `scn` must be the scenario the bank was built from.
    pub fn estimate(
        &self,
        scn: &Scenario,
        despread: &[Vec<DVector<Complex64>>],
        plan: &PilotPlan,
    ) -> Vec<Vec<DVector<Complex64>>> {
        // u[a][m] = Q^{-1} y[a][m] is shared by every user on pilot a.
        let needs_u = scn
            .structure
            .iter()
            .flatten()
            .any(|p| matches!(p, PairStructure::Structured { .. }));
        let u: Vec<Vec<DVector<Complex64>>> = if needs_u {
            self.chol_q
                .iter()
                .zip(despread)
                .map(|(chol_row, y_row)| {
                    chol_row.iter().zip(y_row).map(|(chol, y)| chol.solve(y)).collect()
                })
                .collect()
        } else {
            Vec::new()
        };

        scn.structure
            .iter()
            .enumerate()
            .map(|(k, row)| {
                let a = plan.pilot_index[k];
                row.iter()
                    .enumerate()
                    .map(|(m, pair)| match pair {
                        PairStructure::Structured { steering, s_mat, .. } => {
                            // h_hat = R Q^{-1} y = D S (D^H u).
                            let mut v = u[a][m].clone();
                            for (slot, phase) in v.iter_mut().zip(steering.iter()) {
                                *slot *= phase.conj();
                            }
                            let mut w = real_mat_complex_vec(s_mat, &v);
                            for (slot, phase) in w.iter_mut().zip(steering.iter()) {
                                *slot *= phase;
                            }
                            w
                        }
                        PairStructure::Generic { .. } => {
                            let g = self.gain[k][m].as_ref().expect("generic pair has gain");
                            g * &despread[a][m]
                        }
                    })
                    .collect()
            })
            .collect()
    }
}

/// MMSE channel estimation per the Bayesian closed form
/// `h_hat = R Q^{-1} (Y phi* / (tau_p sqrt(p)))` with
/// `Q = sum_{sharers} R + sigma^2/(tau_p p) I`.
pub fn mmse_estimate(
    obs: &PilotObservation,
    scn: &Scenario,
    plan: &PilotPlan,
    cfg: &NetworkConfig,
) -> Result<ChannelEstimates> {
    let bank = EstimatorBank::new(scn, plan, cfg)?;
    let despread = bank.despread(obs, plan);
    let h_hat = bank.estimate(scn, &despread, plan);
    Ok(ChannelEstimates { h_hat, q: bank.q, phi: bank.phi, c: bank.c })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_cfg() -> NetworkConfig {
        NetworkConfig {
            n_bs: 2,
            n_antennas: 4,
            n_users: 4,
            tau_p: 2,
            tau_u: 198,
            bs_positions: vec![[250.0, 250.0], [750.0, 750.0]],
            capacities: vec![2, 2],
            ..NetworkConfig::default()
        }
    }

    #[test]
    fn default_config_is_valid() {
        let cfg = NetworkConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.n_bs, 4);
        assert_eq!(cfg.n_antennas, 64);
        assert_eq!(cfg.n_users, 40);
        assert_eq!(cfg.capacities, vec![15, 15, 15, 15]);
        assert_relative_eq!(cfg.ul_power_w, 0.1, max_relative = 1e-12);
        assert_relative_eq!(cfg.noise_w, 10f64.powf(-12.4), max_relative = 1e-12);
    }

    #[test]
    fn config_rejects_bad_frame_split() {
        let cfg = NetworkConfig { tau_p: 20, tau_u: 190, ..NetworkConfig::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_rejects_undersized_capacity() {
        let cfg = NetworkConfig { capacities: vec![9, 9, 9, 9], ..NetworkConfig::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn gain_is_clamped_below_ten_meters() {
        let cfg = NetworkConfig::default();
        assert_eq!(cfg.channel_gain(0.0), cfg.channel_gain(10.0));
        assert!(cfg.channel_gain(11.0) < cfg.channel_gain(10.0));
    }

    #[test]
    fn scenario_rejects_outside_positions() {
        let cfg = small_cfg();
        let mut pos = vec![[100.0, 100.0]; 4];
        pos[2] = [1200.0, 100.0];
        assert!(build_scenario(&cfg, &pos).is_err());
    }

    #[test]
    fn correlation_trace_matches_gain() {
        let cfg = small_cfg();
        let pos = vec![[10.0, 20.0], [400.0, 900.0], [760.0, 740.0], [999.0, 1.0]];
        let scn = build_scenario(&cfg, &pos).unwrap();
        scn.validate().unwrap();
        for k in 0..4 {
            for m in 0..2 {
                let r = &scn.correlations[k][m];
                let trace: f64 = (0..r.nrows()).map(|s| r[(s, s)].re).sum();
                assert_relative_eq!(trace / r.nrows() as f64, scn.gains[k][m], max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn zero_asd_gives_rank_one_steering() {
        let cfg = NetworkConfig { asd_deg: 0.0, ..small_cfg() };
        let pos = vec![[10.0, 20.0], [400.0, 900.0], [760.0, 740.0], [999.0, 1.0]];
        let scn = build_scenario(&cfg, &pos).unwrap();
        for k in 0..4 {
            for m in 0..2 {
                let r = &scn.correlations[k][m];
                let eig = r.clone().symmetric_eigen();
                let mut lambdas: Vec<f64> = eig.eigenvalues.iter().cloned().collect();
                lambdas.sort_by(|a, b| b.partial_cmp(a).unwrap());
                let beta = scn.gains[k][m];
                assert_relative_eq!(lambdas[0], beta * cfg.n_antennas as f64, max_relative = 1e-9);
                for &l in &lambdas[1..] {
                    assert!(l.abs() <= 1e-9 * lambdas[0], "rank > 1: {l}");
                }
            }
        }
    }

    #[test]
    fn factor_reconstructs_correlation() {
        let cfg = small_cfg();
        let pos = vec![[10.0, 20.0], [400.0, 900.0], [760.0, 740.0], [999.0, 1.0]];
        let scn = build_scenario(&cfg, &pos).unwrap();
        for k in 0..4 {
            for m in 0..2 {
                let f = scn.sampling_factor(k, m);
                let recon = &f * f.adjoint();
                let err = (&recon - &scn.correlations[k][m]).norm();
                assert!(err <= 1e-10 * scn.correlations[k][m].norm());
            }
        }
    }

    #[test]
    fn zero_correlation_gives_zero_channel() {
        let n = 3;
        let scn = Scenario::from_parts(
            vec![[0.0, 0.0]],
            vec![vec![0.0]],
            vec![vec![DMatrix::zeros(n, n)]],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ch = sample_channels(&scn, &mut rng);
        assert!(ch.h[0][0].iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn sampling_is_deterministic() {
        let cfg = small_cfg();
        let pos = vec![[10.0, 20.0], [400.0, 900.0], [760.0, 740.0], [999.0, 1.0]];
        let scn = build_scenario(&cfg, &pos).unwrap();
        let a = sample_channels(&scn, &mut ChaCha8Rng::seed_from_u64(42));
        let b = sample_channels(&scn, &mut ChaCha8Rng::seed_from_u64(42));
        for k in 0..4 {
            for m in 0..2 {
                assert_eq!(a.h[k][m], b.h[k][m]);
            }
        }
    }

    #[test]
    fn identity_correlation_sample_covariance() {
        // 1e5 draws of h with R = I_4: sample covariance within 5% Frobenius.
        let n = 4;
        let scn = Scenario::from_parts(
            vec![[0.0, 0.0]],
            vec![vec![1.0]],
            vec![vec![DMatrix::identity(n, n)]],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let draws = 100_000;
        let mut cov = DMatrix::<Complex64>::zeros(n, n);
        for _ in 0..draws {
            let ch = sample_channels(&scn, &mut rng);
            let h = &ch.h[0][0];
            cov.gerc(Complex64::new(1.0 / draws as f64, 0.0), h, h, Complex64::new(1.0, 0.0));
        }
        let err = (&cov - DMatrix::<Complex64>::identity(n, n)).norm();
        let rel = err / DMatrix::<Complex64>::identity(n, n).norm();
        assert!(rel < 0.05, "sample covariance off by {rel:.4}");
    }

    #[test]
    fn pilots_are_orthogonal_unit_modulus() {
        let cfg = small_cfg();
        let plan = PilotPlan::round_robin(&cfg);
        plan.validate().unwrap();
        assert_eq!(plan.pilot_index, vec![0, 1, 0, 1]);
        for z in plan.pilot_matrix.iter() {
            assert_relative_eq!(z.norm(), 1.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn noiseless_single_user_pilot_observation() {
        let mut cfg = small_cfg();
        cfg.n_users = 1;
        cfg.noise_w = f64::MIN_POSITIVE; // validate() requires > 0
        let scn = build_scenario(&cfg, &[[100.0, 100.0]]).unwrap();
        let plan = PilotPlan::round_robin(&cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ch = sample_channels(&scn, &mut rng);
        let obs = received_pilots(&ch, &plan, &cfg, &mut rng);
        let sqrt_p = cfg.ul_power_w.sqrt();
        for m in 0..cfg.n_bs {
            for t in 0..plan.tau_p() {
                for s in 0..cfg.n_antennas {
                    let want = ch.h[0][m][s] * plan.pilot_matrix[(t, 0)] * sqrt_p;
                    assert!((obs.y[m][(s, t)] - want).norm() < 1e-9 * want.norm().max(1e-12));
                }
            }
        }
    }

    #[test]
    fn despreading_recovers_and_superimposes() {
        // Users 0 and 1 hold orthogonal pilots; users 0 and 2 share pilot 0.
        let mut cfg = small_cfg();
        cfg.noise_w = f64::MIN_POSITIVE;
        let pos = vec![[100.0, 100.0], [200.0, 600.0], [800.0, 300.0], [900.0, 900.0]];
        let scn = build_scenario(&cfg, &pos).unwrap();
        let plan = PilotPlan::round_robin(&cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let ch = sample_channels(&scn, &mut rng);
        let obs = received_pilots(&ch, &plan, &cfg, &mut rng);
        let bank = EstimatorBank::new(&scn, &plan, &cfg).unwrap();
        let despread = bank.despread(&obs, &plan);
        for m in 0..cfg.n_bs {
            // Pilot 0 carries users 0 and 2 superimposed.
            let want = &ch.h[0][m] + &ch.h[2][m];
            let got = &despread[0][m];
            assert!((got - &want).norm() < 1e-9 * want.norm());
            // Pilot 1 carries users 1 and 3.
            let want = &ch.h[1][m] + &ch.h[3][m];
            assert!((&despread[1][m] - &want).norm() < 1e-9 * want.norm());
        }
    }

    #[test]
    fn zero_prior_estimate_is_zero() {
        let n = 4;
        let cfg = NetworkConfig {
            n_bs: 1,
            n_antennas: n,
            n_users: 2,
            tau_p: 2,
            tau_u: 198,
            bs_positions: vec![[500.0, 500.0]],
            capacities: vec![2],
            ..NetworkConfig::default()
        };
        // User 0 has a zero correlation matrix at the only BS.
        let scn = Scenario::from_parts(
            vec![[0.0, 0.0], [10.0, 10.0]],
            vec![vec![0.0], vec![1.0]],
            vec![
                vec![DMatrix::zeros(n, n)],
                vec![DMatrix::identity(n, n)],
            ],
        )
        .unwrap();
        let plan = PilotPlan::round_robin(&cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ch = sample_channels(&scn, &mut rng);
        let obs = received_pilots(&ch, &plan, &cfg, &mut rng);
        let est = mmse_estimate(&obs, &scn, &plan, &cfg).unwrap();
        assert!(est.h_hat[0][0].iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn noiseless_single_user_estimate_converges_to_channel() {
        let mut cfg = small_cfg();
        cfg.n_users = 1;
        cfg.noise_w = 1e-30;
        let scn = build_scenario(&cfg, &[[300.0, 300.0]]).unwrap();
        let plan = PilotPlan::round_robin(&cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let ch = sample_channels(&scn, &mut rng);
        let obs = received_pilots(&ch, &plan, &cfg, &mut rng);
        let est = mmse_estimate(&obs, &scn, &plan, &cfg).unwrap();
        for m in 0..cfg.n_bs {
            let err = (&est.h_hat[0][m] - &ch.h[0][m]).norm();
            assert!(err < 1e-5 * ch.h[0][m].norm(), "estimate off by {err:.3e}");
        }
    }

    #[test]
    fn error_covariance_identity_and_shrinkage() {
        let cfg = small_cfg();
        let pos = vec![[10.0, 20.0], [400.0, 900.0], [760.0, 740.0], [999.0, 1.0]];
        let scn = build_scenario(&cfg, &pos).unwrap();
        let plan = PilotPlan::round_robin(&cfg);
        let bank = EstimatorBank::new(&scn, &plan, &cfg).unwrap();
        for k in 0..cfg.n_users {
            for m in 0..cfg.n_bs {
                let diff = &scn.correlations[k][m] - &bank.phi[k][m] - &bank.c[k][m];
                assert!(diff.norm() <= 1e-9 * scn.correlations[k][m].norm());
                let trace_c: f64 = (0..cfg.n_antennas).map(|s| bank.c[k][m][(s, s)].re).sum();
                let trace_r: f64 =
                    (0..cfg.n_antennas).map(|s| scn.correlations[k][m][(s, s)].re).sum();
                assert!(trace_c <= trace_r + 1e-9);
                // Phi PSD within tolerance.
                let eig = bank.phi[k][m].clone().symmetric_eigen();
                let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
                assert!(min >= -1e-9 * trace_r);
            }
        }
    }
}
