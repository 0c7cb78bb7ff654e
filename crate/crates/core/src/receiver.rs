//! Receive combining and Monte-Carlo spectral efficiency.
//!
//! Every BS forms one combining vector per user in the area from the MMSE
//! channel estimates, either maximum-ratio (the estimate itself) or multicell
//! MMSE (the SINR-maximizing solution of the estimated-interference system).
//! Averaging `log2(1 + SINR)` over fading blocks yields the rate matrix that
//! the association solver maximizes over.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::propagation::{
    received_pilots, sample_channels, ChannelEstimates, EstimatorBank, NetworkConfig, PilotPlan,
    Scenario,
};

/// Which linear receiver a bank of combining vectors implements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CombinerKind {
    /// Maximum ratio: v = h_hat.
    Mr,
    /// Multicell MMSE: v = (sum_k h_hat h_hat^H + Z)^{-1} h_hat.
    Mmse,
}

impl std::fmt::Display for CombinerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CombinerKind::Mr => write!(f, "mr"),
            CombinerKind::Mmse => write!(f, "mmse"),
        }
    }
}

impl std::str::FromStr for CombinerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mr" => Ok(CombinerKind::Mr),
            "mmse" | "m-mmse" => Ok(CombinerKind::Mmse),
            other => Err(Error::config(format!("unknown combiner kind '{other}'"))),
        }
    }
}

/// Combining vectors of one BS, one length-N vector per user in the area.
#[derive(Debug, Clone)]
pub struct CombinerBank {
    pub v: Vec<DVector<Complex64>>,
    pub kind: CombinerKind,
}

/// Per-(user, BS) ergodic achievable rates in bit/symbol, before the
/// pilot-overhead prelog and bandwidth scaling.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateMatrix {
    /// r[k][m] = average of log2(1 + sinr(k, m)) over fading blocks.
    pub r: Vec<Vec<f64>>,
    /// Number of Monte-Carlo coherence blocks averaged.
    pub n_fading: usize,
}

impl RateMatrix {
    pub fn n_users(&self) -> usize {
        self.r.len()
    }

    pub fn n_bs(&self) -> usize {
        self.r.first().map_or(0, Vec::len)
    }
}

/// Noise-plus-estimation-error covariance Z_m = sum_k C[k][m] + (sigma^2/p) I.
fn z_matrix(est: &ChannelEstimates, m: usize, cfg: &NetworkConfig) -> DMatrix<Complex64> {
    let n = cfg.n_antennas;
    let mut z = DMatrix::from_diagonal_element(
        n,
        n,
        Complex64::new(cfg.noise_w / cfg.ul_power_w, 0.0),
    );
    for c_row in &est.c {
        z += &c_row[m];
    }
    z
}

/// Estimated-signal Gram matrix plus Z: B_m = sum_k h_hat h_hat^H + Z_m.
/// This is both the M-MMSE system matrix and the SINR denominator before the
/// own-signal term is removed. Accumulated on the upper triangle and mirrored.
fn gram_plus_z(
    h_hat: &[Vec<DVector<Complex64>>],
    z: &DMatrix<Complex64>,
    m: usize,
) -> DMatrix<Complex64> {
    let n = z.nrows();
    let mut b = z.clone();
    {
        let data = b.as_mut_slice();
        for row in h_hat {
            let h = row[m].as_slice();
            for t in 0..n {
                let ht = h[t].conj();
                if ht.re == 0.0 && ht.im == 0.0 {
                    continue;
                }
                let col = &mut data[t * n..t * n + t + 1];
                for (slot, &hs) in col.iter_mut().zip(h) {
                    *slot += hs * ht;
                }
            }
        }
    }
    for t in 0..n {
        for s in t + 1..n {
            b[(s, t)] = b[(t, s)].conj();
        }
    }
    b
}

/// Maximum-ratio combining: the bank is a copy of the estimates at BS m.
pub fn mr_combiner(est: &ChannelEstimates, m: usize) -> CombinerBank {
    CombinerBank {
        v: est.h_hat.iter().map(|row| row[m].clone()).collect(),
        kind: CombinerKind::Mr,
    }
}

/// Multicell MMSE combining at BS m:
/// `V = (sum over every user of h_hat h_hat^H + Z_m)^{-1} H_hat_m`.
pub fn mmse_combiner(
    est: &ChannelEstimates,
    m: usize,
    cfg: &NetworkConfig,
) -> Result<CombinerBank> {
    let z = z_matrix(est, m, cfg);
    let b = gram_plus_z(&est.h_hat, &z, m);
    let chol = b.cholesky().ok_or_else(|| {
        Error::numerical(format!("M-MMSE system matrix not positive definite at BS {m}"))
    })?;
    let v = est.h_hat.iter().map(|row| chol.solve(&row[m])).collect();
    Ok(CombinerBank { v, kind: CombinerKind::Mmse })
}

/// Instantaneous SINR of every user at BS m for the given combining bank:
/// `gamma_k = |v^H h_hat_k|^2 / (v^H (sum_{k' != k} h_hat h_hat^H + Z_m) v)`.
/// A zero combining vector yields gamma = 0.
pub fn instantaneous_sinr(
    bank: &CombinerBank,
    est: &ChannelEstimates,
    m: usize,
    cfg: &NetworkConfig,
) -> Vec<f64> {
    let z = z_matrix(est, m, cfg);
    let b = gram_plus_z(&est.h_hat, &z, m);
    bank.v
        .iter()
        .enumerate()
        .map(|(k, v)| {
            if v.iter().all(|c| c.norm() == 0.0) {
                return 0.0;
            }
            let num = v.dotc(&est.h_hat[k][m]).norm_sqr();
            let quad = v.dotc(&(&b * v)).re;
            let den = quad - num;
            if den <= 0.0 {
                // B - h h^H stays positive definite thanks to Z, so this only
                // triggers when the quadratic form underflows entirely.
                return 0.0;
            }
            num / den
        })
        .collect()
}

/// Monte-Carlo ergodic rate matrix: averages `log2(1 + gamma[k][m])` over
/// `n_fading` coherence blocks (channel draw, pilot transmission, MMSE
/// estimation, combining at every BS). The tau_u/tau_c prelog and bandwidth
/// are applied by the sum-rate objective, not here.
pub fn rate_matrix<R: Rng>(
    scn: &Scenario,
    plan: &PilotPlan,
    cfg: &NetworkConfig,
    kind: CombinerKind,
    n_fading: usize,
    rng: &mut R,
) -> Result<RateMatrix> {
    if n_fading == 0 {
        return Err(Error::domain("n_fading must be at least 1"));
    }
    let bank = EstimatorBank::new(scn, plan, cfg)?;
    rate_matrix_with_bank(scn, plan, cfg, &bank, kind, n_fading, rng)
}

/// Rate-matrix inner loop against a prebuilt [`EstimatorBank`]; lets callers
/// evaluating several combiners amortize the estimator setup.
pub fn rate_matrix_with_bank<R: Rng>(
    scn: &Scenario,
    plan: &PilotPlan,
    cfg: &NetworkConfig,
    bank: &EstimatorBank,
    kind: CombinerKind,
    n_fading: usize,
    rng: &mut R,
) -> Result<RateMatrix> {
    let k_users = scn.n_users();
    let m_bs = scn.n_bs();
    let mut acc = vec![vec![0f64; m_bs]; k_users];

    for block in 0..n_fading {
        let ch = sample_channels(scn, rng);
        let obs = received_pilots(&ch, plan, cfg, rng);
        let despread = bank.despread(&obs, plan);
        let h_hat = bank.estimate(scn, &despread, plan);

        for m in 0..m_bs {
            let b = gram_plus_z(&h_hat, &bank.z[m], m);
            match kind {
                CombinerKind::Mmse => {
                    // v = B^{-1} h  =>  gamma = s / (1 - s) with s = h^H B^{-1} h,
                    // computed from a single triangular solve.
                    let chol = b.cholesky().ok_or_else(|| {
                        Error::numerical(format!(
                            "combining system matrix not positive definite at BS {m}, block {block}"
                        ))
                    })?;
                    for (k, acc_row) in acc.iter_mut().enumerate() {
                        let h = &h_hat[k][m];
                        let mut y = h.clone();
                        chol.l_dirty().solve_lower_triangular_unchecked_mut(&mut y);
                        let s = y.norm_squared();
                        let den = 1.0 - s;
                        if den <= 0.0 {
                            return Err(Error::numerical(format!(
                                "M-MMSE SINR degenerate for user {k}, BS {m}, block {block}"
                            )));
                        }
                        acc_row[m] += (1.0 + s / den).log2();
                    }
                }
                CombinerKind::Mr => {
                    for (k, acc_row) in acc.iter_mut().enumerate() {
                        let h = &h_hat[k][m];
                        let num = h.norm_squared().powi(2);
                        if num == 0.0 {
                            continue;
                        }
                        let quad = h.dotc(&(&b * h)).re;
                        let den = quad - num;
                        if den <= 0.0 {
                            return Err(Error::numerical(format!(
                                "MR SINR degenerate for user {k}, BS {m}, block {block}"
                            )));
                        }
                        acc_row[m] += (1.0 + num / den).log2();
                    }
                }
            }
        }
    }

    for row in &mut acc {
        for v in row.iter_mut() {
            *v /= n_fading as f64;
        }
    }
    Ok(RateMatrix { r: acc, n_fading })
}
