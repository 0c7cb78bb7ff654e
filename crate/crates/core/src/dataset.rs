//! Labeled-sample generation and the dataset container format.
//!
//! A sample is one random drop of user positions, the Monte-Carlo rate
//! matrix it induces, and the exact solver's association as a flattened
//! one-hot label. Files are newline-delimited JSON: a header line with the
//! config snapshot followed by one record per sample, so datasets stream,
//! diff and re-derive cleanly.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assignment::{solve_association, Association};
use crate::error::{Error, Result};
use crate::propagation::{build_scenario, NetworkConfig, PilotPlan};
use crate::receiver::{rate_matrix, CombinerKind, RateMatrix};

pub const DATASET_SCHEMA_VERSION: u32 = 1;

/// One labeled example: normalized features, flattened one-hot association
/// label, plus the raw positions and seed needed to audit or re-derive it.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub seed: u64,
    pub ue_positions: Vec<[f64; 2]>,
    pub features: Vec<f64>,
    pub label: Vec<f64>,
    pub combiner: CombinerKind,
}

/// First line of a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub schema_version: u32,
    pub config: NetworkConfig,
    pub n_fading: usize,
    pub combiner: CombinerKind,
    /// Seed of sample i is `base_seed + i`.
    pub base_seed: u64,
    pub n_samples: usize,
}

/// On-disk per-sample record; the combiner kind lives in the header.
#[derive(Serialize, Deserialize)]
struct SampleRecord {
    seed: u64,
    positions: Vec<[f64; 2]>,
    features: Vec<f64>,
    label: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub samples: Vec<TrainingSample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn features(&self) -> Vec<Vec<f64>> {
        self.samples.iter().map(|s| s.features.clone()).collect()
    }

    pub fn labels(&self) -> Vec<Vec<f64>> {
        self.samples.iter().map(|s| s.label.clone()).collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer(&mut w, &self.header)
            .map_err(|e| Error::format(format!("header serialization failed: {e}")))?;
        w.write_all(b"\n")?;
        for s in &self.samples {
            let record = SampleRecord {
                seed: s.seed,
                positions: s.ue_positions.clone(),
                features: s.features.clone(),
                label: s.label.clone(),
            };
            serde_json::to_writer(&mut w, &record)
                .map_err(|e| Error::format(format!("sample serialization failed: {e}")))?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Dataset> {
        let file = std::fs::File::open(path)?;
        let mut lines = BufReader::new(file).lines();
        let header_line = lines
            .next()
            .ok_or_else(|| Error::format("dataset file is empty"))??;
        let header: DatasetHeader = serde_json::from_str(&header_line)
            .map_err(|e| Error::format(format!("dataset header unreadable: {e}")))?;
        if header.schema_version != DATASET_SCHEMA_VERSION {
            return Err(Error::format(format!(
                "unsupported dataset schema version {} (expected {DATASET_SCHEMA_VERSION})",
                header.schema_version
            )));
        }
        let feature_len = 2 * header.config.n_users + header.config.n_bs;
        let label_len = header.config.n_users * header.config.n_bs;
        let mut samples = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: SampleRecord = serde_json::from_str(&line)
                .map_err(|e| Error::format(format!("sample {i} unreadable: {e}")))?;
            if record.positions.len() != header.config.n_users
                || record.features.len() != feature_len
                || record.label.len() != label_len
            {
                return Err(Error::format(format!(
                    "sample {i} dimensions do not match the header config"
                )));
            }
            samples.push(TrainingSample {
                seed: record.seed,
                ue_positions: record.positions,
                features: record.features,
                label: record.label,
                combiner: header.combiner,
            });
        }
        if samples.len() != header.n_samples {
            return Err(Error::format(format!(
                "header promises {} samples, file holds {}",
                header.n_samples,
                samples.len()
            )));
        }
        Ok(Dataset { header, samples })
    }
}

/// Feature layout: [x_0/edge, y_0/edge, ..., x_{K-1}/edge, y_{K-1}/edge,
/// d_0/K, ..., d_{M-1}/K], dimension 2K + M.
pub fn encode_features(
    ue_positions: &[[f64; 2]],
    capacities: &[usize],
    cfg: &NetworkConfig,
) -> Result<Vec<f64>> {
    if ue_positions.len() != cfg.n_users {
        return Err(Error::domain(format!(
            "expected {} positions, got {}",
            cfg.n_users,
            ue_positions.len()
        )));
    }
    if capacities.len() != cfg.n_bs {
        return Err(Error::domain(format!(
            "expected {} capacities, got {}",
            cfg.n_bs,
            capacities.len()
        )));
    }
    let mut features = Vec::with_capacity(2 * cfg.n_users + cfg.n_bs);
    for p in ue_positions {
        features.push(p[0] / cfg.area_edge_m);
        features.push(p[1] / cfg.area_edge_m);
    }
    for &d in capacities {
        features.push(d as f64 / cfg.n_users as f64);
    }
    Ok(features)
}

/// Flattens the assignment matrix row-major into K * M one-hot rows.
pub fn encode_labels(assoc: &Association) -> Vec<f64> {
    let mut label = Vec::with_capacity(assoc.n_users() * assoc.n_bs());
    for k in 0..assoc.n_users() {
        for m in 0..assoc.n_bs() {
            label.push(if assoc.rho(k, m) { 1.0 } else { 0.0 });
        }
    }
    label
}

/// Decodes a score vector into an association: each user takes the argmax of
/// its M-slice (ties to the lowest BS index). With `repair` set, users on
/// over-capacity BSs are displaced, lowest confidence margin first, onto
/// their best BS with residual capacity (or left unassigned when none has
/// room), so the result always satisfies the capacities.
pub fn decode_labels(values: &[f64], capacities: &[usize], repair: bool) -> Result<Association> {
    let m_bs = capacities.len();
    if m_bs == 0 || values.len() % m_bs != 0 {
        return Err(Error::domain(format!(
            "label length {} is not a multiple of the BS count {m_bs}",
            values.len()
        )));
    }
    let k_users = values.len() / m_bs;
    let slice = |k: usize| &values[k * m_bs..(k + 1) * m_bs];
    let argmax = |scores: &[f64]| -> usize {
        let mut best = 0;
        for (m, &v) in scores.iter().enumerate() {
            if v > scores[best] {
                best = m;
            }
        }
        best
    };

    let mut serving: Vec<Option<usize>> = (0..k_users).map(|k| Some(argmax(slice(k)))).collect();
    if !repair {
        return Association::new(serving, m_bs);
    }

    let mut loads = vec![0usize; m_bs];
    for m in serving.iter().flatten() {
        loads[*m] += 1;
    }
    loop {
        let Some(overloaded) = (0..m_bs).find(|&m| loads[m] > capacities[m]) else {
            break;
        };
        // Confidence margin of each user currently on the overloaded BS:
        // its chosen score minus its best alternative score.
        let mut victim: Option<(f64, usize)> = None;
        for (k, &s) in serving.iter().enumerate() {
            if s != Some(overloaded) {
                continue;
            }
            let scores = slice(k);
            let chosen = scores[overloaded];
            let alt = scores
                .iter()
                .enumerate()
                .filter(|&(m, _)| m != overloaded)
                .map(|(_, &v)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            let margin = chosen - alt;
            if victim.map_or(true, |(best, _)| margin < best) {
                victim = Some((margin, k));
            }
        }
        let (_, k) = victim.expect("overloaded BS has at least one user");
        loads[overloaded] -= 1;
        let scores = slice(k);
        let target = (0..m_bs)
            .filter(|&m| loads[m] < capacities[m])
            .max_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap().then(b.cmp(&a)));
        match target {
            Some(m) => {
                serving[k] = Some(m);
                loads[m] += 1;
            }
            None => serving[k] = None,
        }
    }
    Association::new(serving, m_bs)
}

/// Positions and rate matrix of the sample owned by `seed`: K positions drawn
/// uniformly on the square, then the Monte-Carlo rates, all from one ChaCha
/// stream so the pair re-derives bit-exactly from the seed.
pub fn sample_rates(
    cfg: &NetworkConfig,
    plan: &PilotPlan,
    kind: CombinerKind,
    n_fading: usize,
    seed: u64,
) -> Result<(Vec<[f64; 2]>, RateMatrix)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let positions: Vec<[f64; 2]> = (0..cfg.n_users)
        .map(|_| {
            [rng.random::<f64>() * cfg.area_edge_m, rng.random::<f64>() * cfg.area_edge_m]
        })
        .collect();
    let scn = build_scenario(cfg, &positions)
        .map_err(|e| Error::numerical(format!("seed {seed}: {e}")))?;
    let rates = rate_matrix(&scn, plan, cfg, kind, n_fading, &mut rng)
        .map_err(|e| Error::numerical(format!("seed {seed}: {e}")))?;
    Ok((positions, rates))
}

/// One labeled sample plus the rate matrix it was scored on.
pub fn generate_sample_with_rates(
    cfg: &NetworkConfig,
    plan: &PilotPlan,
    kind: CombinerKind,
    n_fading: usize,
    seed: u64,
) -> Result<(TrainingSample, RateMatrix)> {
    let (positions, rates) = sample_rates(cfg, plan, kind, n_fading, seed)?;
    let (assoc, _report) = solve_association(&rates, &cfg.capacities)
        .map_err(|e| Error::numerical(format!("seed {seed}: {e}")))?;
    let features = encode_features(&positions, &cfg.capacities, cfg)?;
    let label = encode_labels(&assoc);
    Ok((
        TrainingSample { seed, ue_positions: positions, features, label, combiner: kind },
        rates,
    ))
}

/// One labeled sample: uniform positions, Monte-Carlo rates, exact solver
/// label. Deterministic given the seed.
pub fn generate_sample(
    cfg: &NetworkConfig,
    plan: &PilotPlan,
    kind: CombinerKind,
    n_fading: usize,
    seed: u64,
) -> Result<TrainingSample> {
    generate_sample_with_rates(cfg, plan, kind, n_fading, seed).map(|(s, _)| s)
}

/// Generates `n_samples` samples with seeds `base_seed..base_seed + n`,
/// in parallel but emitted in seed order.
pub fn generate_dataset(
    cfg: &NetworkConfig,
    kind: CombinerKind,
    n_fading: usize,
    n_samples: usize,
    base_seed: u64,
) -> Result<Dataset> {
    generate_dataset_with_rates(cfg, kind, n_fading, n_samples, base_seed).map(|(ds, _)| ds)
}

/// [`generate_dataset`] variant that also returns each sample's rate matrix,
/// for evaluations that score associations without re-simulating.
pub fn generate_dataset_with_rates(
    cfg: &NetworkConfig,
    kind: CombinerKind,
    n_fading: usize,
    n_samples: usize,
    base_seed: u64,
) -> Result<(Dataset, Vec<RateMatrix>)> {
    cfg.validate()?;
    let plan = PilotPlan::round_robin(cfg);
    let generated: Result<Vec<(TrainingSample, RateMatrix)>> = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            generate_sample_with_rates(cfg, &plan, kind, n_fading, base_seed.wrapping_add(i as u64))
        })
        .collect();
    let (samples, rates): (Vec<TrainingSample>, Vec<RateMatrix>) = generated?.into_iter().unzip();
    Ok((
        Dataset {
            header: DatasetHeader {
                schema_version: DATASET_SCHEMA_VERSION,
                config: cfg.clone(),
                n_fading,
                combiner: kind,
                base_seed,
                n_samples,
            },
            samples,
        },
        rates,
    ))
}

/// Disjoint seeded split into train/validation/test parts of exact sizes.
pub fn split(
    ds: &Dataset,
    n_train: usize,
    n_val: usize,
    n_test: usize,
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset)> {
    let total = n_train + n_val + n_test;
    if total > ds.len() {
        return Err(Error::size(format!(
            "split sizes {n_train}+{n_val}+{n_test} exceed the {} available samples",
            ds.len()
        )));
    }
    let mut indices: Vec<usize> = (0..ds.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..indices.len()).rev() {
        let j = rng.random_range(0..=i);
        indices.swap(i, j);
    }
    let pick = |range: std::ops::Range<usize>| -> Dataset {
        let samples: Vec<TrainingSample> =
            indices[range].iter().map(|&i| ds.samples[i].clone()).collect();
        Dataset {
            header: DatasetHeader { n_samples: samples.len(), ..ds.header.clone() },
            samples,
        }
    };
    Ok((
        pick(0..n_train),
        pick(n_train..n_train + n_val),
        pick(n_train + n_val..total),
    ))
}
