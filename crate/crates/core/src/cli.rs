//! Command implementations behind the `mimo-assoc` binary: dataset
//! generation, training, evaluation reports and the embedded self-test.
//!
//! Commands are ordinary functions returning [`Result`] so integration tests
//! can drive them directly; the binary maps error kinds to exit codes
//! (2 config/domain, 3 i/o, 4 numerical).

use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::assignment::{brute_force_association, solve_association, sum_rate};
use crate::dataset::{decode_labels, generate_dataset, sample_rates, Dataset, DatasetHeader};
use crate::error::{Error, Result};
use crate::mlp::{association_architecture, Activation, Mlp};
use crate::propagation::{
    build_scenario, dbm_to_watt, received_pilots, sample_channels, EstimatorBank, NetworkConfig,
    PilotPlan,
};
use crate::receiver::{
    instantaneous_sinr, mmse_combiner, mr_combiner, CombinerKind, RateMatrix,
};

/// Everything a run needs: the physical network plus generation and training
/// settings. Flat key-value config files override the defaults; CLI flags
/// override the file.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub network: NetworkConfig,
    pub n_fading: usize,
    pub combiner: CombinerKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            network: NetworkConfig::default(),
            n_fading: 50,
            combiner: CombinerKind::Mmse,
            epochs: 50,
            batch_size: crate::mlp::DEFAULT_BATCH_SIZE,
            learning_rate: crate::mlp::DEFAULT_LEARNING_RATE,
        }
    }
}

fn parse_pairs(value: &str) -> Result<Vec<[f64; 2]>> {
    value
        .split(';')
        .map(|pair| {
            let coords: Vec<&str> = pair.split(',').map(str::trim).collect();
            if coords.len() != 2 {
                return Err(Error::config(format!("bad coordinate pair '{pair}'")));
            }
            let x = coords[0].parse().map_err(|_| Error::config(format!("bad number '{}'", coords[0])))?;
            let y = coords[1].parse().map_err(|_| Error::config(format!("bad number '{}'", coords[1])))?;
            Ok([x, y])
        })
        .collect()
}

/// Parses the flat `key = value` config format. Unknown keys are rejected so
/// typos fail loudly.
pub fn parse_run_config(text: &str) -> Result<RunConfig> {
    let mut rc = RunConfig::default();
    for (line_no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::config(format!("line {}: expected 'key = value'", line_no + 1)))?;
        let key = key.trim();
        let value = value.trim();
        let bad = |what: &str| Error::config(format!("line {}: bad {what} '{value}'", line_no + 1));
        match key {
            "n_bs" => rc.network.n_bs = value.parse().map_err(|_| bad("integer"))?,
            "n_antennas" => rc.network.n_antennas = value.parse().map_err(|_| bad("integer"))?,
            "n_users" => rc.network.n_users = value.parse().map_err(|_| bad("integer"))?,
            "ul_power_dbm" => {
                rc.network.ul_power_dbm = value.parse().map_err(|_| bad("number"))?;
                rc.network.ul_power_w = dbm_to_watt(rc.network.ul_power_dbm);
            }
            "noise_dbm" => {
                rc.network.noise_dbm = value.parse().map_err(|_| bad("number"))?;
                rc.network.noise_w = dbm_to_watt(rc.network.noise_dbm);
            }
            "bandwidth_hz" => rc.network.bandwidth_hz = value.parse().map_err(|_| bad("number"))?,
            "tau_c" => rc.network.tau_c = value.parse().map_err(|_| bad("integer"))?,
            "tau_p" => rc.network.tau_p = value.parse().map_err(|_| bad("integer"))?,
            "tau_u" => rc.network.tau_u = value.parse().map_err(|_| bad("integer"))?,
            "area_edge_m" => rc.network.area_edge_m = value.parse().map_err(|_| bad("number"))?,
            "bs_positions" => rc.network.bs_positions = parse_pairs(value)?,
            "capacities" => {
                rc.network.capacities = value
                    .split(',')
                    .map(|v| v.trim().parse().map_err(|_| bad("capacity list")))
                    .collect::<Result<Vec<usize>>>()?;
            }
            "asd_deg" => rc.network.asd_deg = value.parse().map_err(|_| bad("number"))?,
            "antenna_spacing" => {
                rc.network.antenna_spacing = value.parse().map_err(|_| bad("number"))?
            }
            "n_fading" => rc.n_fading = value.parse().map_err(|_| bad("integer"))?,
            "combiner" => rc.combiner = value.parse()?,
            "epochs" => rc.epochs = value.parse().map_err(|_| bad("integer"))?,
            "batch_size" => rc.batch_size = value.parse().map_err(|_| bad("integer"))?,
            "learning_rate" => rc.learning_rate = value.parse().map_err(|_| bad("number"))?,
            other => return Err(Error::config(format!("line {}: unknown key '{other}'", line_no + 1))),
        }
    }
    rc.network
        .validate()
        .map_err(|e| Error::config(format!("invalid network config: {e}")))?;
    Ok(rc)
}

pub fn load_run_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => parse_run_config(&std::fs::read_to_string(p)?),
    }
}

/// Generates a labeled dataset and writes it to `out`.
pub fn cmd_generate(rc: &RunConfig, samples: usize, seed: u64, out: &Path) -> Result<()> {
    let started = Instant::now();
    log::info!(
        "generating {samples} samples (combiner {}, n_fading {}, seed {seed})",
        rc.combiner,
        rc.n_fading
    );
    let ds = generate_dataset(&rc.network, rc.combiner, rc.n_fading, samples, seed)?;
    ds.write(out)?;
    let secs = started.elapsed().as_secs_f64();
    log::info!(
        "wrote {} samples to {} in {secs:.1} s ({:.2} samples/s)",
        ds.len(),
        out.display(),
        ds.len() as f64 / secs.max(1e-9)
    );
    Ok(())
}

fn headers_compatible(a: &DatasetHeader, b: &DatasetHeader) -> bool {
    a.config == b.config && a.combiner == b.combiner && a.n_fading == b.n_fading
}

/// Trains the association network on a dataset pair and writes the model plus
/// a per-epoch metrics table.
#[allow(clippy::too_many_arguments)]
pub fn cmd_train(
    data: &Path,
    val: &Path,
    epochs: usize,
    batch_size: usize,
    learning_rate: f64,
    seed: u64,
    model_out: &Path,
    metrics_out: &Path,
) -> Result<()> {
    let train_ds = Dataset::read(data)?;
    let val_ds = Dataset::read(val)?;
    if !headers_compatible(&train_ds.header, &val_ds.header) {
        return Err(Error::config(
            "training and validation dataset headers do not match".to_string(),
        ));
    }
    if train_ds.is_empty() {
        return Err(Error::config("training dataset is empty".to_string()));
    }
    let cfg = &train_ds.header.config;
    let (sizes, acts) = association_architecture(cfg.n_users, cfg.n_bs);
    let mut net = Mlp::init(&sizes, &acts, seed)?;
    log::info!(
        "training {} parameters on {} samples for {epochs} epochs (batch {batch_size}, lr {learning_rate})",
        net.parameter_count(),
        train_ds.len()
    );
    let started = Instant::now();
    let metrics = net.train(
        &train_ds.features(),
        &train_ds.labels(),
        &val_ds.features(),
        &val_ds.labels(),
        epochs,
        batch_size,
        learning_rate,
        seed,
    )?;
    log::info!("training finished in {:.1} s", started.elapsed().as_secs_f64());

    net.save(model_out)?;
    let file = std::fs::File::create(metrics_out)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "epoch,train_mse,val_mse")?;
    for m in &metrics {
        writeln!(w, "{},{},{}", m.epoch, m.train_mse, m.val_mse)?;
    }
    w.flush()?;
    if let Some(last) = metrics.last() {
        log::info!("epoch {}: train MSE {}, validation MSE {}", last.epoch, last.train_mse, last.val_mse);
    }
    Ok(())
}

/// Per-sample evaluation results against the exact solver.
#[derive(Debug, Clone)]
pub struct EvalRow {
    pub seed: u64,
    pub optimal_bps: f64,
    pub predicted_raw_bps: f64,
    pub predicted_repaired_bps: f64,
    pub label_mse: f64,
}

/// Evaluation summary over a test set.
#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub rows: Vec<EvalRow>,
    pub median_optimality_ratio: f64,
    pub median_optimality_ratio_raw: f64,
    pub median_label_mse: f64,
}

pub fn median(sorted: &[f64]) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Scores a model on every sample of a test dataset. Rates are re-derived
/// from each sample's seed through the same deterministic pipeline that
/// produced the file.
pub fn evaluate_model(model: &Mlp, test: &Dataset) -> Result<EvalSummary> {
    let cfg = &test.header.config;
    let expected_features = 2 * cfg.n_users + cfg.n_bs;
    if model.input_size() != expected_features
        || model.output_size() != cfg.n_users * cfg.n_bs
    {
        return Err(Error::config(format!(
            "model shape {}->{} does not match the dataset ({expected_features}->{})",
            model.input_size(),
            model.output_size(),
            cfg.n_users * cfg.n_bs
        )));
    }
    let plan = PilotPlan::round_robin(cfg);
    let rows: Result<Vec<EvalRow>> = test
        .samples
        .par_iter()
        .map(|sample| {
            let (positions, rates) =
                sample_rates(cfg, &plan, test.header.combiner, test.header.n_fading, sample.seed)?;
            if positions != sample.ue_positions {
                return Err(Error::format(format!(
                    "sample with seed {} does not re-derive from its seed",
                    sample.seed
                )));
            }
            let (opt_assoc, _) = solve_association(&rates, &cfg.capacities)?;
            let optimal_bps = sum_rate(&opt_assoc, &rates, cfg);

            let out = model.forward(&sample.features)?;
            let raw = decode_labels(&out, &cfg.capacities, false)?;
            let repaired = decode_labels(&out, &cfg.capacities, true)?;
            // Mean squared error per output entry, the same convention as
            // the training metrics table.
            let label_mse: f64 = out
                .iter()
                .zip(&sample.label)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / out.len() as f64;
            Ok(EvalRow {
                seed: sample.seed,
                optimal_bps,
                predicted_raw_bps: sum_rate(&raw, &rates, cfg),
                predicted_repaired_bps: sum_rate(&repaired, &rates, cfg),
                label_mse,
            })
        })
        .collect();
    let rows = rows?;

    let ratio = |num: f64, den: f64| if den > 0.0 { num / den } else { 1.0 };
    let mut ratios: Vec<f64> =
        rows.iter().map(|r| ratio(r.predicted_repaired_bps, r.optimal_bps)).collect();
    ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut ratios_raw: Vec<f64> =
        rows.iter().map(|r| ratio(r.predicted_raw_bps, r.optimal_bps)).collect();
    ratios_raw.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut mses: Vec<f64> = rows.iter().map(|r| r.label_mse).collect();
    mses.sort_by(|a, b| a.partial_cmp(b).unwrap());

    Ok(EvalSummary {
        median_optimality_ratio: median(&ratios),
        median_optimality_ratio_raw: median(&ratios_raw),
        median_label_mse: median(&mses),
        rows,
    })
}

fn write_cdf_table(path: &Path, header: &str, columns: &[Vec<f64>]) -> Result<()> {
    let n = columns.first().map_or(0, Vec::len);
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{header}")?;
    for i in 0..n {
        let quantile = (i + 1) as f64 / n as f64;
        write!(w, "{quantile}")?;
        for col in columns {
            write!(w, ",{}", col[i])?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Evaluates a saved model on a test dataset and writes the report tables:
/// `per_sample.csv`, `rate_cdf.csv` (average user rate under predicted and
/// optimal association), `mse_cdf.csv` and `summary.csv`.
pub fn cmd_eval(model_path: &Path, test_path: &Path, report_dir: &Path) -> Result<()> {
    let model = Mlp::load(model_path)?;
    let test = Dataset::read(test_path)?;
    if test.is_empty() {
        return Err(Error::config("test dataset is empty".to_string()));
    }
    std::fs::create_dir_all(report_dir)?;
    let summary = evaluate_model(&model, &test)?;
    let k = test.header.config.n_users as f64;

    let per_sample = report_dir.join("per_sample.csv");
    {
        let file = std::fs::File::create(&per_sample)?;
        let mut w = BufWriter::new(file);
        writeln!(
            w,
            "sample,seed,optimal_sum_rate_bps,predicted_sum_rate_raw_bps,predicted_sum_rate_repaired_bps,label_mse"
        )?;
        for (i, r) in summary.rows.iter().enumerate() {
            writeln!(
                w,
                "{i},{},{},{},{},{}",
                r.seed, r.optimal_bps, r.predicted_raw_bps, r.predicted_repaired_bps, r.label_mse
            )?;
        }
        w.flush()?;
    }

    let mut predicted: Vec<f64> =
        summary.rows.iter().map(|r| r.predicted_repaired_bps / k).collect();
    predicted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut optimal: Vec<f64> = summary.rows.iter().map(|r| r.optimal_bps / k).collect();
    optimal.sort_by(|a, b| a.partial_cmp(b).unwrap());
    write_cdf_table(
        &report_dir.join("rate_cdf.csv"),
        "quantile,predicted_avg_user_rate_bps,optimal_avg_user_rate_bps",
        &[predicted, optimal],
    )?;

    let mut mses: Vec<f64> = summary.rows.iter().map(|r| r.label_mse).collect();
    mses.sort_by(|a, b| a.partial_cmp(b).unwrap());
    write_cdf_table(&report_dir.join("mse_cdf.csv"), "quantile,mse", &[mses])?;

    {
        let file = std::fs::File::create(report_dir.join("summary.csv"))?;
        let mut w = BufWriter::new(file);
        writeln!(
            w,
            "samples,median_optimality_ratio,median_optimality_ratio_raw,median_label_mse"
        )?;
        writeln!(
            w,
            "{},{},{},{}",
            summary.rows.len(),
            summary.median_optimality_ratio,
            summary.median_optimality_ratio_raw,
            summary.median_label_mse
        )?;
        w.flush()?;
    }

    println!(
        "median optimality ratio (repaired decoding): {:.4}",
        summary.median_optimality_ratio
    );
    Ok(())
}

/// Optional fault injections for exercising the self-test harness itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelftestFault {
    /// Flip the sign of one arc cost inside the association solver.
    SolverCostFlip,
}

impl std::str::FromStr for SelftestFault {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "solver-cost-flip" => Ok(SelftestFault::SolverCostFlip),
            other => Err(Error::config(format!("unknown fault '{other}'"))),
        }
    }
}

fn suite_solver_vs_brute_force(fault: Option<SelftestFault>) -> std::result::Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for trial in 0..60 {
        let k = 1 + rng.random_range(0..7);
        let m = 1 + rng.random_range(0..3);
        let caps: Vec<usize> = (0..m).map(|_| rng.random_range(0..=k)).collect();
        let mut r = RateMatrix {
            r: (0..k).map(|_| (0..m).map(|_| rng.random::<f64>()).collect()).collect(),
            n_fading: 1,
        };
        if fault == Some(SelftestFault::SolverCostFlip) {
            // Corrupt one objective coefficient on the solver side only.
            r.r[0][0] = -r.r[0][0];
        }
        let solved = if fault == Some(SelftestFault::SolverCostFlip) {
            // Bypass the input validation so the corruption reaches the solver.
            crate::assignment::solve_association_unchecked(&r, &caps)
        } else {
            solve_association(&r, &caps)
        };
        let solved = solved.map_err(|e| format!("trial {trial}: solver failed: {e}"))?;
        if fault == Some(SelftestFault::SolverCostFlip) {
            r.r[0][0] = -r.r[0][0];
        }
        let (_, oracle) = brute_force_association(&r, &caps)
            .map_err(|e| format!("trial {trial}: oracle failed: {e}"))?;
        let diff = (solved.1.objective - oracle).abs();
        if diff > 1e-9 {
            return Err(format!(
                "trial {trial}: solver objective {} differs from brute force {} by {diff:.3e}",
                solved.1.objective, oracle
            ));
        }
    }
    Ok(())
}

fn suite_gradient_check() -> std::result::Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for trial in 0..5 {
        let sizes = [
            1 + rng.random_range(0..4),
            1 + rng.random_range(0..5),
            1 + rng.random_range(0..3),
        ];
        let acts = [Activation::Sigmoid, Activation::Sigmoid];
        let mut net = Mlp::init(&sizes, &acts, rng.random()).unwrap();
        let x: Vec<f64> = (0..sizes[0]).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let y: Vec<f64> = (0..sizes[2]).map(|_| rng.random::<f64>()).collect();
        let (grads, _) = net.backward(&[&x], &[&y]).unwrap();
        let h = 1e-6;
        for l in 0..2 {
            for i in 0..net.weights()[l].len() {
                let orig = net.weights()[l][i];
                net.weights_mut()[l][i] = orig + h;
                let up = net.evaluate_mse(&[x.clone()], &[y.clone()]).unwrap();
                net.weights_mut()[l][i] = orig - h;
                let down = net.evaluate_mse(&[x.clone()], &[y.clone()]).unwrap();
                net.weights_mut()[l][i] = orig;
                let fd = (up - down) / (2.0 * h);
                let bp = grads.d_weights[l][i];
                if (bp - fd).abs() > 1e-5 * bp.abs().max(fd.abs()) + 1e-10 {
                    return Err(format!(
                        "trial {trial}: gradient mismatch at layer {l} weight {i}: {bp} vs {fd}"
                    ));
                }
            }
        }
    }
    Ok(())
}

fn suite_sinr_dominance() -> std::result::Result<(), String> {
    let cfg = NetworkConfig {
        n_bs: 2,
        n_antennas: 4,
        n_users: 6,
        tau_p: 3,
        tau_u: 197,
        bs_positions: vec![[250.0, 500.0], [750.0, 500.0]],
        capacities: vec![3, 3],
        ..NetworkConfig::default()
    };
    let positions: Vec<[f64; 2]> = (0..6)
        .map(|k| {
            let a = (k as f64 + 1.0) * 0.618_033_988_75;
            let b = (k as f64 + 1.0) * 0.381_966_011_25;
            [1000.0 * (a - a.floor()), 1000.0 * (b - b.floor())]
        })
        .collect();
    let scn = build_scenario(&cfg, &positions).map_err(|e| e.to_string())?;
    let plan = PilotPlan::round_robin(&cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(500);
    for block in 0..100 {
        let ch = sample_channels(&scn, &mut rng);
        let obs = received_pilots(&ch, &plan, &cfg, &mut rng);
        let est = crate::propagation::mmse_estimate(&obs, &scn, &plan, &cfg)
            .map_err(|e| e.to_string())?;
        for m in 0..cfg.n_bs {
            let mmse = mmse_combiner(&est, m, &cfg).map_err(|e| e.to_string())?;
            let mr = mr_combiner(&est, m);
            let g_mmse = instantaneous_sinr(&mmse, &est, m, &cfg);
            let g_mr = instantaneous_sinr(&mr, &est, m, &cfg);
            for k in 0..cfg.n_users {
                if g_mmse[k] < g_mr[k] - 1e-9 {
                    return Err(format!(
                        "block {block}: MR SINR beats M-MMSE for user {k} at BS {m}"
                    ));
                }
            }
            for _ in 0..20 {
                let v = nalgebra::DVector::from_fn(cfg.n_antennas, |_, _| {
                    crate::propagation::complex_normal(&mut rng)
                });
                let random = crate::receiver::CombinerBank {
                    v: vec![v; cfg.n_users],
                    kind: CombinerKind::Mr,
                };
                let g_rand = instantaneous_sinr(&random, &est, m, &cfg);
                for k in 0..cfg.n_users {
                    if g_mmse[k] < g_rand[k] - 1e-9 {
                        return Err(format!(
                            "block {block}: random combiner beats M-MMSE for user {k} at BS {m}"
                        ));
                    }
                }
            }
        }
    }
    Ok(())
}

fn suite_estimator_orthogonality() -> std::result::Result<(), String> {
    let cfg = NetworkConfig {
        n_bs: 2,
        n_antennas: 4,
        n_users: 4,
        tau_p: 2,
        tau_u: 198,
        bs_positions: vec![[250.0, 250.0], [750.0, 750.0]],
        capacities: vec![2, 2],
        ..NetworkConfig::default()
    };
    let positions = [[120.0, 330.0], [400.0, 880.0], [720.0, 140.0], [910.0, 680.0]];
    let scn = build_scenario(&cfg, &positions).map_err(|e| e.to_string())?;
    let plan = PilotPlan::round_robin(&cfg);
    let bank = EstimatorBank::new(&scn, &plan, &cfg).map_err(|e| e.to_string())?;
    let n = cfg.n_antennas;
    let blocks = 2000;
    let tracked = [(0usize, 0usize), (3usize, 1usize)];
    let mut sum = vec![nalgebra::DMatrix::<num_complex::Complex64>::zeros(n, n); tracked.len()];
    let mut sum_sq = vec![nalgebra::DMatrix::<f64>::zeros(n, n); tracked.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(4096);
    for _ in 0..blocks {
        let ch = sample_channels(&scn, &mut rng);
        let obs = received_pilots(&ch, &plan, &cfg, &mut rng);
        let despread = bank.despread(&obs, &plan);
        let h_hat = bank.estimate(&scn, &despread, &plan);
        for (i, &(k, m)) in tracked.iter().enumerate() {
            let err = &ch.h[k][m] - &h_hat[k][m];
            for s in 0..n {
                for t in 0..n {
                    let v = h_hat[k][m][s] * err[t].conj();
                    sum[i][(s, t)] += v;
                    sum_sq[i][(s, t)] += v.norm_sqr();
                }
            }
        }
    }
    for (i, &(k, m)) in tracked.iter().enumerate() {
        let mean = &sum[i] / num_complex::Complex64::new(blocks as f64, 0.0);
        let mut se_sq = 0.0;
        for s in 0..n {
            for t in 0..n {
                let second = sum_sq[i][(s, t)] / blocks as f64;
                se_sq += (second - mean[(s, t)].norm_sqr()).max(0.0) / blocks as f64;
            }
        }
        let bias = mean.norm();
        let bound = 5.0 * se_sq.sqrt();
        if bias > bound {
            return Err(format!(
                "estimate/error correlation for user {k}, BS {m}: |mean| {bias:.3e} > {bound:.3e}"
            ));
        }
    }
    Ok(())
}

/// Runs the embedded oracle suites and prints one pass/fail line each.
/// Returns true when every suite passed.
pub fn cmd_selftest(fault: Option<SelftestFault>) -> bool {
    let suites: Vec<(&str, Box<dyn Fn() -> std::result::Result<(), String>>)> = vec![
        (
            "solver-vs-brute-force",
            Box::new(move || suite_solver_vs_brute_force(fault)),
        ),
        ("gradient-check", Box::new(suite_gradient_check)),
        ("sinr-dominance", Box::new(suite_sinr_dominance)),
        ("estimator-orthogonality", Box::new(suite_estimator_orthogonality)),
    ];
    let mut all_ok = true;
    for (name, run) in suites {
        match run() {
            Ok(()) => println!("PASS {name}"),
            Err(reason) => {
                println!("FAIL {name}: {reason}");
                all_ok = false;
            }
        }
    }
    all_ok
}

/// Maps an error to the documented process exit code.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Domain(_) | Error::Size(_) | Error::Format(_) | Error::Config(_) => 2,
        Error::Io(_) => 3,
        Error::Numerical(_) => 4,
    }
}

/// Resolved output paths for an evaluation report.
pub fn report_paths(report_dir: &Path) -> Vec<PathBuf> {
    ["per_sample.csv", "rate_cdf.csv", "mse_cdf.csv", "summary.csv"]
        .iter()
        .map(|f| report_dir.join(f))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_run_config_matches_reference_deployment() {
        let rc = RunConfig::default();
        assert_eq!(rc.n_fading, 50);
        assert_eq!(rc.combiner, CombinerKind::Mmse);
        assert_eq!(rc.epochs, 50);
        assert_eq!(rc.batch_size, 128);
        assert_eq!(rc.network.n_users, 40);
    }

    #[test]
    fn config_file_overrides_and_rejects_unknown_keys() {
        let rc = parse_run_config(
            "# comment\n\
             n_bs = 2\n\
             n_antennas = 8\n\
             n_users = 6\n\
             tau_p = 3\n\
             tau_u = 197\n\
             bs_positions = 100,100; 900,900\n\
             capacities = 3, 3\n\
             combiner = mr\n\
             n_fading = 7\n",
        )
        .unwrap();
        assert_eq!(rc.network.n_bs, 2);
        assert_eq!(rc.network.bs_positions, vec![[100.0, 100.0], [900.0, 900.0]]);
        assert_eq!(rc.network.capacities, vec![3, 3]);
        assert_eq!(rc.combiner, CombinerKind::Mr);
        assert_eq!(rc.n_fading, 7);

        assert!(parse_run_config("nonsense = 1\n").is_err());
        assert!(parse_run_config("n_bs 2\n").is_err());
        // Invalid resulting network (capacity below user count).
        assert!(parse_run_config("capacities = 1,1,1,1\n").is_err());
    }

    #[test]
    fn dbm_conversion_happens_at_parse_time() {
        let rc = parse_run_config("ul_power_dbm = 30\nnoise_dbm = 0\n").unwrap();
        assert!((rc.network.ul_power_w - 1.0).abs() < 1e-12);
        assert!((rc.network.noise_w - 1e-3).abs() < 1e-15);
        assert_eq!(rc.network.ul_power_dbm, 30.0);
    }

    #[test]
    fn median_handles_even_and_odd() {
        assert_eq!(median(&[1.0, 2.0, 3.0]), 2.0);
        assert_eq!(median(&[1.0, 2.0, 3.0, 4.0]), 2.5);
    }

    #[test]
    fn exit_codes_follow_error_kinds() {
        assert_eq!(exit_code(&Error::config("x")), 2);
        assert_eq!(exit_code(&Error::domain("x")), 2);
        assert_eq!(exit_code(&Error::Io(std::io::Error::other("x"))), 3);
        assert_eq!(exit_code(&Error::numerical("x")), 4);
    }
}
