use mimo_assoc::assignment::{solve_association, sum_rate};
use mimo_assoc::dataset::{decode_labels, generate_dataset_with_rates, split, Dataset};
use mimo_assoc::mlp::{association_architecture, Mlp};
use mimo_assoc::propagation::NetworkConfig;
use mimo_assoc::receiver::{CombinerKind, RateMatrix};

fn ratio_on(net: &Mlp, test: &Dataset, rates: &[RateMatrix], base: u64, cfg: &NetworkConfig) -> f64 {
    let mut ratios: Vec<f64> = test.samples.iter().map(|s| {
        let r = &rates[(s.seed - base) as usize];
        let (opt, _) = solve_association(r, &cfg.capacities).unwrap();
        let out = net.forward(&s.features).unwrap();
        let rep = decode_labels(&out, &cfg.capacities, true).unwrap();
        sum_rate(&rep, r, cfg) / sum_rate(&opt, r, cfg)
    }).collect();
    ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ratios[ratios.len() / 2]
}

fn main() {
    let cfg = NetworkConfig::default();
    // Reuse the same base seed as the earlier pilot so generation is warm work.
    let (ds, rates) = generate_dataset_with_rates(&cfg, CombinerKind::Mmse, 50, 3000, 9000).unwrap();
    eprintln!("generated");
    let (train, val, test) = split(&ds, 2700, 150, 150, 77).unwrap();
    let (sizes, acts) = association_architecture(cfg.n_users, cfg.n_bs);
    let dim = (cfg.n_users * cfg.n_bs) as f64;
    let mut net = Mlp::init(&sizes, &acts, 1).unwrap();
    // 350 epochs on 2700 samples ~ the step count of 50 epochs on 18900.
    for round in 0..14 {
        let m = net.train(&train.features(), &train.labels(), &val.features(), &val.labels(), 25, 128, 1e-3, 1000 + round).unwrap();
        let last = m.last().unwrap();
        let r = ratio_on(&net, &test, &rates, 9000, &cfg);
        println!("epochs {:>4}: train/entry {:.5} val/entry {:.5} ratio {:.4}",
                 (round + 1) * 25, last.train_mse / dim, last.val_mse / dim, r);
    }
}
