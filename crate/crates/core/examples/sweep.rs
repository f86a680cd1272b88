//! Small sweep driver used to pick acceptance thresholds.
//!
//! `cargo run --release -p mtac-core --example sweep -- key=value ...`
//! keys: presets (comma list), noise (comma list), seeds, epochs, per_class,
//! test_per_class, sep, fnoise, edges, counter, rule, quantile, start, au_noise

use std::collections::HashMap;
use std::time::Instant;

use mtac::synth::{generate_corpus, inject_label_noise};
use mtac::{BranchPreset, CounterMode, EdgeMode, GeneratorConfig, RelabelRule, TrainConfig};

fn main() -> mtac::Result<()> {
    let args: HashMap<String, String> = std::env::args()
        .skip(1)
        .filter_map(|a| a.split_once('=').map(|(k, v)| (k.to_string(), v.to_string())))
        .collect();
    let get = |k: &str, d: &str| args.get(k).cloned().unwrap_or_else(|| d.to_string());
    let presets: Vec<BranchPreset> = get("presets", "full")
        .split(',')
        .map(|s| s.parse())
        .collect::<mtac::Result<_>>()?;
    let noises: Vec<f64> = get("noise", "0").split(',').map(|s| s.parse().unwrap()).collect();
    let seeds: u64 = get("seeds", "1").parse().unwrap();
    let epochs: usize = get("epochs", "30").parse().unwrap();
    let per_class: usize = get("per_class", "700").parse().unwrap();
    let test_per_class: usize = get("test_per_class", "100").parse().unwrap();
    let sep: f64 = get("sep", "6").parse().unwrap();
    let fnoise: f64 = get("fnoise", "1").parse().unwrap();
    let au_noise: f64 = get("au_noise", "0").parse().unwrap();
    let edges: EdgeMode = get("edges", "data").parse()?;
    let counter = match get("counter", "epoch").as_str() {
        "epoch" => CounterMode::PerEpoch,
        _ => CounterMode::Global,
    };
    let rule = match get("rule", "template").as_str() {
        "prediction" => RelabelRule::Prediction,
        _ => RelabelRule::Template,
    };
    let quantile: f64 = get("quantile", "0.2").parse().unwrap();
    let start: usize = get("start", "10").parse().unwrap();
    let verbose = args.contains_key("verbose");

    for &noise in &noises {
        for &preset in &presets {
            let mut accs = Vec::new();
            let mut precs = Vec::new();
            for seed in 0..seeds {
                let mut g = GeneratorConfig::standard(7, 8, 32, 100 + seed);
                g.train_per_class = vec![per_class; 7];
                g.test_per_class = vec![test_per_class; 7];
                g.cluster_separation = sep;
                g.feature_noise = fnoise;
                g.au_noise = au_noise;
                let corpus = generate_corpus(&g)?;
                let (noisy, _) = inject_label_noise(&corpus, noise, 200 + seed)?;
                let mut cfg = TrainConfig::default().with_preset(preset);
                cfg.epochs = epochs;
                cfg.seed = seed;
                cfg.edge_mode = edges;
                cfg.counter_mode = counter;
                cfg.relabel_rule = rule;
                cfg.gate.quantile = quantile;
                cfg.relabel_start_epoch = start;
                let t = Instant::now();
                let out = mtac::train(cfg, &noisy)?;
                if verbose {
                    for e in &out.report.epochs {
                        println!(
                            "  ep {:2} loss {:.4} wce {:.4} w3c {:.4} wau {:.4} tr {:.3} te {:.4} noise {:.3} rel {} prec {:?}",
                            e.epoch,
                            e.loss_total,
                            e.loss_wce,
                            e.loss_w3c,
                            e.loss_wau,
                            e.train_accuracy,
                            e.test.as_ref().map_or(f64::NAN, |t| t.accuracy),
                            e.train_label_noise.unwrap_or(f64::NAN),
                            e.relabels_applied,
                            e.relabel_precision
                        );
                    }
                }
                let last = out.report.last().expect("epochs > 0");
                let acc = out.report.final_test_accuracy().unwrap_or(f64::NAN);
                println!(
                    "noise {noise:.1} {preset:5} seed {seed} acc {acc:.4} prec {:?} recall {:?} relabels {} ({:.1}s)",
                    last.relabel_precision,
                    last.relabel_recall,
                    out.audit.iter().filter(|a| a.applied).count(),
                    t.elapsed().as_secs_f64()
                );
                accs.push(acc);
                if let Some(p) = last.relabel_precision {
                    precs.push(p);
                }
            }
            println!(
                "== noise {noise:.1} {preset:5} median acc {:.4} median prec {:.4}",
                median(&mut accs),
                if precs.is_empty() { f64::NAN } else { median(&mut precs) }
            );
        }
    }
    Ok(())
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}
