use std::time::Instant;

use toor_core::data::{
    build_mismatch_split, gauss6_4_split, generate_mixture, Component, MixtureSpec, Role,
};
use toor_core::metrics::auroc;
use toor_core::net::NetworkConfig;
use toor_core::scoring::read_pool_dump;
use toor_core::trainer::{run, Method, TrainConfig};

fn spec_with_std(seed: u64, std: f64, near_angle: f64) -> MixtureSpec {
    let at = |radius: f64, degrees: f64| -> Vec<f64> {
        let rad = degrees.to_radians();
        vec![radius * rad.cos(), radius * rad.sin()]
    };
    let mut components = Vec::new();
    for class in 0..6 {
        components.push(Component {
            mean: at(3.0, 60.0 * class as f64),
            std,
            role: Role::Id,
            count: 500,
            label: Some(class),
        });
    }
    for &angle in &[near_angle, near_angle + 180.0] {
        components.push(Component {
            mean: at(3.0, angle),
            std,
            role: Role::NearOod,
            count: 500,
            label: None,
        });
    }
    // Far-OOD is interior: equidistant from every ID class.
    for &x in &[0.5, -0.5] {
        components.push(Component {
            mean: vec![x, 0.0],
            std,
            role: Role::FarOod,
            count: 500,
            label: None,
        });
    }
    MixtureSpec {
        dim: 2,
        components,
        seed,
    }
}

fn cfg(max_iter: u64, seed: u64) -> TrainConfig {
    TrainConfig {
        max_iter,
        pretrain_iter: max_iter / 100,
        seed,
        ..TrainConfig::default()
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn main() {
    // args: max_iter, then comma-separated std:noise:near_angle triples
    let args: Vec<String> = std::env::args().collect();
    let max_iter: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(6000);
    let configs: Vec<(f64, f64, f64)> = args
        .get(2)
        .map(|s| {
            s.split(',')
                .map(|triple| {
                    let parts: Vec<f64> =
                        triple.split(':').map(|v| v.parse().unwrap()).collect();
                    (parts[0], parts[1], parts[2])
                })
                .collect()
        })
        .unwrap_or_else(|| vec![(0.8, 0.45, 25.0)]);
    let seeds: Vec<u64> = vec![1, 2, 3];
    let tmp = tempfile::tempdir().unwrap();

    for &(std, noise, near_angle) in &configs {
        println!("=== std {std} noise {noise} near_angle {near_angle} (max_iter {max_iter}) ===");
        let data = generate_mixture(&spec_with_std(1, std, near_angle)).unwrap();
        let t0 = Instant::now();
        for zeta in [0.0, 0.5, 0.75] {
            let mut line = format!("zeta {zeta:<5}");
            for method in [
                Method::Supervised,
                Method::PiModel,
                Method::Toor,
                Method::ToorNoRecycle,
            ] {
                let mut accs = Vec::new();
                let mut wnear = Vec::new();
                let mut wfar = Vec::new();
                for &seed in &seeds {
                    let splits =
                        build_mismatch_split(&data, &gauss6_4_split(zeta, seed)).unwrap();
                    let mut net = NetworkConfig::new(splits.dim, splits.classes);
                    net.noise_sigma = noise;
                    let report = run(method, &net, &cfg(max_iter, seed), &splits, None).unwrap();
                    accs.push(report.final_accuracy);
                    let last = report.records.last().unwrap();
                    if let (Some(n), Some(f)) = (last.mean_w_near, last.mean_w_far) {
                        wnear.push(n);
                        wfar.push(f);
                    }
                }
                line.push_str(&format!("  {} {:.4}", method.as_str(), mean(&accs)));
                if !wnear.is_empty() {
                    line.push_str(&format!(
                        " (w_near {:.2} w_far {:.2})",
                        mean(&wnear),
                        mean(&wfar)
                    ));
                }
            }
            println!("{line}");
        }

        // Detection quality at pretrain + 25% of the DEFAULT budget (the
        // schedule keeps the full-length horizons), zeta = 0.5.
        let mut auroc_all = Vec::new();
        let mut auroc_far = Vec::new();
        for &seed in &seeds {
            let splits = build_mismatch_split(&data, &gauss6_4_split(0.5, seed)).unwrap();
            let mut net = NetworkConfig::new(splits.dim, splits.classes);
            net.noise_sigma = noise;
            let full = TrainConfig::default();
            let trunc_iter = full.pretrain_iter + full.max_iter / 4;
            let quarter = TrainConfig {
                max_iter: trunc_iter,
                pretrain_iter: full.pretrain_iter,
                lambda_frac: full.lambda_frac * full.max_iter as f64 / trunc_iter as f64,
                gamma_frac: full.gamma_frac * full.max_iter as f64 / trunc_iter as f64,
                flip_frac: full.flip_frac * full.max_iter as f64 / trunc_iter as f64,
                lr_decay_frac: full.lr_decay_frac * full.max_iter as f64 / trunc_iter as f64,
                seed,
                ..full
            };
            let dir = tmp.path().join(format!("s{std}-{seed}"));
            run(Method::Toor, &net, &quarter, &splits, Some(&dir)).unwrap();
            let rows = read_pool_dump(&dir.join("pool.csv")).unwrap();
            let id: Vec<f64> = rows
                .iter()
                .filter(|r| !r.truth.is_ood())
                .map(|r| r.score)
                .collect();
            let far: Vec<f64> = rows
                .iter()
                .filter(|r| r.truth == Role::FarOod)
                .map(|r| r.score)
                .collect();
            let ood: Vec<f64> = rows
                .iter()
                .filter(|r| r.truth.is_ood())
                .map(|r| r.score)
                .collect();
            auroc_all.push(auroc(&id, &ood).unwrap());
            auroc_far.push(auroc(&id, &far).unwrap());
        }
        println!(
            "auroc@25% all {:.4} far {:.4}   ({:.0}s total)",
            mean(&auroc_all),
            mean(&auroc_far),
            t0.elapsed().as_secs_f64()
        );
    }
}
