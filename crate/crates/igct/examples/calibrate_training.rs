use igct::metrics::*;
use igct::net::NetArch;
use igct::oracle::MixtureWorld;
use igct::sampler::*;
use igct::schedule::ScheduleConfig;
use igct::train::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn env_f(k: &str, d: f64) -> f64 { std::env::var(k).ok().and_then(|v| v.parse().ok()).unwrap_or(d) }
fn env_u(k: &str, d: u64) -> u64 { std::env::var(k).ok().and_then(|v| v.parse().ok()).unwrap_or(d) }

fn main() {
    let world = MixtureWorld::two_mode_1d(2.0, 0.2);
    let d = env_u("D", 3500);
    let iters = env_u("ITERS", 35_000);
    let lr = env_f("LR", 5e-4);
    let lam = env_f("LAM", 1e-3);
    let batch = env_u("BATCH", 128) as usize;
    let width = env_u("WIDTH", 64) as usize;
    let seed = env_u("SEED", 12);
    let scfg = ScheduleConfig { sigma_data: world.sigma_data(), d, ..ScheduleConfig::default() };
    let arch = NetArch { hidden_width: width, hidden_layers: 2, time_features: 16, class_features: 8, guidance_features: 8 };
    println!("d={d} iters={iters} lr={lr} lam={lam} batch={batch} width={width} seed={seed}");

    let t1 = Instant::now();
    let stages = match env_u("STAGED", 0) {
        1 => vec![
            LambdaStage { until_iteration: iters * 6 / 10, value: lam },
            LambdaStage { until_iteration: iters * 8 / 10, value: lam * 10.0 },
            LambdaStage { until_iteration: u64::MAX, value: lam * 50.0 },
        ],
        2 => vec![
            LambdaStage { until_iteration: iters / 2, value: lam },
            LambdaStage { until_iteration: iters * 7 / 10, value: lam * 25.0 },
            LambdaStage { until_iteration: u64::MAX, value: lam * 250.0 },
        ],
        3 => vec![
            LambdaStage { until_iteration: iters / 2, value: lam },
            LambdaStage { until_iteration: iters * 7 / 10, value: lam * 50.0 },
            LambdaStage { until_iteration: u64::MAX, value: lam * 500.0 },
        ],
        _ => vec![LambdaStage { until_iteration: u64::MAX, value: lam }],
    };
    let tcfg_igct = TrainConfig {
        batch_size: batch, total_iters: iters, lr, log_every: 10_000,
        i_skip: 10,
        lambda_recon: stages,
        ..TrainConfig::default()
    };
    let igct = run_igct(&world, &scfg, &arch, &tcfg_igct, seed, &mut NullSink).unwrap();
    println!("igct trained in {:.1?} (stage {})", t1.elapsed(), igct.iterations / scfg.d);

    for nfe in [1usize, 2] {
        for w in [1.0, 7.0, 13.0] {
            for class in [0usize, 1] {
                let req = SampleRequest { class: Some(class), w, nfe, count: 4000, seed: 600 + class as u64 };
                let samples = cm_sample(&igct.denoiser, &req, &scfg, 0.8).unwrap();
                let mean = samples.iter().map(|s| s[0]).sum::<f64>() / 4000.0;
                let os = overshoot_fraction(&samples, &world, 3.0).unwrap();
                print!("  [nfe={nfe} w={w:2} c={class}] mean {mean:+.3} os {os:.4}");
            }
            println!();
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(777);
    let held: Vec<_> = (0..1000).map(|_| world.sample_data(&mut rng, None).unwrap()).collect();
    let mae = reconstruction_mae_nets(&igct.denoiser, &igct.noiser, &held, &scfg).unwrap();
    let latents: Vec<Vec<f64>> = held.iter()
        .map(|s| noiser_invert(&igct.noiser, &s.x, Some(s.class), &scfg).unwrap())
        .collect();
    let (mean_norm, ratio) = latent_stats(&latents, scfg.t_max).unwrap();
    println!("recon MAE {mae:.4} (lim {:.4}) | latent mean {mean_norm:.3} (lim 4) ratio {ratio:.3} (lim [0.9,1.1])", 0.1 * world.sigma_data());

    let reference: Vec<Vec<f64>> = (0..10_000).map(|_| world.sample_data(&mut rng, None).unwrap().x).collect();
    for nfe in [1usize, 2] {
        for w in [1.0, 7.0, 13.0] {
            let mut samples = Vec::new();
            for class in [0usize, 1] {
                let req = SampleRequest { class: Some(class), w, nfe, count: 5000, seed: 900 + class as u64 };
                samples.extend(cm_sample(&igct.denoiser, &req, &scfg, 0.8).unwrap());
            }
            let pr = knn_precision_recall(&samples, &reference, 5).unwrap();
            let w1 = wasserstein1(&samples, &reference).unwrap();
            println!("igct nfe={nfe} w={w:2}: precision {:.4} recall {:.4} W1 {:.4}", pr.precision, pr.recall, w1);
        }
    }
    println!("total {:.1?}", t1.elapsed());
}
