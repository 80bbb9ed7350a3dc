use igct::metrics::*;
use igct::model::CfgModel;
use igct::net::NetArch;
use igct::oracle::{MixtureWorld, OracleModel};
use igct::sampler::*;
use igct::scalar::Scalar;
use igct::schedule::ScheduleConfig;
use igct::train::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn env_f(k: &str, d: f64) -> f64 { std::env::var(k).ok().and_then(|v| v.parse().ok()).unwrap_or(d) }
fn env_u(k: &str, d: u64) -> u64 { std::env::var(k).ok().and_then(|v| v.parse().ok()).unwrap_or(d) }

fn main() {
    let world = MixtureWorld::two_mode_1d(2.0, 0.2);
    let scfg = ScheduleConfig { sigma_data: world.sigma_data(), ..ScheduleConfig::default() };
    let arch = NetArch { hidden_width: env_u("WIDTH", 64) as usize, hidden_layers: 2, time_features: 16, class_features: 8, guidance_features: 0 };
    let tcfg = TrainConfig {
        batch_size: env_u("BATCH", 256) as usize,
        total_iters: env_u("ITERS", 20_000),
        lr: env_f("LR", 1e-3),
        lr_decay_to: (env_f("DECAY", 0.0) > 0.0).then(|| env_f("DECAY", 0.0)),
        label_dropout: 0.1,
        log_every: 10_000,
        ..TrainConfig::default()
    };
    println!("iters={} lr={} batch={}", tcfg.total_iters, tcfg.lr, tcfg.batch_size);
    let t0 = Instant::now();
    let edm = run_cfg_edm(&world, &scfg, &arch, &tcfg, env_u("SEED", 11), &mut NullSink).unwrap();
    println!("cfg-edm trained in {:.1?}", t0.elapsed());

    // forward-marginal probe grid: x_t = x0 + t z at fixed t levels
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut mse = 0.0; let mut n = 0;
    for &t in &[0.05, 0.2, 0.8, 2.0, 5.0, 15.0, 40.0, 80.0] {
        let mut level_mse = 0.0;
        let mut level_n = 0;
        for _ in 0..200 {
            let s = world.sample_data(&mut rng, None).unwrap();
            let x = s.x[0] + t * f64::standard_normal(&mut rng);
            for class in [None, Some(s.class)] {
                let d_net = edm.denoiser.denoise(&[x], t, class, None).unwrap();
                let d_orc = world.exact_denoiser(&[x], t, class).unwrap();
                level_mse += (d_net[0] - d_orc[0]).powi(2); level_n += 1;
            }
        }
        println!("  t={t:5}: level MSE {:.3e}", level_mse / level_n as f64);
        mse += level_mse; n += level_n;
    }
    println!("probe MSE = {:.3e} over {n} points", mse / n as f64);

    // paired terminal deviation at w=1, same seeds
    let model = CfgModel(&edm.denoiser);
    let oracle = OracleModel { world: &world };
    for w in [1.0, 13.0] {
        let req = SampleRequest { class: Some(1), w, nfe: 18, count: 4000, seed: 500 };
        let net_s = heun_sample(&model, &req, &scfg, 7.0).unwrap();
        let orc_s = heun_sample(&oracle, &req, &scfg, 7.0).unwrap();
        let mad = net_s.iter().zip(&orc_s).map(|(a, b)| (a[0] - b[0]).abs()).sum::<f64>() / 4000.0;
        let os = overshoot_fraction(&net_s, &world, 3.0).unwrap();
        println!("w={w}: paired MAD vs oracle {mad:.4} | net overshoot {os:.4}");
    }
    println!("total {:.1?}", t0.elapsed());
}
