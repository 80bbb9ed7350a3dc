use igct::metrics::*;
use igct::net::NetArch;
use igct::oracle::{MixtureWorld, OracleModel};
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
    let scfg = ScheduleConfig { sigma_data: world.sigma_data(), ..ScheduleConfig::default() };
    let arch = NetArch { hidden_width: 64, hidden_layers: 2, time_features: 16, class_features: 8, guidance_features: 8 };
    let tcfg = TrainConfig {
        batch_size: env_u("BATCH", 256) as usize,
        total_iters: env_u("ITERS", 16_000),
        lr: env_f("LR", 1e-3),
        log_every: 10_000,
        ..TrainConfig::default()
    };
    println!("iters={} lr={} batch={}", tcfg.total_iters, tcfg.lr, tcfg.batch_size);
    let t0 = Instant::now();
    let gcd = run_guided_cd(&world, &scfg, &arch, &tcfg, env_u("SEED", 13), &mut NullSink).unwrap();
    println!("guided-cd trained in {:.1?}", t0.elapsed());

    let oracle = OracleModel { world: &world };
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let reference: Vec<Vec<f64>> = (0..10_000).map(|_| world.sample_data(&mut rng, None).unwrap().x).collect();
    for w in [1.0, 13.0] {
        for nfe in [1usize, 2] {
            let mut student = Vec::new();
            let mut teacher = Vec::new();
            for class in [0usize, 1] {
                let req = SampleRequest { class: Some(class), w, nfe, count: 5000, seed: 1000 + class as u64 };
                student.extend(cm_sample(&gcd.denoiser, &req, &scfg, 0.8).unwrap());
                teacher.extend(heun_sample(&oracle, &SampleRequest { nfe: 18, ..req }, &scfg, 7.0).unwrap());
            }
            let w1 = wasserstein1(&student, &teacher).unwrap();
            let os = overshoot_fraction(&student, &world, 3.0).unwrap();
            let os_teacher = overshoot_fraction(&teacher, &world, 3.0).unwrap();
            let pr = knn_precision_recall(&student, &reference, 5).unwrap();
            let q = |set: &[Vec<f64>]| {
                let mut v: Vec<f64> = set[5000..].iter().map(|x| x[0]).collect();
                v.sort_by(f64::total_cmp);
                (v[250], v[2500], v[4750])
            };
            let (s05, s50, s95) = q(&student);
            let (t05, t50, t95) = q(&teacher);
            println!("w={w} nfe={nfe}: W1-to-teacher {w1:.4} os {os:.4} (teacher {os_teacher:.4}) P {:.4} R {:.4}", pr.precision, pr.recall);
            println!("    student c1 q05/50/95: {s05:.3}/{s50:.3}/{s95:.3}  teacher: {t05:.3}/{t50:.3}/{t95:.3}");
        }
    }
    println!("total {:.1?}", t0.elapsed());
}
