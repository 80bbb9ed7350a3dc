use igct::metrics::overshoot_fraction;
use igct::oracle::{MixtureWorld, OracleModel};
use igct::sampler::{heun_sample, SampleRequest};
use igct::schedule::ScheduleConfig;

fn main() {
    let world = MixtureWorld::two_mode_1d(2.0, 0.2);
    let scfg = ScheduleConfig { sigma_data: world.sigma_data(), ..ScheduleConfig::default() };
    let oracle = OracleModel { world: &world };
    for nfe in [18usize, 36, 64, 128, 256, 512] {
        let mut samples = Vec::new();
        for class in [0usize, 1] {
            let req = SampleRequest { class: Some(class), w: 13.0, nfe, count: 5000, seed: 700 + class as u64 };
            samples.extend(heun_sample(&oracle, &req, &scfg, 7.0).unwrap());
        }
        let os = overshoot_fraction(&samples, &world, 3.0).unwrap();
        let mean1: f64 = samples[5000..].iter().map(|x| x[0]).sum::<f64>() / 5000.0;
        println!("nfe={nfe:4}: overshoot {os:.4}  class-1 mean {mean1:.4}");
    }
}
