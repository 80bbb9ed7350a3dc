//! Implementations behind the CLI subcommands.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use igct::checkpoint::{Algorithm, Checkpoint};
use igct::metrics::{
    knn_precision_recall, latent_stats, overshoot_fraction, reconstruction_mae_nets, wasserstein1,
    EvalReport,
};
use igct::model::{CfgModel, DenoiserNet, NoiserNet};
use igct::oracle::OracleModel;
use igct::sampler::{
    cm_sample, ddim_invert, edit_ddim, edit_igct, heun_sample, heun_sample_trajectories,
    noiser_invert, SampleRequest,
};
use igct::train::{run_cfg_edm, run_guided_cd, run_igct};
use igct::{Error, MixtureWorld, Real, Result, ScheduleConfig};

use crate::config::{self, EvalConfig};
use crate::io::{self, SampleRow};

/// Environment variable that overrides every output directory.
pub const OUTPUT_DIR_ENV: &str = "IGCT_OUTPUT_DIR";

pub fn resolve_output_dir(flag: Option<&Path>, config_dir: &Path) -> PathBuf {
    if let Ok(env_dir) = std::env::var(OUTPUT_DIR_ENV) {
        return PathBuf::from(env_dir);
    }
    flag.map(Path::to_path_buf)
        .unwrap_or_else(|| config_dir.to_path_buf())
}

fn derive_seed(seed: u64, tag: u64) -> u64 {
    // splitmix64 keeps per-purpose sample streams disjoint.
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn cmd_train(
    config_path: &Path,
    algorithm: Algorithm,
    output_dir: Option<&Path>,
) -> Result<()> {
    let cfg = config::load(config_path)?;
    let dir = resolve_output_dir(output_dir, &cfg.output_dir);
    std::fs::create_dir_all(&dir)?;
    let mut sink = io::CsvSink::create(&dir, algorithm)?;
    let ckpt = match algorithm {
        Algorithm::Igct => {
            let out = run_igct(&cfg.world, &cfg.schedule, &cfg.net, &cfg.train, cfg.seed, &mut sink)?;
            Checkpoint::build(
                algorithm,
                &cfg.schedule,
                &cfg.world,
                out.iterations,
                &[
                    ("denoiser", &out.denoiser.net, &out.den_opt),
                    ("noiser", &out.noiser.net, &out.noi_opt),
                ],
            )
        }
        Algorithm::CfgEdm => {
            let out = run_cfg_edm(&cfg.world, &cfg.schedule, &cfg.net, &cfg.train, cfg.seed, &mut sink)?;
            Checkpoint::build(
                algorithm,
                &cfg.schedule,
                &cfg.world,
                out.iterations,
                &[("denoiser", &out.denoiser.net, &out.opt)],
            )
        }
        Algorithm::GuidedCd => {
            let out = run_guided_cd(&cfg.world, &cfg.schedule, &cfg.net, &cfg.train, cfg.seed, &mut sink)?;
            Checkpoint::build(
                algorithm,
                &cfg.schedule,
                &cfg.world,
                out.iterations,
                &[("denoiser", &out.denoiser.net, &out.opt)],
            )
        }
    };
    let ckpt_path = dir.join(format!("ckpt-{algorithm}.json"));
    ckpt.save(&ckpt_path)?;
    println!(
        "trained {algorithm} for {} iterations; checkpoint {}",
        ckpt.iteration,
        ckpt_path.display()
    );
    Ok(())
}

/// Either a trained checkpoint or the analytic world.
pub enum ModelSource {
    Checkpoint(Box<Checkpoint<Real>>),
    Oracle {
        world: MixtureWorld,
        schedule: ScheduleConfig,
    },
}

impl ModelSource {
    pub fn load(checkpoint: Option<&Path>, oracle_config: Option<&Path>) -> Result<Self> {
        match (checkpoint, oracle_config) {
            (Some(path), _) => Ok(ModelSource::Checkpoint(Box::new(Checkpoint::load(path)?))),
            (None, Some(cfg_path)) => {
                let cfg = config::load(cfg_path)?;
                Ok(ModelSource::Oracle {
                    world: cfg.world,
                    schedule: cfg.schedule,
                })
            }
            (None, None) => Err(Error::InvalidConfig {
                field: "checkpoint".into(),
                reason: "provide --checkpoint, or --oracle with --config".into(),
            }),
        }
    }

    pub fn schedule(&self) -> &ScheduleConfig {
        match self {
            ModelSource::Checkpoint(c) => &c.schedule,
            ModelSource::Oracle { schedule, .. } => schedule,
        }
    }

    pub fn world(&self) -> Result<MixtureWorld> {
        match self {
            ModelSource::Checkpoint(c) => Ok(c.world.clone()),
            ModelSource::Oracle { world, .. } => Ok(world.clone()),
        }
    }

    fn method_tag(&self) -> String {
        match self {
            ModelSource::Checkpoint(c) => c.algorithm.to_string(),
            ModelSource::Oracle { .. } => "oracle".to_string(),
        }
    }

    fn default_nfe(&self) -> usize {
        match self {
            ModelSource::Checkpoint(c) => match c.algorithm {
                Algorithm::Igct | Algorithm::GuidedCd => 1,
                Algorithm::CfgEdm => 18,
            },
            ModelSource::Oracle { .. } => 18,
        }
    }

    /// Generate `count` points (and trajectories for Heun-based models).
    #[allow(clippy::type_complexity)]
    fn sample(
        &self,
        req: &SampleRequest<Real>,
        t_mid: Real,
        rho: Real,
        want_trajectories: bool,
    ) -> Result<(Vec<Vec<Real>>, Option<Vec<Vec<(Real, Vec<Real>)>>>)> {
        let scfg = self.schedule();
        match self {
            ModelSource::Checkpoint(c) => match c.algorithm {
                Algorithm::Igct | Algorithm::GuidedCd => {
                    if want_trajectories {
                        return Err(Error::InvalidConfig {
                            field: "trajectories".into(),
                            reason: "trajectory dumps need a Heun sampler (cfg-edm or oracle)"
                                .into(),
                        });
                    }
                    Ok((cm_sample(&c.denoiser()?, req, scfg, t_mid)?, None))
                }
                Algorithm::CfgEdm => {
                    let den = c.denoiser()?;
                    let model = CfgModel(&den);
                    if want_trajectories {
                        let trajs = heun_sample_trajectories(&model, req, scfg, rho)?;
                        let samples = trajs
                            .iter()
                            .map(|t| t.last().expect("nonempty").1.clone())
                            .collect();
                        Ok((samples, Some(trajs)))
                    } else {
                        Ok((heun_sample(&model, req, scfg, rho)?, None))
                    }
                }
            },
            ModelSource::Oracle { world, .. } => {
                let model = OracleModel { world };
                if want_trajectories {
                    let trajs = heun_sample_trajectories(&model, req, scfg, rho)?;
                    let samples = trajs
                        .iter()
                        .map(|t| t.last().expect("nonempty").1.clone())
                        .collect();
                    Ok((samples, Some(trajs)))
                } else {
                    Ok((heun_sample(&model, req, scfg, rho)?, None))
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_sample(
    source: &ModelSource,
    class: Option<usize>,
    w: Real,
    nfe: Option<usize>,
    count: usize,
    seed: u64,
    t_mid: Real,
    rho: Real,
    out: &Path,
    trajectories: Option<&Path>,
) -> Result<()> {
    let req = SampleRequest {
        class,
        w,
        nfe: nfe.unwrap_or_else(|| source.default_nfe()),
        count,
        seed,
    };
    let (samples, trajs) = source.sample(&req, t_mid, rho, trajectories.is_some())?;
    let rows: Vec<SampleRow> = samples
        .into_iter()
        .enumerate()
        .map(|(i, x)| SampleRow {
            index: i as u64,
            class,
            w,
            x,
        })
        .collect();
    io::write_samples(out, &rows)?;
    if let (Some(path), Some(trajs)) = (trajectories, trajs) {
        io::write_trajectories(path, &trajs)?;
    }
    println!("wrote {} samples to {}", rows.len(), out.display());
    Ok(())
}

pub enum InversionMethod {
    Igct,
    Ddim,
}

pub fn cmd_invert(
    source: &ModelSource,
    input: &Path,
    method: InversionMethod,
    nfe: usize,
    rho: Real,
    out: &Path,
) -> Result<()> {
    let rows = io::read_samples(input)?;
    let scfg = source.schedule();
    let latents: Vec<SampleRow> = match (&method, source) {
        (InversionMethod::Igct, ModelSource::Checkpoint(c)) => {
            let noi = c.noiser()?;
            rows.iter()
                .map(|r| {
                    Ok(SampleRow {
                        index: r.index,
                        class: r.class,
                        w: r.w,
                        x: noiser_invert(&noi, &r.x, r.class, scfg)?,
                    })
                })
                .collect::<Result<_>>()?
        }
        (InversionMethod::Igct, ModelSource::Oracle { .. }) => {
            return Err(Error::InvalidConfig {
                field: "method".into(),
                reason: "single-step inversion needs a trained noiser checkpoint".into(),
            });
        }
        (InversionMethod::Ddim, _) => {
            let invert_one = |r: &SampleRow| -> Result<Vec<Real>> {
                match source {
                    ModelSource::Checkpoint(c) => {
                        let den = c.denoiser()?;
                        ddim_invert(&CfgModel(&den), &r.x, r.class, nfe, scfg, rho)
                    }
                    ModelSource::Oracle { world, .. } => {
                        ddim_invert(&OracleModel { world }, &r.x, r.class, nfe, scfg, rho)
                    }
                }
            };
            rows.iter()
                .map(|r| {
                    Ok(SampleRow {
                        index: r.index,
                        class: r.class,
                        w: r.w,
                        x: invert_one(r)?,
                    })
                })
                .collect::<Result<_>>()?
        }
    };
    io::write_samples(out, &latents)?;
    println!("wrote {} latents to {}", latents.len(), out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_edit(
    source: &ModelSource,
    input: &Path,
    class_tar: usize,
    w: Real,
    method: InversionMethod,
    nfe: usize,
    rho: Real,
    out: &Path,
) -> Result<()> {
    let rows = io::read_samples(input)?;
    let scfg = source.schedule();
    let world = source.world()?;
    if class_tar >= world.n_classes() {
        return Err(Error::ClassOutOfRange {
            id: class_tar,
            n_classes: world.n_classes(),
        });
    }
    let need_class = |r: &SampleRow| -> Result<usize> {
        r.class.ok_or_else(|| Error::InvalidConfig {
            field: format!("{}:{}", input.display(), r.index),
            reason: "editing needs a source class per row".into(),
        })
    };
    let edited: Vec<SampleRow> = match (&method, source) {
        (InversionMethod::Igct, ModelSource::Checkpoint(c)) => {
            let den = c.denoiser()?;
            let noi = c.noiser()?;
            rows.iter()
                .map(|r| {
                    let src = need_class(r)?;
                    Ok(SampleRow {
                        index: r.index,
                        class: Some(class_tar),
                        w,
                        x: edit_igct(&den, &noi, &r.x, src, class_tar, w, scfg)?,
                    })
                })
                .collect::<Result<_>>()?
        }
        (InversionMethod::Igct, ModelSource::Oracle { .. }) => {
            return Err(Error::InvalidConfig {
                field: "method".into(),
                reason: "single-step editing needs a trained iGCT checkpoint".into(),
            });
        }
        (InversionMethod::Ddim, _) => rows
            .iter()
            .map(|r| {
                let src = need_class(r)?;
                let x = match source {
                    ModelSource::Checkpoint(c) => {
                        let den = c.denoiser()?;
                        edit_ddim(&CfgModel(&den), &r.x, src, class_tar, w, nfe, scfg, rho)?
                    }
                    ModelSource::Oracle { world, .. } => edit_ddim(
                        &OracleModel { world },
                        &r.x,
                        src,
                        class_tar,
                        w,
                        nfe,
                        scfg,
                        rho,
                    )?,
                };
                Ok(SampleRow {
                    index: r.index,
                    class: Some(class_tar),
                    w,
                    x,
                })
            })
            .collect::<Result<_>>()?,
    };
    io::write_samples(out, &edited)?;
    println!("wrote {} edits to {}", edited.len(), out.display());
    Ok(())
}

/// Deterministic per-class sample counts proportional to class weights.
fn class_counts(world: &MixtureWorld, n: usize) -> Vec<(usize, usize)> {
    let mut counts: Vec<(usize, usize)> = (0..world.n_classes())
        .map(|c| (c, (world.class_weight(c) * n as f64) as usize))
        .collect();
    let assigned: usize = counts.iter().map(|(_, c)| c).sum();
    let n_classes = counts.len();
    for i in 0..n - assigned {
        counts[i % n_classes].1 += 1;
    }
    counts
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_eval(
    source: &ModelSource,
    eval: &EvalConfig,
    w_list: &[Real],
    count: usize,
    nfe: Option<usize>,
    seed: u64,
    run_id: &str,
    out_dir: &Path,
) -> Result<()> {
    let world = source.world()?;
    let scfg = source.schedule();
    let nfe = nfe.unwrap_or_else(|| source.default_nfe());
    std::fs::create_dir_all(out_dir)?;

    let mut reference_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xBEEF));
    let reference: Vec<Vec<Real>> = (0..count)
        .map(|_| Ok(world.sample_data(&mut reference_rng, None)?.x))
        .collect::<Result<_>>()?;

    // Held-out set for reconstruction/latent statistics (iGCT only).
    let igct_nets: Option<(DenoiserNet<Real>, NoiserNet<Real>)> = match source {
        ModelSource::Checkpoint(c) if c.algorithm == Algorithm::Igct => {
            Some((c.denoiser()?, c.noiser()?))
        }
        _ => None,
    };
    let mut held_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x4E1D));
    let held: Vec<_> = (0..eval.held_out)
        .map(|_| world.sample_data(&mut held_rng, None))
        .collect::<igct::Result<_>>()?;

    let mut reports = Vec::new();
    for &w in w_list {
        let mut samples: Vec<Vec<Real>> = Vec::with_capacity(count);
        for (class, n_class) in class_counts(&world, count) {
            if n_class == 0 {
                continue;
            }
            let req = SampleRequest {
                class: Some(class),
                w,
                nfe,
                count: n_class,
                seed: derive_seed(seed, 0x5A17 + class as u64),
            };
            let (chunk, _) = source.sample(&req, eval.t_mid, 7.0, false)?;
            samples.extend(chunk);
        }
        let w1 = wasserstein1(&samples, &reference)?;
        let pr = knn_precision_recall(&samples, &reference, eval.knn_k)?;
        let overshoot = overshoot_fraction(&samples, &world, eval.band_sigmas)?;
        let (recon_mae, latent_mean_norm, latent_std_ratio) = match &igct_nets {
            Some((den, noi)) => {
                let mae = reconstruction_mae_nets(den, noi, &held, scfg)?;
                let latents: Vec<Vec<Real>> = held
                    .iter()
                    .map(|s| noiser_invert(noi, &s.x, Some(s.class), scfg))
                    .collect::<Result<_>>()?;
                let (mean_norm, ratio) = latent_stats(&latents, scfg.t_max)?;
                (Some(mae), Some(mean_norm), Some(ratio))
            }
            None => (None, None, None),
        };
        reports.push(EvalReport {
            method: source.method_tag(),
            w,
            nfe,
            w1,
            precision: pr.precision,
            recall: pr.recall,
            overshoot_fraction: overshoot,
            recon_mae,
            latent_mean_norm,
            latent_std_ratio,
            n_samples: count,
        });
    }

    let report_path = out_dir.join("report.csv");
    io::append_reports(&report_path, run_id, &reports)?;
    io::write_report_summary(&out_dir.join(format!("summary-{run_id}.json")), run_id, &reports)?;
    for r in &reports {
        println!(
            "{} w={} nfe={}: w1={:.4} precision={:.4} recall={:.4} overshoot={:.4}",
            r.method, r.w, r.nfe, r.w1, r.precision, r.recall, r.overshoot_fraction
        );
    }
    Ok(())
}

pub enum PlotKind {
    Histogram,
    Trajectory,
    Sweep,
}

pub fn cmd_plot(
    kind: PlotKind,
    inputs: &[PathBuf],
    out: &Path,
    bins: usize,
    metric: &str,
    max_traj: usize,
) -> Result<()> {
    if inputs.is_empty() {
        return Err(Error::EmptyInput("plot inputs"));
    }
    let svg = match kind {
        PlotKind::Histogram => {
            let mut series = Vec::new();
            for path in inputs {
                let rows = io::read_samples(path)?;
                if rows[0].x.len() != 1 {
                    return Err(Error::InvalidConfig {
                        field: format!("{}", path.display()),
                        reason: "histogram plots take 1D sample files".into(),
                    });
                }
                let label = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "series".into());
                series.push((label, rows.iter().map(|r| r.x[0]).collect()));
            }
            crate::plot::histogram(&series, bins)?
        }
        PlotKind::Trajectory => {
            let trajs = read_trajectories_1d(&inputs[0])?;
            crate::plot::trajectories(&trajs, max_traj)?
        }
        PlotKind::Sweep => {
            let mut groups: Vec<(String, Vec<(Real, Real)>)> = Vec::new();
            for (run_id, report) in io::read_reports(&inputs[0])? {
                let value = match metric {
                    "w1" => report.w1,
                    "precision" => report.precision,
                    "recall" => report.recall,
                    "overshoot_fraction" => report.overshoot_fraction,
                    other => {
                        return Err(Error::InvalidConfig {
                            field: "metric".into(),
                            reason: format!(
                                "unknown metric `{other}` (w1 | precision | recall | overshoot_fraction)"
                            ),
                        })
                    }
                };
                let label = format!("{run_id}/{}@{}", report.method, report.nfe);
                match groups.iter_mut().find(|(l, _)| *l == label) {
                    Some((_, pts)) => pts.push((report.w, value)),
                    None => groups.push((label, vec![(report.w, value)])),
                }
            }
            crate::plot::sweep(&groups, metric)?
        }
    };
    std::fs::write(out, svg)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn read_trajectories_1d(path: &Path) -> Result<Vec<Vec<(Real, Real)>>> {
    use std::io::BufRead;
    let reader = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut lines = reader.lines();
    let header = lines.next().ok_or(Error::EmptyInput("trajectory csv"))??;
    if !header.starts_with("traj,t,") {
        return Err(Error::InvalidConfig {
            field: format!("{}", path.display()),
            reason: "expected header traj,t,x0,...".into(),
        });
    }
    let mut trajs: Vec<Vec<(Real, Real)>> = Vec::new();
    for line in lines {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let bad = |reason: String| Error::InvalidConfig {
            field: format!("{}", path.display()),
            reason,
        };
        let id: usize = fields
            .next()
            .ok_or_else(|| bad("missing traj id".into()))?
            .parse()
            .map_err(|e| bad(format!("traj id: {e}")))?;
        let t: Real = fields
            .next()
            .ok_or_else(|| bad("missing t".into()))?
            .parse()
            .map_err(|e| bad(format!("t: {e}")))?;
        let x: Real = fields
            .next()
            .ok_or_else(|| bad("missing x0".into()))?
            .parse()
            .map_err(|e| bad(format!("x0: {e}")))?;
        if trajs.len() <= id {
            trajs.resize_with(id + 1, Vec::new);
        }
        trajs[id].push((t, x));
    }
    if trajs.is_empty() {
        return Err(Error::EmptyInput("trajectory csv"));
    }
    Ok(trajs)
}
