//! CSV formats: sample/latent dumps, the streamed run record, and the
//! evaluation report. Floats print through Rust's shortest-roundtrip
//! formatter, so identical values give identical bytes.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use igct::checkpoint::{Algorithm, Checkpoint};
use igct::metrics::EvalReport;
use igct::train::{RunRecordRow, TrainSink};
use igct::Real;

/// One dumped point: a sample, latent or edit.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRow {
    pub index: u64,
    /// Empty class column = unconditional.
    pub class: Option<usize>,
    pub w: Real,
    pub x: Vec<Real>,
}

fn x_header(dims: usize) -> String {
    (0..dims).map(|d| format!(",x{d}")).collect()
}

pub fn write_samples(path: &Path, rows: &[SampleRow]) -> igct::Result<()> {
    if rows.is_empty() {
        return Err(igct::Error::EmptyInput("sample rows"));
    }
    let dims = rows[0].x.len();
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "index,class,w{}", x_header(dims))?;
    for row in rows {
        let class = row.class.map_or(String::new(), |c| c.to_string());
        write!(out, "{},{},{}", row.index, class, row.w)?;
        for v in &row.x {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn read_samples(path: &Path) -> igct::Result<Vec<SampleRow>> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or(igct::Error::EmptyInput("sample csv"))??;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 4 || cols[0] != "index" || cols[1] != "class" || cols[2] != "w" {
        return Err(igct::Error::InvalidConfig {
            field: format!("{}", path.display()),
            reason: "expected header index,class,w,x0,...".into(),
        });
    }
    let dims = cols.len() - 3;
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let bad = |reason: String| igct::Error::InvalidConfig {
            field: format!("{}:{}", path.display(), lineno + 2),
            reason,
        };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dims + 3 {
            return Err(bad(format!("expected {} fields", dims + 3)));
        }
        let index = fields[0].parse().map_err(|e| bad(format!("index: {e}")))?;
        let class = if fields[1].is_empty() {
            None
        } else {
            Some(fields[1].parse().map_err(|e| bad(format!("class: {e}")))?)
        };
        let w = fields[2].parse().map_err(|e| bad(format!("w: {e}")))?;
        let x = fields[3..]
            .iter()
            .map(|f| f.parse().map_err(|e| bad(format!("x: {e}"))))
            .collect::<igct::Result<Vec<Real>>>()?;
        rows.push(SampleRow { index, class, w, x });
    }
    if rows.is_empty() {
        return Err(igct::Error::EmptyInput("sample csv"));
    }
    Ok(rows)
}

/// Heun trajectories for plotting: one row per (trajectory, level).
pub fn write_trajectories(path: &Path, trajs: &[Vec<(Real, Vec<Real>)>]) -> igct::Result<()> {
    if trajs.is_empty() {
        return Err(igct::Error::EmptyInput("trajectories"));
    }
    let dims = trajs[0][0].1.len();
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "traj,t{}", x_header(dims))?;
    for (id, traj) in trajs.iter().enumerate() {
        for (t, x) in traj {
            write!(out, "{id},{t}")?;
            for v in x {
                write!(out, ",{v}")?;
            }
            writeln!(out)?;
        }
    }
    Ok(())
}

pub const RUN_RECORD_HEADER: &str =
    "k,loss_gct,loss_ict,loss_recon,lambda_recon,delta_t_stage,wall_ms";

/// Streams run records to `run-<algo>.csv` and checkpoints to
/// `ckpt-<algo>-<iter>.json` under the output directory.
pub struct CsvSink {
    writer: BufWriter<File>,
    dir: PathBuf,
    algorithm: Algorithm,
}

impl CsvSink {
    pub fn create(dir: &Path, algorithm: Algorithm) -> igct::Result<Self> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(format!("run-{algorithm}.csv"));
        let mut writer = BufWriter::new(File::create(path)?);
        writeln!(writer, "{RUN_RECORD_HEADER}")?;
        Ok(Self {
            writer,
            dir: dir.to_path_buf(),
            algorithm,
        })
    }
}

fn opt(v: Option<Real>) -> String {
    v.map_or(String::new(), |v| v.to_string())
}

impl TrainSink<Real> for CsvSink {
    fn on_record(&mut self, row: &RunRecordRow<Real>) -> std::io::Result<()> {
        writeln!(
            self.writer,
            "{},{},{},{},{},{},{}",
            row.k,
            row.loss_gct,
            opt(row.loss_ict),
            opt(row.loss_recon),
            opt(row.lambda_recon),
            row.delta_t_stage,
            row.wall_ms
        )
    }

    fn on_checkpoint(&mut self, ckpt: &Checkpoint<Real>) -> std::io::Result<()> {
        let path = self
            .dir
            .join(format!("ckpt-{}-{}.json", self.algorithm, ckpt.iteration));
        ckpt.save(&path)
            .map_err(|e| std::io::Error::other(e.to_string()))
    }
}

impl Drop for CsvSink {
    fn drop(&mut self) {
        let _ = self.writer.flush();
    }
}

pub const REPORT_HEADER: &str = "run_id,method,w,nfe,w1,precision,recall,overshoot_fraction,\
recon_mae,latent_mean_norm,latent_std_ratio,n_samples";

/// Append report rows, writing the header only when the file is new.
pub fn append_reports(path: &Path, run_id: &str, reports: &[EvalReport<Real>]) -> igct::Result<()> {
    let fresh = !path.exists();
    let mut out = BufWriter::new(File::options().create(true).append(true).open(path)?);
    if fresh {
        writeln!(out, "{REPORT_HEADER}")?;
    }
    for r in reports {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            run_id,
            r.method,
            r.w,
            r.nfe,
            r.w1,
            r.precision,
            r.recall,
            r.overshoot_fraction,
            opt(r.recon_mae),
            opt(r.latent_mean_norm),
            opt(r.latent_std_ratio),
            r.n_samples
        )?;
    }
    Ok(())
}

/// Parse a report CSV back into rows (sweep plotting).
pub fn read_reports(path: &Path) -> igct::Result<Vec<(String, EvalReport<Real>)>> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let header = lines.next().ok_or(igct::Error::EmptyInput("report csv"))??;
    if header != REPORT_HEADER {
        return Err(igct::Error::InvalidConfig {
            field: format!("{}", path.display()),
            reason: "not a report csv".into(),
        });
    }
    let mut out = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let bad = |reason: String| igct::Error::InvalidConfig {
            field: format!("{}:{}", path.display(), lineno + 2),
            reason,
        };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 12 {
            return Err(bad("expected 12 fields".into()));
        }
        let num = |s: &str| -> igct::Result<Real> {
            s.parse().map_err(|e| bad(format!("number: {e}")))
        };
        let opt_num = |s: &str| -> igct::Result<Option<Real>> {
            if s.is_empty() {
                Ok(None)
            } else {
                num(s).map(Some)
            }
        };
        out.push((
            f[0].to_string(),
            EvalReport {
                method: f[1].to_string(),
                w: num(f[2])?,
                nfe: f[3].parse().map_err(|e| bad(format!("nfe: {e}")))?,
                w1: num(f[4])?,
                precision: num(f[5])?,
                recall: num(f[6])?,
                overshoot_fraction: num(f[7])?,
                recon_mae: opt_num(f[8])?,
                latent_mean_norm: opt_num(f[9])?,
                latent_std_ratio: opt_num(f[10])?,
                n_samples: f[11].parse().map_err(|e| bad(format!("n_samples: {e}")))?,
            },
        ));
    }
    if out.is_empty() {
        return Err(igct::Error::EmptyInput("report csv"));
    }
    Ok(out)
}

/// JSON mirror of the evaluation table.
pub fn write_report_summary(
    path: &Path,
    run_id: &str,
    reports: &[EvalReport<Real>],
) -> igct::Result<()> {
    #[derive(serde::Serialize)]
    struct Summary<'a> {
        run_id: &'a str,
        reports: &'a [EvalReport<Real>],
    }
    let file = File::create(path)?;
    serde_json::to_writer_pretty(BufWriter::new(file), &Summary { run_id, reports })?;
    Ok(())
}
