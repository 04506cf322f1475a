//! Error metrics, PCA projection of activation trajectories and report files.

use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::compress::{subspace_iteration, CodecError, BASELINE_BITS_PER_ELEMENT};
use crate::experiment::BoundOutcome;
use crate::mesh::{LatencyEstimate, MeshRun};
use crate::pipeline::{PipelineMode, StepRecord, TrajectoryRun};
use crate::rng::Rng;
use crate::tensor::{Matrix, TensorError};

pub const SCHEMA_VERSION: u32 = 1;

/// Subspace-iteration sweeps used to fit principal components.
pub const PCA_ITERATIONS: usize = 10;

pub const TRAJECTORY_CSV_HEADER: &str = "step,mode,codec,compression_error,total_error,bits,delta_hat";

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("refusing to write a report for an empty run")]
    EmptyRun,
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("writing {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Principal axes of a stack of flattened matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaBasis {
    shape: (usize, usize),
    dims: usize,
    mean: Vec<f64>,
    /// Orthonormal axes, one per output coordinate. Empty for a
    /// zero-variance fit.
    components: Vec<Vec<f64>>,
}

impl PcaBasis {
    /// Fits on `reference` (at least 3 steps).
    pub fn fit(reference: &[Matrix], dims: usize) -> Result<Self, MetricsError> {
        if reference.len() < 3 {
            return Err(MetricsError::InvalidInput(format!(
                "PCA needs at least 3 steps, got {}",
                reference.len()
            )));
        }
        let shape = reference[0].shape();
        if reference.iter().any(|m| m.shape() != shape) {
            return Err(MetricsError::InvalidInput("trajectory shapes differ".into()));
        }
        let n = shape.0 * shape.1;
        if dims == 0 || dims > n.min(reference.len()) {
            return Err(MetricsError::InvalidInput(format!(
                "cannot take {dims} components of {} points in {n} dimensions",
                reference.len()
            )));
        }
        let steps = reference.len();
        let mut mean = vec![0.0f64; n];
        for m in reference {
            for (acc, &v) in mean.iter_mut().zip(m.data()) {
                *acc += v as f64;
            }
        }
        mean.iter_mut().for_each(|v| *v /= steps as f64);

        let mut centered = Vec::with_capacity(steps * n);
        for m in reference {
            centered.extend(m.data().iter().zip(&mean).map(|(&v, &mu)| (v as f64 - mu) as f32));
        }
        let stack = Matrix::new(steps, n, centered)?;
        let mut basis = Self {
            shape,
            dims,
            mean,
            components: Vec::new(),
        };
        if stack.frob_norm_sq() == 0.0 {
            return Ok(basis);
        }
        let sub = subspace_iteration(&stack, dims, PCA_ITERATIONS, &mut Rng::seed_from(0x706361))?;
        // Re-orthonormalize in f64 so projections never expand distances.
        for k in 0..dims {
            let mut c: Vec<f64> = sub.v.column(k).iter().map(|&v| v as f64).collect();
            for _ in 0..2 {
                for prev in &basis.components {
                    let d = dot(&c, prev);
                    c.iter_mut().zip(prev).for_each(|(x, p)| *x -= d * p);
                }
            }
            let norm = dot(&c, &c).sqrt();
            if norm == 0.0 {
                continue;
            }
            c.iter_mut().for_each(|x| *x /= norm);
            basis.components.push(c);
        }
        Ok(basis)
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn project(&self, m: &Matrix) -> Result<Vec<f64>, MetricsError> {
        if m.shape() != self.shape {
            return Err(MetricsError::InvalidInput(format!(
                "cannot project {:?} onto a basis fit on {:?}",
                m.shape(),
                self.shape
            )));
        }
        let x: Vec<f64> = m.data().iter().zip(&self.mean).map(|(&v, &mu)| v as f64 - mu).collect();
        let mut out: Vec<f64> = self.components.iter().map(|c| dot(&x, c)).collect();
        out.resize(self.dims, 0.0);
        Ok(out)
    }

    pub fn project_all(&self, traj: &[Matrix]) -> Result<Vec<Vec<f64>>, MetricsError> {
        traj.iter().map(|m| self.project(m)).collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Projects `traj` onto the top `dims` principal components of itself.
pub fn pca_trajectory(traj: &[Matrix], dims: usize) -> Result<Vec<Vec<f64>>, MetricsError> {
    PcaBasis::fit(traj, dims)?.project_all(traj)
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Peak signal-to-noise ratio of two tensors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Psnr {
    /// The tensors are equal.
    Infinite,
    Db(f64),
}

impl Serialize for Psnr {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Psnr::Infinite => s.serialize_str("infinite"),
            Psnr::Db(v) => s.serialize_f64(*v),
        }
    }
}

impl fmt::Display for Psnr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Psnr::Infinite => f.write_str("infinite"),
            Psnr::Db(v) => write!(f, "{v}"),
        }
    }
}

/// `10·log10(peak²·N / ‖a − b‖²)`.
pub fn matrix_psnr(a: &Matrix, b: &Matrix, peak: f64) -> Result<Psnr, MetricsError> {
    if !(peak > 0.0) || !peak.is_finite() {
        return Err(MetricsError::InvalidInput(format!("PSNR peak must be positive, got {peak}")));
    }
    let err = a.dist_sq(b)?;
    if err == 0.0 {
        return Ok(Psnr::Infinite);
    }
    Ok(Psnr::Db(10.0 * (peak * peak * a.len() as f64 / err).log10()))
}

/// Largest absolute entry over a trajectory; the default PSNR peak.
pub fn peak_abs(traj: &[Matrix]) -> f64 {
    traj.iter()
        .flat_map(|m| m.data())
        .fold(0.0f64, |acc, &v| acc.max(v.abs() as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRow {
    pub step: u64,
    pub compression_error: f64,
    pub total_error: f64,
    pub bits: u64,
    pub delta_hat: f64,
}

/// One pipeline mode's run, reduced for reporting.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Series {
    pub mode: PipelineMode,
    pub codec: String,
    pub steps: Vec<StepRow>,
    pub mean_total_error: f64,
    /// Mean over the last `late_window` steps.
    pub late_total_error: f64,
    pub late_window: usize,
    pub cumulative_bits: u64,
    /// Baseline over element-code bits, after warmup.
    pub ratio_payload_only: f64,
    /// Baseline over all body bits including scales, masks and indices, after warmup.
    pub ratio_with_overhead: f64,
    pub final_psnr: Psnr,
    pub pca: Vec<Vec<f64>>,
    /// Mean distance to the reference trajectory in PCA space.
    pub mean_pca_distance: f64,
}

/// Inputs shared by every series of one report.
pub struct SeriesContext<'a> {
    pub reference: &'a [Matrix],
    pub basis: &'a PcaBasis,
    pub reference_pca: &'a [Vec<f64>],
    pub peak: f64,
    pub late_window: usize,
}

impl<'a> SeriesContext<'a> {
    /// Builds a series from per-step aggregate records, the reconstructions
    /// and the element count of one transmitted tensor.
    fn series(
        &self,
        mode: PipelineMode,
        codec: String,
        records: &[StepRecord],
        total_error: &[f64],
        reconstructions: &[Matrix],
    ) -> Result<Series, MetricsError> {
        if records.is_empty() || reconstructions.len() != records.len() || total_error.len() != records.len() {
            return Err(MetricsError::EmptyRun);
        }
        let steps: Vec<StepRow> = records
            .iter()
            .zip(total_error)
            .map(|(r, &e)| StepRow {
                step: r.step,
                compression_error: r.compression_error,
                total_error: e,
                bits: r.bits,
                delta_hat: r.delta_hat,
            })
            .collect();
        let elements = self.reference[0].len() as u64;
        let post: Vec<&StepRecord> = {
            let p: Vec<_> = records.iter().filter(|r| !r.warmup).collect();
            if p.is_empty() {
                records.iter().collect()
            } else {
                p
            }
        };
        let baseline = (post.len() as u64 * elements * BASELINE_BITS_PER_ELEMENT) as f64;
        let element_bits: u64 = post.iter().map(|r| r.element_bits).sum();
        let body_bits: u64 = post.iter().map(|r| r.bits).sum();
        let window = self.late_window.min(total_error.len()).max(1);
        let pca = self.basis.project_all(reconstructions)?;
        let mean_pca_distance =
            pca.iter().zip(self.reference_pca).map(|(a, b)| euclidean(a, b)).sum::<f64>() / pca.len() as f64;
        let last = reconstructions.len() - 1;
        Ok(Series {
            mode,
            codec,
            mean_total_error: crate::pipeline::mean(total_error),
            late_total_error: crate::pipeline::mean(&total_error[total_error.len() - window..]),
            late_window: window,
            cumulative_bits: records.iter().map(|r| r.bits).sum(),
            ratio_payload_only: baseline / element_bits as f64,
            ratio_with_overhead: baseline / body_bits as f64,
            final_psnr: matrix_psnr(&reconstructions[last], &self.reference[last], self.peak)?,
            pca,
            mean_pca_distance,
            steps,
        })
    }

    pub fn from_run(&self, run: &TrajectoryRun) -> Result<Series, MetricsError> {
        self.series(
            run.settings.mode,
            run.settings.codec.label(),
            &run.records,
            &run.total_error,
            &run.reconstructions,
        )
    }

    /// Sums the per-shard records of every device into one row per step.
    pub fn from_mesh(&self, mode: PipelineMode, codec: String, run: &MeshRun) -> Result<Series, MetricsError> {
        let first = run.devices.first().ok_or(MetricsError::EmptyRun)?;
        let records: Vec<StepRecord> = (0..first.records.len())
            .map(|k| {
                let rows: Vec<&StepRecord> = run.devices.iter().map(|d| &d.records[k]).collect();
                let compression_error: f64 = rows.iter().map(|r| r.compression_error).sum();
                let target_energy: f64 = rows.iter().map(|r| r.target_energy).sum();
                let delta_hat = if target_energy > 0.0 {
                    1.0 - compression_error / target_energy
                } else {
                    1.0
                };
                StepRecord {
                    step: rows[0].step,
                    warmup: rows[0].warmup,
                    compression_error,
                    target_energy,
                    bits: rows.iter().map(|r| r.bits).sum(),
                    element_bits: rows.iter().map(|r| r.element_bits).sum(),
                    wire_bytes: rows.iter().map(|r| r.wire_bytes).sum(),
                    delta_hat,
                }
            })
            .collect();
        self.series(mode, codec, &records, &first.total_error, &first.reconstructions)
    }
}

/// Byte ledger reduced for the summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LedgerSummary {
    pub mode: PipelineMode,
    pub devices: usize,
    pub steps: usize,
    pub messages: usize,
    pub total_sent_bytes: u64,
    pub total_baseline_bytes: u64,
    pub ratio_including_warmup: f64,
    pub ratio_excluding_warmup: f64,
    pub conserved: bool,
    pub consistent: bool,
    pub valid: bool,
    pub latency: LatencyEstimate,
}

impl LedgerSummary {
    pub fn from_mesh(mode: PipelineMode, run: &MeshRun) -> Self {
        let l = &run.ledger;
        Self {
            mode,
            devices: l.devices,
            steps: l.steps,
            messages: l.sent.len(),
            total_sent_bytes: l.total_sent(),
            total_baseline_bytes: l.total_baseline(),
            ratio_including_warmup: l.ratio(true),
            ratio_excluding_warmup: l.ratio(false),
            conserved: l.conserved(),
            consistent: run.devices.windows(2).all(|w| w[0].recon_hashes == w[1].recon_hashes),
            valid: l.valid,
            latency: run.latency.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub schema_version: u32,
    /// The configuration that produced the run, echoed verbatim.
    pub config: serde_json::Value,
    pub psnr_peak: f64,
    pub reference_pca: Vec<Vec<f64>>,
    pub series: Vec<Series>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub ledgers: Vec<LedgerSummary>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub bounds: Vec<BoundOutcome>,
}

impl RunSummary {
    pub fn new(config: serde_json::Value, psnr_peak: f64, reference_pca: Vec<Vec<f64>>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            config,
            psnr_peak,
            reference_pca,
            series: Vec::new(),
            ledgers: Vec::new(),
            bounds: Vec::new(),
        }
    }

    fn check_finite(&self) -> Result<(), MetricsError> {
        let bad = |what: &str| Err(MetricsError::NonFinite(what.to_string()));
        for s in &self.series {
            let scalars = [
                s.mean_total_error,
                s.late_total_error,
                s.ratio_payload_only,
                s.ratio_with_overhead,
                s.mean_pca_distance,
            ];
            if scalars.iter().any(|v| !v.is_finite()) {
                return bad(&format!("{} summary", s.mode));
            }
            if s
                .steps
                .iter()
                .any(|r| !(r.compression_error.is_finite() && r.total_error.is_finite() && r.delta_hat.is_finite()))
            {
                return bad(&format!("{} steps", s.mode));
            }
            if s.pca.iter().flatten().any(|v| !v.is_finite()) {
                return bad(&format!("{} PCA", s.mode));
            }
        }
        Ok(())
    }
}

/// Per-step CSV, one block of rows per series.
pub fn trajectory_csv(summary: &RunSummary) -> String {
    let mut s = format!("{TRAJECTORY_CSV_HEADER}\n");
    for series in &summary.series {
        for r in &series.steps {
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.step,
                series.mode,
                series.codec,
                r.compression_error,
                r.total_error,
                r.bits,
                r.delta_hat
            ));
        }
    }
    s
}

/// Whitespace-separated columns for gnuplot: step then one total-error column per series.
pub fn error_dat(summary: &RunSummary) -> String {
    let mut s = String::from("# step");
    for series in &summary.series {
        s.push_str(&format!(" {}", series.mode));
    }
    s.push('\n');
    let steps = summary.series.first().map_or(0, |x| x.steps.len());
    for k in 0..steps {
        s.push_str(&summary.series[0].steps[k].step.to_string());
        for series in &summary.series {
            s.push_str(&format!(" {}", series.steps.get(k).map_or(f64::NAN, |r| r.total_error)));
        }
        s.push('\n');
    }
    s
}

/// PCA coordinates: one gnuplot index block per trajectory, reference first.
pub fn pca_dat(summary: &RunSummary) -> String {
    let mut s = String::new();
    let mut block = |name: &str, pts: &[Vec<f64>]| {
        s.push_str(&format!("# {name}\n"));
        for (k, p) in pts.iter().enumerate() {
            let coords: Vec<String> = p.iter().map(|v| v.to_string()).collect();
            s.push_str(&format!("{} {}\n", k + 1, coords.join(" ")));
        }
        s.push_str("\n\n");
    };
    block("reference", &summary.reference_pca);
    for series in &summary.series {
        block(series.mode.name(), &series.pca);
    }
    s
}

pub fn gnuplot_script(summary: &RunSummary) -> String {
    let mut s = String::from(
        "set terminal pngcairo size 1200,450\nset output 'report.png'\nset multiplot layout 1,2\n\
         set title 'total error'\nset logscale y\nset xlabel 'step'\n",
    );
    let plots: Vec<String> = summary
        .series
        .iter()
        .enumerate()
        .map(|(i, x)| format!("'errors.dat' using 1:{} with lines title '{}'", i + 2, x.mode))
        .collect();
    s.push_str(&format!("plot {}\n", plots.join(", ")));
    s.push_str("unset logscale y\nset title 'PCA trajectories'\nset xlabel 'pc1'\nset ylabel 'pc2'\n");
    let mut pca = vec!["'pca.dat' index 0 using 2:3 with linespoints title 'reference'".to_string()];
    for (i, x) in summary.series.iter().enumerate() {
        pca.push(format!("'pca.dat' index {} using 2:3 with lines title '{}'", i + 1, x.mode));
    }
    s.push_str(&format!("plot {}\nunset multiplot\n", pca.join(", ")));
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ReportFormat {
    /// Also write gnuplot data files and a plotting script.
    pub gnuplot: bool,
}

/// Writes `files` into `dir`. Every file is staged under a temporary name
/// first, so a failure leaves no report files behind.
pub fn write_files(dir: &Path, files: &[(&str, String)]) -> Result<Vec<PathBuf>, MetricsError> {
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| MetricsError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut staged: Vec<(PathBuf, PathBuf)> = Vec::new();
    let cleanup = |staged: &[(PathBuf, PathBuf)]| {
        for (tmp, _) in staged {
            let _ = fs::remove_file(tmp);
        }
    };
    for (name, content) in files {
        let path = dir.join(name);
        let tmp = dir.join(format!(".{name}.tmp"));
        if let Err(e) = fs::write(&tmp, content) {
            cleanup(&staged);
            let _ = fs::remove_file(&tmp);
            return Err(io_err(&path)(e));
        }
        staged.push((tmp, path));
    }
    let mut done = Vec::new();
    for (tmp, path) in &staged {
        if let Err(e) = fs::rename(tmp, path) {
            cleanup(&staged);
            for p in &done {
                let _ = fs::remove_file(p);
            }
            return Err(io_err(path)(e));
        }
        done.push(path.clone());
    }
    Ok(done)
}

/// Writes `trajectory.csv` and `summary.json`, plus `errors.dat`, `pca.dat`
/// and `plot.gp` when asked. Output is byte-identical for identical summaries.
pub fn emit_report(summary: &RunSummary, dir: &Path, format: ReportFormat) -> Result<Vec<PathBuf>, MetricsError> {
    if summary.series.is_empty() || summary.series.iter().any(|s| s.steps.is_empty()) {
        return Err(MetricsError::EmptyRun);
    }
    summary.check_finite()?;
    let mut json = serde_json::to_string_pretty(summary)?;
    json.push('\n');
    let mut files = vec![("trajectory.csv", trajectory_csv(summary)), ("summary.json", json)];
    if format.gnuplot {
        files.push(("errors.dat", error_dat(summary)));
        files.push(("pca.dat", pca_dat(summary)));
        files.push(("plot.gp", gnuplot_script(summary)));
    }
    write_files(dir, &files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compress::CompressorSpec;
    use crate::pipeline::{run_trajectory, LoopModel, RunSettings};
    use crate::process::{make_process, ProcessSpec};
    use crate::tensor::gaussian_matrix;
    use proptest::prelude::*;

    #[test]
    fn constant_trajectory_sits_at_origin() {
        let m = Matrix::from_fn(4, 5, |i, j| (i * 5 + j) as f32);
        let pts = pca_trajectory(&vec![m; 6], 2).unwrap();
        assert!(pts.iter().all(|p| p == &vec![0.0, 0.0]));
    }

    #[test]
    fn identical_trajectory_coincides() {
        let mut rng = crate::rng::Rng::seed_from(2);
        let traj: Vec<Matrix> = (0..8).map(|_| gaussian_matrix(&mut rng, 5, 6, 1.0)).collect();
        let basis = PcaBasis::fit(&traj, 2).unwrap();
        assert_eq!(basis.project_all(&traj).unwrap(), basis.project_all(&traj.clone()).unwrap());
        assert!(PcaBasis::fit(&traj[..2], 2).is_err());
        assert!(basis.project(&Matrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn pca_recovers_dominant_direction() {
        // Points along one fixed direction with small noise: the first
        // coordinate carries almost all the spread.
        let mut rng = crate::rng::Rng::seed_from(9);
        let dir = gaussian_matrix(&mut rng, 3, 3, 1.0);
        let traj: Vec<Matrix> = (0..10)
            .map(|k| {
                let noise = gaussian_matrix(&mut rng, 3, 3, 1e-3);
                dir.scale(k as f32).unwrap().add(&noise).unwrap()
            })
            .collect();
        let pts = pca_trajectory(&traj, 2).unwrap();
        let spread = |d: usize| pts.iter().map(|p| p[d] * p[d]).sum::<f64>();
        assert!(spread(0) > 1e4 * spread(1));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn projection_contracts_distances(seed in any::<u64>(), steps in 3usize..10) {
            let mut rng = crate::rng::Rng::seed_from(seed);
            let traj: Vec<Matrix> = (0..steps).map(|_| gaussian_matrix(&mut rng, 4, 5, 3.0)).collect();
            let pts = pca_trajectory(&traj, 2).unwrap();
            for i in 0..steps {
                for j in 0..steps {
                    let full = traj[i].dist_sq(&traj[j]).unwrap().sqrt();
                    prop_assert!(euclidean(&pts[i], &pts[j]) <= full + 1e-6);
                }
            }
        }
    }

    #[test]
    fn psnr_definition() {
        let a = Matrix::from_fn(2, 2, |i, j| (i + j) as f32);
        assert_eq!(matrix_psnr(&a, &a, 1.0).unwrap(), Psnr::Infinite);
        // ‖a−b‖²/N = peak² → 0 dB.
        let b = a.add(&Matrix::from_fn(2, 2, |_, _| 2.0)).unwrap();
        assert_eq!(matrix_psnr(&a, &b, 2.0).unwrap(), Psnr::Db(0.0));
        let c = a.add(&Matrix::from_fn(2, 2, |i, _| if i == 0 { 2.0 } else { 0.0 })).unwrap();
        let (Psnr::Db(x), Psnr::Db(y)) = (matrix_psnr(&a, &c, 2.0).unwrap(), matrix_psnr(&a, &b, 2.0).unwrap()) else {
            panic!()
        };
        assert!((x - y - 10.0 * 2f64.log10()).abs() < 1e-12);
        assert!(matrix_psnr(&a, &b, 0.0).is_err());
        assert_eq!(serde_json::to_string(&Psnr::Infinite).unwrap(), "\"infinite\"");
    }

    fn standard_summary(steps: usize) -> RunSummary {
        let traj = make_process(&ProcessSpec {
            rows: 16,
            cols: 16,
            steps,
            ..ProcessSpec::standard(11)
        })
        .unwrap();
        let basis = PcaBasis::fit(traj.activations(), 2).unwrap();
        let reference_pca = basis.project_all(traj.activations()).unwrap();
        let peak = peak_abs(traj.activations());
        let mut summary = RunSummary::new(serde_json::json!({"seed": 11}), peak, reference_pca.clone());
        let ctx = SeriesContext {
            reference: traj.activations(),
            basis: &basis,
            reference_pca: &reference_pca,
            peak,
            late_window: 10,
        };
        for mode in PipelineMode::ALL {
            let run = run_trajectory(
                &traj,
                &RunSettings {
                    codec: CompressorSpec::Sign1Bit,
                    mode,
                    warmup: 1,
                    loop_model: LoopModel::Open,
                    seed: 11,
                },
            )
            .unwrap();
            summary.series.push(ctx.from_run(&run).unwrap());
        }
        summary
    }

    #[test]
    fn feedback_tracks_reference_closer_in_pca_space() {
        let s = standard_summary(60);
        let dist = |m: PipelineMode| s.series.iter().find(|x| x.mode == m).unwrap().mean_pca_distance;
        assert!(dist(PipelineMode::ResidualWithFeedback) < dist(PipelineMode::Naive));
        let fb = &s.series[2];
        assert!(fb.ratio_payload_only == 16.0 && fb.ratio_with_overhead < 16.0);
    }

    #[test]
    fn reports_are_deterministic_and_parse_back() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        let s = standard_summary(20);
        let files = emit_report(&s, &a, ReportFormat { gnuplot: true }).unwrap();
        emit_report(&standard_summary(20), &b, ReportFormat { gnuplot: true }).unwrap();
        assert_eq!(files.len(), 5);
        for f in &files {
            let name = f.file_name().unwrap();
            assert_eq!(fs::read(f).unwrap(), fs::read(b.join(name)).unwrap(), "{name:?}");
        }
        let csv = fs::read_to_string(a.join("trajectory.csv")).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(TRAJECTORY_CSV_HEADER));
        let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
        assert_eq!(rows.len(), 60);
        for (row, want) in rows.iter().zip(s.series.iter().flat_map(|x| &x.steps)) {
            assert!((row[4].parse::<f64>().unwrap() - want.total_error).abs() <= 1e-9 * want.total_error.max(1.0));
            assert_eq!(row[3].parse::<f64>().unwrap(), want.compression_error);
        }
        let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("summary.json")).unwrap()).unwrap();
        assert_eq!(json["schema_version"], SCHEMA_VERSION);
        assert_eq!(json["series"].as_array().unwrap().len(), 3);
    }

    #[test]
    fn empty_run_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        let empty = RunSummary::new(serde_json::Value::Null, 1.0, vec![]);
        assert!(matches!(emit_report(&empty, &out, ReportFormat::default()), Err(MetricsError::EmptyRun)));
        assert!(!out.exists());
    }
}
