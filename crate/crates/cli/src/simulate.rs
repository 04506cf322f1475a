//! `simulate`: mesh runs, one per pipeline mode, plus the report files.

use compact_core::mesh::{run_mesh_on, MeshConfig, MeshError};
use compact_core::metrics::{emit_report, peak_abs, write_files, LedgerSummary, PcaBasis, ReportFormat, RunSummary, SeriesContext};
use compact_core::pipeline::PipelineMode;
use compact_core::process::make_process;
use serde::{Deserialize, Serialize};

use crate::config::{load, write_err};
use crate::{CliError, Common};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub mesh: MeshConfig,
    /// Modes to run; defaults to `mesh.mode` alone.
    #[serde(default)]
    pub modes: Vec<PipelineMode>,
    /// Steps averaged for the late-window error.
    #[serde(default = "default_window")]
    pub late_window: usize,
    #[serde(default = "default_true")]
    pub gnuplot: bool,
}

fn default_window() -> usize {
    50
}

fn default_true() -> bool {
    true
}

pub fn run(args: &Common) -> Result<(), CliError> {
    let mut cfg: SimulateConfig = load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.mesh.process.seed = seed;
    }
    if let Some(t) = args.transport {
        cfg.mesh.transport = t.into();
    }
    if let Some(p) = args.ports {
        cfg.mesh.base_port = p;
    }
    if cfg.modes.is_empty() {
        cfg.modes.push(cfg.mesh.mode);
    }
    if cfg.late_window == 0 {
        return Err(CliError::Config("late_window must be positive".into()));
    }
    cfg.mesh.validate().map_err(|e| CliError::Config(e.to_string()))?;

    let traj = make_process(&cfg.mesh.process).map_err(|e| CliError::Run(e.to_string()))?;
    let basis = PcaBasis::fit(traj.activations(), 2).map_err(|e| CliError::Config(e.to_string()))?;
    let reference_pca = basis.project_all(traj.activations()).map_err(write_err)?;
    let peak = peak_abs(traj.activations()).max(f64::MIN_POSITIVE);
    let echo = serde_json::to_value(&cfg).map_err(|e| CliError::Run(e.to_string()))?;
    let mut summary = RunSummary::new(echo, peak, reference_pca.clone());
    let ctx = SeriesContext {
        reference: traj.activations(),
        basis: &basis,
        reference_pca: &reference_pca,
        peak,
        late_window: cfg.late_window,
    };

    let mut ledgers = Vec::new();
    for &mode in &cfg.modes {
        let mesh = MeshConfig { mode, ..cfg.mesh.clone() };
        let transport = mesh.build_transport();
        let run = match run_mesh_on(&traj, &mesh, transport.as_ref()) {
            Ok(r) => r,
            Err(MeshError::Aborted { failure, ledger }) => {
                let name = format!("ledger-{}.partial.csv", mode.name());
                write_files(&args.out, &[(name.as_str(), ledger.to_csv())]).map_err(write_err)?;
                return Err(CliError::Run(format!("{mode}: mesh run aborted: {failure}")));
            }
            Err(MeshError::Config(e)) => return Err(CliError::Config(e)),
            Err(e) => return Err(CliError::Run(format!("{mode}: {e}"))),
        };
        let series = ctx.from_mesh(mode, mesh.codec.label(), &run).map_err(write_err)?;
        let ls = LedgerSummary::from_mesh(mode, &run);
        println!(
            "{:<24} mean_err {:>12.4} late_err {:>12.4} sent {:>12} B ratio {:>7.3} (incl. warmup {:>6.3}) latency {:.6} s",
            mode.name(),
            series.mean_total_error,
            series.late_total_error,
            ls.total_sent_bytes,
            ls.ratio_excluding_warmup,
            ls.ratio_including_warmup,
            ls.latency.total_seconds
        );
        if !ls.conserved || !ls.consistent {
            return Err(CliError::Run(format!("{mode}: ledger not conserved or devices disagree")));
        }
        ledgers.push((format!("ledger-{}.csv", mode.name()), run.ledger.to_csv()));
        summary.series.push(series);
        summary.ledgers.push(ls);
    }
    emit_report(&summary, &args.out, ReportFormat { gnuplot: cfg.gnuplot }).map_err(write_err)?;
    let files: Vec<(&str, String)> = ledgers.iter().map(|(n, c)| (n.as_str(), c.clone())).collect();
    write_files(&args.out, &files).map_err(write_err)?;
    Ok(())
}
