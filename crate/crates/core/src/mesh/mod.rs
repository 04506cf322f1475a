//! A simulated multi-device mesh exchanging compressed activation shards.
//!
//! Every device owns a row shard of the activation. Each step it encodes its
//! shard once through its own residual pipeline and the message reaches every
//! peer, either hop by hop around a ring (forwarded verbatim) or in a single
//! all-gather round. Receivers keep one pipeline state per origin device, so
//! every device rebuilds the same full tensor.

mod ledger;
pub mod transport;

use std::thread;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ledger::{ByteLedger, MessageRecord, ReceiptRecord};
use transport::{Endpoint, InProcTransport, SocketTransport, Transport, TransportError, TransportKind};

use crate::compress::CompressorSpec;
use crate::pipeline::{LayerState, LoopModel, PipelineError, PipelineMode, StepMessage, StepRecord};
use crate::process::{make_process, ProcessError, ProcessSpec, Trajectory};
use crate::rng::Rng;
use crate::tensor::{Matrix, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    Ring,
    AllGather,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Topology {
    pub kind: TopologyKind,
    pub devices: usize,
}

impl Topology {
    pub fn rounds(&self) -> usize {
        match self.kind {
            TopologyKind::Ring => self.devices - 1,
            TopologyKind::AllGather => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandwidthModel {
    /// Link bandwidth in bytes per second.
    pub bandwidth: f64,
    /// Fixed cost per message round, in seconds.
    #[serde(default)]
    pub base_latency: f64,
}

impl BandwidthModel {
    pub const NVLINK: f64 = 366e9;
    pub const PCIE: f64 = 17.13e9;
    pub const ETHERNET: f64 = 125e6;

    pub fn new(bandwidth: f64, base_latency: f64) -> Self {
        Self {
            bandwidth,
            base_latency,
        }
    }

    pub fn validate(&self) -> Result<(), MeshError> {
        if !(self.bandwidth > 0.0) || !(self.base_latency >= 0.0) || !self.base_latency.is_finite() {
            return Err(MeshError::Config(format!(
                "bandwidth must be > 0 and base latency finite and ≥ 0, got {} and {}",
                self.bandwidth, self.base_latency
            )));
        }
        Ok(())
    }

    pub fn transfer_time(&self, bytes: u64) -> f64 {
        bytes as f64 / self.bandwidth
    }
}

/// Everything a mesh run needs besides the transport.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    pub topology: Topology,
    /// Shape, step count and seed of the simulated activation stream.
    pub process: ProcessSpec,
    pub codec: CompressorSpec,
    pub mode: PipelineMode,
    pub warmup: usize,
    #[serde(default)]
    pub loop_model: LoopModel,
    pub bandwidth: BandwidthModel,
    /// Modeled compute time per step, in seconds.
    #[serde(default)]
    pub compute_time: f64,
    /// Hide communication behind compute in the latency model.
    #[serde(default)]
    pub overlap: bool,
    #[serde(default)]
    pub transport: TransportKind,
    /// First listening port for the socket transport; 0 picks free ports.
    #[serde(default)]
    pub base_port: u16,
}

impl MeshConfig {
    pub fn validate(&self) -> Result<(), MeshError> {
        let p = self.topology.devices;
        if p < 2 {
            return Err(MeshError::Config(format!("a mesh needs at least 2 devices, got {p}")));
        }
        self.process.validate()?;
        if self.process.rows < p {
            return Err(MeshError::Config(format!(
                "{} rows cannot be split across {p} devices",
                self.process.rows
            )));
        }
        if self.warmup == 0 || self.warmup >= self.process.steps {
            return Err(MeshError::Config(format!(
                "warmup must be in 1..{}, got {}",
                self.process.steps, self.warmup
            )));
        }
        if !(self.compute_time >= 0.0) || !self.compute_time.is_finite() {
            return Err(MeshError::Config(format!("bad compute time {}", self.compute_time)));
        }
        self.bandwidth.validate()?;
        for (_, rows) in shards(self.process.rows, p) {
            self.codec
                .validate_for(rows, self.process.cols)
                .map_err(|e| MeshError::Config(format!("codec does not fit a {rows}-row shard: {e}")))?;
        }
        Ok(())
    }

    pub fn build_transport(&self) -> Box<dyn Transport> {
        match self.transport {
            TransportKind::Inproc => Box::new(InProcTransport),
            TransportKind::Socket => Box::new(SocketTransport {
                base_port: self.base_port,
            }),
        }
    }
}

/// `(start, rows)` per device; the last device takes the remainder.
pub fn shards(rows: usize, devices: usize) -> Vec<(usize, usize)> {
    let base = rows / devices;
    (0..devices)
        .map(|i| {
            let count = if i + 1 == devices { rows - base * (devices - 1) } else { base };
            (i * base, count)
        })
        .collect()
}

/// Why a started run stopped.
#[derive(Debug, Error)]
pub enum MeshFailure {
    #[error("device {device}: {source}")]
    Transport {
        device: usize,
        #[source]
        source: TransportError,
    },
    #[error("device {device}: {source}")]
    Pipeline {
        device: usize,
        #[source]
        source: PipelineError,
    },
    #[error("device {device}: {source}")]
    Tensor {
        device: usize,
        #[source]
        source: TensorError,
    },
    #[error("device {device} reconstruction differs from device 0 at step {step}")]
    Inconsistent { device: usize, step: usize },
    #[error("device {0} worker panicked")]
    Panicked(usize),
}

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("invalid mesh config: {0}")]
    Config(String),
    #[error(transparent)]
    Process(#[from] ProcessError),
    #[error("transport setup: {0}")]
    Setup(#[source] TransportError),
    /// The run started and failed; `ledger` holds what was exchanged, marked invalid.
    #[error("mesh run aborted: {failure}")]
    Aborted {
        #[source]
        failure: MeshFailure,
        ledger: Box<ByteLedger>,
    },
}

/// What one device observed.
#[derive(Debug, Clone)]
pub struct DeviceTrace {
    pub device: usize,
    pub shard_start: usize,
    pub shard_rows: usize,
    /// Sender-side records for this device's own shard.
    pub records: Vec<StepRecord>,
    /// `‖full reconstruction − reference‖²` per step.
    pub total_error: Vec<f64>,
    /// Fingerprint of the full reconstruction per step.
    pub recon_hashes: Vec<u64>,
    pub final_reconstruction: Matrix,
    /// Full reconstruction per step; kept on device 0 only.
    pub reconstructions: Vec<Matrix>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencyEstimate {
    pub compute_seconds: f64,
    pub comm_seconds: f64,
    /// Communication hidden behind compute when overlap is modeled.
    pub hidden_seconds: f64,
    pub total_seconds: f64,
    pub per_step_comm: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct MeshRun {
    pub ledger: ByteLedger,
    pub devices: Vec<DeviceTrace>,
    pub latency: LatencyEstimate,
}

/// Step latency under a parallel-link model: within a round each link
/// carries at most one message, so a round costs its largest message plus
/// the base latency; a device's step cost is the sum over its rounds and the
/// step waits for the slowest device.
pub fn latency_estimate(
    ledger: &ByteLedger,
    model: &BandwidthModel,
    compute_time: f64,
    overlap: bool,
) -> LatencyEstimate {
    use std::collections::BTreeMap;
    // (step, device, round) -> largest message
    let mut rounds: BTreeMap<(u32, u32, u32), u64> = BTreeMap::new();
    for m in &ledger.sent {
        let e = rounds.entry((m.step, m.from, m.round)).or_insert(0);
        *e = (*e).max(m.bytes);
    }
    let mut device_cost: BTreeMap<(u32, u32), f64> = BTreeMap::new();
    for (&(step, dev, _), &bytes) in &rounds {
        *device_cost.entry((step, dev)).or_insert(0.0) += model.base_latency + model.transfer_time(bytes);
    }
    let mut per_step_comm = vec![0.0; ledger.steps];
    for (&(step, _), &cost) in &device_cost {
        if let Some(slot) = per_step_comm.get_mut(step as usize - 1) {
            *slot = f64::max(*slot, cost);
        }
    }
    let comm_seconds: f64 = per_step_comm.iter().sum();
    let hidden_seconds: f64 = if overlap {
        per_step_comm.iter().map(|&c| c.min(compute_time)).sum()
    } else {
        0.0
    };
    let compute_seconds = ledger.steps as f64 * compute_time;
    LatencyEstimate {
        compute_seconds,
        comm_seconds,
        hidden_seconds,
        total_seconds: compute_seconds + comm_seconds - hidden_seconds,
        per_step_comm,
    }
}

/// FNV-1a over shape and the raw bits of every entry.
pub fn matrix_fingerprint(m: &Matrix) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    };
    eat(&(m.rows() as u64).to_le_bytes());
    eat(&(m.cols() as u64).to_le_bytes());
    for v in m.data() {
        eat(&v.to_bits().to_le_bytes());
    }
    h
}

/// Builds the process from the config and runs it over `transport`.
pub fn run_mesh(config: &MeshConfig, transport: &dyn Transport) -> Result<MeshRun, MeshError> {
    config.validate()?;
    let traj = make_process(&config.process)?;
    run_mesh_on(&traj, config, transport)
}

/// Runs the mesh over a prebuilt trajectory. `config.process` is ignored
/// except for the seed.
pub fn run_mesh_on(
    traj: &Trajectory,
    config: &MeshConfig,
    transport: &dyn Transport,
) -> Result<MeshRun, MeshError> {
    let config = MeshConfig {
        process: traj.spec().clone(),
        ..config.clone()
    };
    config.validate()?;
    let p = config.topology.devices;
    let endpoints = transport.connect(p).map_err(MeshError::Setup)?;
    if endpoints.len() != p {
        return Err(MeshError::Setup(TransportError::Setup(format!(
            "transport produced {} endpoints for {p} devices",
            endpoints.len()
        ))));
    }
    let layout = shards(traj.shape().0, p);
    let outcomes: Vec<DeviceOutcome> = thread::scope(|s| {
        let handles: Vec<_> = endpoints
            .into_iter()
            .map(|ep| {
                let (config, layout) = (&config, &layout);
                s.spawn(move || run_device(traj, config, layout, ep))
            })
            .collect();
        handles
            .into_iter()
            .enumerate()
            .map(|(i, h)| {
                h.join().unwrap_or_else(|_| DeviceOutcome {
                    sent: Vec::new(),
                    received: Vec::new(),
                    result: Err(MeshFailure::Panicked(i)),
                })
            })
            .collect()
    });

    let mut sent = Vec::new();
    let mut received = Vec::new();
    let mut traces = Vec::with_capacity(p);
    let mut failures = Vec::new();
    for o in outcomes {
        sent.extend(o.sent);
        received.extend(o.received);
        match o.result {
            Ok(t) => traces.push(t),
            Err(f) => failures.push(f),
        }
    }
    let steps = traj.steps();
    let abort = |failure, sent, received| MeshError::Aborted {
        failure,
        ledger: Box::new(ByteLedger::assemble(p, steps, sent, received, false)),
    };
    if !failures.is_empty() {
        // Prefer the root cause over the disconnects it cascaded into.
        let idx = failures
            .iter()
            .position(|f| !matches!(f, MeshFailure::Transport { source: TransportError::Disconnected(_), .. }))
            .unwrap_or(0);
        return Err(abort(failures.swap_remove(idx), sent, received));
    }
    for d in &traces[1..] {
        if let Some(step) = (0..steps).find(|&k| d.recon_hashes[k] != traces[0].recon_hashes[k]) {
            let failure = MeshFailure::Inconsistent {
                device: d.device,
                step: step + 1,
            };
            return Err(abort(failure, sent, received));
        }
    }
    let ledger = ByteLedger::assemble(p, steps, sent, received, true);
    let latency = latency_estimate(&ledger, &config.bandwidth, config.compute_time, config.overlap);
    Ok(MeshRun {
        ledger,
        devices: traces,
        latency,
    })
}

struct DeviceOutcome {
    sent: Vec<MessageRecord>,
    received: Vec<ReceiptRecord>,
    result: Result<DeviceTrace, MeshFailure>,
}

fn run_device(
    traj: &Trajectory,
    config: &MeshConfig,
    layout: &[(usize, usize)],
    mut ep: Box<dyn Endpoint>,
) -> DeviceOutcome {
    let mut out = DeviceOutcome {
        sent: Vec::new(),
        received: Vec::new(),
        result: Err(MeshFailure::Panicked(ep.id())),
    };
    out.result = device_loop(traj, config, layout, ep.as_mut(), &mut out.sent, &mut out.received);
    if out.result.is_err() {
        log::warn!("device {} stopping early", ep.id());
    }
    // Dropping the endpoint here hangs up on peers still waiting on us.
    drop(ep);
    out
}

fn device_loop(
    traj: &Trajectory,
    config: &MeshConfig,
    layout: &[(usize, usize)],
    ep: &mut dyn Endpoint,
    sent: &mut Vec<MessageRecord>,
    received: &mut Vec<ReceiptRecord>,
) -> Result<DeviceTrace, MeshFailure> {
    let me = ep.id();
    let p = layout.len();
    let cols = traj.shape().1;
    let (start, rows) = layout[me];
    let pipe = |source| MeshFailure::Pipeline { device: me, source };
    let tensor = |source| MeshFailure::Tensor { device: me, source };
    let net = |source| MeshFailure::Transport { device: me, source };

    let mut sender = LayerState::new(rows, cols, config.mode, config.codec, config.warmup).map_err(pipe)?;
    let mut receivers: Vec<Option<LayerState>> = layout
        .iter()
        .enumerate()
        .map(|(o, &(_, r))| {
            (o != me)
                .then(|| LayerState::new(r, cols, config.mode, config.codec, config.warmup))
                .transpose()
        })
        .collect::<Result<_, _>>()
        .map_err(pipe)?;
    let mut rng = Rng::stream(config.process.seed, 0x6d65_7368_0000 + me as u64);
    let baseline = |origin: usize| 2 * (layout[origin].1 * cols) as u64;

    let mut trace = DeviceTrace {
        device: me,
        shard_start: start,
        shard_rows: rows,
        records: Vec::new(),
        total_error: Vec::new(),
        recon_hashes: Vec::new(),
        final_reconstruction: Matrix::zeros(traj.shape().0, cols),
        reconstructions: Vec::new(),
    };
    let mut prev_full: Option<Matrix> = None;

    for t in 1..=traj.steps() {
        let step = t as u32;
        let warmup = t <= config.warmup;
        let a_star = match (config.loop_model, &prev_full) {
            (LoopModel::Closed, Some(prev)) => traj.step(t, prev).map_err(tensor)?.row_block(start, rows),
            _ => traj.activation(t).row_block(start, rows),
        };
        let (msg, record) = sender.encode_step(&a_star, &mut rng).map_err(pipe)?;
        trace.records.push(record);
        let own = msg.to_bytes();

        let mut send = |ep: &mut dyn Endpoint, round: u32, to: usize, origin: usize, frame: &[u8]| {
            ep.send(to, frame).map_err(net)?;
            sent.push(MessageRecord {
                step,
                round,
                from: me as u32,
                to: to as u32,
                origin: origin as u32,
                bytes: frame.len() as u64,
                baseline_bytes: baseline(origin),
                warmup,
            });
            Ok::<_, MeshFailure>(())
        };
        let mut accept = |from: usize, origin: usize, frame: &[u8], receivers: &mut [Option<LayerState>]| {
            received.push(ReceiptRecord {
                step,
                from: from as u32,
                to: me as u32,
                bytes: frame.len() as u64,
            });
            let msg = StepMessage::from_bytes(frame).map_err(pipe)?;
            let state = receivers[origin].as_mut().expect("no receiver state for own shard");
            state.decode_step(&msg).map_err(pipe)?;
            Ok::<_, MeshFailure>(())
        };

        match config.topology.kind {
            TopologyKind::AllGather => {
                for to in (0..p).filter(|&j| j != me) {
                    send(ep, 1, to, me, &own)?;
                }
                for from in (0..p).filter(|&j| j != me) {
                    let frame = ep.recv_from(from).map_err(net)?;
                    accept(from, from, &frame, &mut receivers)?;
                }
            }
            TopologyKind::Ring => {
                let (next, prev) = ((me + 1) % p, (me + p - 1) % p);
                let mut carry = own;
                let mut carry_origin = me;
                for round in 1..p {
                    send(ep, round as u32, next, carry_origin, &carry)?;
                    let frame = ep.recv_from(prev).map_err(net)?;
                    let origin = (me + p - round) % p;
                    accept(prev, origin, &frame, &mut receivers)?;
                    carry = frame;
                    carry_origin = origin;
                }
            }
        }

        let parts: Vec<Matrix> = (0..p)
            .map(|o| match &receivers[o] {
                Some(r) => r.base().clone(),
                None => sender.base().clone(),
            })
            .collect();
        let full = Matrix::vstack(&parts).map_err(tensor)?;
        trace.total_error.push(full.dist_sq(traj.activation(t)).map_err(tensor)?);
        trace.recon_hashes.push(matrix_fingerprint(&full));
        if me == 0 {
            trace.reconstructions.push(full.clone());
        }
        prev_full = Some(full);
    }
    if let Some(full) = prev_full {
        trace.final_reconstruction = full;
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(kind: TopologyKind, devices: usize, codec: CompressorSpec) -> MeshConfig {
        MeshConfig {
            topology: Topology { kind, devices },
            process: ProcessSpec {
                rows: 30,
                cols: 16,
                steps: 12,
                ..ProcessSpec::standard(4)
            },
            codec,
            mode: PipelineMode::ResidualWithFeedback,
            warmup: 1,
            loop_model: LoopModel::Open,
            bandwidth: BandwidthModel::new(BandwidthModel::PCIE, 0.0),
            compute_time: 0.0,
            overlap: false,
            transport: TransportKind::Inproc,
            base_port: 0,
        }
    }

    #[test]
    fn shard_layout() {
        assert_eq!(shards(30, 4), vec![(0, 7), (7, 7), (14, 7), (21, 9)]);
        assert_eq!(shards(8, 2), vec![(0, 4), (4, 4)]);
    }

    #[test]
    fn identity_reconstructs_exactly() {
        for kind in [TopologyKind::Ring, TopologyKind::AllGather] {
            let cfg = config(kind, 4, CompressorSpec::Identity);
            let traj = make_process(&cfg.process).unwrap();
            let run = run_mesh_on(&traj, &cfg, &InProcTransport).unwrap();
            assert!(run.ledger.valid && run.ledger.conserved());
            for d in &run.devices {
                assert!(d.total_error.iter().all(|&e| e == 0.0));
                assert_eq!(&d.final_reconstruction, traj.activation(12));
            }
            // 4 origins × 3 receivers per step.
            assert_eq!(run.ledger.sent.len(), 12 * 12);
        }
    }

    #[test]
    fn ring_and_allgather_move_the_same_bytes() {
        let ring = run_mesh(&config(TopologyKind::Ring, 3, CompressorSpec::Sign1Bit), &InProcTransport).unwrap();
        let ag = run_mesh(&config(TopologyKind::AllGather, 3, CompressorSpec::Sign1Bit), &InProcTransport).unwrap();
        for t in 1..=12 {
            assert_eq!(ring.ledger.sent_in_step(t), ag.ledger.sent_in_step(t));
            assert_eq!(ring.ledger.baseline_in_step(t), ag.ledger.baseline_in_step(t));
        }
        // Same payloads, same reconstruction.
        assert_eq!(ring.devices[0].recon_hashes, ag.devices[0].recon_hashes);
        assert!(ring.latency.comm_seconds > ag.latency.comm_seconds);
    }

    #[test]
    fn closed_loop_is_consistent() {
        let mut cfg = config(TopologyKind::Ring, 4, CompressorSpec::Quant2Bit);
        cfg.loop_model = LoopModel::Closed;
        let run = run_mesh(&cfg, &InProcTransport).unwrap();
        assert!(run.ledger.conserved());
        assert!(run.devices.windows(2).all(|w| w[0].recon_hashes == w[1].recon_hashes));
    }

    #[test]
    fn latency_model_arithmetic() {
        let run = run_mesh(&config(TopologyKind::AllGather, 2, CompressorSpec::Sign1Bit), &InProcTransport).unwrap();
        let inf = BandwidthModel::new(f64::INFINITY, 0.0);
        let l = latency_estimate(&run.ledger, &inf, 0.5, false);
        assert_eq!(l.total_seconds, 12.0 * 0.5);

        let eth = latency_estimate(&run.ledger, &BandwidthModel::new(BandwidthModel::ETHERNET, 0.0), 0.0, false);
        let pcie = latency_estimate(&run.ledger, &BandwidthModel::new(BandwidthModel::PCIE, 0.0), 0.0, false);
        assert!((eth.comm_seconds / pcie.comm_seconds - 137.04).abs() < 1e-9);

        let slow = BandwidthModel::new(1e3, 0.0);
        let plain = latency_estimate(&run.ledger, &slow, 0.01, false);
        let hidden = latency_estimate(&run.ledger, &slow, 0.01, true);
        assert!((plain.total_seconds - hidden.total_seconds - 12.0 * 0.01).abs() < 1e-12);
    }

    #[test]
    fn invalid_configs() {
        let mut cfg = config(TopologyKind::Ring, 1, CompressorSpec::Sign1Bit);
        assert!(matches!(run_mesh(&cfg, &InProcTransport), Err(MeshError::Config(_))));
        cfg.topology.devices = 40;
        assert!(matches!(run_mesh(&cfg, &InProcTransport), Err(MeshError::Config(_))));
        cfg.topology.devices = 2;
        cfg.bandwidth.bandwidth = 0.0;
        assert!(matches!(run_mesh(&cfg, &InProcTransport), Err(MeshError::Config(_))));
        let mut cfg = config(TopologyKind::Ring, 2, CompressorSpec::LowRank {
            rank: 20,
            iterations: 2,
            precision: Default::default(),
        });
        assert!(matches!(run_mesh(&cfg, &InProcTransport), Err(MeshError::Config(_))));
        cfg.codec = CompressorSpec::Sign1Bit;
        cfg.warmup = 12;
        assert!(matches!(run_mesh(&cfg, &InProcTransport), Err(MeshError::Config(_))));
    }

    /// Wraps a transport and breaks one device's link after a number of sends.
    struct Faulty {
        device: usize,
        after: usize,
    }

    struct FaultyEndpoint {
        inner: Box<dyn Endpoint>,
        left: Option<usize>,
    }

    impl Endpoint for FaultyEndpoint {
        fn id(&self) -> usize {
            self.inner.id()
        }
        fn send(&mut self, to: usize, frame: &[u8]) -> Result<(), TransportError> {
            if let Some(n) = self.left.as_mut() {
                if *n == 0 {
                    return Err(TransportError::Io(std::io::Error::other("link down")));
                }
                *n -= 1;
            }
            self.inner.send(to, frame)
        }
        fn recv_from(&mut self, from: usize) -> Result<Vec<u8>, TransportError> {
            self.inner.recv_from(from)
        }
    }

    impl Transport for Faulty {
        fn connect(&self, devices: usize) -> Result<Vec<Box<dyn Endpoint>>, TransportError> {
            Ok(InProcTransport
                .connect(devices)?
                .into_iter()
                .map(|inner| {
                    let left = (inner.id() == self.device).then_some(self.after);
                    Box::new(FaultyEndpoint { inner, left }) as Box<dyn Endpoint>
                })
                .collect())
        }
    }

    #[test]
    fn transport_failure_aborts_with_partial_ledger() {
        let cfg = config(TopologyKind::Ring, 4, CompressorSpec::Sign1Bit);
        let err = run_mesh(&cfg, &Faulty { device: 2, after: 10 }).unwrap_err();
        match err {
            MeshError::Aborted { failure, ledger } => {
                assert!(!ledger.valid);
                assert!(!ledger.sent.is_empty());
                assert!(ledger.sent.len() < 12 * 12);
                assert!(
                    matches!(failure, MeshFailure::Transport { device: 2, source: TransportError::Io(_) }),
                    "{failure}"
                );
            }
            other => panic!("unexpected {other}"),
        }
    }
}
