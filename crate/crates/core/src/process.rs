//! Synthetic step-wise activation processes with a known contraction factor,
//! activation energy and step-to-step drift.
//!
//! Each step map is affine, `f_t(x) = L·R_t x + b_t`, with `R_t` a random
//! signed row permutation (orthonormal, so `f_t` is exactly `L`-Lipschitz).
//! The offsets track a slowly drifting anchor `c_t` of fixed energy:
//!
//! ```text
//! b_t = c_t − L·R_t c_{t−1} + d_t,   so   a_t − c_t = L·R_t (a_{t−1} − c_{t−1}) + d_t
//! ```
//!
//! The anchor moves by `‖c_t − c_{t−1}‖² ≈ (1−s)σ_Δ²` per step, and the
//! optional innovations `d_t` add the remaining share `s` of the drift.
//! Step 1 is the state reached after a burn-in of [`BURN_IN_STEPS`].

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::Rng;
use crate::tensor::{gaussian_matrix, Matrix, TensorError};

pub const BURN_IN_STEPS: usize = 200;
/// Relative tolerance for measured energies against the requested ones.
pub const CALIBRATION_BAND: f64 = 0.15;

const MAGIC: &[u8; 4] = b"CFTR";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ProcessError {
    #[error("invalid process spec: {0}")]
    InvalidSpec(String),
    #[error("calibration failed: measured {quantity} = {measured:.6} is outside ±15% of {target:.6}")]
    Calibration {
        quantity: &'static str,
        measured: f64,
        target: f64,
    },
    #[error("trajectory file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessSpec {
    pub rows: usize,
    pub cols: usize,
    pub lipschitz: f64,
    pub sigma_a_sq: f64,
    pub sigma_delta_sq: f64,
    pub steps: usize,
    pub seed: u64,
    /// Share of the drift energy injected as fresh innovations rather than
    /// anchor motion.
    #[serde(default)]
    pub innovation_share: f64,
}

impl ProcessSpec {
    /// 64×64, L = 0.5, σ_a² = 400, σ_Δ² = 1, 200 steps.
    pub fn standard(seed: u64) -> Self {
        Self {
            rows: 64,
            cols: 64,
            lipschitz: 0.5,
            sigma_a_sq: 400.0,
            sigma_delta_sq: 1.0,
            steps: 200,
            seed,
            innovation_share: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), ProcessError> {
        let bad = |s: String| Err(ProcessError::InvalidSpec(s));
        if self.rows == 0 || self.cols == 0 {
            return bad(format!("shape {}x{} must be positive", self.rows, self.cols));
        }
        if self.rows > u32::MAX as usize || self.cols > u32::MAX as usize {
            return bad("shape too large".into());
        }
        if !(0.0..1.0).contains(&self.lipschitz) {
            return bad(format!("L = {} must lie in [0, 1)", self.lipschitz));
        }
        if !(self.sigma_a_sq > 0.0 && self.sigma_a_sq.is_finite()) {
            return bad(format!("sigma_a_sq = {} must be positive", self.sigma_a_sq));
        }
        if !(self.sigma_delta_sq >= 0.0 && self.sigma_delta_sq <= self.sigma_a_sq) {
            return bad(format!(
                "sigma_delta_sq = {} must lie in [0, sigma_a_sq]",
                self.sigma_delta_sq
            ));
        }
        if self.steps < 3 {
            return bad(format!("need at least 3 steps, got {}", self.steps));
        }
        if !(0.0..=1.0).contains(&self.innovation_share) {
            return bad(format!(
                "innovation_share = {} must lie in [0, 1]",
                self.innovation_share
            ));
        }
        Ok(())
    }

    fn anchor_energy(&self) -> f64 {
        self.sigma_a_sq - self.sigma_delta_sq * self.innovation_share / 2.0
    }
}

/// One step map `x ↦ L·R x + b`, where `(R x)_i = signs_i · x_{perm_i}`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepMap {
    pub lipschitz: f32,
    pub perm: Vec<u32>,
    pub signs: Vec<f32>,
    pub offset: Matrix,
}

impl StepMap {
    fn rotate(&self, x: &Matrix) -> Matrix {
        let cols = x.cols();
        let mut data = Vec::with_capacity(x.len());
        for (&p, &s) in self.perm.iter().zip(&self.signs) {
            data.extend(x.row(p as usize).iter().map(|v| s * v));
        }
        Matrix::new(x.rows(), cols, data).expect("sign flips preserve finiteness")
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix, TensorError> {
        if x.shape() != self.offset.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "step map",
                lhs: self.offset.shape(),
                rhs: x.shape(),
            });
        }
        let r = self.rotate(x);
        let data = r
            .data()
            .iter()
            .zip(self.offset.data())
            .map(|(v, b)| self.lipschitz * v + b)
            .collect();
        Matrix::new(x.rows(), x.cols(), data).map_err(|_| TensorError::NonFinite("step map"))
    }
}

/// Recorded activations `a_1..a_T` and the maps `f_2..f_T` between them.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    spec: ProcessSpec,
    activations: Vec<Matrix>,
    maps: Vec<StepMap>,
}

impl Trajectory {
    pub fn spec(&self) -> &ProcessSpec {
        &self.spec
    }

    pub fn steps(&self) -> usize {
        self.activations.len()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.spec.rows, self.spec.cols)
    }

    /// `a_t` for `t` in `1..=steps`.
    pub fn activation(&self, t: usize) -> &Matrix {
        &self.activations[t - 1]
    }

    pub fn activations(&self) -> &[Matrix] {
        &self.activations
    }

    /// `f_t` for `t` in `2..=steps`.
    pub fn map(&self, t: usize) -> &StepMap {
        assert!(t >= 2, "step 1 has no incoming map");
        &self.maps[t - 2]
    }

    /// `f_t(x)`.
    pub fn step(&self, t: usize, x: &Matrix) -> Result<Matrix, TensorError> {
        self.map(t).apply(x)
    }

    /// Rows `[start, start+count)` of every recorded activation.
    pub fn row_shard(&self, start: usize, count: usize) -> Vec<Matrix> {
        self.activations
            .iter()
            .map(|a| a.row_block(start, count))
            .collect()
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<(), ProcessError> {
        let s = &self.spec;
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        for v in [s.rows, s.cols, s.steps] {
            buf.extend_from_slice(&(v as u32).to_le_bytes());
        }
        buf.extend_from_slice(&s.seed.to_le_bytes());
        for v in [s.lipschitz, s.sigma_a_sq, s.sigma_delta_sq, s.innovation_share] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for a in &self.activations {
            for v in a.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        for m in &self.maps {
            for p in &m.perm {
                buf.extend_from_slice(&p.to_le_bytes());
            }
            for v in m.signs.iter().chain(m.offset.data()) {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, ProcessError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let mut cur = Cursor { bytes: &bytes, at: 0 };
        if cur.take(4)? != MAGIC {
            return Err(ProcessError::Format("bad magic".into()));
        }
        let version = cur.u32()?;
        if version != FORMAT_VERSION {
            return Err(ProcessError::Format(format!("unsupported version {version}")));
        }
        let (rows, cols, steps) = (cur.u32()? as usize, cur.u32()? as usize, cur.u32()? as usize);
        let seed = u64::from_le_bytes(cur.take(8)?.try_into().unwrap());
        let mut f = || -> Result<f64, ProcessError> {
            Ok(f64::from_le_bytes(cur.take(8)?.try_into().unwrap()))
        };
        let spec = ProcessSpec {
            rows,
            cols,
            steps,
            seed,
            lipschitz: f()?,
            sigma_a_sq: f()?,
            sigma_delta_sq: f()?,
            innovation_share: f()?,
        };
        spec.validate()?;
        let expected = steps * rows * cols * 4 + (steps - 1) * (rows * 8 + rows * cols * 4);
        if cur.remaining() != expected {
            return Err(ProcessError::Format(format!(
                "body is {} bytes, expected {expected}",
                cur.remaining()
            )));
        }
        let mut activations = Vec::with_capacity(steps);
        for _ in 0..steps {
            activations.push(Matrix::new(rows, cols, cur.f32s(rows * cols)?)?);
        }
        let mut maps = Vec::with_capacity(steps - 1);
        for _ in 1..steps {
            let perm: Vec<u32> = (0..rows).map(|_| cur.u32()).collect::<Result<_, _>>()?;
            let mut seen = vec![false; rows];
            for &p in &perm {
                let p = p as usize;
                if p >= rows || std::mem::replace(&mut seen[p], true) {
                    return Err(ProcessError::Format("row map is not a permutation".into()));
                }
            }
            let signs = cur.f32s(rows)?;
            if signs.iter().any(|s| s.abs() != 1.0) {
                return Err(ProcessError::Format("row signs must be ±1".into()));
            }
            let offset = Matrix::new(rows, cols, cur.f32s(rows * cols)?)?;
            maps.push(StepMap {
                lipschitz: spec.lipschitz as f32,
                perm,
                signs,
                offset,
            });
        }
        Ok(Self {
            spec,
            activations,
            maps,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ProcessError> {
        let file = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(file))
    }

    pub fn load(path: &Path) -> Result<Self, ProcessError> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ProcessError> {
        if self.at + n > self.bytes.len() {
            return Err(ProcessError::Format("unexpected end of file".into()));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ProcessError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, ProcessError> {
        Ok(self
            .take(4 * n)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.at
    }
}

/// Gaussian direction scaled to squared norm exactly `energy`.
fn draw_with_energy(rng: &mut Rng, rows: usize, cols: usize, energy: f64) -> Matrix {
    let g = gaussian_matrix(rng, rows, cols, 1.0);
    let norm = g.frob_norm_sq();
    if energy == 0.0 || norm == 0.0 {
        return Matrix::zeros(rows, cols);
    }
    let k = (energy / norm).sqrt();
    Matrix::from_fn(rows, cols, |i, j| (g.get(i, j) as f64 * k) as f32)
}

fn with_energy(x: &Matrix, energy: f64) -> Matrix {
    let norm = x.frob_norm_sq();
    let k = if norm == 0.0 { 0.0 } else { (energy / norm).sqrt() };
    Matrix::from_fn(x.rows(), x.cols(), |i, j| (x.get(i, j) as f64 * k) as f32)
}

/// Builds a trajectory satisfying `spec`, checking its measured energies
/// against the targets.
pub fn make_process(spec: &ProcessSpec) -> Result<Trajectory, ProcessError> {
    spec.validate()?;
    let (rows, cols) = (spec.rows, spec.cols);
    let l = spec.lipschitz;
    let s = spec.innovation_share;
    let anchor_energy = spec.anchor_energy();
    let rho = 1.0 - spec.sigma_delta_sq * (1.0 - s) / (2.0 * anchor_energy);
    let walk_energy = anchor_energy * (1.0 - rho * rho);
    let innovation_energy = spec.sigma_delta_sq * s * (1.0 - l * l) / 2.0;

    let mut rng = Rng::stream(spec.seed, 0x70726f63);
    let mut anchor = draw_with_energy(&mut rng, rows, cols, anchor_energy);
    let mut a = anchor.clone();
    let mut activations = Vec::with_capacity(spec.steps);
    let mut maps = Vec::with_capacity(spec.steps - 1);
    for k in 0..BURN_IN_STEPS + spec.steps {
        if k >= BURN_IN_STEPS {
            activations.push(a.clone());
            if activations.len() == spec.steps {
                break;
            }
        }
        let w = draw_with_energy(&mut rng, rows, cols, walk_energy);
        let next_anchor = if walk_energy == 0.0 {
            anchor.clone()
        } else {
            with_energy(&anchor.scale(rho as f32)?.add(&w)?, anchor_energy)
        };
        let perm = rng.permutation(rows);
        let signs: Vec<f32> = (0..rows)
            .map(|_| if rng.coin() { 1.0 } else { -1.0 })
            .collect();
        let d = draw_with_energy(&mut rng, rows, cols, innovation_energy);
        let mut map = StepMap {
            lipschitz: l as f32,
            perm,
            signs,
            offset: Matrix::zeros(rows, cols),
        };
        let rotated_anchor = map.rotate(&anchor);
        map.offset = Matrix::from_fn(rows, cols, |i, j| {
            (next_anchor.get(i, j) as f64 - l * rotated_anchor.get(i, j) as f64
                + d.get(i, j) as f64) as f32
        });
        a = map.apply(&a)?;
        anchor = next_anchor;
        if k >= BURN_IN_STEPS {
            maps.push(map);
        }
    }
    let traj = Trajectory {
        spec: spec.clone(),
        activations,
        maps,
    };
    let stats = measure_energies(&traj.activations, 0);
    check_band("sigma_a_sq", stats.0, spec.sigma_a_sq)?;
    check_band("sigma_delta_sq", stats.1, spec.sigma_delta_sq)?;
    Ok(traj)
}

fn check_band(quantity: &'static str, measured: f64, target: f64) -> Result<(), ProcessError> {
    if (measured - target).abs() > CALIBRATION_BAND * target {
        return Err(ProcessError::Calibration {
            quantity,
            measured,
            target,
        });
    }
    Ok(())
}

/// Mean activation energy and mean step drift energy over the activations
/// from index `skip` on.
fn measure_energies(acts: &[Matrix], skip: usize) -> (f64, f64) {
    let window = &acts[skip..];
    let sa = window.iter().map(Matrix::frob_norm_sq).sum::<f64>() / window.len() as f64;
    let start = skip.max(1);
    let diffs: f64 = (start..acts.len())
        .map(|t| acts[t].dist_sq(&acts[t - 1]).expect("same shape"))
        .sum();
    (sa, diffs / (acts.len() - start) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProcessStats {
    pub lipschitz: f64,
    pub sigma_a_sq: f64,
    pub sigma_delta_sq: f64,
}

/// Measures `(L̂, σ̂_a², σ̂_Δ²)`. `L̂` is the largest ratio
/// `‖f_t(x) − f_t(y)‖ / ‖x − y‖` over `probes` random pairs per map.
pub fn measure_stats(traj: &Trajectory, probes: usize, rng: &mut Rng) -> ProcessStats {
    measure_stats_window(traj, probes, rng, traj.steps())
}

/// As [`measure_stats`], but energies use only the last `window` steps.
pub fn measure_stats_window(
    traj: &Trajectory,
    probes: usize,
    rng: &mut Rng,
    window: usize,
) -> ProcessStats {
    let (rows, cols) = traj.shape();
    let mut l_hat = 0.0f64;
    for map in &traj.maps {
        for _ in 0..probes {
            let x = gaussian_matrix(rng, rows, cols, 1.0);
            let y = gaussian_matrix(rng, rows, cols, 1.0);
            let num = map.apply(&x).unwrap().dist_sq(&map.apply(&y).unwrap()).unwrap();
            let den = x.dist_sq(&y).unwrap();
            l_hat = l_hat.max((num / den).sqrt());
        }
    }
    let skip = traj.steps() - window.clamp(2, traj.steps());
    let (sa, sd) = measure_energies(&traj.activations, skip);
    ProcessStats {
        lipschitz: l_hat,
        sigma_a_sq: sa,
        sigma_delta_sq: sd,
    }
}
