//! `compress-bench`: every codec on seeded Gaussian tensors of every shape.

use std::time::Instant;

use compact_core::compress::{decode, empirical_delta, encode, CompressorSpec};
use compact_core::metrics::write_files;
use compact_core::tensor::gaussian_matrix;
use compact_core::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{load, write_err};
use crate::{CliError, Common};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    /// `[rows, cols]` pairs.
    pub shapes: Vec<[usize; 2]>,
    pub codecs: Vec<CompressorSpec>,
    pub seed: u64,
}

pub const BENCH_CSV_HEADER: &str =
    "codec,rows,cols,bits,element_bits,wire_bytes,payload_only_ratio,with_overhead_ratio,delta_hat";

pub fn run(args: &Common) -> Result<(), CliError> {
    let mut cfg: BenchConfig = load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if cfg.shapes.is_empty() || cfg.codecs.is_empty() {
        return Err(CliError::Config("bench needs at least one shape and one codec".into()));
    }
    for &[rows, cols] in &cfg.shapes {
        if rows == 0 || cols == 0 {
            return Err(CliError::Config(format!("empty shape {rows}x{cols}")));
        }
        for codec in &cfg.codecs {
            codec
                .validate_for(rows, cols)
                .map_err(|e| CliError::Config(format!("{codec} on {rows}x{cols}: {e}")))?;
        }
    }

    let mut csv = format!("{BENCH_CSV_HEADER}\n");
    println!(
        "{:<22} {:>11} {:>12} {:>9} {:>9} {:>8} {:>10} {:>10}",
        "codec", "shape", "bits", "ratio", "ratio+ovh", "delta", "enc_ms", "dec_ms"
    );
    for (s, &[rows, cols]) in cfg.shapes.iter().enumerate() {
        let x = gaussian_matrix(&mut Rng::stream(cfg.seed, s as u64), rows, cols, 1.0);
        for (c, codec) in cfg.codecs.iter().enumerate() {
            let mut rng = Rng::stream(cfg.seed, 0x6265_6e63_0000 + ((s as u64) << 16) + c as u64);
            let t0 = Instant::now();
            let p = encode(codec, &x, &mut rng).map_err(|e| CliError::Run(format!("{codec}: {e}")))?;
            let t1 = Instant::now();
            decode(&p).map_err(|e| CliError::Run(format!("{codec}: {e}")))?;
            let t2 = Instant::now();
            let delta = empirical_delta(&x, &p)
                .map_err(|e| CliError::Run(format!("{codec}: {e}")))?
                .value();
            csv.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                codec.label(),
                rows,
                cols,
                p.bit_size(),
                p.element_bits(),
                p.wire_len(),
                p.payload_only_ratio(),
                p.with_overhead_ratio(),
                delta
            ));
            println!(
                "{:<22} {:>11} {:>12} {:>9.2} {:>9.2} {:>8.4} {:>10.3} {:>10.3}",
                codec.label(),
                format!("{rows}x{cols}"),
                p.bit_size(),
                p.payload_only_ratio(),
                p.with_overhead_ratio(),
                delta,
                (t1 - t0).as_secs_f64() * 1e3,
                (t2 - t1).as_secs_f64() * 1e3
            );
        }
    }
    write_files(&args.out, &[("bench.csv", csv)]).map_err(write_err)?;
    Ok(())
}
