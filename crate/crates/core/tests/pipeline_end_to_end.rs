use compact_core::compress::{CompressorSpec, FactorPrecision};
use compact_core::experiment::{divergence, mode_sweep};
use compact_core::pipeline::{run_trajectory, LoopModel, PipelineMode, RunSettings};
use compact_core::process::{make_process, ProcessSpec, Trajectory};

fn standard() -> Trajectory {
    make_process(&ProcessSpec::standard(42)).unwrap()
}

#[test]
fn mode_ordering_for_quantizers() {
    let traj = standard();
    for codec in [CompressorSpec::Sign1Bit, CompressorSpec::Quant2Bit] {
        let runs = mode_sweep(&traj, codec, 1, LoopModel::Open, 42).unwrap();
        let [naive, nofb, fb] = [&runs[0], &runs[1], &runs[2]].map(|r| r.mean_total_error());
        assert!(fb < nofb && nofb < naive, "{codec}: {fb} {nofb} {naive}");
    }
}

#[test]
fn no_feedback_error_grows_linearly() {
    let report = divergence(&standard(), CompressorSpec::Quant2Bit, 1, 50, 42).unwrap();
    assert!(report.no_feedback_slope > 0.0);
    assert!((report.slope_ratio() - 1.0).abs() < 0.25, "{report:?}");
    assert!(report.feedback_late_slope.abs() < 0.1 * report.no_feedback_slope);
}

#[test]
fn trajectory_file_replays_identically() {
    let traj = make_process(&ProcessSpec {
        rows: 16,
        cols: 24,
        steps: 30,
        ..ProcessSpec::standard(8)
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("traj.bin");
    traj.save(&path).unwrap();
    let back = Trajectory::load(&path).unwrap();
    assert_eq!(back, traj);
    let settings = RunSettings {
        codec: CompressorSpec::LowRank {
            rank: 4,
            iterations: 2,
            precision: FactorPrecision::F16,
        },
        mode: PipelineMode::ResidualWithFeedback,
        warmup: 2,
        loop_model: LoopModel::Closed,
        seed: 3,
    };
    let a = run_trajectory(&traj, &settings).unwrap();
    let b = run_trajectory(&back, &settings).unwrap();
    assert_eq!(a.reconstructions, b.reconstructions);
    assert_eq!(a.records, b.records);
}

#[test]
fn every_codec_runs_in_every_mode() {
    let traj = make_process(&ProcessSpec {
        rows: 16,
        cols: 16,
        steps: 25,
        ..ProcessSpec::standard(2)
    })
    .unwrap();
    let codecs = [
        CompressorSpec::Identity,
        CompressorSpec::Sign1Bit,
        CompressorSpec::Quant2Bit,
        CompressorSpec::LowRank {
            rank: 4,
            iterations: 2,
            precision: FactorPrecision::Int4,
        },
        CompressorSpec::NmBlockSparse { n: 2, m: 4 },
        CompressorSpec::TopK { keep_fraction: 0.25 },
    ];
    for codec in codecs {
        for loop_model in [LoopModel::Open, LoopModel::Closed] {
            let runs = mode_sweep(&traj, codec, 1, loop_model, 9).unwrap();
            for r in runs {
                assert!(r.total_error.iter().all(|e| e.is_finite()));
                assert_eq!(r.total_error[0], 0.0);
            }
        }
    }
}
