use std::fs;

use memg_core::io::{
    parse_params, params_to_string, read_features, read_frames, read_params, read_params_version, write_features,
    write_frame, write_frames, write_params, FrameMeta, PARAMS_SCHEMA_VERSION,
};
use memg_core::lm::LmConfig;
use memg_core::model::Frame;
use memg_core::preprocess::PreprocessConfig;
use memg_core::staged::{FitResult, InitConfig, StagePlan};
use memg_core::synth::{feature_corpus, fit_noisy, generate, random_spec};
use memg_core::MemgError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn frames(n: usize, len: usize) -> Vec<(Frame, FrameMeta)> {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    (0..n)
        .map(|i| {
            let samples = (0..len).map(|_| rng.random_range(-1e3..1e3)).collect();
            let frame = Frame::from_rate(samples, 175.0 * 4.0, i);
            let meta = FrameMeta {
                blind_zone_samples: 10,
                f_e_khz: Some(175.0),
                ..FrameMeta::for_frame(&frame)
            };
            (frame, meta)
        })
        .collect()
}

#[test]
fn frames_round_trip_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let written = frames(21, 126);
    // reversed write order must not matter
    let mut rev = written.clone();
    rev.reverse();
    write_frames(&rev, dir.path()).unwrap();
    let read = read_frames(dir.path()).unwrap();
    assert_eq!(read.len(), 21);
    for ((frame, meta), file) in written.iter().zip(&read) {
        assert_eq!(&file.meta, meta);
        assert_eq!(file.frame.samples, frame.samples);
        assert_eq!(file.frame.dt.to_bits(), frame.dt.to_bits());
        assert_eq!(file.frame.frame_index, frame.frame_index);
    }
}

#[test]
fn single_file_and_empty_directory() {
    let dir = tempfile::tempdir().unwrap();
    assert!(read_frames(dir.path()).unwrap().is_empty());
    let (frame, meta) = frames(1, 5).remove(0);
    let path = dir.path().join("one.csv");
    write_frame(&frame, &meta, &path).unwrap();
    assert_eq!(read_frames(&path).unwrap()[0].frame.samples, frame.samples);
}

#[test]
fn corrupt_row_names_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let (frame, meta) = frames(1, 5).remove(0);
    let path = dir.path().join("f.csv");
    write_frame(&frame, &meta, &path).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[3] = "0.01,abc";
    fs::write(&path, lines.join("\n")).unwrap();
    let err = read_frames(&path).unwrap_err();
    let MemgError::Format { path: p, line, .. } = &err else { panic!("{err}") };
    assert_eq!((p, *line), (&path, 4));
    assert!(err.to_string().contains("f.csv:4"));
}

#[test]
fn non_monotone_time_and_missing_sidecar_are_format_errors() {
    let dir = tempfile::tempdir().unwrap();
    let (frame, meta) = frames(1, 4).remove(0);
    let path = dir.path().join("f.csv");
    write_frame(&frame, &meta, &path).unwrap();
    fs::write(&path, "t_ms,amplitude\n0,1\n0.5,2\n0.25,3\n").unwrap();
    assert!(matches!(read_frames(&path), Err(MemgError::Format { line: 4, .. })));
    fs::remove_file(dir.path().join("f.json")).unwrap();
    assert!(matches!(read_frames(&path), Err(MemgError::Format { .. })));
}

#[test]
fn missing_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let r = read_params(&dir.path().join("nope.json"));
    assert!(matches!(r, Err(MemgError::Io { .. })));
}

fn fitted() -> Vec<FitResult> {
    let syn = generate(&random_spec(4, 2, (0.5, 2.0))).unwrap();
    let pre = PreprocessConfig {
        rel_bandwidth: None,
        ..PreprocessConfig::default()
    };
    let fit = fit_noisy(&syn.noisy, &pre, &InitConfig::simulation(50.0), &StagePlan::memg(), &LmConfig::default()).unwrap();
    vec![fit, FitResult::empty(1)]
}

#[test]
fn params_round_trip_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("params.json");
    let fits = fitted();
    write_params(&fits, &path).unwrap();
    let doc = read_params(&path).unwrap();
    assert_eq!(doc.schema_version, PARAMS_SCHEMA_VERSION);
    assert_eq!(doc.frames[0].param_set(), fits[0].params);
    assert_eq!(doc.frames[0].stage_losses, fits[0].stage_losses());
    assert!(doc.frames[1].components.is_empty());
    let text = fs::read_to_string(&path).unwrap();
    assert_eq!(params_to_string(&fits).unwrap(), text);
    assert_eq!(serde_json::to_string_pretty(&doc).unwrap() + "\n", text);
    assert_eq!(doc.frames[0].to_fit().params, fits[0].params);
}

#[test]
fn reader_requiring_a_newer_version_rejects_the_document() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("params.json");
    write_params(&fitted(), &path).unwrap();
    let r = read_params_version(&path, PARAMS_SCHEMA_VERSION + 1);
    assert!(matches!(r, Err(MemgError::Version { found: 1, expected: 2 })));
    assert!(parse_params("{\"frames\": []}", 1).is_err());
}

#[test]
fn features_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("features.csv");
    let records = feature_corpus(3, 5);
    write_features(&records, &path).unwrap();
    assert_eq!(read_features(&path).unwrap(), records);
    write_features(&[], &path).unwrap();
    assert!(read_features(&path).unwrap().is_empty());
}
