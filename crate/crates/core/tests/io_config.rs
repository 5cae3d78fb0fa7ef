use pillartrack::geometry::ObjectState;
use pillartrack::io::*;
use pillartrack::{Config, TrackError};
use std::path::Path;

// Two records written out by hand: (1, -2, 0.5, i=7) and (0.25, 0, -1, i=0).
const TWO_POINTS: [u8; 32] = [
    0x00, 0x00, 0x80, 0x3f, 0x00, 0x00, 0x00, 0xc0, 0x00, 0x00, 0x00, 0x3f, 0x00, 0x00, 0xe0, 0x40, //
    0x00, 0x00, 0x80, 0x3e, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x80, 0xbf, 0x00, 0x00, 0x00, 0x00,
];

#[test]
fn decodes_hand_written_records() {
    let pts = decode_points(&TWO_POINTS, Path::new("x.bin")).unwrap();
    assert_eq!(pts, vec![[1.0, -2.0, 0.5], [0.25, 0.0, -1.0]]);
}

#[test]
fn encode_writes_zero_intensity() {
    let bytes = encode_points(&[[1.0, -2.0, 0.5], [0.25, 0.0, -1.0]]);
    let mut want = TWO_POINTS;
    want[12..16].copy_from_slice(&[0; 4]);
    assert_eq!(bytes, want);
}

#[test]
fn empty_file_is_an_empty_cloud() {
    assert!(decode_points(&[], Path::new("e.bin")).unwrap().is_empty());
}

#[test]
fn truncated_file_reports_offset_of_partial_record() {
    let err = decode_points(&TWO_POINTS[..21], Path::new("t.bin")).unwrap_err();
    match err {
        TrackError::Format { offset, .. } => assert_eq!(offset, 16),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn point_file_round_trip_is_f32_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.bin");
    let pts = vec![[0.1, 2.5, -3.75], [1e3, -1e-3, 0.0]];
    write_points(&path, &pts).unwrap();
    let back = read_points(&path).unwrap();
    for (a, b) in pts.iter().zip(&back) {
        for k in 0..3 {
            assert_eq!(b[k], a[k] as f32 as f64);
        }
    }
}

#[test]
fn manifest_round_trip() {
    let base = Path::new("/data");
    let m = SequenceManifest {
        category: "van".into(),
        tracklet: "abc".into(),
        entries: vec![
            ManifestEntry { path: base.join("abc/0000.bin"), gt: ObjectState::new(1.0, 2.0, -0.5, 2.0, 5.0, 2.1, 0.3) },
            ManifestEntry { path: base.join("abc/0001.bin"), gt: ObjectState::new(1.5, 2.0, -0.5, 2.0, 5.0, 2.1, -3.0) },
        ],
    };
    let text = render_manifest(&m, base);
    let back = parse_manifest(&text, &base.join("abc.txt")).unwrap();
    assert_eq!(back, m);
}

#[test]
fn manifest_errors_carry_line_numbers() {
    let text = "# category: car\nf0.bin 0 0 0 1 1 1 0\nf1.bin 0 0 0 1 1\n";
    match parse_manifest(text, Path::new("/d/m.txt")).unwrap_err() {
        TrackError::Manifest { line, .. } => assert_eq!(line, 3),
        other => panic!("unexpected {other:?}"),
    }
    let text = "f0.bin 0 0 0 1 0 1 0\n";
    assert!(matches!(parse_manifest(text, Path::new("m.txt")), Err(TrackError::Manifest { line: 1, .. })));
    assert!(parse_manifest("# only comments\n", Path::new("m.txt")).is_err());
}

#[test]
fn manifest_without_metadata_uses_file_stem() {
    let m = parse_manifest("a.bin 0 0 0 1 1 1 0\n", Path::new("/d/seq7.txt")).unwrap();
    assert_eq!(m.tracklet, "seq7");
    assert_eq!(m.entries[0].path, Path::new("/d/a.bin"));
}

#[test]
fn predictions_round_trip() {
    let states = vec![ObjectState::new(0.5, -1.0, 0.0, 1.9, 4.5, 1.6, 0.1); 3];
    let flags = vec![false, true, false];
    let text = render_predictions(&states, &flags);
    let (s, f) = parse_predictions(&text, Path::new("p.txt")).unwrap();
    assert_eq!(f, flags);
    assert_eq!(s, states);
    let skipped = text.replace("\n1 ", "\n7 ");
    assert!(parse_predictions(&skipped, Path::new("p.txt")).is_err());
}

#[test]
fn config_defaults() {
    let c = Config::default();
    assert_eq!(c.learning_rate, 1e-3);
    assert_eq!(c.batch_size, 32);
    assert_eq!(c.feature_dim, 128);
    assert_eq!(c.stages, 2);
    assert_eq!((c.lambda1, c.lambda2, c.alpha), (1.0, 2.0, 0.1));
    assert_eq!((c.template_points, c.search_points), (512, 1024));
    assert_eq!(c.cell_size, 0.3);
    assert_eq!((c.success_thresholds, c.precision_thresholds, c.precision_max_distance), (101, 21, 2.0));
    let g = c.grid().unwrap();
    assert_eq!((g.nx, g.ny), (32, 32));
    c.validate().unwrap();
}

#[test]
fn config_toml_partial_override_and_round_trip() {
    let c = Config::from_toml_str("feature_dim = 32\ncorrelation = \"single\"\n").unwrap();
    assert_eq!(c.feature_dim, 32);
    assert_eq!(c.correlation, pillartrack::Correlation::Single);
    assert_eq!(c.stages, 2);
    let back = Config::from_toml_str(&c.to_toml_string()).unwrap();
    assert_eq!(back.to_toml_string(), c.to_toml_string());
}

#[test]
fn config_rejects_unknown_keys_and_bad_values() {
    assert!(matches!(Config::from_toml_str("learnig_rate = 0.1\n"), Err(TrackError::Config(_))));
    assert!(matches!(Config::from_toml_str("stages = 0\n"), Err(TrackError::Config(_))));
    assert!(matches!(Config::from_toml_str("cell_size = -1.0\n"), Err(TrackError::Config(_))));
    assert!(matches!(Config::from_toml_str("adam_beta1 = 1.0\n"), Err(TrackError::Config(_))));
    assert!(matches!(Config::from_toml_str("synth_frames = 1\n"), Err(TrackError::Config(_))));
}

#[test]
fn bundled_tiny_config_loads() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/tiny.toml");
    Config::load(&path).unwrap();
}
