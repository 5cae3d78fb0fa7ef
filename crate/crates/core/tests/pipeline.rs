use pillartrack::evaluate::SequenceResult;
use pillartrack::io::render_predictions;
use pillartrack::metrics::{Score, TrackRun};
use pillartrack::pipeline::*;
use pillartrack::synth::generate_tracklets;
use pillartrack::Config;

fn tiny() -> Config {
    Config { synth_tracklets: 3, synth_frames: 4, ..Config::default() }
}

#[test]
fn dataset_round_trips_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let tracklets = generate_tracklets(&tiny().synth(), 3, "seq");
    let manifests = write_dataset(dir.path(), &tracklets).unwrap();
    assert_eq!(manifests.len(), 3);
    assert_eq!(manifest_paths(&[dir.path().to_path_buf()]).unwrap(), manifests);
    let back = load_dataset(&[dir.path().to_path_buf()]).unwrap();
    for (a, b) in tracklets.iter().zip(&back) {
        assert_eq!((&a.id, &a.category), (&b.id, &b.category));
        for (fa, fb) in a.frames.iter().zip(&b.frames) {
            let (ga, gb) = (fa.gt.unwrap(), fb.gt.unwrap());
            assert!((ga.x - gb.x).abs() < 1e-8 && (ga.theta - gb.theta).abs() < 1e-8);
            assert_eq!(fa.points.len(), fb.points.len());
            for (p, q) in fa.points.iter().zip(&fb.points) {
                assert_eq!(q[0], p[0] as f32 as f64);
            }
        }
    }
}

#[test]
fn ground_truth_predictions_score_100() {
    let dir = tempfile::tempdir().unwrap();
    let tracklets = generate_tracklets(&tiny().synth(), 3, "seq");
    let data = dir.path().join("data");
    write_dataset(&data, &tracklets).unwrap();
    let loaded = load_dataset(&[data.clone()]).unwrap();
    let preds = dir.path().join("pred");
    std::fs::create_dir_all(&preds).unwrap();
    for tr in &loaded {
        let gts: Vec<_> = tr.frames.iter().map(|f| f.gt.unwrap()).collect();
        let text = render_predictions(&gts, &vec![false; gts.len()]);
        std::fs::write(preds.join(format!("{}.txt", tr.id)), text).unwrap();
    }
    let metrics = tiny().metrics();
    let results = read_runs(&loaded, &preds, &metrics).unwrap();
    write_metrics(dir.path(), &results, &metrics).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "sequence,category,frames,success,precision,degenerate");
    assert_eq!(lines[1], "seq000,car,4,100.000000000,100.000000000,0");
    assert_eq!(lines[4], "overall,all,12,100.000000000,100.000000000,0");
    let curves = std::fs::read_to_string(dir.path().join("curves.csv")).unwrap();
    // Four curve sets (three sequences and the pooled one) of 101 + 21 rows.
    assert_eq!(curves.lines().count(), 1 + 4 * (101 + 21));
}

#[test]
fn missing_prediction_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let tracklets = generate_tracklets(&tiny().synth(), 3, "seq");
    let err = read_runs(&tracklets, dir.path(), &tiny().metrics()).unwrap_err();
    assert!(matches!(err, pillartrack::TrackError::Io { .. }));
}

#[test]
fn overall_row_is_frame_weighted() {
    let s = |x: f64, n: usize| Score { success: x, precision: x, frames: n };
    let st = pillartrack::ObjectState::new(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0);
    let run = |n: usize| TrackRun::new(vec![st; n], vec![st; n], vec![false; n]).unwrap();
    let results = vec![
        SequenceResult { id: "a".into(), category: "car".into(), run: run(1), score: s(40.0, 1) },
        SequenceResult { id: "b".into(), category: "car".into(), run: run(3), score: s(80.0, 3) },
    ];
    let csv = render_metrics_csv(&results);
    assert!(csv.ends_with("overall,all,4,70.000000000,70.000000000,0\n"), "{csv}");
}
