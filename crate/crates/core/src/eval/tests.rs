use super::*;
use crate::synth::{generate_corpus, SynthConfig};

fn corpus(sessions: usize, secs: f64, seed: u64) -> (tempfile::TempDir, Corpus) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig { hours: sessions as f64 * secs / 3600.0, session_seconds: secs, seed, ..SynthConfig::default() };
    generate_corpus(dir.path(), &cfg).unwrap();
    let c = load_corpus(&[dir.path()], &PipelineConfig::default()).unwrap();
    (dir, c)
}

fn tiny_train() -> TrainConfig {
    TrainConfig { max_epochs: 1, batch_size: 32, ..TrainConfig::default() }
}

fn eval_cfg() -> EvalConfig {
    EvalConfig { latency_reps: 10, ..EvalConfig::default() }
}

#[test]
fn corpus_loads_and_rejects_unsettled() {
    let (dir, c) = corpus(3, 60.0, 1);
    assert_eq!(c.sessions.len(), 3);
    assert!(c.rejected.is_empty());
    // gate at the first settled fix
    assert!(c.sessions.iter().all(|s| s.gate_time == 10.0));
    let bad = dir.path().join("drive_000.gps.csv");
    let text = std::fs::read_to_string(&bad).unwrap();
    let lines: Vec<String> = text
        .lines()
        .enumerate()
        .map(|(i, l)| if i == 0 { l.to_string() } else { format!("{},{},20.0", l.split(',').next().unwrap(), 1.0) })
        .collect();
    std::fs::write(&bad, lines.join("\n") + "\n").unwrap();
    let c = load_corpus(&[dir.path()], &PipelineConfig::default()).unwrap();
    assert_eq!(c.sessions.len(), 2);
    assert_eq!(c.rejected.len(), 1);
}

#[test]
fn experiment_report_matches_trace() {
    let (_d, c) = corpus(3, 90.0, 2);
    let x = run_experiment::<f32>(&c.sessions, "dnn_star", 20, &tiny_train(), &eval_cfg(), &mut |_| {}).unwrap();
    assert_eq!(x.trace.len(), x.split.test.len());
    let (r, m) = trace_metrics(&x.trace).unwrap();
    assert_eq!(r.to_bits(), x.report.rmse_mps.to_bits());
    assert_eq!(m.to_bits(), x.report.mae_mps.to_bits());
    assert!(x.report.latency_ms > 0.0);
    assert_eq!(x.report.param_count, x.model.param_count());
    assert_eq!(x.report.target_param_count, 13_031);

    // the test session trace written and re-read recomputes the same metrics
    let mut buf = Vec::new();
    write_trace_csv(&mut buf, &x.trace).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(TRACE_HEADER));
    let (mut n, mut sq, mut abs) = (0.0, 0.0, 0.0);
    for l in lines {
        let v: Vec<f64> = l.split(',').map(|f| f.parse().unwrap()).collect();
        n += 1.0;
        sq += (v[1] - v[2]).powi(2);
        abs += (v[1] - v[2]).abs();
    }
    assert!(((sq / n).sqrt() - r).abs() < 1e-9);
    assert!((abs / n - m).abs() < 1e-9);

    // emit_trace over the held-out session gives the same rows
    let s = c.sessions.iter().find(|s| s.session_id == x.split.test_sessions[0]).unwrap();
    assert_eq!(emit_trace(&x.model, s).unwrap(), x.trace);
}

#[test]
fn sweep_has_one_row_per_size() {
    let (_d, c) = corpus(3, 60.0, 3);
    let rows = sweep_windows::<f32>(&c.sessions, &[5, 10], &tiny_train(), &eval_cfg(), &mut |_, _| {}).unwrap();
    assert_eq!(rows.iter().map(|r| (r.window_samples, r.window_seconds)).collect::<Vec<_>>(), vec![(5, 0.25), (10, 0.5)]);
    let mut buf = Vec::new();
    write_sweep_csv(&mut buf, &rows).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().next(), Some(SWEEP_HEADER));
    assert_eq!(text.lines().count(), 3);
    assert!(text.lines().nth(1).unwrap().starts_with("carspeednet,5,0.25,"));
}

#[test]
fn sweep_errors_name_the_size() {
    let (_d, c) = corpus(3, 60.0, 3);
    match sweep_windows::<f32>(&c.sessions, &[4], &tiny_train(), &eval_cfg(), &mut |_, _| {}) {
        Err(Error::Sweep { window: 4, .. }) => {}
        other => panic!("{:?}", other.map(|_| ())),
    }
}

#[test]
fn compare_checks_names_and_carries_targets() {
    let (_d, c) = corpus(3, 60.0, 4);
    let names = vec!["dnn_star".to_string(), "transformer".to_string()];
    assert!(matches!(
        compare_models::<f32>(&c.sessions, &names, 20, &tiny_train(), &eval_cfg(), &mut |_, _| {}),
        Err(Error::UnknownModel(_))
    ));
    let rows = compare_models::<f32>(&c.sessions, &names[..1], 20, &tiny_train(), &eval_cfg(), &mut |_, _| {}).unwrap();
    let mut buf = Vec::new();
    write_compare_csv(&mut buf, &rows).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().next(), Some(COMPARE_HEADER));
    assert!(text.lines().nth(1).unwrap().ends_with(",11809,13031"));
}

#[test]
fn reruns_match_apart_from_latency() {
    let (_d, c) = corpus(3, 60.0, 5);
    let run = || {
        let mut r = sweep_windows::<f64>(&c.sessions, &[5], &tiny_train(), &eval_cfg(), &mut |_, _| {}).unwrap();
        r[0].latency_ms = 0.0;
        r
    };
    assert_eq!(run(), run());
}
