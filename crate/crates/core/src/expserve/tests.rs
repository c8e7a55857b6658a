use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn service(dir: &Path) -> Service {
    let mut opts = ServiceOptions::new(dir);
    opts.sync = false;
    opts.snapshot_every = 7;
    Service::open(opts).unwrap()
}

fn bernoulli(id: &str) -> NewExperiment {
    let mut req = NewExperiment::new(id, StreamModel::BernoulliTwoStream);
    req.created_at = Some(DateTime::from_timestamp(1_430_000_000, 0).unwrap());
    req
}

fn normal(id: &str) -> NewExperiment {
    let mut req = NewExperiment::new(id, StreamModel::NormalKnownVariance { sigma_sq: 1.0 });
    req.created_at = Some(DateTime::from_timestamp(1_430_000_000, 0).unwrap());
    req
}

fn coin_batch(rng: &mut ChaCha8Rng, rows: usize, pc: f64, pt: f64) -> Vec<Observation> {
    (0..rows)
        .map(|i| {
            if i % 2 == 0 {
                Observation::control(if rng.gen::<f64>() < pc { 1.0 } else { 0.0 })
            } else {
                Observation::treatment(if rng.gen::<f64>() < pt { 1.0 } else { 0.0 })
            }
        })
        .collect()
}

fn log_len(dir: &Path, id: &str) -> u64 {
    fs::metadata(dir.join(format!("{id}.jsonl"))).unwrap().len()
}

#[test]
fn fresh_experiment_has_no_data() {
    let dir = tempfile::tempdir().unwrap();
    let svc = service(dir.path());
    let snap = svc.create_experiment(bernoulli("a")).unwrap();
    assert_eq!(snap.p_value, 1.0);
    assert_eq!(snap.chance_to_beat, 0.0);
    assert_eq!(snap.effect_estimate, None);
    assert_eq!(snap.status, Status::Running);
    assert_eq!(snap.as_of, 1);
    assert!(snap.ci_by_level.iter().all(|b| b.band == CiBand::Unbounded));
    assert_eq!(svc.get_snapshot("a").unwrap(), snap);
}

#[test]
fn creation_errors() {
    let dir = tempfile::tempdir().unwrap();
    let svc = service(dir.path());
    svc.create_experiment(bernoulli("a")).unwrap();
    assert!(matches!(svc.create_experiment(bernoulli("a")), Err(ServiceError::Conflict(_))));
    let mut req = bernoulli("b");
    req.levels = Some(vec![]);
    assert!(matches!(svc.create_experiment(req), Err(ServiceError::Validation(_))));
    assert!(matches!(svc.create_experiment(bernoulli("../x")), Err(ServiceError::Validation(_))));
    assert!(matches!(svc.get_snapshot("zzz"), Err(ServiceError::NotFound(_))));
    assert_eq!(svc.ids(), vec!["a".to_string()]);
}

#[test]
fn empty_batch_only_advances_as_of() {
    let dir = tempfile::tempdir().unwrap();
    let svc = service(dir.path());
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    svc.create_experiment(bernoulli("a")).unwrap();
    let before = svc.ingest_batch("a", coin_batch(&mut rng, 50, 0.5, 0.5)).unwrap();
    let after = svc.ingest_batch("a", vec![]).unwrap();
    assert_eq!(after.as_of, before.as_of + 1);
    assert_eq!(Snapshot { as_of: before.as_of, ..after.clone() }, before);
    assert_eq!(svc.get_snapshot("a").unwrap(), after);
    assert_eq!(svc.get_snapshot("a").unwrap(), svc.get_snapshot("a").unwrap());
}

#[test]
fn malformed_batch_persists_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let svc = service(dir.path());
    svc.create_experiment(bernoulli("a")).unwrap();
    let len = log_len(dir.path(), "a");
    let bad = vec![Observation::control(1.0), Observation::treatment(0.5)];
    assert!(matches!(svc.ingest_batch("a", bad), Err(ServiceError::Validation(_))));
    assert_eq!(log_len(dir.path(), "a"), len);
    assert_eq!(svc.get_snapshot("a").unwrap().as_of, 1);
}

#[test]
fn seeded_batch_matches_offline_update() {
    let dir = tempfile::tempdir().unwrap();
    let svc = service(dir.path());
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let batch = coin_batch(&mut rng, 1000, 0.4, 0.5);
    let created = svc.create_experiment(bernoulli("a")).unwrap();
    let snap = svc.ingest_batch("a", batch.clone()).unwrap();

    let state = svc.state("a").unwrap();
    let mut offline = AvState::new(&DEFAULT_LEVELS).unwrap();
    offline = update_state(&offline, &batch, &StreamModel::BernoulliTwoStream, &state.config.mixture).unwrap();
    assert_eq!(state.av, offline);
    assert_eq!(snap.p_value, offline.p_value);
    assert_eq!((snap.m, snap.n), (500, 500));
    assert!(snap.p_value <= created.p_value);
}

#[test]
fn stop_decisions() {
    let dir = tempfile::tempdir().unwrap();
    let svc = service(dir.path());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    svc.create_experiment(bernoulli("win")).unwrap();
    svc.create_experiment(bernoulli("flat")).unwrap();
    svc.ingest_batch("win", coin_batch(&mut rng, 4000, 0.3, 0.5)).unwrap();
    svc.ingest_batch("flat", coin_batch(&mut rng, 200, 0.5, 0.5)).unwrap();

    let win = svc.stop_experiment("win", 0.05, "ops", "clear winner").unwrap();
    assert!(win.rejected && win.snapshot.p_value <= 0.05);
    assert_eq!(win.snapshot.status, Status::Stopped);
    assert_eq!(win.stopped_at, 3);
    assert_eq!(svc.get_snapshot("win").unwrap(), win.snapshot);

    let p = svc.get_snapshot("flat").unwrap().p_value;
    let flat = svc.stop_experiment("flat", 0.05, "ops", "").unwrap();
    assert_eq!(flat.rejected, p <= 0.05);

    let len = log_len(dir.path(), "win");
    assert!(matches!(svc.stop_experiment("win", 0.05, "ops", ""), Err(ServiceError::Conflict(_))));
    assert!(matches!(svc.ingest_batch("win", vec![Observation::control(1.0)]), Err(ServiceError::Conflict(_))));
    assert_eq!(log_len(dir.path(), "win"), len);
    assert_eq!(svc.decision("win").unwrap(), Some(win));
    assert!(matches!(svc.stop_experiment("flat", 1.5, "ops", ""), Err(ServiceError::Validation(_))));
}

#[test]
fn history_is_cursor_paged_and_monotone() {
    let dir = tempfile::tempdir().unwrap();
    let svc = service(dir.path());
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    svc.create_experiment(normal("a")).unwrap();
    for _ in 0..20 {
        let batch: Vec<Observation> = (0..25)
            .map(|i| Observation {
                arm: if i % 2 == 0 { Arm::Control } else { Arm::Treatment },
                value: rng.gen::<f64>(),
            })
            .collect();
        svc.ingest_batch("a", batch).unwrap();
    }
    let all = svc.history("a", 0).unwrap();
    assert_eq!(all.points.len(), 21);
    assert_eq!(all.cursor, 21);
    assert!(all.points.windows(2).all(|w| w[0].seq < w[1].seq && w[1].p_value <= w[0].p_value));
    let tail = svc.history("a", 15).unwrap();
    assert_eq!(tail.points, all.points[15..].to_vec());
    let none = svc.history("a", 21).unwrap();
    assert!(none.points.is_empty());
    assert_eq!(none.cursor, 21);
}

fn snap(id: &str, p: f64) -> Snapshot {
    let band = |level, w: f64| LevelBand { level, band: CiBand::Interval { lo: -w, hi: w } };
    Snapshot {
        experiment_id: id.into(),
        status: Status::Running,
        as_of: 2,
        m: 10,
        n: 10,
        control_mean: Some(0.0),
        treatment_mean: Some(0.0),
        effect_estimate: Some(0.0),
        p_value: p,
        chance_to_beat: 1.0 - p,
        ci_by_level: vec![band(0.9, 1.0), band(0.95, 2.0), band(0.99, 3.0)],
        empty_ci: false,
    }
}

#[test]
fn overview_examples() {
    let one = compute_overview(vec![snap("a", 0.3)], &OverviewQuery::new(0.05, Procedure::Bonferroni)).unwrap();
    assert_eq!(one.rows[0].q_value, 0.3);

    let ps = [0.01, 0.02, 0.04, 0.9];
    let snaps: Vec<Snapshot> = ps.iter().enumerate().map(|(i, &p)| snap(&format!("e{i}"), p)).collect();
    let ov = compute_overview(snaps.clone(), &OverviewQuery::new(0.05, Procedure::BhI)).unwrap();
    let rejected: Vec<bool> = ov.rows.iter().map(|r| r.rejected).collect();
    assert_eq!(rejected, vec![true, true, false, false]);
    assert_eq!(ov.rows[0].required_level, 0.95);
    assert_eq!(ov.rows[0].ci_level, Some(0.95));
    assert_eq!(ov.warning, OVERVIEW_WARNING);

    let mut q = OverviewQuery::new(0.05, Procedure::BhI);
    q.fcr = true;
    q.select = vec!["e3".into()];
    let ov = compute_overview(snaps, &q).unwrap();
    // R = 2 of m = 4: selected at 1 − 2α/4, the rest at 1 − 3α/4.
    assert_eq!(ov.rows[0].required_level, 1.0 - 2.0 * 0.05 / 4.0);
    assert_eq!(ov.rows[0].ci_level, Some(0.99));
    assert_eq!(ov.rows[3].required_level, 1.0 - 3.0 * 0.05 / 4.0);
    assert!(ov.rows[3].selected && !ov.rows[3].rejected && !ov.rows[2].selected);

    let flat: Vec<Snapshot> = (0..5).map(|i| snap(&format!("f{i}"), 1.0)).collect();
    let ov = compute_overview(flat, &q).unwrap();
    assert!(ov.rows.iter().all(|r| !r.rejected && r.required_level == 1.0 - 0.05 / 5.0));
    assert!(ov.rows.iter().all(|r| r.ci_level == Some(0.99)));

    let strict: Vec<Snapshot> = (0..20).map(|i| snap(&format!("s{i}"), 1.0)).collect();
    let ov = compute_overview(strict, &q).unwrap();
    assert!(ov.rows.iter().all(|r| r.ci_level.is_none() && r.ci.is_none()));

    assert!(compute_overview(vec![], &q).unwrap().rows.is_empty());
    assert!(compute_overview(vec![snap("a", 0.1)], &OverviewQuery::new(1.0, Procedure::BhI)).is_err());
}

#[test]
fn service_overview_reads_live_experiments() {
    let dir = tempfile::tempdir().unwrap();
    let svc = service(dir.path());
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for id in ["b", "a"] {
        svc.create_experiment(bernoulli(id)).unwrap();
        svc.ingest_batch(id, coin_batch(&mut rng, 100, 0.5, 0.5)).unwrap();
    }
    let ov = svc.overview(&OverviewQuery::new(0.1, Procedure::BhG)).unwrap();
    assert_eq!(ov.rows.iter().map(|r| r.id.as_str()).collect::<Vec<_>>(), vec!["a", "b"]);
    assert_eq!(ov.rows[0].p_value, svc.get_snapshot("a").unwrap().p_value);
}

fn session(svc: &Service, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    svc.create_experiment(bernoulli("x")).unwrap();
    svc.create_experiment(normal("y")).unwrap();
    for k in 0..30 {
        svc.ingest_batch("x", coin_batch(&mut rng, 10 + k, 0.4, 0.6)).unwrap();
        let batch = (0..k).map(|_| Observation::treatment(0.2 + rng.gen::<f64>())).collect();
        svc.ingest_batch("y", batch).unwrap();
    }
    svc.stop_experiment("x", 0.05, "ops", "done").unwrap();
}

#[test]
fn replay_matches_live_state() {
    let dir = tempfile::tempdir().unwrap();
    let svc = service(dir.path());
    session(&svc, 9);
    for id in ["x", "y"] {
        let bytes = fs::read(dir.path().join(format!("{id}.jsonl"))).unwrap();
        let live = svc.state(id).unwrap();
        let once = replay_log(&bytes).unwrap();
        let twice = replay_log(&bytes).unwrap();
        assert_eq!(once, twice);
        assert_eq!(once.state.as_ref(), Some(&live));
        assert_eq!(serde_json::to_vec(&once.state.unwrap()).unwrap(), serde_json::to_vec(&live).unwrap());
    }
    let empty = replay_log(b"").unwrap();
    assert_eq!(empty.state, None);
    assert_eq!(empty.events, 0);
}

#[test]
fn reopen_recovers_with_and_without_snapshot_files() {
    let dir = tempfile::tempdir().unwrap();
    let live = {
        let svc = service(dir.path());
        session(&svc, 21);
        (svc.state("x").unwrap(), svc.state("y").unwrap())
    };
    assert!(dir.path().join("x.snapshot.json").exists());
    let svc = service(dir.path());
    assert_eq!((svc.state("x").unwrap(), svc.state("y").unwrap()), live);
    drop(svc);
    fs::remove_file(dir.path().join("x.snapshot.json")).unwrap();
    fs::write(dir.path().join("y.snapshot.json"), b"{not json").unwrap();
    let svc = service(dir.path());
    assert_eq!((svc.state("x").unwrap(), svc.state("y").unwrap()), live);
    svc.ingest_batch("y", vec![Observation::control(0.1)]).unwrap();
}

#[test]
fn torn_tail_is_cut_and_prefix_kept() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.jsonl");
    let before = {
        let svc = service(dir.path());
        session(&svc, 4);
        svc.state("y").unwrap()
    };
    let good_len = fs::metadata(&path).unwrap().len();
    let mut f = OpenOptions::new().append(true).open(&path).unwrap();
    f.write_all(br#"{"seq":99,"experiment_id":"x","event":{"kind":"observ"#).unwrap();
    drop(f);

    let err = replay_log(&fs::read(&path).unwrap()).unwrap_err();
    assert_eq!(err.kind, ReplayErrorKind::Truncated);
    assert_eq!(err.valid_len, good_len);

    let svc = service(dir.path());
    assert_eq!(fs::metadata(&path).unwrap().len(), good_len);
    assert_eq!(svc.state("y").unwrap(), before);
    assert_eq!(svc.get_snapshot("x").unwrap().status, Status::Stopped);
}

#[test]
fn corrupt_record_fails_with_position() {
    let dir = tempfile::tempdir().unwrap();
    {
        let svc = service(dir.path());
        session(&svc, 4);
    }
    let path = dir.path().join("y.jsonl");
    let text = fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let bad: String = lines
        .iter()
        .enumerate()
        .map(|(i, l)| if i == 4 { "{\"garbage\":true}\n".to_string() } else { format!("{l}\n") })
        .collect();
    fs::write(&path, &bad).unwrap();
    fs::remove_file(dir.path().join("y.snapshot.json")).ok();

    let err = replay_log(bad.as_bytes()).unwrap_err();
    assert_eq!(err.kind, ReplayErrorKind::Corrupt);
    assert_eq!(err.position.line, 5);
    assert_eq!(err.events, 4);
    assert_eq!(err.recovered.as_ref().unwrap().as_of, 4);
    let offset: usize = lines[..4].iter().map(|l| l.len() + 1).sum();
    assert_eq!(err.position.byte_offset, offset as u64);

    let mut opts = ServiceOptions::new(dir.path());
    opts.sync = false;
    match Service::open(opts) {
        Err(ServiceError::Corrupt { source, .. }) => assert_eq!(source.position.line, 5),
        other => panic!("expected corrupt log, got {:?}", other.err()),
    }
}

#[test]
fn out_of_order_and_foreign_records_are_corrupt() {
    let dir = tempfile::tempdir().unwrap();
    {
        let svc = service(dir.path());
        svc.create_experiment(bernoulli("a")).unwrap();
        svc.ingest_batch("a", vec![Observation::control(1.0)]).unwrap();
    }
    let text = fs::read_to_string(dir.path().join("a.jsonl")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let swapped = format!("{}\n{}\n", lines[1], lines[0]);
    assert_eq!(replay_log(swapped.as_bytes()).unwrap_err().position.line, 1);
    let dup = format!("{}\n{}\n{}\n", lines[0], lines[1], lines[1]);
    assert_eq!(replay_log(dup.as_bytes()).unwrap_err().position.line, 3);
    let foreign = format!("{}\n{}\n", lines[0], lines[1].replace("\"experiment_id\":\"a\"", "\"experiment_id\":\"b\""));
    assert_eq!(replay_log(foreign.as_bytes()).unwrap_err().kind, ReplayErrorKind::Corrupt);
}

#[test]
fn csv_format() {
    let rows =
        parse_observations_csv(&b"timestamp,variation,value\n2015-06-01T00:00:00Z,control,1\nt2,treatment,0\n"[..])
            .unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0].observation, Observation::control(1.0));
    assert_eq!(rows[1].line, 3);
    assert!(parse_observations_csv(&b"timestamp,variation,value\n"[..]).unwrap().is_empty());

    let err = |text: &str| parse_observations_csv(text.as_bytes()).unwrap_err();
    assert_eq!(err("time,variation,value\n").line, 1);
    assert_eq!(err("").line, 1);
    assert_eq!(err("timestamp,variation,value\nt,control,1\nt,both,1\n").line, 3);
    assert_eq!(err("timestamp,variation,value\nt,control,abc\n").line, 2);
    assert_eq!(err("timestamp,variation,value\nt,control,1\nt,control\n").line, 3);
    assert_eq!(err("timestamp,variation,value\nt,control,NaN\n").line, 2);
}

#[test]
fn config_file_and_env() {
    let c: ServeConfig = toml::from_str("listen = \"0.0.0.0:9000\"\ndefault_tau_sq = 0.25\n").unwrap();
    assert_eq!(c.listen, "0.0.0.0:9000");
    assert_eq!(c.default_levels, DEFAULT_LEVELS.to_vec());
    assert!(toml::from_str::<ServeConfig>("bogus = 1\n").is_err());
    let c = c.with_env(|k| (k == ENV_DATA_DIR).then(|| "/tmp/elsewhere".to_string()));
    assert_eq!(c.data_dir, PathBuf::from("/tmp/elsewhere"));
    assert_eq!(c.listen, "0.0.0.0:9000");
    let bad = ServeConfig { default_levels: vec![1.5], ..ServeConfig::default() };
    assert!(bad.validate().is_err());
    assert!(matches!(ServeConfig::load(Some(Path::new("/nonexistent/cfg.toml"))), Err(ConfigError::Io { .. })));
}
