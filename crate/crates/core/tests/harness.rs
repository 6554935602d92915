use spirit_core::dataset::HORIZONS_MINUTES;
use spirit_core::harness::*;
use spirit_core::metrics::{HorizonMetrics, Metrics, MetricsReport};
use spirit_core::synthetic::{generate_site, SitePreset};
use spirit_core::{Error, ErrorKind};

fn site(preset: SitePreset, seed: u64, days: usize) -> SiteData {
    let out = generate_site(&preset.config(seed, days)).unwrap();
    SiteData::new(out.dataset, out.store)
}

fn tiny() -> PipelineConfig {
    let mut cfg = PipelineConfig::benchmark();
    cfg.gbdt.n_estimators = 20;
    cfg.forecaster.model_dim = Some(8);
    cfg.forecaster.mlp_blocks = Some(1);
    cfg.train.epochs = 1;
    cfg.finetune.steps = Some(10);
    cfg.finetune.learning_rate = 0.001;
    cfg.finetune_trees = 5;
    cfg.window_stride = 8;
    cfg
}

#[test]
fn zero_weeks_reproduces_zero_shot() {
    let (source, target) = (site(SitePreset::Source, 0, 12), site(SitePreset::Target, 0, 22));
    let cfg = tiny();
    let (zs, models) = run_zero_shot(&source, &target, &cfg, Tasks::BOTH, 4, false, Some(0), &RunSink::none()).unwrap();
    let spec = SweepSpec {
        weeks: vec![0, 2],
        seeds: vec![4],
        tasks: Tasks::BOTH,
        selection: Default::default(),
    };
    let sweep = run_finetune_sweep(&source, &target, &spec, &cfg, &models, Some(0), &RunSink::none()).unwrap();
    for task in [Task::Nowcast, Task::Forecast] {
        let a = zs.find(task, "spirit", None, 4, EVAL_TARGET).unwrap();
        let b = sweep.find(task, "zero_shot", Some(0), 4, EVAL_TARGET).unwrap();
        assert_eq!(a.report, b.report, "{task:?}");
        let tuned = sweep.find(task, "finetuned", Some(2), 4, EVAL_TARGET_REMAINDER).unwrap();
        assert_eq!(tuned.frozen_parameters_intact, Some(true));
        // the held-out remainder excludes the two fine-tuning weeks
        let zs2 = sweep.find(task, "zero_shot", Some(2), 4, EVAL_TARGET_REMAINDER).unwrap();
        assert!(zs2.report.overall.n < b.report.overall.n);
        assert_eq!(zs2.report.overall.n, tuned.report.overall.n);
    }
    assert!(sweep.find(Task::Forecast, "finetuned", Some(0), 4, EVAL_TARGET).is_none());
    // one comparison per nonzero weeks value and task
    assert_eq!(sweep.comparisons.len(), 2);
    assert!(sweep.comparisons.iter().all(|c| c.pairs == 0 || c.weeks == Some(2)));
}

#[test]
fn runs_persist_and_reload_identically() {
    let source = site(SitePreset::Source, 1, 10);
    let cfg = tiny();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut outs = Vec::new();
    for d in &dirs {
        let (out, _) = run_ablation(AblationKind::NoFutureCovariates, &source, None, &cfg, &[0, 1], Some(1), &RunSink::new(d.path())).unwrap();
        outs.push(out);
    }
    let loaded = load_records(dirs[0].path()).unwrap();
    assert_eq!(loaded.len(), 4);
    let mut in_memory = outs[0].records.clone();
    in_memory.sort_by(|a, b| a.run_id.cmp(&b.run_id));
    assert_eq!(loaded, in_memory);
    for r in &loaded {
        let rel = r.checkpoint.as_deref().unwrap();
        let a = std::fs::read(dirs[0].path().join(&r.run_id).join(rel)).unwrap();
        let b = std::fs::read(dirs[1].path().join(&r.run_id).join(rel)).unwrap();
        assert_eq!(a, b);
        for f in ["record.json", "config.json"] {
            assert_eq!(
                std::fs::read(dirs[0].path().join(&r.run_id).join(f)).unwrap(),
                std::fs::read(dirs[1].path().join(&r.run_id).join(f)).unwrap()
            );
        }
        assert!(!dirs[0].path().join(&r.run_id).join("timing.json").exists());
    }
    let c = &outs[0].comparisons[0];
    assert_eq!(c.pairs, 2 * HORIZONS_MINUTES.len());
    assert_eq!((c.baseline.as_str(), c.candidate.as_str()), AblationKind::NoFutureCovariates.variants());
}

#[test]
fn unknown_ablation_kind_is_a_usage_error() {
    let e = AblationKind::parse("no_clouds").unwrap_err();
    assert_eq!(e.kind(), ErrorKind::Usage);
    let source = site(SitePreset::Source, 0, 4);
    let e = run_ablation(AblationKind::StubVsFileEmbeddings, &source, None, &tiny(), &[0], None, &RunSink::none()).unwrap_err();
    assert_eq!(e.kind(), ErrorKind::Usage);
    assert!(run_ablation(AblationKind::RegressorVariant, &source, None, &tiny(), &[], None, &RunSink::none()).is_err());
}

#[test]
fn embedding_dim_mismatch_is_refused() {
    let source = site(SitePreset::Source, 0, 4);
    let mut cfg = SitePreset::Target.config(0, 4);
    cfg.embedding.dim = 12;
    let out = generate_site(&cfg).unwrap();
    let target = SiteData::new(out.dataset, out.store);
    let e = run_zero_shot(&source, &target, &tiny(), Tasks::NOWCAST, 0, false, None, &RunSink::none()).unwrap_err();
    assert!(matches!(e, Error::DimMismatch { expected: 16, got: 12 }), "{e}");
    let spec = SweepSpec {
        weeks: vec![1],
        seeds: vec![0],
        tasks: Tasks::NOWCAST,
        selection: Default::default(),
    };
    assert!(matches!(
        run_finetune_sweep(&source, &target, &spec, &tiny(), &[], None, &RunSink::none()),
        Err(Error::DimMismatch { .. })
    ));
}

fn metrics(nmap: f64) -> Metrics {
    Metrics {
        nmap,
        mae: nmap * 2.0,
        rmse: nmap * 3.0,
        r2: 1.0 - nmap / 100.0,
        n: 10,
    }
}

fn record(variant: &str, seed: u64, nmaps: [f64; 4]) -> RunRecord {
    let overall = nmaps.iter().sum::<f64>() / 4.0;
    RunRecord {
        run_id: format!("{variant}-{seed}"),
        kind: ExperimentKind::Finetune,
        task: Task::Forecast,
        variant: variant.to_string(),
        source_site: "A".into(),
        target_site: "B".into(),
        evaluated_on: EVAL_TARGET_REMAINDER.into(),
        weeks: Some(4),
        seeds: Seeds {
            data: Some(0),
            split: seed,
            train: seed,
        },
        config_hash: "0".repeat(64),
        checkpoint: None,
        frozen_parameters_intact: Some(true),
        report: MetricsReport {
            units: "W/m2".into(),
            overall: metrics(overall),
            per_horizon: HORIZONS_MINUTES
                .iter()
                .zip(nmaps)
                .map(|(&h, v)| HorizonMetrics {
                    horizon_minutes: h,
                    metrics: metrics(v),
                })
                .collect(),
        },
    }
}

/// Deterministic spread that does not shrink with more seeds.
fn jitter(seed: u64, h: usize) -> f64 {
    [-1.5, 0.7, 1.1, -0.4, 0.2, -0.9, 1.4, -0.6, 0.3, -0.3][(seed as usize * 3 + h) % 10]
}

fn records(seeds: u64) -> Vec<RunRecord> {
    let mut out = Vec::new();
    for s in 0..seeds {
        let z: [f64; 4] = std::array::from_fn(|h| 20.0 + 2.0 * h as f64 + jitter(s, h));
        let f: [f64; 4] = std::array::from_fn(|h| z[h] - 3.0 + 0.5 * jitter(s + 5, h));
        out.push(record("zero_shot", s, z));
        out.push(record("finetuned", s, f));
    }
    out
}

#[test]
fn pairing_uses_shared_seeds_and_horizons() {
    let mut rs = records(5);
    // an unmatched candidate seed and a record from another scope
    rs.push(record("finetuned", 99, [1.0; 4]));
    let mut other = record("zero_shot", 99, [50.0; 4]);
    other.weeks = Some(8);
    rs.push(other);
    let scope = ComparisonScope {
        kind: ExperimentKind::Finetune,
        task: Task::Forecast,
        evaluated_on: EVAL_TARGET_REMAINDER,
        weeks: Some(4),
    };
    let c = compare_variants(&rs, scope, "zero_shot", "finetuned");
    assert_eq!(c.pairs, 5 * 4);
    let t = c.test.unwrap();
    assert_eq!(t.dof, 19);
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for s in 0..5 {
        for h in 0..4 {
            a.push(rs[2 * s as usize].report.per_horizon[h].metrics.nmap);
            b.push(rs[2 * s as usize + 1].report.per_horizon[h].metrics.nmap);
        }
    }
    let d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
    assert!((t.mean_difference - d.iter().sum::<f64>() / 20.0).abs() < 1e-12);
    assert!(t.t > 0.0);
    let mut wrong_scope = scope;
    wrong_scope.evaluated_on = EVAL_TARGET;
    let none = compare_variants(&rs, wrong_scope, "zero_shot", "finetuned");
    assert_eq!(none.pairs, 0);
    assert!(none.test.is_none() && none.note.is_some());
    assert_eq!(standard_comparisons(&rs).len(), 1);
}

#[test]
fn interval_narrows_with_more_seeds() {
    let width = |n: u64| {
        let pts = curve_points(&records(n)).unwrap();
        let p = pts
            .iter()
            .find(|p| p.variant == "zero_shot" && p.metric == "nmap" && p.horizon_minutes == Some(120))
            .unwrap();
        assert_eq!(p.n, n as usize);
        p.ci_high - p.ci_low
    };
    let (w3, w10) = (width(3), width(10));
    assert!(w10 < w3, "{w10} vs {w3}");
}

#[test]
fn curve_csv_carries_record_values() {
    let rs = records(4);
    let pts = curve_points(&rs).unwrap();
    let csv = curves_csv(&pts);
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "kind,task,variant,evaluated_on,weeks,horizon_minutes,metric,n,mean,ci_low,ci_high");
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), pts.len());
    for (row, p) in rows.iter().zip(&pts) {
        assert_eq!(row[8].parse::<f64>().unwrap(), p.mean);
        assert_eq!(row[9].parse::<f64>().unwrap(), p.ci_low);
        assert_eq!(row[10].parse::<f64>().unwrap(), p.ci_high);
    }
    // the mean of a cell is the plain mean of the records in it
    for p in pts.iter().filter(|p| p.metric == "nmap") {
        let vals: Vec<f64> = rs
            .iter()
            .filter(|r| r.variant == p.variant)
            .map(|r| match p.horizon_minutes {
                None => r.report.overall.nmap,
                Some(h) => r.report.per_horizon.iter().find(|x| x.horizon_minutes == h).unwrap().metrics.nmap,
            })
            .collect();
        assert!((p.mean - vals.iter().sum::<f64>() / vals.len() as f64).abs() < 1e-12);
    }
    assert!(curve_points(&[]).is_err());
}

#[test]
fn config_hash_tracks_every_field() {
    let a = PipelineConfig::benchmark();
    let mut b = a.clone();
    assert_eq!(a.hash(), b.hash());
    b.gbdt.lambda += 1e-9;
    assert_ne!(a.hash(), b.hash());
    let mut bad = a.clone();
    bad.holdout_fraction = 1.0;
    assert_eq!(bad.validate().unwrap_err().kind(), ErrorKind::Usage);
}
