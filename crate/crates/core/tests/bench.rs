use upliftlab::bench::*;
use upliftlab::*;

fn quick_spec(source: DataSource) -> ExperimentSpec {
    let mut spec = ExperimentSpec::new(source);
    spec.runs = 2;
    spec.grid = HyperGrid { eta: vec![0.05, 0.2], lambda1: vec![0.0], lambda2: vec![0.0, 0.001], hidden: vec![4] };
    spec.schedule.epochs = 8;
    spec.schedule.patience = 3;
    spec
}

fn small_scenario() -> Scenario {
    Scenario::get(1).unwrap().with_n(1500).with_p(12)
}

fn partitions(seed: u64) -> (Dataset, Dataset, Dataset) {
    let data = generate_dataset(&small_scenario(), seed).unwrap();
    split(&data, SplitFractions::default(), seed).unwrap()
}

#[test]
fn single_cell_grid_returns_that_cell() {
    let (train, valid, _) = partitions(1);
    let method = MethodSpec::new(ArchKind::Interaction, LossKind::Uplift, RegKind::L1);
    let cell = Cell { eta: 0.1, lambda1: 0.0, lambda2: 0.001, hidden: 0 };
    let out = grid_search(&method, &[cell], &Schedule::default(), &train, &valid, 2).unwrap();
    assert_eq!(out.best.cell, cell);
    assert_eq!(out.scores.len(), 1);
}

#[test]
fn duplicate_cells_do_not_change_the_winner() {
    let (train, valid, _) = partitions(3);
    let method = MethodSpec::new(ArchKind::Hidden1, LossKind::Uplift, RegKind::L1);
    let schedule = Schedule { epochs: 5, ..Schedule::default() };
    let cells = HyperGrid { eta: vec![0.05, 0.2], lambda1: vec![0.0, 0.001], lambda2: vec![0.0], hidden: vec![4] }
        .cells(ArchKind::Hidden1);
    let base = grid_search(&method, &cells, &schedule, &train, &valid, 4).unwrap();
    for dup in 0..cells.len() {
        let mut with_dup = cells.clone();
        with_dup.push(cells[dup]);
        let again = grid_search(&method, &with_dup, &schedule, &train, &valid, 4).unwrap();
        assert_eq!(again.best.cell, base.best.cell);
        assert_eq!(again.best.index, base.best.index);
        assert_eq!(again.scores[cells.len()], again.scores[dup]);
    }
}

#[test]
fn winner_scores_at_least_as_well_as_every_cell() {
    let (train, valid, _) = partitions(5);
    let method = MethodSpec::new(ArchKind::Interaction, LossKind::BceOnly, RegKind::L1);
    let cells = [
        Cell { eta: 0.1, lambda1: 0.0, lambda2: 0.0, hidden: 0 },
        Cell { eta: 0.1, lambda1: 0.0, lambda2: 0.001, hidden: 0 },
    ];
    let out = grid_search(&method, &cells, &Schedule::default(), &train, &valid, 6).unwrap();
    for s in out.scores.iter().flatten() {
        assert!(out.best.valid_q_adj >= *s);
    }
    assert!(grid_search(&method, &[], &Schedule::default(), &train, &valid, 6).is_err());
}

#[test]
fn single_run_matches_manual_pipeline() {
    let mut spec = quick_spec(DataSource::Scenario(small_scenario()));
    spec.runs = 1;
    spec.base_seed = 40;
    let result = run_benchmark(&spec).unwrap();

    let (train, valid, test) = run_data(&spec, None, 1).unwrap();
    let generated = generate_dataset(&small_scenario(), 41).unwrap();
    assert_eq!(train.n() + valid.n() + test.n(), generated.n());
    for (method, record) in spec.methods.iter().zip(&result.runs) {
        let cells = spec.grid.cells(method.arch);
        let out = grid_search(method, &cells, &spec.schedule, &train, &valid, 41).unwrap();
        let report = score(&out.best.params, &test, spec.schedule.eval).unwrap();
        assert_eq!(record.cell, out.best.cell);
        assert_eq!(record.test.q_adj, report.q_adj);
        assert_eq!(record.seed, 41);
    }
}

#[test]
fn summary_statistics_match_per_run_file() {
    let mut spec = quick_spec(DataSource::Scenario(small_scenario()));
    spec.runs = 3;
    let result = run_benchmark(&spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    result.write(dir.path()).unwrap();

    let runs = std::fs::read_to_string(dir.path().join("runs.csv")).unwrap();
    let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    for line in summary.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        let values: Vec<f64> = runs
            .lines()
            .skip(1)
            .map(|l| l.split(',').collect::<Vec<_>>())
            .filter(|c| c[1] == cols[0])
            .map(|c| c[11].parse().unwrap())
            .collect();
        assert_eq!(values.len(), 3);
        let mean = values.iter().sum::<f64>() / 3.0;
        let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 2.0).sqrt();
        let reported_mean: f64 = cols[2].parse().unwrap();
        let reported_se: f64 = cols[3].parse().unwrap();
        assert!((reported_mean - mean).abs() < 1e-12);
        assert!((reported_se - sd / 3f64.sqrt()).abs() < 1e-12);
    }
    for m in &spec.methods {
        let curve = dir.path().join(format!("curve_{}.csv", m.label));
        assert!(std::fs::read_to_string(curve).unwrap().starts_with("phi,g,Q\n"));
    }
}

#[test]
fn csv_source_is_resplit_per_run() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.csv");
    generate_dataset(&small_scenario(), 50).unwrap().save_csv(&path).unwrap();
    let mut spec = quick_spec(DataSource::Csv(path.clone()));
    spec.methods.truncate(1);
    let result = run_benchmark(&spec).unwrap();
    assert_eq!(result.runs.len(), 2);
    let (a, _, _) = run_data(&spec, None, 1).unwrap();
    let (b, _, _) = run_data(&spec, None, 2).unwrap();
    assert_ne!(a, b);
}

#[test]
fn hidden_methods_report_active_nodes() {
    let mut spec = quick_spec(DataSource::Scenario(small_scenario()));
    spec.runs = 1;
    spec.methods = vec![MethodSpec::new(ArchKind::Hidden1, LossKind::Uplift, RegKind::L1)];
    let result = run_benchmark(&spec).unwrap();
    let m = result.rows[0].mean_active_nodes.unwrap();
    assert!(m > 0.0 && m <= 4.0);
    assert!(result.rows[0].se.is_nan());
}

#[test]
fn invalid_specs_are_rejected() {
    let mut spec = quick_spec(DataSource::Scenario(small_scenario()));
    spec.runs = 0;
    assert!(run_benchmark(&spec).is_err());
    let mut spec = quick_spec(DataSource::Scenario(small_scenario()));
    spec.grid.eta.clear();
    assert!(matches!(run_benchmark(&spec), Err(Error::EmptyGrid)));
    let spec = quick_spec(DataSource::Csv("/nonexistent/data.csv".into()));
    assert!(run_benchmark(&spec).is_err());
}
