use primdiff::bench::{run_benchmark, summarize, trials_csv, write_report, BenchReport, Metric, SourceLabel, SourceResources};
use primdiff::dynamics::ModelId;
use primdiff::planner::{PlannerConfig, SourceSpec};
use primdiff::world::ProblemInstance;

fn open_instance(goal_x: f64) -> ProblemInstance {
    ProblemInstance::empty(ModelId::Unicycle1, 4.0, 3.0, vec![1.0, 1.5, 0.0], vec![goal_x, 1.5, 0.0])
}

fn quick() -> PlannerConfig {
    PlannerConfig { time_limit: 30.0, max_iterations: Some(1), ..PlannerConfig::default() }
}

#[test]
fn records_cover_every_instance_trial_and_source() {
    let instances = vec![("a".to_string(), open_instance(2.0)), ("b".to_string(), open_instance(2.5))];
    let recs = run_benchmark(&instances, 3, &quick(), &quick(), &SourceResources::default(), 1).unwrap();
    assert_eq!(recs.len(), 12);
    let mut sorted = recs.clone();
    sorted.sort_by(|x, y| (&x.instance, x.source, x.seed).cmp(&(&y.instance, y.source, y.seed)));
    assert_eq!(sorted, recs);
    // every source of every trial gets its own seed
    let mut seeds: Vec<u64> = recs.iter().map(|r| r.seed).collect();
    seeds.sort();
    seeds.dedup();
    assert_eq!(seeds.len(), 12);
    assert_eq!(trials_csv(&recs).lines().count(), 13);
}

#[test]
fn failing_source_has_zero_rate_and_no_regrets() {
    let instances = vec![("a".to_string(), open_instance(2.0))];
    let missing = PlannerConfig {
        source: SourceSpec::DiffusionModel { models: "/nonexistent/models".into() },
        ..quick()
    };
    let recs = run_benchmark(&instances, 2, &quick(), &missing, &SourceResources::default(), 2).unwrap();
    let s = summarize(&recs).unwrap();
    assert_eq!(s.p_model, 0.0);
    assert!(s.p_baseline > 0.0);
    for m in Metric::ALL {
        assert!(s.regrets[&m].model.is_empty());
        assert_eq!(s.median(m), None);
    }
    assert!(recs.iter().filter(|r| r.source == SourceLabel::Model).all(|r| !r.success));
}

#[test]
fn mismatched_time_limits_are_rejected() {
    let instances = vec![("a".to_string(), open_instance(2.0))];
    let other = PlannerConfig { time_limit: 1.0, ..quick() };
    assert!(run_benchmark(&instances, 1, &quick(), &other, &SourceResources::default(), 0).is_err());
}

#[test]
fn report_files_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let instances = vec![("a".to_string(), open_instance(2.0))];
    let recs = run_benchmark(&instances, 2, &quick(), &quick(), &SourceResources::default(), 3).unwrap();
    let report = BenchReport {
        summary: summarize(&recs).unwrap(),
        baseline_config: quick(),
        model_config: quick(),
        hardware: primdiff::bench::hardware_info(),
    };
    write_report(dir.path(), &recs, &report).unwrap();
    for f in ["trials.csv", "summary.json", "regret.svg"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    let csv = std::fs::read_to_string(dir.path().join("trials.csv")).unwrap();
    assert!(csv.starts_with("instance,source,seed,success,d,c_first,c_best,r_d,r_c_first,r_c_best\n"));
}
