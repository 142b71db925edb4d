//! Dataset I/O, selection, fitting and persistence working together.

mod common;

use common::*;
use riskineq::compare::{compare_selections, KdeOptions, Metric};
use riskineq::data::{generate_synthetic, read_csv, select, write_csv, CovariateSchema, Predicate};
use riskineq::measures::{posterior_measures, summarize_measures, Measure};
use riskineq::model::{fit, FittedModel};
use riskineq::Error;

#[test]
fn csv_round_trip_keeps_the_content_hash() {
    let truth = desk_truth();
    let (ds, _) = generate_synthetic(&truth, 5).unwrap();
    let mut bytes = Vec::new();
    write_csv(&ds, &mut bytes).unwrap();
    let schema = CovariateSchema::from_json(&ds.schema().to_json()).unwrap();
    let back = read_csv(bytes.as_slice(), &schema).unwrap();
    assert_eq!(back.len(), ds.len());
    assert_eq!(back.content_hash(), ds.content_hash());
}

#[test]
fn selections_partition_by_year() {
    let (ds, _) = generate_synthetic(&desk_truth(), 6).unwrap();
    let mut total = 0;
    for y in ds.years() {
        let rows = select(&ds, &Predicate::eq("year", y)).unwrap();
        assert!(rows.iter().all(|&r| ds.records()[r].birth_year == y));
        total += rows.len();
    }
    assert_eq!(total, ds.len());
    assert!(matches!(
        select(&ds, &Predicate::eq("no_such_field", 1)),
        Err(Error::UnknownField(_))
    ));
}

#[test]
fn fitted_risks_track_the_true_risks() {
    let (ds, truth) = generate_synthetic(&desk_truth(), 7).unwrap();
    let r = fit(&desk_model(), &ds, &mcmc(2, 400, 200, 7)).unwrap();
    assert!(r.diagnostics.warnings.is_empty(), "{:?}", r.diagnostics.warnings);
    let post = riskineq::model::posterior_mean_risks(&r.model.risks);
    let n = post.len() as f64;
    let (mx, my) = (post.iter().sum::<f64>() / n, truth.risks.iter().sum::<f64>() / n);
    let cov: f64 = post.iter().zip(&truth.risks).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = post.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = truth.risks.iter().map(|b| (b - my).powi(2)).sum();
    let corr = cov / (vx * vy).sqrt();
    assert!(corr > 0.5, "posterior mean risks correlate {corr} with the truth");
    assert!((mx - my).abs() < 0.02, "mean risk {mx} vs true {my}");
}

#[test]
fn saved_fit_reloads_and_downstream_results_match() {
    let (ds, _) = generate_synthetic(&desk_truth(), 8).unwrap();
    let settings = mcmc(2, 100, 40, 8);
    let r = fit(&desk_model(), &ds, &settings).unwrap();
    let dir = tempfile::tempdir().unwrap();
    r.model.save(dir.path(), &settings, &r.diagnostics).unwrap();
    let (loaded, config, diagnostics) = FittedModel::load(dir.path()).unwrap();
    assert_eq!(loaded.risks, r.model.risks);
    assert_eq!(loaded.params, r.model.params);
    assert_eq!(config.mcmc, settings);
    assert_eq!(diagnostics, r.diagnostics);

    let early = select(&ds, &Predicate::eq("year", 1990)).unwrap();
    let late = select(&ds, &Predicate::eq("year", 1999)).unwrap();
    let opts = KdeOptions::default();
    let a = compare_selections(&r.model.risks, &early, &late, Metric::L1, &opts).unwrap();
    let b = compare_selections(&loaded.risks, &early, &late, Metric::L1, &opts).unwrap();
    assert_eq!(a, b);

    let summary = summarize_measures(&posterior_measures(&loaded.risks, &late).unwrap());
    let gini = summary.iter().find(|s| s.measure == Measure::Gini).unwrap();
    assert!(gini.mortality.lo <= gini.mortality.median && gini.mortality.median <= gini.mortality.hi);
}
