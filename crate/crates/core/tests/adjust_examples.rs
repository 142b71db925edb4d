//! Counterfactual swaps against synthetic truths with known structure.

mod common;

use common::*;
use riskineq::adjust::{coefficient_swap, covariate_swap, decompose, triangle_report, TriangleOp};
use riskineq::compare::{kde_with, l1_distance, KdeOptions};
use riskineq::data::{generate_synthetic, select, CovariateRule, Predicate, SyntheticSpec};
use riskineq::measures::RiskDistribution;
use riskineq::model::{fit, FittedModel, ModelSpec, NumericBasis};
use riskineq::stats::median;

fn two_years(truth: &SyntheticSpec, model: &ModelSpec, seed: u64) -> (FittedModel, Vec<usize>, Vec<usize>) {
    let (ds, _) = generate_synthetic(truth, seed).unwrap();
    let r = fit(model, &ds, &mcmc(2, 300, 100, seed)).unwrap();
    let base = select(&ds, &Predicate::eq("year", 1990)).unwrap();
    let target = select(&ds, &Predicate::eq("year", 1991)).unwrap();
    (r.model, base, target)
}

fn median_l1(model: &FittedModel, adjusted: impl Fn(usize) -> RiskDistribution, other: &[usize]) -> f64 {
    let opts = KdeOptions::default();
    let values: Vec<f64> = (0..model.n_draws())
        .map(|l| {
            let a = kde_with(&adjusted(l), &opts).unwrap();
            let b = kde_with(&RiskDistribution::from_draw(&model.risks, l, other).unwrap(), &opts).unwrap();
            l1_distance(&a, &b).unwrap()
        })
        .collect();
    median(&values)
}

/// Quiet random effects so two synthetic years differ mainly through the
/// channel under test.
fn quiet(mut truth: SyntheticSpec) -> SyntheticSpec {
    truth.years = vec![1990, 1991];
    truth.nesting.mothers_per_cluster = 60;
    truth.variances.mother = 0.05;
    truth.variances.cluster = 0.05;
    truth
}

fn year_model() -> ModelSpec {
    let mut m = ModelSpec::new(&["sex", "wealth", "age", "year"]);
    m.interactions = false;
    m.default_numeric_basis = NumericBasis::Linear;
    m
}

#[test]
fn identical_populations_swap_to_themselves() {
    let (ds, _) = generate_synthetic(&desk_truth(), 1).unwrap();
    let r = fit(&desk_model(), &ds, &mcmc(1, 100, 20, 1)).unwrap();
    let rows: Vec<usize> = (0..ds.len()).collect();
    let coef = coefficient_swap(&r.model, &rows, &rows, 3).unwrap();
    let cov = covariate_swap(&r.model, &rows, &rows, "wealth", &[], 3).unwrap();
    // Same records, same years: only the resampling changes which donor
    // value each birth gets, so compare distributions rather than vectors.
    for l in [0, 10, 19] {
        let own = RiskDistribution::from_draw(&r.model.risks, l, &rows).unwrap();
        assert!((coef.draw(&r.model, l).unwrap().mean() - own.mean()).abs() < 0.01);
        assert!((cov.draw(&r.model, l).unwrap().mean() - own.mean()).abs() < 0.01);
    }
    let single_year: Vec<usize> = select(&ds, &Predicate::eq("year", 1995)).unwrap();
    let same = coefficient_swap(&r.model, &single_year, &single_year, 3).unwrap();
    for l in [0, 19] {
        let own = r.model.risks.draw_subset(l, &single_year);
        let swapped = same.draw(&r.model, l).unwrap();
        for (a, b) in own.iter().zip(swapped.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn coefficient_swap_reproduces_an_intercept_shift() {
    let mut truth = quiet(desk_truth());
    truth.year_effects.insert(1991, -0.6);
    let (model, base, target) = two_years(&truth, &year_model(), 11);
    let unadjusted = median_l1(&model, |l| RiskDistribution::from_draw(&model.risks, l, &base).unwrap(), &target);
    let swap = coefficient_swap(&model, &base, &target, 5).unwrap();
    let adjusted = median_l1(&model, |l| swap.draw(&model, l).unwrap(), &target);
    assert!(unadjusted > 0.15, "years should differ: {unadjusted}");
    assert!(adjusted < 0.05, "coefficient swap L1 {adjusted}");
}

#[test]
fn shared_coefficients_make_covariates_the_whole_story() {
    let truth = quiet(wealth_shift_truth());
    let (model, base, target) = two_years(&truth, &desk_model(), 12);
    // Covariates from the target, coefficients from the base: no coefficient
    // differs, so this is the target population.
    let swap = coefficient_swap(&model, &target, &base, 6).unwrap();
    let adjusted = median_l1(&model, |l| swap.draw(&model, l).unwrap(), &target);
    assert!(adjusted < 0.05, "L1 {adjusted}");
}

#[test]
fn covariate_swaps_follow_the_truth() {
    let mut truth = quiet(wealth_shift_truth());
    // sex has no effect; wealth is the only covariate whose distribution moves
    if let CovariateRule::Categorical { effects, .. } = &mut truth.covariates[0].rule {
        *effects = vec![0.0, 0.0];
    }
    let (model, base, target) = two_years(&truth, &desk_model(), 13);

    let null_swap = covariate_swap(&model, &base, &target, "sex", &[], 7).unwrap();
    let to_base = median_l1(&model, |l| null_swap.draw(&model, l).unwrap(), &base);
    assert!(to_base < 0.05, "zero-effect swap moved the base: {to_base}");

    let wealth = covariate_swap(&model, &base, &target, "wealth", &[], 8).unwrap();
    let to_target = median_l1(&model, |l| wealth.draw(&model, l).unwrap(), &target);
    assert!(to_target < 0.05, "wealth swap L1 to target {to_target}");

    let conditional = covariate_swap(&model, &base, &target, "wealth", &["sex".to_string()], 9).unwrap();
    assert!(conditional.warnings.is_empty(), "{:?}", conditional.warnings);
    let cond_l1 = median_l1(&model, |l| conditional.draw(&model, l).unwrap(), &target);
    assert!(cond_l1 < 0.05, "conditional swap L1 {cond_l1}");
}

#[test]
fn decomposition_rows_and_triangle() {
    let truth = quiet(wealth_shift_truth());
    let (model, base, target) = two_years(&truth, &desk_model(), 14);
    let covs = vec!["sex".to_string(), "wealth".to_string(), "age".to_string()];
    let rows = decompose(&model, &base, &target, &covs, &[], &KdeOptions::default(), 1).unwrap();
    let names: Vec<&str> = rows.iter().map(|r| r.adjustment.as_str()).collect();
    assert_eq!(names, ["none", "coefficients", "covariate:sex", "covariate:wealth", "covariate:age"]);
    for r in &rows {
        assert_eq!(r.l1_draws.len(), model.n_draws());
        assert!(r.l1.lo <= r.l1.median && r.l1.median <= r.l1.hi);
        assert!(r.kl_draws.iter().all(|&k| k >= 0.0));
    }
    let none = &rows[0];
    let wealth = &rows[3];
    assert!(wealth.l1.median < 0.5 * none.l1.median);

    let p0 = RiskDistribution::from_draw(&model.risks, 0, &base).unwrap();
    let p1 = RiskDistribution::from_draw(&model.risks, 0, &target).unwrap();
    let swap = covariate_swap(&model, &base, &target, "wealth", &[], 2).unwrap();
    let pa = swap.draw(&model, 0).unwrap();
    let t = triangle_report(&p0, &pa, &p1, TriangleOp::L1, &KdeOptions::default()).unwrap();
    assert!(t.holds && t.slack >= -1e-12);
    let t = triangle_report(&p0, &pa, &p1, TriangleOp::RelativeMean, &KdeOptions::default()).unwrap();
    assert_eq!(t.ordering_ok, Some(true), "wealth-adjusted mean should sit between the two years");
}
