//! Fixed-effect design: coding of each covariate, two-way interactions, and
//! the dense design matrix together with the random-effect unit indices.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{ModelSpec, NumericBasis};
use crate::data::{centered_year, BirthRecord, CovariateKind, CovariateValue, Dataset, Unit};
use crate::error::{Error, Result};
use crate::spline::{build_basis, SplineBasis};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum TermSource {
    /// Index into the schema's covariates.
    Covariate { index: usize },
    BirthYear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "coding", rename_all = "snake_case")]
pub enum TermCoding {
    /// Reference-level dummy coding. Levels never observed in the training
    /// data are coded as the reference.
    Categorical {
        levels: Vec<String>,
        reference: usize,
        observed: Vec<bool>,
    },
    /// B-spline main effect (first basis function dropped). Interactions use
    /// the standardized linear term `(x - center) / scale`.
    Spline {
        basis: SplineBasis,
        center: f64,
        scale: f64,
    },
    Linear {
        center: f64,
        scale: f64,
        range: (f64, f64),
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub name: String,
    pub source: TermSource,
    pub coding: TermCoding,
}

impl Term {
    fn main_width(&self) -> usize {
        match &self.coding {
            TermCoding::Categorical { levels, .. } => levels.len() - 1,
            TermCoding::Spline { basis, .. } => basis.basis_dim() - 1,
            TermCoding::Linear { .. } => 1,
        }
    }

    fn interaction_width(&self) -> usize {
        match &self.coding {
            TermCoding::Categorical { levels, .. } => levels.len() - 1,
            _ => 1,
        }
    }

    fn main_names(&self) -> Vec<String> {
        match &self.coding {
            TermCoding::Categorical {
                levels, reference, ..
            } => levels
                .iter()
                .enumerate()
                .filter(|(i, _)| i != reference)
                .map(|(_, l)| format!("{}[{}]", self.name, l))
                .collect(),
            TermCoding::Spline { basis, .. } => (1..basis.basis_dim())
                .map(|j| format!("{}:bs{}", self.name, j))
                .collect(),
            TermCoding::Linear { .. } => vec![self.name.clone()],
        }
    }

    fn interaction_names(&self) -> Vec<String> {
        match &self.coding {
            TermCoding::Categorical { .. } => self.main_names(),
            _ => vec![self.name.clone()],
        }
    }

    /// Level index used for coding, mapping unobserved levels to the reference.
    fn coded_level(&self, level: usize) -> usize {
        match &self.coding {
            TermCoding::Categorical {
                reference,
                observed,
                ..
            } => {
                if observed.get(level).copied().unwrap_or(false) {
                    level
                } else {
                    *reference
                }
            }
            _ => level,
        }
    }

    fn write_main(&self, v: CovariateValue, out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        match (&self.coding, v) {
            (TermCoding::Categorical { reference, .. }, CovariateValue::Level(l)) => {
                let l = self.coded_level(l);
                if l != *reference {
                    let slot = if l < *reference { l } else { l - 1 };
                    out[slot] = 1.0;
                }
            }
            (TermCoding::Spline { basis, .. }, CovariateValue::Number(x)) => {
                let mut row = vec![0.0; basis.basis_dim()];
                basis.evaluate_into(x, &mut row);
                out.copy_from_slice(&row[1..]);
            }
            (TermCoding::Linear { center, scale, range }, CovariateValue::Number(x)) => {
                out[0] = (x.clamp(range.0, range.1) - center) / scale;
            }
            _ => unreachable!("term value kind checked at construction"),
        }
    }

    fn write_interaction(&self, v: CovariateValue, out: &mut [f64]) {
        match (&self.coding, v) {
            (TermCoding::Categorical { .. }, _) => self.write_main(v, out),
            (TermCoding::Spline { basis, center, scale }, CovariateValue::Number(x)) => {
                let (a, b) = basis.boundary_knots;
                out[0] = (x.clamp(a, b) - center) / scale;
            }
            (TermCoding::Linear { .. }, _) => self.write_main(v, out),
            _ => unreachable!("term value kind checked at construction"),
        }
    }

    /// True when a numeric value falls outside the training range.
    fn is_out_of_range(&self, v: CovariateValue) -> bool {
        match (&self.coding, v) {
            (TermCoding::Spline { basis, .. }, CovariateValue::Number(x)) => {
                x < basis.boundary_knots.0 || x > basis.boundary_knots.1
            }
            (TermCoding::Linear { range, .. }, CovariateValue::Number(x)) => {
                x < range.0 || x > range.1
            }
            (TermCoding::Categorical { observed, .. }, CovariateValue::Level(l)) => {
                !observed.get(l).copied().unwrap_or(false)
            }
            _ => false,
        }
    }
}

/// Resolved coding of the fixed-effect part; serializable so a fitted model
/// can be reloaded without re-deriving knots or reference levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub terms: Vec<Term>,
    pub interactions: bool,
    pub column_names: Vec<String>,
    pub prior_variances: Vec<f64>,
    pub year_window: (i32, i32),
}

impl DesignSpec {
    /// Resolves reference levels, knots and standardization from the data.
    pub fn resolve(spec: &ModelSpec, dataset: &Dataset) -> Result<Self> {
        let schema = dataset.schema();
        let mut terms = Vec::with_capacity(spec.covariates.len());
        for name in &spec.covariates {
            if terms.iter().any(|t: &Term| &t.name == name) {
                return Err(Error::InvalidInput(format!("covariate `{name}` listed twice")));
            }
            let (source, categorical) = match dataset.covariate(name) {
                Some((index, cov)) => (TermSource::Covariate { index }, cov.kind.clone()),
                None if name == "year" => (
                    TermSource::BirthYear,
                    CovariateKind::Numeric {
                        min: None,
                        max: None,
                    },
                ),
                None => return Err(Error::UnknownField(name.clone())),
            };
            let coding = match categorical {
                CovariateKind::Categorical { levels, reference } => {
                    let TermSource::Covariate { index } = source else {
                        unreachable!()
                    };
                    let counts = dataset.level_counts(index);
                    let reference = match reference {
                        Some(r) => levels.iter().position(|l| *l == r).unwrap(),
                        // most frequent level; ties go to the earliest declared
                        None => counts
                            .iter()
                            .enumerate()
                            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
                            .map(|(i, _)| i)
                            .unwrap_or(0),
                    };
                    if levels.len() < 2 {
                        return Err(Error::InvalidInput(format!(
                            "categorical covariate `{name}` needs at least two levels"
                        )));
                    }
                    let observed = counts.iter().map(|&c| c > 0).collect();
                    TermCoding::Categorical {
                        levels,
                        reference,
                        observed,
                    }
                }
                CovariateKind::Numeric { .. } => {
                    let values: Vec<f64> = dataset
                        .records()
                        .iter()
                        .map(|r| term_value_of(&source, r).as_f64())
                        .collect();
                    if values.is_empty() {
                        return Err(Error::Degenerate(format!("no data for `{name}`")));
                    }
                    let center = crate::stats::mean(&values);
                    let scale = crate::stats::variance(&values).sqrt();
                    if !(scale > 0.0) {
                        return Err(Error::Degenerate(format!("numeric covariate `{name}` is constant")));
                    }
                    let basis = spec
                        .numeric_bases
                        .get(name)
                        .cloned()
                        .unwrap_or_else(|| spec.default_numeric_basis.clone());
                    match basis {
                        NumericBasis::Spline {
                            degree,
                            interior_knots,
                        } => {
                            let (basis, _) = build_basis(&values, degree, interior_knots)?;
                            TermCoding::Spline {
                                basis,
                                center,
                                scale,
                            }
                        }
                        NumericBasis::Linear => {
                            let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
                            let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                            TermCoding::Linear {
                                center,
                                scale,
                                range: (lo, hi),
                            }
                        }
                    }
                }
            };
            terms.push(Term {
                name: name.clone(),
                source,
                coding,
            });
        }

        let priors = &spec.priors;
        let mut column_names = vec!["(Intercept)".to_string()];
        let mut prior_variances = vec![priors.intercept_variance];
        for t in &terms {
            for n in t.main_names() {
                column_names.push(n);
                prior_variances.push(priors.main_effect_variance);
            }
        }
        if spec.interactions {
            for a in 0..terms.len() {
                for b in a + 1..terms.len() {
                    for na in terms[a].interaction_names() {
                        for nb in terms[b].interaction_names() {
                            column_names.push(format!("{na}:{nb}"));
                            prior_variances.push(priors.interaction_variance);
                        }
                    }
                }
            }
        }
        Ok(DesignSpec {
            terms,
            interactions: spec.interactions,
            column_names,
            prior_variances,
            year_window: schema.year_window,
        })
    }

    pub fn n_columns(&self) -> usize {
        self.column_names.len()
    }

    /// Number of two-way interaction pairs among the terms.
    pub fn interaction_pairs(&self) -> usize {
        if self.interactions {
            self.terms.len() * self.terms.len().saturating_sub(1) / 2
        } else {
            0
        }
    }

    /// Value of each term for a record.
    pub fn term_values(&self, record: &BirthRecord) -> Vec<CovariateValue> {
        self.terms
            .iter()
            .map(|t| term_value_of(&t.source, record))
            .collect()
    }

    /// Position of the term backed by a given schema covariate, or by the
    /// birth year when `name == "year"` and no such covariate exists.
    pub fn term_index(&self, name: &str) -> Option<usize> {
        self.terms.iter().position(|t| t.name == name)
    }

    /// Writes the design row for the given term values. Returns the number of
    /// values that had to be clamped (numeric out of range or unobserved level).
    pub fn write_row(&self, values: &[CovariateValue], out: &mut [f64]) -> usize {
        debug_assert_eq!(out.len(), self.n_columns());
        let mut clamped = 0;
        out[0] = 1.0;
        let mut k = 1;
        for (t, &v) in self.terms.iter().zip(values) {
            if t.is_out_of_range(v) {
                clamped += 1;
            }
            let w = t.main_width();
            t.write_main(v, &mut out[k..k + w]);
            k += w;
        }
        if self.interactions {
            let reps: Vec<Vec<f64>> = self
                .terms
                .iter()
                .zip(values)
                .map(|(t, &v)| {
                    let mut r = vec![0.0; t.interaction_width()];
                    t.write_interaction(v, &mut r);
                    r
                })
                .collect();
            for a in 0..reps.len() {
                for b in a + 1..reps.len() {
                    for &ra in &reps[a] {
                        for &rb in &reps[b] {
                            out[k] = ra * rb;
                            k += 1;
                        }
                    }
                }
            }
        }
        debug_assert_eq!(k, out.len());
        clamped
    }
}

fn term_value_of(source: &TermSource, record: &BirthRecord) -> CovariateValue {
    match source {
        TermSource::Covariate { index } => record.covariates[*index],
        TermSource::BirthYear => CovariateValue::Number(record.birth_year as f64),
    }
}

/// Dense indices of the random-effect units of every birth.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitIndex {
    pub of_birth: [Vec<usize>; 4],
    pub counts: [usize; 4],
    pub ids: [Vec<String>; 4],
}

impl UnitIndex {
    fn build(dataset: &Dataset) -> Self {
        let mut of_birth: [Vec<usize>; 4] = Default::default();
        let mut ids: [Vec<String>; 4] = Default::default();
        for (k, unit) in Unit::ALL.iter().enumerate() {
            let mut map: HashMap<&str, usize> = HashMap::new();
            for r in dataset.records() {
                let id = r.unit_id(*unit);
                let next = map.len();
                let idx = *map.entry(id).or_insert_with(|| {
                    ids[k].push(id.to_string());
                    next
                });
                of_birth[k].push(idx);
            }
        }
        let counts = [ids[0].len(), ids[1].len(), ids[2].len(), ids[3].len()];
        UnitIndex {
            of_birth,
            counts,
            ids,
        }
    }

    pub fn of(&self, unit: Unit, birth: usize) -> usize {
        self.of_birth[unit as usize][birth]
    }

    pub fn count(&self, unit: Unit) -> usize {
        self.counts[unit as usize]
    }

    /// Births grouped by unit.
    pub fn members(&self, unit: Unit) -> Vec<Vec<usize>> {
        let mut m = vec![Vec::new(); self.count(unit)];
        for (i, &u) in self.of_birth[unit as usize].iter().enumerate() {
            m[u].push(i);
        }
        m
    }
}

/// Design matrix, outcomes, centered year index and unit indices for a dataset.
#[derive(Debug, Clone)]
pub struct ModelDesign {
    pub spec: DesignSpec,
    /// Row-major `n x p`.
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub t: Vec<f64>,
    pub units: UnitIndex,
    pub n: usize,
    pub p: usize,
}

impl ModelDesign {
    pub fn build(spec: &ModelSpec, dataset: &Dataset) -> Result<Self> {
        let design = DesignSpec::resolve(spec, dataset)?;
        Ok(Self::with_spec(design, dataset))
    }

    /// Builds the matrices for `dataset` using an already resolved coding.
    pub fn with_spec(spec: DesignSpec, dataset: &Dataset) -> Self {
        let n = dataset.len();
        let p = spec.n_columns();
        let mut x = vec![0.0; n * p];
        for (i, r) in dataset.records().iter().enumerate() {
            let vals = spec.term_values(r);
            spec.write_row(&vals, &mut x[i * p..(i + 1) * p]);
        }
        let y = dataset.records().iter().map(|r| r.outcome as f64).collect();
        let t = dataset
            .records()
            .iter()
            .map(|r| centered_year(spec.year_window, r.birth_year))
            .collect();
        ModelDesign {
            units: UnitIndex::build(dataset),
            spec,
            x,
            y,
            t,
            n,
            p,
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }
}
