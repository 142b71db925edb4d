//! Birth-level data model, CSV ingestion, subpopulation selection and the
//! synthetic population generator.

mod csv_io;
mod schema;
mod select;
mod synthetic;

use std::collections::HashMap;

use sha2::{Digest, Sha256};

pub use csv_io::{load_csv, read_csv, write_csv};
pub use schema::{
    centered_year, ColumnKind, ColumnSpec, Covariate, CovariateKind, CovariateSchema, Unit,
};
pub use select::{select, CompareOp, Predicate};
pub use synthetic::{
    generate_synthetic, CovariateRule, NestingCounts, SyntheticCovariate, SyntheticSpec,
    TrueRisks, VarianceComponents,
};

use crate::error::{Error, Result};

/// Value of one covariate for one birth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CovariateValue {
    /// Index into the covariate's declared levels.
    Level(usize),
    Number(f64),
}

impl CovariateValue {
    pub fn as_f64(self) -> f64 {
        match self {
            CovariateValue::Level(l) => l as f64,
            CovariateValue::Number(x) => x,
        }
    }
}

/// One birth. Covariate values are stored in schema covariate order.
#[derive(Debug, Clone, PartialEq)]
pub struct BirthRecord {
    /// 1 = died before age one.
    pub outcome: u8,
    pub birth_year: i32,
    pub mother_id: String,
    pub cluster_id: String,
    pub district_id: String,
    pub state_id: String,
    pub covariates: Vec<CovariateValue>,
}

impl BirthRecord {
    pub fn unit_id(&self, unit: Unit) -> &str {
        match unit {
            Unit::Mother => &self.mother_id,
            Unit::Cluster => &self.cluster_id,
            Unit::District => &self.district_id,
            Unit::State => &self.state_id,
        }
    }
}

/// Validated, immutable collection of births.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: CovariateSchema,
    covariates: Vec<Covariate>,
    records: Vec<BirthRecord>,
}

impl Dataset {
    /// Validates every record against the schema and the nesting structure.
    pub fn new(schema: CovariateSchema, records: Vec<BirthRecord>) -> Result<Self> {
        schema.validate()?;
        let covariates = schema.covariates();
        for (i, r) in records.iter().enumerate() {
            validate_record(&schema, &covariates, r, i + 1)?;
        }
        check_nesting(&records)?;
        Ok(Dataset {
            schema,
            covariates,
            records,
        })
    }

    pub fn schema(&self) -> &CovariateSchema {
        &self.schema
    }

    pub fn covariates(&self) -> &[Covariate] {
        &self.covariates
    }

    pub fn covariate(&self, name: &str) -> Option<(usize, &Covariate)> {
        self.covariates
            .iter()
            .enumerate()
            .find(|(_, c)| c.name == name)
    }

    pub fn records(&self) -> &[BirthRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Dataset restricted to the given rows, in the given order.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            covariates: self.covariates.clone(),
            records: rows.iter().map(|&i| self.records[i].clone()).collect(),
        }
    }

    /// SHA-256 over the schema JSON and the canonical CSV serialization.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.schema.to_json().as_bytes());
        let mut buf = Vec::new();
        write_csv(self, &mut buf).expect("in-memory write");
        hasher.update(&buf);
        hex::encode(hasher.finalize())
    }

    /// Distinct birth years in ascending order.
    pub fn years(&self) -> Vec<i32> {
        let mut y: Vec<i32> = self.records.iter().map(|r| r.birth_year).collect();
        y.sort_unstable();
        y.dedup();
        y
    }

    /// Observed level counts of a categorical covariate.
    pub fn level_counts(&self, covariate: usize) -> Vec<usize> {
        let n_levels = self.covariates[covariate].levels().map_or(0, |l| l.len());
        let mut counts = vec![0usize; n_levels];
        for r in &self.records {
            if let CovariateValue::Level(l) = r.covariates[covariate] {
                counts[l] += 1;
            }
        }
        counts
    }
}

fn validate_record(
    schema: &CovariateSchema,
    covariates: &[Covariate],
    r: &BirthRecord,
    row: usize,
) -> Result<()> {
    let bad = |field: &str, message: String| Error::MalformedRow {
        row,
        field: field.to_string(),
        message,
    };
    if r.outcome > 1 {
        return Err(bad(
            schema.outcome_column(),
            format!("outcome must be 0 or 1, got {}", r.outcome),
        ));
    }
    let (lo, hi) = schema.year_window;
    if r.birth_year < lo || r.birth_year > hi {
        return Err(bad(
            schema.year_column(),
            format!("birth year {} outside study window {lo}..={hi}", r.birth_year),
        ));
    }
    for unit in Unit::ALL {
        if r.unit_id(unit).is_empty() {
            return Err(bad(schema.id_column(unit), "missing id".into()));
        }
    }
    if r.covariates.len() != covariates.len() {
        return Err(bad(
            "covariates",
            format!(
                "expected {} covariate values, got {}",
                covariates.len(),
                r.covariates.len()
            ),
        ));
    }
    for (c, v) in covariates.iter().zip(&r.covariates) {
        match (&c.kind, v) {
            (CovariateKind::Categorical { levels, .. }, CovariateValue::Level(l)) => {
                if *l >= levels.len() {
                    return Err(bad(&c.name, format!("level index {l} out of range")));
                }
            }
            (CovariateKind::Numeric { min, max }, CovariateValue::Number(x)) => {
                if !x.is_finite() {
                    return Err(bad(&c.name, "non-finite value".into()));
                }
                if min.is_some_and(|m| *x < m) || max.is_some_and(|m| *x > m) {
                    return Err(bad(
                        &c.name,
                        format!("value {x} outside allowed range {min:?}..={max:?}"),
                    ));
                }
            }
            _ => return Err(bad(&c.name, "value kind does not match schema".into())),
        }
    }
    Ok(())
}

fn check_nesting(records: &[BirthRecord]) -> Result<()> {
    let pairs = [
        (Unit::Mother, Unit::Cluster),
        (Unit::Cluster, Unit::District),
        (Unit::District, Unit::State),
    ];
    for (child, parent) in pairs {
        let mut parent_of: HashMap<&str, &str> = HashMap::new();
        for r in records {
            let c = r.unit_id(child);
            let p = r.unit_id(parent);
            if let Some(prev) = parent_of.insert(c, p) {
                if prev != p {
                    return Err(Error::Nesting(format!(
                        "{} `{c}` appears under {} `{prev}` and `{p}`",
                        child.name(),
                        parent.name()
                    )));
                }
            }
        }
    }
    Ok(())
}
