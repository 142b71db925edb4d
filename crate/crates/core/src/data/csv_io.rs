use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use super::{BirthRecord, ColumnKind, CovariateSchema, CovariateValue, Dataset, Unit};
use crate::error::{Error, Result};

/// Loads a birth-level CSV and validates it against `schema`.
///
/// Row numbers in errors count data rows from 1 (the header is not counted).
pub fn load_csv(path: &Path, schema: &CovariateSchema) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    read_csv(file, schema)
}

pub fn read_csv<R: Read>(reader: R, schema: &CovariateSchema) -> Result<Dataset> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    let mut position: HashMap<&str, usize> = HashMap::new();
    for (i, h) in header.iter().enumerate() {
        if schema.column(h).is_none() {
            return Err(Error::UnknownColumn(h.to_string()));
        }
        position.insert(h, i);
    }
    for c in &schema.columns {
        if !position.contains_key(c.name.as_str()) {
            return Err(Error::MissingColumn(c.name.clone()));
        }
    }

    let level_lookup: Vec<Option<HashMap<&str, usize>>> = schema
        .columns
        .iter()
        .map(|c| match &c.kind {
            ColumnKind::Categorical { levels, .. } => Some(
                levels
                    .iter()
                    .enumerate()
                    .map(|(i, l)| (l.as_str(), i))
                    .collect(),
            ),
            _ => None,
        })
        .collect();

    let mut records = Vec::new();
    for (idx, row) in rdr.records().enumerate() {
        let row_no = idx + 1;
        let row = row.map_err(|e| Error::MalformedRow {
            row: row_no,
            field: "*".into(),
            message: e.to_string(),
        })?;
        let bad = |field: &str, message: String| Error::MalformedRow {
            row: row_no,
            field: field.to_string(),
            message,
        };
        let mut outcome = 0u8;
        let mut year = 0i32;
        let mut ids: [String; 4] = Default::default();
        let mut covariates = Vec::new();
        for (col, lookup) in schema.columns.iter().zip(&level_lookup) {
            let raw = row.get(position[col.name.as_str()]).unwrap_or("");
            if raw.is_empty() {
                return Err(bad(&col.name, "missing value".into()));
            }
            match &col.kind {
                ColumnKind::Outcome => {
                    outcome = match raw {
                        "0" => 0,
                        "1" => 1,
                        other => {
                            return Err(bad(
                                &col.name,
                                format!("outcome must be 0 or 1, got `{other}`"),
                            ))
                        }
                    }
                }
                ColumnKind::Year => {
                    year = raw
                        .parse()
                        .map_err(|_| bad(&col.name, format!("`{raw}` is not an integer year")))?;
                }
                ColumnKind::Id { unit } => {
                    let slot = Unit::ALL.iter().position(|u| u == unit).unwrap();
                    ids[slot] = raw.to_string();
                }
                ColumnKind::Categorical { .. } => {
                    let l = lookup.as_ref().unwrap().get(raw).copied().ok_or_else(|| {
                        bad(&col.name, format!("unknown category level `{raw}`"))
                    })?;
                    covariates.push(CovariateValue::Level(l));
                }
                ColumnKind::Numeric { .. } => {
                    let x: f64 = raw
                        .parse()
                        .map_err(|_| bad(&col.name, format!("`{raw}` is not a number")))?;
                    covariates.push(CovariateValue::Number(x));
                }
            }
        }
        let [mother_id, cluster_id, district_id, state_id] = ids;
        records.push(BirthRecord {
            outcome,
            birth_year: year,
            mother_id,
            cluster_id,
            district_id,
            state_id,
            covariates,
        });
    }
    Dataset::new(schema.clone(), records)
}

/// Writes the dataset in schema column order. Numbers use the shortest
/// representation that parses back to the same `f64`.
pub fn write_csv<W: Write>(dataset: &Dataset, writer: W) -> Result<()> {
    let schema = dataset.schema();
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(schema.columns.iter().map(|c| c.name.as_str()))?;
    let mut fields: Vec<String> = Vec::with_capacity(schema.columns.len());
    for r in dataset.records() {
        fields.clear();
        let mut cov = r.covariates.iter();
        for col in &schema.columns {
            let f = match &col.kind {
                ColumnKind::Outcome => r.outcome.to_string(),
                ColumnKind::Year => r.birth_year.to_string(),
                ColumnKind::Id { unit } => r.unit_id(*unit).to_string(),
                ColumnKind::Categorical { levels, .. } => match cov.next() {
                    Some(CovariateValue::Level(l)) => levels[*l].clone(),
                    _ => unreachable!("validated record"),
                },
                ColumnKind::Numeric { .. } => match cov.next() {
                    Some(CovariateValue::Number(x)) => format!("{x}"),
                    _ => unreachable!("validated record"),
                },
            };
            fields.push(f);
        }
        wtr.write_record(&fields)?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn schema() -> CovariateSchema {
        CovariateSchema::from_json(
            r#"{
            "year_window": [1975, 1997],
            "columns": [
                {"name": "died", "type": "outcome"},
                {"name": "year", "type": "year"},
                {"name": "mother", "type": "id", "unit": "mother"},
                {"name": "cluster", "type": "id", "unit": "cluster"},
                {"name": "district", "type": "id", "unit": "district"},
                {"name": "state", "type": "id", "unit": "state"},
                {"name": "wealth", "type": "categorical", "levels": ["Q1", "Q2", "Q3"]},
                {"name": "mat_age", "type": "numeric", "min": 15, "max": 35}
            ]}"#,
        )
        .unwrap()
    }

    const HEADER: &str = "died,year,mother,cluster,district,state,wealth,mat_age\n";

    #[test]
    fn three_well_formed_rows() {
        let text = format!(
            "{HEADER}0,1975,m1,c1,d1,s1,Q1,22\n1,1976,m1,c1,d1,s1,Q2,23.5\n0,1980,m2,c2,d1,s1,Q3,30\n"
        );
        let ds = read_csv(text.as_bytes(), &schema()).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.records()[1].outcome, 1);
        assert_eq!(ds.records()[1].covariates[1], CovariateValue::Number(23.5));
        assert_eq!(ds.records()[2].covariates[0], CovariateValue::Level(2));
    }

    #[test]
    fn outcome_two_on_row_five_names_the_row() {
        let mut text = HEADER.to_string();
        for _ in 0..4 {
            text.push_str("0,1975,m1,c1,d1,s1,Q1,22\n");
        }
        text.push_str("2,1975,m1,c1,d1,s1,Q1,22\n");
        let err = read_csv(text.as_bytes(), &schema()).unwrap_err();
        match err {
            Error::MalformedRow { row, field, .. } => {
                assert_eq!(row, 5);
                assert_eq!(field, "died");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn cluster_under_two_districts_is_rejected() {
        let text = format!(
            "{HEADER}0,1975,m1,c7,d1,s1,Q1,22\n0,1975,m2,c7,d1,s1,Q1,22\n\
             0,1975,m3,c7,d2,s1,Q1,22\n0,1975,m4,c8,d2,s1,Q1,22\n"
        );
        let err = read_csv(text.as_bytes(), &schema()).unwrap_err();
        assert!(matches!(err, Error::Nesting(ref m) if m.contains("c7")), "{err}");
    }

    #[test]
    fn unknown_level_missing_column_and_missing_value() {
        let text = format!("{HEADER}0,1975,m1,c1,d1,s1,Q9,22\n");
        let err = read_csv(text.as_bytes(), &schema()).unwrap_err();
        assert!(err.to_string().contains("unknown category level"));

        let text = "died,year,mother,cluster,district,state,wealth\n0,1975,m1,c1,d1,s1,Q1\n";
        let err = read_csv(text.as_bytes(), &schema()).unwrap_err();
        assert!(matches!(err, Error::MissingColumn(ref c) if c == "mat_age"));

        let text = format!("{HEADER}0,1975,m1,c1,d1,s1,Q1,\n");
        let err = read_csv(text.as_bytes(), &schema()).unwrap_err();
        assert!(err.to_string().contains("missing value"));
    }

    #[test]
    fn window_and_age_rules_enforced() {
        let text = format!("{HEADER}0,1974,m1,c1,d1,s1,Q1,22\n");
        assert!(read_csv(text.as_bytes(), &schema()).is_err());
        let text = format!("{HEADER}0,1975,m1,c1,d1,s1,Q1,40\n");
        assert!(read_csv(text.as_bytes(), &schema()).is_err());
    }

    #[test]
    fn write_then_read_is_identity() {
        let text = format!(
            "{HEADER}0,1975,m1,c1,d1,s1,Q1,22.123456789\n1,1990,m2,c2,d2,s1,Q3,17\n"
        );
        let ds = read_csv(text.as_bytes(), &schema()).unwrap();
        let mut buf = Vec::new();
        write_csv(&ds, &mut buf).unwrap();
        let again = read_csv(buf.as_slice(), &schema()).unwrap();
        assert_eq!(ds, again);
    }
}
