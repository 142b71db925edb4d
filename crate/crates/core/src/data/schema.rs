use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Nesting level of an id column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Unit {
    Mother,
    Cluster,
    District,
    State,
}

impl Unit {
    pub const ALL: [Unit; 4] = [Unit::Mother, Unit::Cluster, Unit::District, Unit::State];

    pub fn name(self) -> &'static str {
        match self {
            Unit::Mother => "mother",
            Unit::Cluster => "cluster",
            Unit::District => "district",
            Unit::State => "state",
        }
    }
}

/// What a CSV column holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ColumnKind {
    Outcome,
    Year,
    Id {
        unit: Unit,
    },
    Categorical {
        levels: Vec<String>,
        /// Reference level for dummy coding. Defaults to the most frequent level.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reference: Option<String>,
    },
    Numeric {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        min: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: ColumnKind,
}

/// A covariate column as seen by the model: categorical or numeric.
#[derive(Debug, Clone, PartialEq)]
pub enum CovariateKind {
    Categorical {
        levels: Vec<String>,
        reference: Option<String>,
    },
    Numeric {
        min: Option<f64>,
        max: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Covariate {
    pub name: String,
    pub kind: CovariateKind,
}

impl Covariate {
    pub fn is_categorical(&self) -> bool {
        matches!(self.kind, CovariateKind::Categorical { .. })
    }

    pub fn levels(&self) -> Option<&[String]> {
        match &self.kind {
            CovariateKind::Categorical { levels, .. } => Some(levels),
            CovariateKind::Numeric { .. } => None,
        }
    }
}

/// Column declarations plus the study window, as read from the JSON sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSchema {
    /// Inclusive range of admissible birth years.
    pub year_window: (i32, i32),
    pub columns: Vec<ColumnSpec>,
}

impl CovariateSchema {
    pub fn from_json(text: &str) -> Result<Self> {
        let schema: CovariateSchema = serde_json::from_str(text)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let mut names = HashSet::new();
        for c in &self.columns {
            if !names.insert(c.name.as_str()) {
                return Err(Error::Schema(format!("duplicate column `{}`", c.name)));
            }
        }
        let count = |pred: &dyn Fn(&ColumnKind) -> bool| {
            self.columns.iter().filter(|c| pred(&c.kind)).count()
        };
        if count(&|k| matches!(k, ColumnKind::Outcome)) != 1 {
            return Err(Error::Schema("exactly one outcome column required".into()));
        }
        if count(&|k| matches!(k, ColumnKind::Year)) != 1 {
            return Err(Error::Schema("exactly one year column required".into()));
        }
        for unit in Unit::ALL {
            if count(&|k| matches!(k, ColumnKind::Id { unit: u } if *u == unit)) != 1 {
                return Err(Error::Schema(format!(
                    "exactly one id column with unit `{}` required",
                    unit.name()
                )));
            }
        }
        if self.year_window.0 > self.year_window.1 {
            return Err(Error::Schema("year_window start exceeds end".into()));
        }
        for c in &self.columns {
            match &c.kind {
                ColumnKind::Categorical { levels, reference } => {
                    if levels.is_empty() {
                        return Err(Error::Schema(format!("`{}` declares no levels", c.name)));
                    }
                    let uniq: HashSet<_> = levels.iter().collect();
                    if uniq.len() != levels.len() {
                        return Err(Error::Schema(format!("`{}` repeats a level", c.name)));
                    }
                    if let Some(r) = reference {
                        if !levels.contains(r) {
                            return Err(Error::Schema(format!(
                                "`{}` reference level `{r}` is not a declared level",
                                c.name
                            )));
                        }
                    }
                }
                ColumnKind::Numeric {
                    min: Some(lo),
                    max: Some(hi),
                } if lo >= hi => {
                    return Err(Error::Schema(format!("`{}` has min >= max", c.name)));
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<&ColumnSpec> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn outcome_column(&self) -> &str {
        self.find_kind(|k| matches!(k, ColumnKind::Outcome))
    }

    pub fn year_column(&self) -> &str {
        self.find_kind(|k| matches!(k, ColumnKind::Year))
    }

    pub fn id_column(&self, unit: Unit) -> &str {
        self.find_kind(|k| matches!(k, ColumnKind::Id { unit: u } if *u == unit))
    }

    fn find_kind(&self, pred: impl Fn(&ColumnKind) -> bool) -> &str {
        self.columns
            .iter()
            .find(|c| pred(&c.kind))
            .map(|c| c.name.as_str())
            .expect("validated schema")
    }

    /// Covariate columns in declaration order.
    pub fn covariates(&self) -> Vec<Covariate> {
        self.columns
            .iter()
            .filter_map(|c| {
                let kind = match &c.kind {
                    ColumnKind::Categorical { levels, reference } => CovariateKind::Categorical {
                        levels: levels.clone(),
                        reference: reference.clone(),
                    },
                    ColumnKind::Numeric { min, max } => CovariateKind::Numeric {
                        min: *min,
                        max: *max,
                    },
                    _ => return None,
                };
                Some(Covariate {
                    name: c.name.clone(),
                    kind,
                })
            })
            .collect()
    }

    /// Position of a covariate among [`Self::covariates`].
    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariates().iter().position(|c| c.name == name)
    }

    /// Centered year index used for the district and state time slopes.
    ///
    /// `t = year - start + 1` runs over `1..=T`; the returned value is
    /// `t - (T + 1) / 2`.
    pub fn centered_year(&self, year: i32) -> f64 {
        centered_year(self.year_window, year)
    }
}

pub fn centered_year(window: (i32, i32), year: i32) -> f64 {
    let t = (year - window.0 + 1) as f64;
    let len = (window.1 - window.0 + 1) as f64;
    t - (len + 1.0) / 2.0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_columns() -> Vec<ColumnSpec> {
        let mut cols = vec![
            ColumnSpec {
                name: "died".into(),
                kind: ColumnKind::Outcome,
            },
            ColumnSpec {
                name: "year".into(),
                kind: ColumnKind::Year,
            },
        ];
        for u in Unit::ALL {
            cols.push(ColumnSpec {
                name: u.name().into(),
                kind: ColumnKind::Id { unit: u },
            });
        }
        cols
    }

    #[test]
    fn json_shape_round_trips() {
        let text = r#"{
            "year_window": [1975, 1997],
            "columns": [
                {"name": "died", "type": "outcome"},
                {"name": "year", "type": "year"},
                {"name": "m", "type": "id", "unit": "mother"},
                {"name": "c", "type": "id", "unit": "cluster"},
                {"name": "d", "type": "id", "unit": "district"},
                {"name": "s", "type": "id", "unit": "state"},
                {"name": "wealth", "type": "categorical", "levels": ["Q1", "Q2"]},
                {"name": "mat_age", "type": "numeric", "min": 15, "max": 35}
            ]
        }"#;
        let s = CovariateSchema::from_json(text).unwrap();
        assert_eq!(s.covariates().len(), 2);
        assert_eq!(s.id_column(Unit::District), "d");
        let again = CovariateSchema::from_json(&s.to_json()).unwrap();
        assert_eq!(s, again);
    }

    #[test]
    fn rejects_missing_unit_and_bad_reference() {
        let mut cols = base_columns();
        cols.retain(|c| c.name != "state");
        let s = CovariateSchema {
            year_window: (1, 2),
            columns: cols,
        };
        assert!(s.validate().is_err());

        let mut cols = base_columns();
        cols.push(ColumnSpec {
            name: "g".into(),
            kind: ColumnKind::Categorical {
                levels: vec!["a".into()],
                reference: Some("b".into()),
            },
        });
        let s = CovariateSchema {
            year_window: (1, 2),
            columns: cols,
        };
        assert!(s.validate().is_err());
    }

    #[test]
    fn centered_year_is_symmetric() {
        assert_eq!(centered_year((1975, 1997), 1975), -11.0);
        assert_eq!(centered_year((1975, 1997), 1986), 0.0);
        assert_eq!(centered_year((1975, 1997), 1997), 11.0);
        assert_eq!(centered_year((1, 2), 1), -0.5);
    }
}
