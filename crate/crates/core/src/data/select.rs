use std::fmt;
use std::str::FromStr;

use super::{ColumnKind, CovariateValue, Dataset, Unit};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompareOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CompareOp {
    fn symbol(self) -> &'static str {
        match self {
            CompareOp::Eq => "=",
            CompareOp::Ne => "!=",
            CompareOp::Lt => "<",
            CompareOp::Le => "<=",
            CompareOp::Gt => ">",
            CompareOp::Ge => ">=",
        }
    }

    fn holds(self, ord: std::cmp::Ordering) -> bool {
        use std::cmp::Ordering::*;
        match self {
            CompareOp::Eq => ord == Equal,
            CompareOp::Ne => ord != Equal,
            CompareOp::Lt => ord == Less,
            CompareOp::Le => ord != Greater,
            CompareOp::Gt => ord == Greater,
            CompareOp::Ge => ord != Less,
        }
    }
}

/// Row filter over schema fields.
///
/// Text form: clauses `field OP value` joined by `AND`, e.g.
/// `wealth=Q1 AND year>=1990`. `year` always refers to the birth year column.
#[derive(Debug, Clone, PartialEq)]
pub enum Predicate {
    All,
    Compare {
        field: String,
        op: CompareOp,
        value: String,
    },
    And(Vec<Predicate>),
}

impl Predicate {
    pub fn eq(field: &str, value: impl ToString) -> Self {
        Predicate::Compare {
            field: field.to_string(),
            op: CompareOp::Eq,
            value: value.to_string(),
        }
    }

    pub fn and(self, other: Predicate) -> Self {
        match (self, other) {
            (Predicate::All, p) | (p, Predicate::All) => p,
            (Predicate::And(mut a), Predicate::And(b)) => {
                a.extend(b);
                Predicate::And(a)
            }
            (Predicate::And(mut a), p) => {
                a.push(p);
                Predicate::And(a)
            }
            (p, q) => Predicate::And(vec![p, q]),
        }
    }
}

impl FromStr for Predicate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() || s == "*" {
            return Ok(Predicate::All);
        }
        let clauses: Vec<&str> = split_and(s);
        let mut parsed = Vec::with_capacity(clauses.len());
        for clause in clauses {
            parsed.push(parse_clause(clause.trim())?);
        }
        Ok(if parsed.len() == 1 {
            parsed.pop().unwrap()
        } else {
            Predicate::And(parsed)
        })
    }
}

fn split_and(s: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = s;
    loop {
        let lower = rest.to_ascii_lowercase();
        match lower.find(" and ").or_else(|| lower.find("&&")) {
            Some(pos) => {
                let sep = if lower[pos..].starts_with("&&") { 2 } else { 5 };
                out.push(&rest[..pos]);
                rest = &rest[pos + sep..];
            }
            None => {
                out.push(rest);
                return out;
            }
        }
    }
}

fn parse_clause(clause: &str) -> Result<Predicate> {
    for (sym, op) in [
        ("!=", CompareOp::Ne),
        ("<=", CompareOp::Le),
        (">=", CompareOp::Ge),
        ("=", CompareOp::Eq),
        ("<", CompareOp::Lt),
        (">", CompareOp::Gt),
    ] {
        if let Some(pos) = clause.find(sym) {
            let field = clause[..pos].trim();
            let value = clause[pos + sym.len()..].trim();
            if field.is_empty() || value.is_empty() {
                break;
            }
            return Ok(Predicate::Compare {
                field: field.to_string(),
                op,
                value: value.to_string(),
            });
        }
    }
    Err(Error::InvalidInput(format!(
        "cannot parse selection clause `{clause}`; expected `field OP value`"
    )))
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Predicate::All => write!(f, "*"),
            Predicate::Compare { field, op, value } => write!(f, "{field}{}{value}", op.symbol()),
            Predicate::And(ps) => {
                for (i, p) in ps.iter().enumerate() {
                    if i > 0 {
                        write!(f, " AND ")?;
                    }
                    write!(f, "{p}")?;
                }
                Ok(())
            }
        }
    }
}

enum Compiled {
    All,
    Year(CompareOp, i32),
    Unit(Unit, CompareOp, String),
    Level(usize, CompareOp, usize),
    Number(usize, CompareOp, f64),
    And(Vec<Compiled>),
}

fn compile(dataset: &Dataset, p: &Predicate) -> Result<Compiled> {
    let schema = dataset.schema();
    Ok(match p {
        Predicate::All => Compiled::All,
        Predicate::And(ps) => Compiled::And(
            ps.iter()
                .map(|q| compile(dataset, q))
                .collect::<Result<_>>()?,
        ),
        Predicate::Compare { field, op, value } => {
            let bad_value =
                |what: &str| Error::InvalidInput(format!("`{value}` is not {what} for `{field}`"));
            let kind = if field == "year" {
                Some(&ColumnKind::Year)
            } else {
                schema.column(field).map(|c| &c.kind)
            };
            match kind {
                None => return Err(Error::UnknownField(field.clone())),
                Some(ColumnKind::Outcome) => {
                    return Err(Error::InvalidInput(
                        "selecting on the outcome is not supported".into(),
                    ))
                }
                Some(ColumnKind::Year) => {
                    Compiled::Year(*op, value.parse().map_err(|_| bad_value("a year"))?)
                }
                Some(ColumnKind::Id { unit }) => {
                    if !matches!(op, CompareOp::Eq | CompareOp::Ne) {
                        return Err(bad_value("usable with an ordering comparison"));
                    }
                    Compiled::Unit(*unit, *op, value.clone())
                }
                Some(ColumnKind::Categorical { levels, .. }) => {
                    let l = levels
                        .iter()
                        .position(|x| x == value)
                        .ok_or_else(|| bad_value("a declared level"))?;
                    if !matches!(op, CompareOp::Eq | CompareOp::Ne) {
                        return Err(bad_value("usable with an ordering comparison"));
                    }
                    let (idx, _) = dataset.covariate(field).unwrap();
                    Compiled::Level(idx, *op, l)
                }
                Some(ColumnKind::Numeric { .. }) => {
                    let (idx, _) = dataset.covariate(field).unwrap();
                    Compiled::Number(
                        idx,
                        *op,
                        value.parse().map_err(|_| bad_value("a number"))?,
                    )
                }
            }
        }
    })
}

fn matches(c: &Compiled, r: &super::BirthRecord) -> bool {
    match c {
        Compiled::All => true,
        Compiled::Year(op, y) => op.holds(r.birth_year.cmp(y)),
        Compiled::Unit(u, op, v) => op.holds(r.unit_id(*u).cmp(v.as_str())),
        Compiled::Level(i, op, l) => match r.covariates[*i] {
            CovariateValue::Level(x) => op.holds(x.cmp(l)),
            CovariateValue::Number(_) => false,
        },
        Compiled::Number(i, op, v) => op.holds(r.covariates[*i].as_f64().total_cmp(v)),
        Compiled::And(cs) => cs.iter().all(|c| matches(c, r)),
    }
}

/// Indices (ascending) of records satisfying `predicate`. Empty results are allowed.
pub fn select(dataset: &Dataset, predicate: &Predicate) -> Result<Vec<usize>> {
    let compiled = compile(dataset, predicate)?;
    Ok(dataset
        .records()
        .iter()
        .enumerate()
        .filter(|(_, r)| matches(&compiled, r))
        .map(|(i, _)| i)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{read_csv, CovariateSchema};

    fn dataset() -> Dataset {
        let schema = CovariateSchema::from_json(
            r#"{"year_window": [1975, 1997], "columns": [
                {"name": "died", "type": "outcome"},
                {"name": "year", "type": "year"},
                {"name": "mother", "type": "id", "unit": "mother"},
                {"name": "cluster", "type": "id", "unit": "cluster"},
                {"name": "district", "type": "id", "unit": "district"},
                {"name": "state", "type": "id", "unit": "state"},
                {"name": "wealth", "type": "categorical", "levels": ["Q1", "Q2"]},
                {"name": "age", "type": "numeric"}]}"#,
        )
        .unwrap();
        let text = "died,year,mother,cluster,district,state,wealth,age\n\
            0,1975,m1,c1,d1,s1,Q1,20\n\
            0,1995,m1,c1,d1,s1,Q1,30\n\
            1,1975,m2,c2,d1,s1,Q2,25\n\
            0,1995,m3,c2,d1,s1,Q2,19\n\
            0,1985,m4,c3,d2,s1,Q1,33\n";
        read_csv(text.as_bytes(), &schema).unwrap()
    }

    #[test]
    fn year_selects_exact_rows() {
        let ds = dataset();
        let p: Predicate = "year=1975".parse().unwrap();
        assert_eq!(select(&ds, &p).unwrap(), vec![0, 2]);
    }

    #[test]
    fn unknown_field_is_an_error() {
        let ds = dataset();
        let p: Predicate = "zodiac=leo".parse().unwrap();
        assert!(matches!(select(&ds, &p), Err(Error::UnknownField(f)) if f == "zodiac"));
    }

    #[test]
    fn conjunction_is_intersection() {
        let ds = dataset();
        let both: Predicate = "wealth=Q1 AND year=1995".parse().unwrap();
        let got = select(&ds, &both).unwrap();
        // independent two-pass filter
        let expected: Vec<usize> = (0..ds.len())
            .filter(|&i| ds.records()[i].covariates[0] == CovariateValue::Level(0))
            .filter(|&i| ds.records()[i].birth_year == 1995)
            .collect();
        assert_eq!(got, expected);
        assert_eq!(got, vec![1]);
    }

    #[test]
    fn numeric_and_id_comparisons() {
        let ds = dataset();
        let p: Predicate = "age>=25 && district=d1".parse().unwrap();
        assert_eq!(select(&ds, &p).unwrap(), vec![1, 2]);
        let p: Predicate = "*".parse().unwrap();
        assert_eq!(select(&ds, &p).unwrap().len(), 5);
        assert_eq!(p.to_string(), "*");
    }
}
