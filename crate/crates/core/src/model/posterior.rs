//! Posterior draw matrices and their on-disk layout.
//!
//! Binary layout (all integers and floats little-endian):
//!
//! | bytes | content                                   |
//! |-------|-------------------------------------------|
//! | 8     | magic `RISKPOST` (risks) or `RISKPARM`     |
//! | 4     | format version (`1`)                      |
//! | 8     | rows (draws)                              |
//! | 8     | columns (births or parameters)            |
//! | 32    | SHA-256 of the dataset                    |
//! | 8·r·c | row-major `f64` matrix                    |

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const RISK_MAGIC: &[u8; 8] = b"RISKPOST";
const PARAM_MAGIC: &[u8; 8] = b"RISKPARM";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DrawInfo {
    pub chain: usize,
    /// Post-warmup iteration within the chain.
    pub iteration: usize,
}

/// `L x N` matrix of per-draw mortality probabilities, rows in draw order and
/// columns in dataset row order.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorRisks {
    values: Vec<f64>,
    n_births: usize,
    info: Vec<DrawInfo>,
}

impl PosteriorRisks {
    pub fn new(values: Vec<f64>, n_births: usize, info: Vec<DrawInfo>) -> Result<Self> {
        if values.len() != n_births * info.len() {
            return Err(Error::InvalidInput(format!(
                "{} values do not form a {} x {n_births} matrix",
                values.len(),
                info.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
            return Err(Error::InvalidInput(format!("risk {v} is not strictly inside (0, 1)")));
        }
        Ok(PosteriorRisks {
            values,
            n_births,
            info,
        })
    }

    /// Wraps a single risk vector (for example the true risks) as one draw.
    pub fn single(risks: Vec<f64>) -> Result<Self> {
        let n = risks.len();
        Self::new(risks, n, vec![DrawInfo { chain: 0, iteration: 0 }])
    }

    pub fn n_draws(&self) -> usize {
        self.info.len()
    }

    pub fn n_births(&self) -> usize {
        self.n_births
    }

    pub fn info(&self) -> &[DrawInfo] {
        &self.info
    }

    pub fn draw(&self, l: usize) -> &[f64] {
        &self.values[l * self.n_births..(l + 1) * self.n_births]
    }

    /// Risks of the selected births in draw `l`.
    pub fn draw_subset(&self, l: usize, rows: &[usize]) -> Vec<f64> {
        let d = self.draw(l);
        rows.iter().map(|&i| d[i]).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    /// Keeps every `step`-th draw.
    pub fn thin(&self, step: usize) -> PosteriorRisks {
        let step = step.max(1);
        let keep: Vec<usize> = (0..self.n_draws()).step_by(step).collect();
        let mut values = Vec::with_capacity(keep.len() * self.n_births);
        for &l in &keep {
            values.extend_from_slice(self.draw(l));
        }
        PosteriorRisks {
            values,
            n_births: self.n_births,
            info: keep.iter().map(|&l| self.info[l]).collect(),
        }
    }

    pub fn write_binary<W: Write>(&self, w: W, dataset_hash: &str) -> Result<()> {
        write_matrix(w, RISK_MAGIC, self.n_draws(), self.n_births, dataset_hash, &self.values)
    }

    /// Reads a matrix written by [`Self::write_binary`]; returns it with the stored dataset hash.
    pub fn read_binary<R: Read>(r: R, info: Vec<DrawInfo>) -> Result<(Self, String)> {
        let (rows, cols, hash, values) = read_matrix(r, RISK_MAGIC)?;
        if rows != info.len() {
            return Err(Error::InvalidInput(format!(
                "binary holds {rows} draws but manifest lists {}",
                info.len()
            )));
        }
        Ok((Self::new(values, cols, info)?, hash))
    }

    /// CSV export: one row per draw with `chain,iteration,p0,...`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["chain".to_string(), "iteration".to_string()];
        header.extend((0..self.n_births).map(|i| format!("p{i}")));
        wtr.write_record(&header)?;
        for (l, info) in self.info.iter().enumerate() {
            let mut rec = vec![info.chain.to_string(), info.iteration.to_string()];
            rec.extend(self.draw(l).iter().map(|v| format!("{v}")));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Column means of the draw matrix: the posterior mean risk of each birth.
pub fn posterior_mean_risks(p: &PosteriorRisks) -> Vec<f64> {
    let mut out = vec![0.0; p.n_births()];
    for l in 0..p.n_draws() {
        for (o, v) in out.iter_mut().zip(p.draw(l)) {
            *o += v;
        }
    }
    let l = p.n_draws() as f64;
    out.iter_mut().for_each(|o| *o /= l);
    out
}

/// Full parameter vectors per draw.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterDraws {
    pub names: Vec<String>,
    values: Vec<f64>,
    pub info: Vec<DrawInfo>,
}

impl ParameterDraws {
    pub fn new(names: Vec<String>, values: Vec<f64>, info: Vec<DrawInfo>) -> Result<Self> {
        if values.len() != names.len() * info.len() {
            return Err(Error::InvalidInput("parameter matrix shape mismatch".into()));
        }
        Ok(ParameterDraws {
            names,
            values,
            info,
        })
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn n_draws(&self) -> usize {
        self.info.len()
    }

    pub fn draw(&self, l: usize) -> &[f64] {
        &self.values[l * self.dim()..(l + 1) * self.dim()]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// All draws of parameter `k`.
    pub fn column(&self, k: usize) -> Vec<f64> {
        (0..self.n_draws()).map(|l| self.draw(l)[k]).collect()
    }

    /// Draws of parameter `k` split by chain, in chain order.
    pub fn by_chain(&self, k: usize) -> Vec<Vec<f64>> {
        let n_chains = self.info.iter().map(|i| i.chain + 1).max().unwrap_or(0);
        let mut out = vec![Vec::new(); n_chains];
        for (l, info) in self.info.iter().enumerate() {
            out[info.chain].push(self.draw(l)[k]);
        }
        out
    }

    pub fn write_binary<W: Write>(&self, w: W, dataset_hash: &str) -> Result<()> {
        write_matrix(w, PARAM_MAGIC, self.n_draws(), self.dim(), dataset_hash, &self.values)
    }

    pub fn read_binary<R: Read>(r: R, names: Vec<String>, info: Vec<DrawInfo>) -> Result<(Self, String)> {
        let (rows, cols, hash, values) = read_matrix(r, PARAM_MAGIC)?;
        if rows != info.len() || cols != names.len() {
            return Err(Error::InvalidInput("parameter binary does not match manifest".into()));
        }
        Ok((Self::new(names, values, info)?, hash))
    }
}

fn write_matrix<W: Write>(
    mut w: W,
    magic: &[u8; 8],
    rows: usize,
    cols: usize,
    dataset_hash: &str,
    values: &[f64],
) -> Result<()> {
    let hash = hex::decode(dataset_hash)
        .ok()
        .filter(|h| h.len() == 32)
        .ok_or_else(|| Error::InvalidInput("dataset hash must be 64 hex characters".into()))?;
    let mut buf = Vec::with_capacity(60 + 8 * values.len());
    buf.extend_from_slice(magic);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(rows as u64).to_le_bytes());
    buf.extend_from_slice(&(cols as u64).to_le_bytes());
    buf.extend_from_slice(&hash);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_matrix<R: Read>(mut r: R, magic: &[u8; 8]) -> Result<(usize, usize, String, Vec<f64>)> {
    let mut head = [0u8; 60];
    r.read_exact(&mut head)?;
    if &head[..8] != magic {
        return Err(Error::InvalidInput("not a posterior matrix file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(head[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(Error::InvalidInput(format!("unsupported posterior format version {version}")));
    }
    let rows = u64::from_le_bytes(head[12..20].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(head[20..28].try_into().unwrap()) as usize;
    let hash = hex::encode(&head[28..60]);
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    if body.len() != rows * cols * 8 {
        return Err(Error::InvalidInput("posterior matrix file is truncated".into()));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((rows, cols, hash, values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn info(l: usize) -> Vec<DrawInfo> {
        (0..l).map(|i| DrawInfo { chain: i % 2, iteration: i / 2 }).collect()
    }

    #[test]
    fn mean_of_single_draw_is_the_draw() {
        let p = PosteriorRisks::single(vec![0.1, 0.2, 0.7]).unwrap();
        assert_eq!(posterior_mean_risks(&p), vec![0.1, 0.2, 0.7]);
    }

    #[test]
    fn mean_of_two_draws() {
        let p = PosteriorRisks::new(vec![0.1, 0.3], 1, info(2)).unwrap();
        assert!((posterior_mean_risks(&p)[0] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(PosteriorRisks::new(vec![0.0, 0.5], 2, info(1)).is_err());
        assert!(PosteriorRisks::new(vec![0.5, 1.0], 2, info(1)).is_err());
        assert!(PosteriorRisks::new(vec![0.5], 2, info(1)).is_err());
    }

    #[test]
    fn bad_magic_and_truncation_detected() {
        let p = PosteriorRisks::new(vec![0.1, 0.2, 0.3, 0.4], 2, info(2)).unwrap();
        let hash = "ab".repeat(32);
        let mut buf = Vec::new();
        p.write_binary(&mut buf, &hash).unwrap();
        assert_eq!(buf.len(), 60 + 32);
        assert!(ParameterDraws::read_binary(buf.as_slice(), vec!["a".into(), "b".into()], info(2)).is_err());
        buf.pop();
        assert!(PosteriorRisks::read_binary(buf.as_slice(), info(2)).is_err());
    }

    proptest! {
        #[test]
        fn binary_round_trip(raw in proptest::collection::vec(0.001f64..0.999, 1..60), cols in 1usize..4) {
            let rows = raw.len() / cols;
            prop_assume!(rows > 0);
            let values = raw[..rows * cols].to_vec();
            let p = PosteriorRisks::new(values, cols, info(rows)).unwrap();
            let hash = "0f".repeat(32);
            let mut buf = Vec::new();
            p.write_binary(&mut buf, &hash).unwrap();
            let (back, h) = PosteriorRisks::read_binary(buf.as_slice(), info(rows)).unwrap();
            prop_assert_eq!(back, p);
            prop_assert_eq!(h, hash);
        }

        #[test]
        fn mean_is_permutation_invariant(raw in proptest::collection::vec(0.001f64..0.999, 6..30)) {
            let rows = raw.len() / 3;
            let values = raw[..rows * 3].to_vec();
            let p = PosteriorRisks::new(values.clone(), 3, info(rows)).unwrap();
            let mut rev = Vec::new();
            for l in (0..rows).rev() {
                rev.extend_from_slice(&values[l * 3..(l + 1) * 3]);
            }
            let q = PosteriorRisks::new(rev, 3, info(rows)).unwrap();
            let a = posterior_mean_risks(&p);
            let b = posterior_mean_risks(&q);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-14);
            }
        }
    }
}
