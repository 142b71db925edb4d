use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterDiagnostic {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q975: f64,
    pub rhat: f64,
    pub ess: f64,
}

/// Convergence summary for the reported parameters (fixed effects and
/// variance components).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub parameters: Vec<ParameterDiagnostic>,
    /// Acceptance rate per chain (1.0 for pure Gibbs chains).
    pub acceptance_rates: Vec<f64>,
    /// Sampler used by each chain.
    pub samplers: Vec<String>,
    pub warnings: Vec<String>,
}

impl FitDiagnostics {
    pub fn max_rhat(&self) -> f64 {
        self.parameters
            .iter()
            .map(|p| p.rhat)
            .fold(1.0, f64::max)
    }

    pub fn get(&self, name: &str) -> Option<&ParameterDiagnostic> {
        self.parameters.iter().find(|p| p.name == name)
    }
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Split-chain potential scale reduction factor.
///
/// Each chain is halved; the statistic is computed over the halves. Values
/// below 1 (possible from sampling noise) are reported as 1, and a parameter
/// that is constant across all draws has R-hat 1.
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    let half = chains.iter().map(|c| c.len() / 2).min().unwrap_or(0);
    if half < 2 {
        return f64::NAN;
    }
    let mut pieces: Vec<&[f64]> = Vec::with_capacity(2 * chains.len());
    for c in chains {
        pieces.push(&c[..half]);
        pieces.push(&c[c.len() - half..]);
    }
    let n = half as f64;
    let stats: Vec<(f64, f64)> = pieces.iter().map(|p| mean_var(p)).collect();
    let w = stats.iter().map(|s| s.1).sum::<f64>() / stats.len() as f64;
    let means: Vec<f64> = stats.iter().map(|s| s.0).collect();
    let (_, b_over_n) = mean_var(&means);
    if w <= 0.0 || !w.is_finite() {
        return if b_over_n > 0.0 { f64::INFINITY } else { 1.0 };
    }
    let var_plus = (n - 1.0) / n * w + b_over_n;
    (var_plus / w).sqrt().max(1.0)
}

/// Multi-chain effective sample size with Geyer's initial monotone sequence.
pub fn effective_sample_size(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    let n = chains.iter().map(|c| c.len()).min().unwrap_or(0);
    if m == 0 || n < 4 {
        return f64::NAN;
    }
    let stats: Vec<(f64, f64)> = chains.iter().map(|c| mean_var(&c[..n])).collect();
    let w = stats.iter().map(|s| s.1).sum::<f64>() / m as f64;
    let means: Vec<f64> = stats.iter().map(|s| s.0).collect();
    let b_over_n = if m > 1 { mean_var(&means).1 } else { 0.0 };
    let nf = n as f64;
    let var_plus = (nf - 1.0) / nf * w + b_over_n;
    if var_plus <= 0.0 {
        return (m * n) as f64;
    }
    // autocovariance (biased, divide by n) averaged over chains
    let acov = |lag: usize| -> f64 {
        chains
            .iter()
            .zip(&stats)
            .map(|(c, (mu, _))| {
                (0..n - lag)
                    .map(|i| (c[i] - mu) * (c[i + lag] - mu))
                    .sum::<f64>()
                    / nf
            })
            .sum::<f64>()
            / m as f64
    };
    let rho = |lag: usize| 1.0 - (w * (nf - 1.0) / nf - acov(lag)) / var_plus;
    let mut sum = 0.0;
    let mut prev_pair = f64::INFINITY;
    let mut t = 0;
    while t + 1 < n {
        let pair = rho(t) + rho(t + 1);
        if pair < 0.0 {
            break;
        }
        let pair = pair.min(prev_pair);
        sum += pair;
        prev_pair = pair;
        t += 2;
    }
    // sum over pairs starting at lag 0 counts rho_0 = 1 once too many
    let total = (m * n) as f64;
    let tau = (-1.0 + 2.0 * sum).max(1.0 / total.log10());
    total / tau
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn iid_chains(seed: u64, m: usize, n: usize, shift: f64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..m)
            .map(|k| {
                (0..n)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        z + shift * k as f64
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn iid_chains_have_rhat_near_one_and_full_ess() {
        let c = iid_chains(1, 4, 1000, 0.0);
        let r = split_rhat(&c);
        assert!(r >= 1.0 && r < 1.01, "{r}");
        let ess = effective_sample_size(&c);
        assert!(ess > 3000.0 && ess < 5000.0, "{ess}");
    }

    #[test]
    fn separated_chains_have_large_rhat() {
        let c = iid_chains(2, 4, 500, 3.0);
        assert!(split_rhat(&c) > 1.5);
    }

    #[test]
    fn autocorrelated_chain_has_small_ess() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let chains: Vec<Vec<f64>> = (0..2)
            .map(|_| {
                let mut x = 0.0;
                (0..2000)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        x = 0.95 * x + z;
                        x
                    })
                    .collect()
            })
            .collect();
        // AR(1) with phi = 0.95: tau = (1 + phi) / (1 - phi) = 39
        let ess = effective_sample_size(&chains);
        assert!(ess > 40.0 && ess < 220.0, "{ess}");
    }

    #[test]
    fn constant_parameter() {
        let c = vec![vec![2.0; 100], vec![2.0; 100]];
        assert_eq!(split_rhat(&c), 1.0);
    }
}
