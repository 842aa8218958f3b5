//! Chain convergence diagnostics: split R-hat and effective sample size.

/// Split R-hat over chains of equal length (each chain is split in half).
/// `chains[c][i]` is draw i of chain c for one parameter.
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    let mut halves: Vec<&[f64]> = Vec::with_capacity(chains.len() * 2);
    for c in chains {
        let mid = c.len() / 2;
        if mid == 0 {
            return f64::NAN;
        }
        halves.push(&c[..mid]);
        halves.push(&c[mid..mid * 2]);
    }
    let m = halves.len() as f64;
    let n = halves[0].len() as f64;
    let means: Vec<f64> = halves.iter().map(|h| mean(h)).collect();
    let grand = mean(&means);
    let b = n / (m - 1.0) * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>();
    let w = halves
        .iter()
        .map(|h| {
            let mu = mean(h);
            h.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (n - 1.0)
        })
        .sum::<f64>()
        / m;
    if w <= 0.0 {
        // Zero within-chain variance: identical draws, treat as converged
        // when the chains agree, NaN otherwise.
        return if b <= 1e-300 { 1.0 } else { f64::NAN };
    }
    let var_plus = (n - 1.0) / n * w + b / n;
    (var_plus / w).sqrt()
}

/// Effective sample size across chains via Geyer's initial monotone
/// positive sequence on the pooled autocorrelation.
pub fn effective_sample_size(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    let n = chains[0].len();
    if n < 4 {
        return f64::NAN;
    }
    let total = (m * n) as f64;
    let chain_means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let chain_vars: Vec<f64> = chains
        .iter()
        .zip(&chain_means)
        .map(|(c, mu)| c.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (n - 1) as f64)
        .collect();
    let w: f64 = chain_vars.iter().sum::<f64>() / m as f64;
    let grand = mean(&chain_means);
    let b_over_n = if m > 1 {
        chain_means.iter().map(|x| (x - grand).powi(2)).sum::<f64>() / (m - 1) as f64
    } else {
        0.0
    };
    let var_plus = (n - 1) as f64 / n as f64 * w + b_over_n;
    if var_plus <= 0.0 {
        return total;
    }

    let acov = |lag: usize| -> f64 {
        let mut s = 0.0;
        for (c, mu) in chains.iter().zip(&chain_means) {
            for i in 0..n - lag {
                s += (c[i] - mu) * (c[i + lag] - mu);
            }
        }
        s / total
    };

    let mut rho_sum = 0.0;
    let mut prev_pair = f64::INFINITY;
    let mut lag = 1;
    while lag + 1 < n {
        let rho_a = 1.0 - (w - acov(lag)) / var_plus;
        let rho_b = 1.0 - (w - acov(lag + 1)) / var_plus;
        let mut pair = rho_a + rho_b;
        if pair < 0.0 {
            break;
        }
        // Initial monotone sequence: never let the pair sum increase.
        pair = pair.min(prev_pair);
        prev_pair = pair;
        rho_sum += pair;
        lag += 2;
    }
    (total / (1.0 + 2.0 * rho_sum)).min(total)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;

    #[test]
    fn iid_chains_look_converged() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let chains: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..1000).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let r = split_rhat(&chains);
        assert!((r - 1.0).abs() < 0.02, "rhat = {r}");
        let ess = effective_sample_size(&chains);
        assert!(ess > 2000.0, "ess = {ess}");
    }

    #[test]
    fn shifted_chain_blows_rhat() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let mut chains: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..500).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        for x in chains[0].iter_mut() {
            *x += 5.0;
        }
        assert!(split_rhat(&chains) > 1.5);
    }

    #[test]
    fn correlated_chain_shrinks_ess() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let chains: Vec<Vec<f64>> = (0..2)
            .map(|_| {
                let mut x = 0.0f64;
                (0..2000)
                    .map(|_| {
                        x = 0.99 * x + rng.random_range(-0.1..0.1);
                        x
                    })
                    .collect()
            })
            .collect();
        let ess = effective_sample_size(&chains);
        assert!(ess < 400.0, "ess = {ess}");
    }
}
