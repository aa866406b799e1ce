use serde::Serialize;

use crate::error::{Error, Result};

/// Added to the diagonal of the normal equations.
pub const RIDGE_JITTER: f64 = 1e-9;
/// Lower bound on the residual variance used by [`posterior_density`].
pub const SIGMA_FLOOR: f64 = 1e-12;

/// Least-squares model of the sensitive value given the known attributes.
///
/// Both the features and the response are centred on their training means; the
/// regression itself has no intercept.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearAttackModel {
    pub offsets: Vec<f64>,
    pub response_offset: f64,
    pub coefficients: Vec<f64>,
    pub sigma_hat_sq: f64,
    pub n_rows: usize,
}

impl LinearAttackModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.response_offset
            + x.iter()
                .zip(&self.offsets)
                .zip(&self.coefficients)
                .map(|((v, o), w)| (v - o) * w)
                .sum::<f64>()
    }
}

/// Gaussian posterior N(x·w, σ̂²) of the sensitive value, evaluated at `candidate`.
pub fn posterior_density(model: &LinearAttackModel, x: &[f64], candidate: f64) -> f64 {
    let var = model.sigma_hat_sq.max(SIGMA_FLOOR);
    let mu = model.predict(x);
    (-(candidate - mu).powi(2) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

/// σ̂² = RSS / (n − p) with p known features; requires n ≥ p + 2.
pub fn fit_linear(x: &[Vec<f64>], y: &[f64]) -> Result<LinearAttackModel> {
    let n = x.len();
    if n != y.len() {
        return Err(Error::InvalidConfig(format!("{n} rows but {} responses", y.len())));
    }
    let p = x.first().map_or(0, Vec::len);
    if x.iter().any(|r| r.len() != p) {
        return Err(Error::InvalidConfig("ragged feature matrix".into()));
    }
    if n < p + 2 {
        return Err(Error::InsufficientRows { needed: p + 2, got: n });
    }
    let nf = n as f64;
    let offsets: Vec<f64> = (0..p).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / nf).collect();
    let response_offset = y.iter().sum::<f64>() / nf;

    let mut gram = vec![vec![0.0; p]; p];
    let mut rhs = vec![0.0; p];
    let mut centred = vec![0.0; p];
    for (row, &target) in x.iter().zip(y) {
        for j in 0..p {
            centred[j] = row[j] - offsets[j];
        }
        let t = target - response_offset;
        for a in 0..p {
            rhs[a] += centred[a] * t;
            for b in 0..=a {
                gram[a][b] += centred[a] * centred[b];
            }
        }
    }
    for a in 0..p {
        gram[a][a] += RIDGE_JITTER;
        for b in 0..a {
            gram[b][a] = gram[a][b];
        }
    }
    let coefficients = cholesky_solve(gram, rhs)?;
    let mut model = LinearAttackModel {
        offsets,
        response_offset,
        coefficients,
        sigma_hat_sq: 0.0,
        n_rows: n,
    };
    let rss: f64 = x.iter().zip(y).map(|(r, t)| (t - model.predict(r)).powi(2)).sum();
    model.sigma_hat_sq = rss / (n - p) as f64;
    Ok(model)
}

fn cholesky_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let p = b.len();
    for j in 0..p {
        let mut diag = a[j][j];
        for k in 0..j {
            diag -= a[j][k] * a[j][k];
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return Err(Error::RankDeficient);
        }
        let l = diag.sqrt();
        a[j][j] = l;
        for i in j + 1..p {
            let mut s = a[i][j];
            for k in 0..j {
                s -= a[i][k] * a[j][k];
            }
            a[i][j] = s / l;
        }
    }
    // forward then back substitution with L and L^T
    for i in 0..p {
        for k in 0..i {
            b[i] -= a[i][k] * b[k];
        }
        b[i] /= a[i][i];
    }
    for i in (0..p).rev() {
        for k in i + 1..p {
            b[i] -= a[k][i] * b[k];
        }
        b[i] /= a[i][i];
    }
    Ok(b)
}

#[cfg(test)]
mod tests {
    use rand::Rng;
    use rand_distr::StandardNormal;

    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn noiseless_recovery() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 * 0.5]).collect();
        let y: Vec<f64> = x.iter().map(|r| 2.0 * r[0]).collect();
        let m = fit_linear(&x, &y).unwrap();
        assert!((m.coefficients[0] - 2.0).abs() < 1e-8);
        assert!(m.sigma_hat_sq <= 1e-12);
    }

    #[test]
    fn independent_noise_gives_small_weight() {
        let mut rng = rng_from_seed(3);
        let n = 2000;
        let x: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.sample::<f64, _>(StandardNormal)]).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let m = fit_linear(&x, &y).unwrap();
        // SE of a slope with unit-variance regressor and noise is about 1/sqrt(n)
        assert!(m.coefficients[0].abs() < 3.0 / (n as f64).sqrt() * 1.2);
    }

    #[test]
    fn too_few_rows() {
        let x = vec![vec![1.0, 2.0], vec![2.0, 1.0], vec![3.0, 3.0]];
        assert!(matches!(fit_linear(&x, &[1.0, 2.0, 3.0]), Err(Error::InsufficientRows { needed: 4, got: 3 })));
    }

    #[test]
    fn density_mode_and_symmetry() {
        let m = LinearAttackModel {
            offsets: vec![0.0],
            response_offset: 1.0,
            coefficients: vec![2.0],
            sigma_hat_sq: 0.25,
            n_rows: 10,
        };
        let mode = posterior_density(&m, &[1.0], 3.0);
        assert!((mode - 1.0 / (2.0 * std::f64::consts::PI * 0.25).sqrt()).abs() < 1e-12);
        assert_eq!(posterior_density(&m, &[1.0], 3.4), posterior_density(&m, &[1.0], 2.6));
    }

    #[test]
    fn collinear_features_survive_via_jitter() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, i as f64]).collect();
        let y: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let m = fit_linear(&x, &y).unwrap();
        assert!((m.predict(&[4.0, 4.0]) - 4.0).abs() < 1e-6);
    }
}
