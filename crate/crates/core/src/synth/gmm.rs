//! One-dimensional Gaussian mixtures fitted by expectation-maximization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Variances never drop below this, so point masses stay well defined.
pub const VARIANCE_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub weight: f64,
    pub mean: f64,
    pub variance: f64,
}

/// Components are kept sorted by mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gmm {
    pub components: Vec<Component>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EmOptions {
    pub max_iter: usize,
    /// Stop once the mean log-likelihood per sample improves by less than this.
    pub tol: f64,
    pub seed: u64,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions { max_iter: 200, tol: 1e-6, seed: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EmReport {
    pub iterations: usize,
    pub converged: bool,
    /// Mean log-likelihood per sample at the final parameters.
    pub log_likelihood: f64,
    /// Components actually fitted (fewer than requested with too few samples).
    pub components: usize,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GmmError {
    #[error("cannot fit a mixture to zero samples")]
    NoSamples,
    #[error("component count must be at least 1")]
    NoComponents,
    #[error("samples must be finite")]
    NonFinite,
}

fn log_normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * ((x - mean).powi(2) / var + var.ln() + std::f64::consts::TAU.ln())
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// k-means++ seeding: first center uniform, then proportional to squared
/// distance from the nearest chosen center.
pub(crate) fn kmeanspp<T>(points: &[T], k: usize, dist2: impl Fn(&T, &T) -> f64, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut centers = vec![rng.random_range(0..points.len())];
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &points[centers[0]])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total <= 0.0 {
            // every point coincides with a center; take the first unused index
            (0..points.len()).find(|i| !centers.contains(i)).unwrap_or(0)
        } else {
            let mut u = rng.random::<f64>() * total;
            let mut chosen = points.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if u < d {
                    chosen = i;
                    break;
                }
                u -= d;
            }
            chosen
        };
        centers.push(pick);
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(dist2(p, &points[pick]));
        }
    }
    centers
}

impl Gmm {
    /// Fits `k` components; with fewer than `k` samples a single component
    /// is fitted instead (see [`EmReport::components`]).
    pub fn fit(xs: &[f64], k: usize, opts: &EmOptions) -> Result<(Gmm, EmReport), GmmError> {
        if xs.is_empty() {
            return Err(GmmError::NoSamples);
        }
        if k == 0 {
            return Err(GmmError::NoComponents);
        }
        if xs.iter().any(|x| !x.is_finite()) {
            return Err(GmmError::NonFinite);
        }
        let k = if xs.len() < k { 1 } else { k };
        let n = xs.len();
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

        // initialize from a hard assignment to k-means++ centers
        let centers: Vec<f64> = kmeanspp(xs, k, |a, b| (a - b).powi(2), &mut rng).into_iter().map(|i| xs[i]).collect();
        let mut resp = vec![0.0; n * k];
        for (i, &x) in xs.iter().enumerate() {
            let j = (0..k)
                .min_by(|&a, &b| (x - centers[a]).abs().total_cmp(&(x - centers[b]).abs()))
                .expect("k >= 1");
            resp[i * k + j] = 1.0;
        }
        let mut comps = vec![Component { weight: 0.0, mean: 0.0, variance: 0.0 }; k];
        m_step(xs, &resp, &mut comps);

        let mut prev = f64::NEG_INFINITY;
        let mut report = EmReport { iterations: 0, converged: false, log_likelihood: prev, components: k };
        let mut logp = vec![0.0; k];
        for it in 1..=opts.max_iter {
            // E step
            let mut ll = 0.0;
            for (i, &x) in xs.iter().enumerate() {
                for (j, c) in comps.iter().enumerate() {
                    logp[j] = c.weight.ln() + log_normal_pdf(x, c.mean, c.variance);
                }
                let z = log_sum_exp(&logp);
                ll += z;
                for j in 0..k {
                    resp[i * k + j] = (logp[j] - z).exp();
                }
            }
            let ll = ll / n as f64;
            report.iterations = it;
            report.log_likelihood = ll;
            if (ll - prev).abs() < opts.tol {
                report.converged = true;
                break;
            }
            prev = ll;
            m_step(xs, &resp, &mut comps);
        }
        comps.sort_by(|a, b| a.mean.total_cmp(&b.mean));
        Ok((Gmm { components: comps }, report))
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        let mut u = rng.random::<f64>();
        let mut pick = self.components.last().expect("mixture has components");
        for c in &self.components {
            if u < c.weight {
                pick = c;
                break;
            }
            u -= c.weight;
        }
        Normal::new(pick.mean, pick.variance.sqrt()).expect("variance is positive").sample(rng)
    }

    pub fn is_consistent(&self) -> bool {
        let w: f64 = self.components.iter().map(|c| c.weight).sum();
        !self.components.is_empty() && (w - 1.0).abs() < 1e-9 && self.components.iter().all(|c| c.variance > 0.0)
    }
}

fn m_step(xs: &[f64], resp: &[f64], comps: &mut [Component]) {
    let k = comps.len();
    let n = xs.len() as f64;
    for (j, c) in comps.iter_mut().enumerate() {
        let nk: f64 = (0..xs.len()).map(|i| resp[i * k + j]).sum();
        if nk <= f64::MIN_POSITIVE {
            // empty component: keep it alive with negligible weight
            c.weight = f64::MIN_POSITIVE;
            c.variance = c.variance.max(VARIANCE_FLOOR);
            continue;
        }
        let mean = xs.iter().enumerate().map(|(i, x)| resp[i * k + j] * x).sum::<f64>() / nk;
        let var = xs.iter().enumerate().map(|(i, x)| resp[i * k + j] * (x - mean).powi(2)).sum::<f64>() / nk;
        *c = Component { weight: nk / n, mean, variance: var.max(VARIANCE_FLOOR) };
    }
    let total: f64 = comps.iter().map(|c| c.weight).sum();
    comps.iter_mut().for_each(|c| c.weight /= total);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_point_is_degenerate_but_valid() {
        let (g, r) = Gmm::fit(&[12.0], 2, &EmOptions::default()).unwrap();
        assert_eq!(r.components, 1);
        assert_eq!(g.components[0].mean, 12.0);
        assert_eq!(g.components[0].variance, VARIANCE_FLOOR);
        assert!(g.is_consistent());
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(Gmm::fit(&[], 1, &EmOptions::default()).unwrap_err(), GmmError::NoSamples);
        assert_eq!(Gmm::fit(&[1.0], 0, &EmOptions::default()).unwrap_err(), GmmError::NoComponents);
        assert_eq!(Gmm::fit(&[f64::NAN], 1, &EmOptions::default()).unwrap_err(), GmmError::NonFinite);
    }

    #[test]
    fn separates_two_clumps() {
        let xs: Vec<f64> = (0..50).map(|i| 3.0 + 0.01 * i as f64).chain((0..150).map(|i| 9.0 + 0.01 * i as f64)).collect();
        let (g, r) = Gmm::fit(&xs, 2, &EmOptions::default()).unwrap();
        assert!(r.converged);
        assert!((g.components[0].weight - 0.25).abs() < 1e-6);
        assert!((g.components[1].mean - 9.745).abs() < 1e-6);
    }
}
