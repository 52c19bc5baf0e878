//! (μ/μ_w, λ)-CMA-ES with the standard default strategy parameters.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

const SIGMA_MIN: f64 = 1e-12;
const SIGMA_MAX: f64 = 1e6;

#[derive(Clone, Debug, PartialEq)]
pub struct CmaEsParams {
    pub dimension: usize,
    /// Offspring per generation; `None` uses `4 + ⌊3 ln n⌋`.
    pub population: Option<usize>,
    pub initial_sigma: f64,
    pub seed: u64,
}

/// Minimising CMA-ES. Call [`CmaEs::ask`] then [`CmaEs::tell`] once per
/// generation.
#[derive(Clone, Debug)]
pub struct CmaEs {
    n: usize,
    lambda: usize,
    mu: usize,
    weights: Vec<f64>,
    mueff: f64,
    cc: f64,
    cs: f64,
    c1: f64,
    cmu: f64,
    damps: f64,
    chi_n: f64,
    mean: DVector<f64>,
    sigma: f64,
    cov: DMatrix<f64>,
    /// Eigenvectors of `cov`.
    basis: DMatrix<f64>,
    /// Square roots of the eigenvalues of `cov`.
    scales: DVector<f64>,
    pc: DVector<f64>,
    ps: DVector<f64>,
    generation: usize,
    rng: ChaCha8Rng,
}

impl CmaEs {
    pub fn new(mean: &[f64], params: &CmaEsParams) -> Result<Self> {
        let n = params.dimension;
        if n == 0 || mean.len() != n {
            return Err(Error::invalid("CMA-ES mean must match a positive dimension"));
        }
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::invalid("CMA-ES mean must be finite"));
        }
        if !(params.initial_sigma > 0.0 && params.initial_sigma.is_finite()) {
            return Err(Error::invalid("initial step size must be positive"));
        }
        let nf = n as f64;
        let lambda = params.population.unwrap_or(4 + (3.0 * nf.ln()).floor() as usize);
        if lambda < 4 {
            return Err(Error::invalid(format!("population must be at least 4, got {lambda}")));
        }
        let mu = lambda / 2;
        let raw: Vec<f64> = (1..=mu)
            .map(|i| ((lambda as f64 + 1.0) / 2.0).ln() - (i as f64).ln())
            .collect();
        let sum: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / sum).collect();
        let mueff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        let cc = (4.0 + mueff / nf) / (nf + 4.0 + 2.0 * mueff / nf);
        let cs = (mueff + 2.0) / (nf + mueff + 5.0);
        let c1 = 2.0 / ((nf + 1.3).powi(2) + mueff);
        let cmu = (1.0 - c1).min(2.0 * (mueff - 2.0 + 1.0 / mueff) / ((nf + 2.0).powi(2) + mueff));
        let damps = 1.0 + 2.0 * (((mueff - 1.0) / (nf + 1.0)).sqrt() - 1.0).max(0.0) + cs;
        let chi_n = nf.sqrt() * (1.0 - 1.0 / (4.0 * nf) + 1.0 / (21.0 * nf * nf));
        Ok(Self {
            n,
            lambda,
            mu,
            weights,
            mueff,
            cc,
            cs,
            c1,
            cmu,
            damps,
            chi_n,
            mean: DVector::from_column_slice(mean),
            sigma: params.initial_sigma,
            cov: DMatrix::identity(n, n),
            basis: DMatrix::identity(n, n),
            scales: DVector::from_element(n, 1.0),
            pc: DVector::zeros(n),
            ps: DVector::zeros(n),
            generation: 0,
            rng: ChaCha8Rng::seed_from_u64(params.seed),
        })
    }

    pub fn population(&self) -> usize {
        self.lambda
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.as_slice()
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn generation(&self) -> usize {
        self.generation
    }

    /// Samples `λ` candidates `m + σ·B·D·z`.
    pub fn ask(&mut self) -> Vec<Vec<f64>> {
        (0..self.lambda)
            .map(|_| {
                let z = DVector::from_fn(self.n, |_, _| self.rng.sample::<f64, _>(StandardNormal));
                let y = &self.basis * z.component_mul(&self.scales);
                (&self.mean + y * self.sigma).as_slice().to_vec()
            })
            .collect()
    }

    /// Updates the distribution from evaluated candidates. Equal fitness
    /// values keep candidate order.
    pub fn tell(&mut self, candidates: &[Vec<f64>], fitness: &[f64]) -> Result<()> {
        if candidates.len() != self.lambda || fitness.len() != self.lambda {
            return Err(Error::invalid(format!("expected {} evaluated candidates", self.lambda)));
        }
        if fitness.iter().any(|f| f.is_nan()) {
            return Err(Error::invalid("fitness values must not be NaN"));
        }
        let mut order: Vec<usize> = (0..self.lambda).collect();
        order.sort_by(|&a, &b| fitness[a].total_cmp(&fitness[b]).then(a.cmp(&b)));

        let n = self.n as f64;
        let old_mean = self.mean.clone();
        let steps: Vec<DVector<f64>> = order[..self.mu]
            .iter()
            .map(|&i| (DVector::from_column_slice(&candidates[i]) - &old_mean) / self.sigma)
            .collect();
        let y_w = steps
            .iter()
            .zip(&self.weights)
            .fold(DVector::zeros(self.n), |acc, (y, w)| acc + y * *w);
        self.mean = &old_mean + &y_w * self.sigma;

        // C^{-1/2} y_w = B D^{-1} Bᵀ y_w.
        let inv_sqrt = &self.basis * (self.basis.transpose() * &y_w).component_div(&self.scales);
        self.ps = &self.ps * (1.0 - self.cs) + inv_sqrt * (self.cs * (2.0 - self.cs) * self.mueff).sqrt();
        let gen = (self.generation + 1) as f64;
        let ps_norm = self.ps.norm();
        let hsig = ps_norm / (1.0 - (1.0 - self.cs).powf(2.0 * gen)).sqrt() / self.chi_n < 1.4 + 2.0 / (n + 1.0);
        let h = if hsig { 1.0 } else { 0.0 };
        self.pc = &self.pc * (1.0 - self.cc) + &y_w * (h * (self.cc * (2.0 - self.cc) * self.mueff).sqrt());

        let rank_mu = steps
            .iter()
            .zip(&self.weights)
            .fold(DMatrix::zeros(self.n, self.n), |acc, (y, w)| acc + y * y.transpose() * *w);
        let decay = 1.0 - self.c1 - self.cmu + (1.0 - h) * self.c1 * self.cc * (2.0 - self.cc);
        self.cov = &self.cov * decay + &self.pc * self.pc.transpose() * self.c1 + rank_mu * self.cmu;
        self.cov = (&self.cov + self.cov.transpose()) * 0.5;

        self.sigma *= ((self.cs / self.damps) * (ps_norm / self.chi_n - 1.0)).exp();
        // Flat fitness: widen the search instead of collapsing.
        let kth = order[((0.7 * self.lambda as f64).ceil() as usize).min(self.lambda - 1)];
        if fitness[order[0]] == fitness[kth] {
            self.sigma *= (0.2 + self.cs / self.damps).exp();
        }
        self.sigma = self.sigma.clamp(SIGMA_MIN, SIGMA_MAX);
        self.generation += 1;
        self.decompose()
    }

    fn decompose(&mut self) -> Result<()> {
        if self.cov.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invariant("covariance matrix is not finite".into()));
        }
        if self.cov.clone().cholesky().is_none() {
            return Err(Error::Invariant(format!(
                "covariance matrix lost positive definiteness at generation {}",
                self.generation
            )));
        }
        let eig = SymmetricEigen::new(self.cov.clone());
        if eig.eigenvalues.iter().any(|&v| v <= 0.0) {
            return Err(Error::Invariant("covariance matrix has a non-positive eigenvalue".into()));
        }
        self.basis = eig.eigenvectors;
        self.scales = eig.eigenvalues.map(f64::sqrt);
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::Invariant(format!("step size {} is not finite and positive", self.sigma)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(seed: u64) -> CmaEsParams {
        CmaEsParams {
            dimension: 2,
            population: None,
            initial_sigma: 0.5,
            seed,
        }
    }

    fn sphere(x: &[f64]) -> f64 {
        (x[0] - 1.0).powi(2) + (x[1] + 2.0).powi(2)
    }

    fn run(seed: u64, generations: usize) -> CmaEs {
        let mut es = CmaEs::new(&[0.0, 0.0], &params(seed)).unwrap();
        for _ in 0..generations {
            let xs = es.ask();
            let f: Vec<f64> = xs.iter().map(|x| sphere(x)).collect();
            es.tell(&xs, &f).unwrap();
        }
        es
    }

    #[test]
    fn default_population() {
        assert_eq!(CmaEs::new(&[0.0, 0.0], &params(0)).unwrap().population(), 6);
        let three = CmaEsParams { dimension: 3, ..params(0) };
        assert_eq!(CmaEs::new(&[0.0; 3], &three).unwrap().population(), 7);
        let small = CmaEsParams { population: Some(3), ..params(0) };
        assert!(CmaEs::new(&[0.0, 0.0], &small).is_err());
    }

    #[test]
    fn converges_on_sphere() {
        let es = run(7, 150);
        assert!(sphere(es.mean()) < 1e-8, "{:?}", es.mean());
        assert!(es.sigma() > 0.0 && es.sigma().is_finite());
    }

    #[test]
    fn deterministic_per_seed() {
        let a = run(3, 20);
        let b = run(3, 20);
        assert_eq!(a.mean(), b.mean());
        assert_eq!(a.sigma(), b.sigma());
        assert_ne!(run(4, 20).mean(), a.mean());
    }

    #[test]
    fn flat_fitness_grows_sigma() {
        let mut es = CmaEs::new(&[0.0, 0.0], &params(1)).unwrap();
        let before = es.sigma();
        for _ in 0..5 {
            let xs = es.ask();
            es.tell(&xs, &vec![1.0; xs.len()]).unwrap();
        }
        assert!(es.sigma() > before);
        assert!(es.covariance().clone().cholesky().is_some());
    }
}
