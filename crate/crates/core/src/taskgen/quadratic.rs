use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{EmoError, Result};
use crate::numcore::{Graph, SmallMatrix, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticConfig {
    pub dim: usize,
    pub mu: f64,
    pub l: f64,
    pub sigma: f64,
}

impl QuadraticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(EmoError::Config("quadratic dim must be >= 1".into()));
        }
        if !(self.mu > 0.0 && self.mu <= self.l && self.l.is_finite()) {
            return Err(EmoError::Config(format!("need 0 < mu <= L, got mu={}, L={}", self.mu, self.l)));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(EmoError::Config(format!("sigma must be finite and >= 0, got {}", self.sigma)));
        }
        Ok(())
    }
}

/// `f(θ) = ½ (θ − θ*)ᵀ H (θ − θ*)` with `μ ≤ eig(H) ≤ L` and gradients
/// observed through additive `N(0, σ² I)` noise.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticTask {
    pub h: SmallMatrix,
    pub eigenvalues: Vec<f64>,
    pub theta_star: Vec<f64>,
    pub sigma: f64,
    pub mu: f64,
    pub l: f64,
}

impl QuadraticTask {
    pub fn new(h: SmallMatrix, theta_star: Vec<f64>, sigma: f64) -> Result<Self> {
        if h.rows() != h.cols() || h.rows() != theta_star.len() {
            return Err(EmoError::Shape(format!(
                "H is {}x{}, theta* has {} entries",
                h.rows(),
                h.cols(),
                theta_star.len()
            )));
        }
        let eigenvalues = crate::numcore::linalg::sym_eigenvalues(&h)?;
        let mu = eigenvalues[0];
        let l = *eigenvalues.last().unwrap();
        if mu <= 0.0 {
            return Err(EmoError::Config(format!("H must be positive definite, smallest eigenvalue {mu}")));
        }
        Ok(Self { h, eigenvalues, theta_star, sigma, mu, l })
    }

    pub fn dim(&self) -> usize {
        self.theta_star.len()
    }

    pub fn value(&self, theta: &[f64]) -> f64 {
        let d: Vec<f64> = theta.iter().zip(&self.theta_star).map(|(a, b)| a - b).collect();
        let hd = self.h.mul_vec(&d).expect("dimension checked at construction");
        0.5 * d.iter().zip(&hd).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let d: Vec<f64> = theta.iter().zip(&self.theta_star).map(|(a, b)| a - b).collect();
        self.h.mul_vec(&d).expect("dimension checked at construction")
    }

    pub fn noise(&self, rng: &mut impl Rng) -> Vec<f64> {
        (0..self.dim())
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                self.sigma * z
            })
            .collect()
    }

    pub fn noisy_gradient(&self, theta: &[f64], rng: &mut impl Rng) -> Vec<f64> {
        let mut g = self.gradient(theta);
        for (gi, e) in g.iter_mut().zip(self.noise(rng)) {
            *gi += e;
        }
        g
    }

    /// The objective recorded on a graph, for `theta` of shape `[d]`.
    pub fn value_var(&self, g: &mut Graph, theta: Var) -> Result<Var> {
        let d = self.dim();
        let star = g.constant(Tensor::vector(self.theta_star.clone()));
        let diff = g.sub(theta, star)?;
        let row = g.reshape(diff, &[1, d])?;
        let h = g.constant(Tensor::matrix(d, d, self.h.data().to_vec())?);
        let hd = g.matmul(row, h)?;
        let prod = g.mul(hd, row)?;
        let s = g.sum(prod);
        Ok(g.scale(s, 0.5))
    }
}

fn random_rotation(d: usize, rng: &mut impl Rng) -> SmallMatrix {
    // Gram-Schmidt on Gaussian columns
    loop {
        let mut cols: Vec<Vec<f64>> = Vec::with_capacity(d);
        let mut ok = true;
        for _ in 0..d {
            let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
            for c in &cols {
                let dot: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(c).for_each(|(a, b)| *a -= dot * b);
            }
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n < 1e-8 {
                ok = false;
                break;
            }
            v.iter_mut().for_each(|x| *x /= n);
            cols.push(v);
        }
        if ok {
            let mut q = SmallMatrix::zeros(d, d);
            for (j, c) in cols.iter().enumerate() {
                for (i, &v) in c.iter().enumerate() {
                    q.set(i, j, v);
                }
            }
            return q;
        }
    }
}

/// `H = Q Λ Qᵀ` with `Λ` uniform in `[μ, L]`, `Q` a random rotation and
/// `θ*` uniform in `[−1, 1]^d`.
pub fn sample_quadratic_task(cfg: &QuadraticConfig, rng: &mut impl Rng) -> Result<QuadraticTask> {
    cfg.validate()?;
    let d = cfg.dim;
    let lambdas: Vec<f64> = (0..d)
        .map(|_| if cfg.mu == cfg.l { cfg.mu } else { rng.random_range(cfg.mu..=cfg.l) })
        .collect();
    let q = random_rotation(d, rng);
    let mut h = SmallMatrix::zeros(d, d);
    for i in 0..d {
        for j in i..d {
            let v: f64 = (0..d).map(|k| q.get(i, k) * lambdas[k] * q.get(j, k)).sum();
            h.set(i, j, v);
            h.set(j, i, v);
        }
    }
    let theta_star: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let mut task = QuadraticTask::new(h, theta_star, cfg.sigma)?;
    // report the generating spectrum bounds rather than the recomputed ones
    task.mu = cfg.mu;
    task.l = cfg.l;
    Ok(task)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn scalar_unit_bowl() {
        let cfg = QuadraticConfig { dim: 1, mu: 1.0, l: 1.0, sigma: 0.0 };
        let t = sample_quadratic_task(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(t.h.data(), &[1.0]);
        let ts = t.theta_star[0];
        assert!((t.value(&[ts + 2.0]) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn spectrum_within_bounds() {
        let cfg = QuadraticConfig { dim: 6, mu: 0.5, l: 7.0, sigma: 0.1 };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let t = sample_quadratic_task(&cfg, &mut rng).unwrap();
            for e in &t.eigenvalues {
                assert!(*e >= cfg.mu - 1e-9 && *e <= cfg.l + 1e-9, "{e}");
            }
            assert!(t.theta_star.iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn noisy_gradient_at_optimum_is_centered() {
        let cfg = QuadraticConfig { dim: 2, mu: 1.0, l: 10.0, sigma: 0.3 };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = sample_quadratic_task(&cfg, &mut rng).unwrap();
        let n = 100_000;
        let mut mean = [0.0; 2];
        for _ in 0..n {
            let g = t.noisy_gradient(&t.theta_star, &mut rng);
            mean[0] += g[0] / n as f64;
            mean[1] += g[1] / n as f64;
        }
        let tol = 3.0 * cfg.sigma / (n as f64).sqrt();
        assert!(mean.iter().all(|m| m.abs() <= tol), "{mean:?} vs {tol}");
    }

    #[test]
    fn analytic_gradient_matches_autodiff() {
        let cfg = QuadraticConfig { dim: 4, mu: 1.0, l: 10.0, sigma: 0.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = sample_quadratic_task(&cfg, &mut rng).unwrap();
        let theta = vec![0.3, -0.7, 1.5, 0.2];
        let mut g = Graph::new();
        let th = g.leaf(Tensor::vector(theta.clone()));
        let f = t.value_var(&mut g, th).unwrap();
        assert!((g.value(f).item() - t.value(&theta)).abs() < 1e-12);
        let gr = g.gradients(f, &[th]).unwrap();
        for (a, b) in g.value(gr[0]).data().iter().zip(t.gradient(&theta)) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn rejects_bad_curvature() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_quadratic_task(&QuadraticConfig { dim: 2, mu: 0.0, l: 1.0, sigma: 0.0 }, &mut rng).is_err());
        assert!(sample_quadratic_task(&QuadraticConfig { dim: 2, mu: 2.0, l: 1.0, sigma: 0.0 }, &mut rng).is_err());
    }
}
