//! Scalar state evolution for the MMSE-denoiser AMP.
//!
//! The recursion is
//!
//! ```text
//! tau_0^2     = sigma^2/xi + omega eps E_beta[beta]
//! tau_{t+1}^2 = sigma^2/xi + omega eps E_beta[beta tau_t^2 / (beta + tau_t^2)]
//!                          + omega E_beta[vartheta_{t,beta}(tau_t^2)]
//! ```
//!
//! where the finite-antenna correction vartheta has no closed form and is
//! estimated by Monte Carlo. E_beta is the empirical mean over the
//! configured beta vector. The massive-MIMO simplification drops the
//! vartheta term entirely.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;

use crate::amp::phi_statistics;
use crate::error::{Error, Result};
use crate::model::{LargeScaleFading, SystemConfig};
use crate::rng::{mix, substream, stream};

/// Default Monte Carlo budget per state-evolution step.
pub const DEFAULT_SE_SAMPLES: usize = 10_000;
/// Default fixed-point tolerance and iteration cap.
pub const DEFAULT_SE_TOL: f64 = 1e-8;
pub const DEFAULT_SE_MAX_ITER: usize = 500;

const SHARD: usize = 4096;

/// Parameters of the scalar recursion.
#[derive(Debug, Clone, PartialEq)]
pub struct SeParams {
    /// sigma^2 / xi of the normalized system.
    pub noise_over_energy: f64,
    /// omega = N / L.
    pub omega: f64,
    pub eps: f64,
    /// Empirical beta population; E_beta is its arithmetic mean.
    pub betas: Vec<f64>,
    /// Antenna count, entering the finite-M correction term.
    pub m: usize,
}

impl SeParams {
    pub fn new(
        noise_over_energy: f64,
        omega: f64,
        eps: f64,
        betas: Vec<f64>,
        m: usize,
    ) -> Result<Self> {
        let p = SeParams { noise_over_energy, omega, eps, betas, m };
        p.validate()?;
        Ok(p)
    }

    pub fn from_config(cfg: &SystemConfig, fading: &LargeScaleFading) -> Result<Self> {
        Self::new(
            cfg.noise_over_energy(),
            cfg.omega(),
            cfg.activity_prob,
            fading.betas.clone(),
            cfg.n_antennas,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.betas.is_empty() {
            return Err(Error::domain("beta population must be nonempty"));
        }
        if self.betas.iter().any(|b| !(*b > 0.0) || !b.is_finite()) {
            return Err(Error::domain("all betas must be finite and > 0"));
        }
        if !(self.noise_over_energy > 0.0) || !(self.omega > 0.0) {
            return Err(Error::domain("noise_over_energy and omega must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.eps) {
            return Err(Error::domain(format!("eps must lie in [0, 1], got {}", self.eps)));
        }
        if self.m == 0 {
            return Err(Error::domain("m must be >= 1"));
        }
        Ok(())
    }

    fn mean_beta(&self) -> f64 {
        self.betas.iter().sum::<f64>() / self.betas.len() as f64
    }

    fn mean_shrunk(&self, tau_sq: f64) -> f64 {
        self.betas.iter().map(|&b| b * tau_sq / (b + tau_sq)).sum::<f64>()
            / self.betas.len() as f64
    }
}

/// tau_0^2 = sigma^2/xi + omega eps E_beta[beta].
pub fn tau0_sq(p: &SeParams) -> Result<f64> {
    p.validate()?;
    Ok(p.noise_over_energy + p.omega * p.eps * p.mean_beta())
}

/// Monte Carlo estimate (value, standard error) of the correction term
///
/// vartheta = (1/M) E[phi (1-phi) (beta/(beta+tau^2))^2 ||X_hat||^2]
///
/// with X_hat drawn from the two-component mixture: with probability eps all
/// M entries are i.i.d. CN(0, beta + tau^2), otherwise CN(0, tau^2).
///
/// Only the squared norm of X_hat enters the integrand, and under CN(0, v I)
/// it is Gamma(M, scale v), so norms are drawn directly.
pub fn vartheta(
    tau_sq: f64,
    beta: f64,
    p: &SeParams,
    n_samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    p.validate()?;
    if !(tau_sq > 0.0) || !(beta > 0.0) {
        return Err(Error::domain("vartheta requires tau_sq > 0 and beta > 0"));
    }
    if n_samples < 1000 {
        return Err(Error::domain("vartheta needs at least 1e3 samples"));
    }
    let (sum, sum_sq) = (0..n_samples.div_ceil(SHARD))
        .into_par_iter()
        .map(|shard| {
            let count = SHARD.min(n_samples - shard * SHARD);
            let mut rng = substream(mix(seed, &[shard as u64]), stream::MONTE_CARLO);
            let mut s = 0.0;
            let mut s2 = 0.0;
            for _ in 0..count {
                let v = vartheta_sample(tau_sq, beta, p.eps, p.m, &mut rng);
                s += v;
                s2 += v * v;
            }
            (s, s2)
        })
        .reduce(|| (0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let n = n_samples as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0);
    Ok((mean, (var / n).sqrt()))
}

fn vartheta_sample<R: Rng + ?Sized>(
    tau_sq: f64,
    beta: f64,
    eps: f64,
    m: usize,
    rng: &mut R,
) -> f64 {
    let active = rng.gen::<f64>() < eps;
    let v = if active { beta + tau_sq } else { tau_sq };
    let norm_sq = Gamma::new(m as f64, v).expect("gamma params").sample(rng);
    let (phi, _, _) = phi_statistics(norm_sq, beta, tau_sq, eps, m).expect("phi domain");
    let g = beta / (beta + tau_sq);
    phi * (1.0 - phi) * g * g * norm_sq / m as f64
}

/// One step of the full recursion. The Monte Carlo budget is spread over the
/// beta population (one stratum per beta value).
#[derive(Debug, Clone, PartialEq)]
pub struct SeStep {
    pub tau_next_sq: f64,
    pub vartheta_mean: f64,
    pub vartheta_se: f64,
}

pub fn se_step(tau_sq: f64, p: &SeParams, n_samples: usize, seed: u64) -> Result<SeStep> {
    p.validate()?;
    if !(tau_sq > 0.0) {
        return Err(Error::domain("tau_sq must be > 0"));
    }
    if n_samples < 1000 {
        return Err(Error::domain("se_step needs at least 1e3 samples"));
    }
    // E_beta[vartheta]: stratified over the beta vector, fused into one MC
    // loop; sample i uses beta[i mod n_betas].
    let n_betas = p.betas.len();
    let (sum, sum_sq) = (0..n_samples.div_ceil(SHARD))
        .into_par_iter()
        .map(|shard| {
            let count = SHARD.min(n_samples - shard * SHARD);
            let mut rng = substream(mix(seed, &[shard as u64]), stream::MONTE_CARLO);
            let mut s = 0.0;
            let mut s2 = 0.0;
            for i in 0..count {
                let beta = p.betas[(shard * SHARD + i) % n_betas];
                let v = vartheta_sample(tau_sq, beta, p.eps, p.m, &mut rng);
                s += v;
                s2 += v * v;
            }
            (s, s2)
        })
        .reduce(|| (0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let n = n_samples as f64;
    let vartheta_mean = sum / n;
    let var = (sum_sq / n - vartheta_mean * vartheta_mean).max(0.0);
    let vartheta_se = (var / n).sqrt();
    Ok(SeStep {
        tau_next_sq: p.noise_over_energy
            + p.omega * p.eps * p.mean_shrunk(tau_sq)
            + p.omega * vartheta_mean,
        vartheta_mean,
        vartheta_se,
    })
}

/// The massive-MIMO simplification: the vartheta term is dropped.
pub fn se_step_asymptotic(tau_sq: f64, p: &SeParams) -> Result<f64> {
    p.validate()?;
    if !(tau_sq > 0.0) {
        return Err(Error::domain("tau_sq must be > 0"));
    }
    Ok(p.noise_over_energy + p.omega * p.eps * p.mean_shrunk(tau_sq))
}

/// Which recursion to iterate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeVariant {
    Full,
    Asymptotic,
}

/// Trajectory of the recursion, ending at (or stopping short of) the fixed
/// point.
#[derive(Debug, Clone, PartialEq)]
pub struct SeTrajectory {
    /// tau_t^2 including the initial point tau_0^2.
    pub taus: Vec<f64>,
    pub fixed_point: f64,
    pub converged: bool,
    /// (estimate, standard error) of E_beta[vartheta] per performed step;
    /// empty for the asymptotic variant.
    pub vartheta_trace: Vec<(f64, f64)>,
}

impl SeTrajectory {
    /// CSV rows (t, tau_sq, vartheta, vartheta_se).
    pub fn csv(&self) -> String {
        let mut out = String::from("t,tau_sq,vartheta,vartheta_se\n");
        for (t, &tau) in self.taus.iter().enumerate() {
            let (v, se) = if t > 0 && t - 1 < self.vartheta_trace.len() {
                let (v, se) = self.vartheta_trace[t - 1];
                (format!("{v:.16e}"), format!("{se:.16e}"))
            } else {
                (String::new(), String::new())
            };
            out.push_str(&format!("{t},{tau:.16e},{v},{se}\n"));
        }
        out
    }
}

/// Successive substitution from tau_0^2 until |delta tau^2| / tau^2 < tol or
/// `max_iter` steps. Non-convergence is flagged, not an error.
pub fn se_fixed_point(
    p: &SeParams,
    variant: SeVariant,
    tol: f64,
    max_iter: usize,
    n_samples: usize,
    seed: u64,
) -> Result<SeTrajectory> {
    if !(tol > 0.0) {
        return Err(Error::domain("tol must be > 0"));
    }
    let mut tau = tau0_sq(p)?;
    let mut taus = vec![tau];
    let mut vartheta_trace = Vec::new();
    let mut converged = false;
    for t in 0..max_iter {
        let next = match variant {
            SeVariant::Asymptotic => se_step_asymptotic(tau, p)?,
            SeVariant::Full => {
                let step = se_step(tau, p, n_samples, mix(seed, &[t as u64]))?;
                vartheta_trace.push((step.vartheta_mean, step.vartheta_se));
                step.tau_next_sq
            }
        };
        taus.push(next);
        if (next - tau).abs() / tau < tol {
            converged = true;
            tau = next;
            break;
        }
        tau = next;
    }
    Ok(SeTrajectory { taus, fixed_point: tau, converged, vartheta_trace })
}
