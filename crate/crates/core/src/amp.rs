//! Vector AMP with the Bernoulli-Gaussian MMSE denoiser and Onsager
//! correction.
//!
//! The model Y = sqrt(xi) A X + Z is normalized internally by dividing Y by
//! sqrt(xi), so the effective noise variance is sigma^2/xi and all denoiser
//! math operates on the normalized system.
//!
//! Starting from X^0 = 0 and R^0 = Y, each iteration matched-filters the
//! residual per device, denoises, and updates the residual with the Onsager
//! term (N/L) R^t times the mean denoiser divergence. The derivative
//! convention for the complex vector case is the Wirtinger derivative of the
//! scalar-form denoiser (holomorphic part); the conjugate-part trace is also
//! available for experimentation.

use ndarray::{Array1, Array2, ArrayView1};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::{LargeScaleFading, PilotMatrix, ReceivedMatrix, SystemConfig};

/// Default iteration budget; runs stop early once tau^2 settles.
pub const DEFAULT_MAX_ITERS: usize = 25;
/// Early-stop tolerance on the relative change of tau^2.
pub const TAU_RELTOL: f64 = 1e-6;

/// How tau_t^2 is chosen at each iteration.
#[derive(Debug, Clone, PartialEq)]
pub enum TauPolicy {
    /// tau_t^2 = ||R^t||_F^2 / (L M), measured from the current residual.
    Empirical,
    /// tau_t^2 taken from a precomputed schedule (state-evolution oracle).
    /// Iterations beyond the schedule hold its last value.
    Schedule(Vec<f64>),
}

impl TauPolicy {
    fn tau_for(&self, state: &AmpState) -> f64 {
        match self {
            TauPolicy::Empirical => {
                let (l, m) = state.residual.dim();
                state.residual.iter().map(|v| v.norm_sqr()).sum::<f64>() / (l * m) as f64
            }
            TauPolicy::Schedule(taus) => {
                let idx = state.iter.min(taus.len().saturating_sub(1));
                taus[idx]
            }
        }
    }
}

/// AMP iterate: estimate X^t, residual R^t, iteration counter and the
/// noise-state tau_t^2 in effect for this iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct AmpState {
    pub x_est: Array2<Complex64>,
    pub residual: Array2<Complex64>,
    pub iter: usize,
    pub tau_sq: f64,
}

/// Denoiser output for one device.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserOutput {
    /// eta(x_hat) = phi * beta/(beta + tau^2) * x_hat.
    pub value: Array1<Complex64>,
    /// Activity posterior weight in [0, 1].
    pub phi: f64,
    pub pi_stat: f64,
    pub psi_stat: f64,
    /// Mean diagonal of the Wirtinger Jacobian, for the Onsager term.
    pub divergence: f64,
}

/// (phi, pi, psi) from the squared norm of the matched-filter statistic,
/// computed in log space so exp(M(pi - psi)) never overflows.
///
/// pi = (1/tau^2 - 1/(tau^2+beta)) ||x_hat||^2 / M, psi = log(1 + beta/tau^2),
/// phi = 1 / (1 + (1-eps)/eps * exp(-M (pi - psi))).
pub fn phi_statistics(
    norm_sq: f64,
    beta: f64,
    tau_sq: f64,
    eps: f64,
    m: usize,
) -> Result<(f64, f64, f64)> {
    check_denoiser_args(beta, tau_sq, eps)?;
    if m == 0 {
        return Err(Error::domain("m must be >= 1"));
    }
    let s = 1.0 / tau_sq - 1.0 / (tau_sq + beta);
    let pi = s * norm_sq / m as f64;
    let psi = (1.0 + beta / tau_sq).ln();
    let phi = if eps == 0.0 {
        0.0
    } else if eps == 1.0 {
        1.0
    } else {
        // phi = sigmoid(M (pi - psi) - log((1-eps)/eps))
        sigmoid(m as f64 * (pi - psi) - ((1.0 - eps) / eps).ln())
    };
    Ok((phi, pi, psi))
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn check_denoiser_args(beta: f64, tau_sq: f64, eps: f64) -> Result<()> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::domain(format!("beta must be finite and > 0, got {beta}")));
    }
    if !(tau_sq > 0.0) || !tau_sq.is_finite() {
        return Err(Error::domain(format!("tau_sq must be finite and > 0, got {tau_sq}")));
    }
    if !(0.0..=1.0).contains(&eps) {
        return Err(Error::domain(format!("eps must lie in [0, 1], got {eps}")));
    }
    Ok(())
}

/// Bernoulli-Gaussian MMSE denoiser for one device.
///
/// eps = 0 degenerates to phi = 0, value = 0.
pub fn mmse_denoise(
    x_hat: ArrayView1<Complex64>,
    beta: f64,
    tau_sq: f64,
    eps: f64,
) -> Result<DenoiserOutput> {
    let m = x_hat.len();
    let norm_sq = x_hat.iter().map(|v| v.norm_sqr()).sum::<f64>();
    let (phi, pi, psi) = phi_statistics(norm_sq, beta, tau_sq, eps, m)?;
    let gain = beta / (beta + tau_sq);
    let scale = Complex64::new(phi * gain, 0.0);
    let value = x_hat.mapv(|v| v * scale);
    let divergence = divergence_from_stats(norm_sq, phi, beta, tau_sq, m);
    Ok(DenoiserOutput { value, phi, pi_stat: pi, psi_stat: psi, divergence })
}

/// trace(Jacobian)/M of the scalar-form denoiser under the Wirtinger
/// convention: g phi + g phi (1 - phi) s ||x_hat||^2 / M with
/// g = beta/(beta+tau^2) and s = 1/tau^2 - 1/(tau^2+beta).
fn divergence_from_stats(norm_sq: f64, phi: f64, beta: f64, tau_sq: f64, m: usize) -> f64 {
    let gain = beta / (beta + tau_sq);
    let s = 1.0 / tau_sq - 1.0 / (tau_sq + beta);
    // 1 - phi computed as a sigmoid of the negated logit would be more
    // precise, but phi(1-phi) only matters near the decision boundary where
    // both factors are O(1); f64 rounding is immaterial there.
    gain * phi + gain * phi * (1.0 - phi) * s * norm_sq / m as f64
}

/// Mean diagonal of the denoiser Jacobian (Onsager derivative).
pub fn denoiser_divergence(
    x_hat: ArrayView1<Complex64>,
    beta: f64,
    tau_sq: f64,
    eps: f64,
) -> Result<f64> {
    Ok(mmse_denoise(x_hat, beta, tau_sq, eps)?.divergence)
}

/// Trace/M of the conjugate (non-holomorphic) part of the Jacobian,
/// g phi (1 - phi) s (1/M) sum_i x_hat_i^2. Exposed for experimentation;
/// the Onsager term uses only the Wirtinger part.
pub fn denoiser_divergence_conjugate(
    x_hat: ArrayView1<Complex64>,
    beta: f64,
    tau_sq: f64,
    eps: f64,
) -> Result<Complex64> {
    let m = x_hat.len();
    let norm_sq = x_hat.iter().map(|v| v.norm_sqr()).sum::<f64>();
    let (phi, _, _) = phi_statistics(norm_sq, beta, tau_sq, eps, m)?;
    let gain = beta / (beta + tau_sq);
    let s = 1.0 / tau_sq - 1.0 / (tau_sq + beta);
    let sum_sq: Complex64 = x_hat.iter().map(|v| v * v).sum();
    Ok(sum_sq * (gain * phi * (1.0 - phi) * s / m as f64))
}

/// Per-iteration trace entry.
#[derive(Debug, Clone, PartialEq)]
pub struct IterTrace {
    pub iter: usize,
    pub tau_sq: f64,
    pub mean_phi_active: Option<f64>,
    pub mean_phi_inactive: Option<f64>,
}

/// Immutable problem context shared by all AMP iterations.
pub struct AmpContext<'a> {
    y_norm: Array2<Complex64>,
    a: &'a Array2<Complex64>,
    a_herm: Array2<Complex64>,
    betas: &'a [f64],
    eps: f64,
    n_over_l: f64,
    damping: f64,
}

impl<'a> AmpContext<'a> {
    pub fn new(
        y: &ReceivedMatrix,
        a: &'a PilotMatrix,
        fading: &'a LargeScaleFading,
        cfg: &SystemConfig,
    ) -> Result<Self> {
        let (l, n) = a.a.dim();
        if y.y.nrows() != l || y.y.ncols() != cfg.n_antennas {
            return Err(Error::dimension(format!(
                "received {}x{} vs L={l}, M={}",
                y.y.nrows(),
                y.y.ncols(),
                cfg.n_antennas
            )));
        }
        if n != cfg.n_devices || fading.len() != n {
            return Err(Error::dimension(format!(
                "pilots for {n} devices, fading for {}, config N={}",
                fading.len(),
                cfg.n_devices
            )));
        }
        let inv_sqrt_xi = Complex64::new(1.0 / cfg.pilot_energy.sqrt(), 0.0);
        let y_norm = y.y.mapv(|v| v * inv_sqrt_xi);
        let a_herm = a.a.t().mapv(|v| v.conj());
        Ok(AmpContext {
            y_norm,
            a: &a.a,
            a_herm,
            betas: &fading.betas,
            eps: cfg.activity_prob,
            n_over_l: n as f64 / l as f64,
            damping: 1.0,
        })
    }

    /// Blend factor applied to the denoiser output each iteration
    /// (1.0 = undamped). Values below 1 trade convergence speed for
    /// stability of the finite-size iteration.
    pub fn with_damping(mut self, damping: f64) -> Self {
        self.damping = damping;
        self
    }

    /// X^0 = 0, R^0 = Y (normalized).
    pub fn initial_state(&self) -> AmpState {
        let m = self.y_norm.ncols();
        let n = self.a.ncols();
        AmpState {
            x_est: Array2::zeros((n, m)),
            residual: self.y_norm.clone(),
            iter: 0,
            tau_sq: f64::NAN,
        }
    }

    /// Matched-filter statistics X_hat = X^t + A^H R^t for every device.
    pub fn matched_filter(&self, state: &AmpState) -> Array2<Complex64> {
        &self.a_herm.dot(&state.residual) + &state.x_est
    }

    /// One AMP iteration. Returns the next state and the per-device phi of
    /// the denoising step that produced it.
    pub fn step(&self, state: &AmpState, policy: &TauPolicy) -> Result<(AmpState, Vec<f64>)> {
        let tau_sq = policy.tau_for(state);
        let x_hat = self.matched_filter(state);
        let n = x_hat.nrows();
        let m = x_hat.ncols();
        let mut x_next = Array2::zeros((n, m));
        let mut phis = Vec::with_capacity(n);
        // Onsager correction with the full M x M Jacobian sum. The rank-one
        // parts g s phi (1-phi) x_hat x_hat^H do not self-average over
        // devices when a few strong ones dominate (heavy-tailed fading), and
        // with N/L > 1 the scalar trace approximation destabilizes the
        // iteration, so the matrix form is required. The row-storage update
        // is R . J^T; the conjugate-derivative term vanishes because the
        // pilot entries are circularly symmetric.
        let mut jac_sum = Array2::<Complex64>::zeros((m, m));
        let mut diag_sum = 0.0;
        for dev in 0..n {
            let row = x_hat.row(dev);
            let norm_sq = row.iter().map(|v| v.norm_sqr()).sum::<f64>();
            let (phi, _, _) = phi_statistics(norm_sq, self.betas[dev], tau_sq, self.eps, m)?;
            let gain = self.betas[dev] / (self.betas[dev] + tau_sq);
            let scale = Complex64::new(phi * gain, 0.0);
            x_next
                .row_mut(dev)
                .iter_mut()
                .zip(row.iter())
                .for_each(|(o, v)| *o = v * scale);
            let s = 1.0 / tau_sq - 1.0 / (tau_sq + self.betas[dev]);
            let coeff = gain * s * phi * (1.0 - phi);
            if coeff != 0.0 {
                for i in 0..m {
                    let ci = row[i].conj() * coeff;
                    for j in 0..m {
                        jac_sum[[i, j]] += ci * row[j];
                    }
                }
            }
            diag_sum += phi * gain;
            phis.push(phi);
        }
        if self.damping < 1.0 {
            let alpha = Complex64::new(self.damping, 0.0);
            let keep = Complex64::new(1.0 - self.damping, 0.0);
            x_next
                .iter_mut()
                .zip(state.x_est.iter())
                .for_each(|(o, prev)| *o = *o * alpha + prev * keep);
        }
        let inv_l = self.n_over_l * self.damping / n as f64;
        jac_sum.mapv_inplace(|v| v * inv_l);
        for i in 0..m {
            jac_sum[[i, i]] += Complex64::new(diag_sum * inv_l, 0.0);
        }
        let residual = &self.y_norm - &self.a.dot(&x_next) + &state.residual.dot(&jac_sum);
        Ok((
            AmpState { x_est: x_next, residual, iter: state.iter + 1, tau_sq },
            phis,
        ))
    }
}

/// Result of a full AMP run.
#[derive(Debug, Clone)]
pub struct AmpRun {
    pub state: AmpState,
    /// tau_t^2 used at each performed iteration.
    pub tau_trace: Vec<f64>,
    /// Per-device phi evaluated on the final matched-filter statistics.
    pub phi: Vec<f64>,
    /// Final matched-filter statistics X^t + A^H R^t (detector input).
    pub x_stat: Array2<Complex64>,
    /// Per-iteration trace; activity-conditional phi means are present when
    /// ground truth was supplied.
    pub trace: Vec<IterTrace>,
}

/// Run AMP for up to `n_iters` iterations (empirical-tau runs stop early
/// once tau^2 settles). `truth` enables the activity-conditional trace.
pub fn amp_run(
    y: &ReceivedMatrix,
    a: &PilotMatrix,
    fading: &LargeScaleFading,
    cfg: &SystemConfig,
    n_iters: usize,
    policy: &TauPolicy,
    truth: Option<&[bool]>,
) -> Result<AmpRun> {
    amp_run_damped(y, a, fading, cfg, n_iters, policy, truth, 1.0)
}

/// `amp_run` with a damped denoiser update. Damping below 1 suppresses the
/// finite-size bad basins that the undamped iteration can fall into under
/// heavy-tailed fading, at the cost of slower convergence.
#[allow(clippy::too_many_arguments)]
pub fn amp_run_damped(
    y: &ReceivedMatrix,
    a: &PilotMatrix,
    fading: &LargeScaleFading,
    cfg: &SystemConfig,
    n_iters: usize,
    policy: &TauPolicy,
    truth: Option<&[bool]>,
    damping: f64,
) -> Result<AmpRun> {
    let ctx = AmpContext::new(y, a, fading, cfg)?.with_damping(damping);
    let mut state = ctx.initial_state();
    let mut tau_trace = Vec::new();
    let mut trace = Vec::new();
    for _ in 0..n_iters {
        let (next, phis) = ctx.step(&state, policy)?;
        tau_trace.push(next.tau_sq);
        trace.push(trace_entry(next.iter, next.tau_sq, &phis, truth));
        let done = matches!(policy, TauPolicy::Empirical)
            && tau_trace.len() >= 2
            && {
                let prev = tau_trace[tau_trace.len() - 2];
                (next.tau_sq - prev).abs() / prev < TAU_RELTOL
            };
        state = next;
        if done {
            break;
        }
    }
    // Final detector statistics and posterior weights.
    let x_stat = ctx.matched_filter(&state);
    let final_tau = if state.iter == 0 {
        TauPolicy::Empirical.tau_for(&state)
    } else {
        state.tau_sq
    };
    let m = cfg.n_antennas;
    let phi = x_stat
        .rows()
        .into_iter()
        .zip(fading.betas.iter())
        .map(|(row, &beta)| {
            let norm_sq = row.iter().map(|v| v.norm_sqr()).sum::<f64>();
            phi_statistics(norm_sq, beta, final_tau, cfg.activity_prob, m).map(|(p, _, _)| p)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut state = state;
    state.tau_sq = final_tau;
    Ok(AmpRun { state, tau_trace, phi, x_stat, trace })
}

fn trace_entry(iter: usize, tau_sq: f64, phis: &[f64], truth: Option<&[bool]>) -> IterTrace {
    let (mut act, mut inact) = (None, None);
    if let Some(t) = truth {
        let mean_where = |want: bool| {
            let (sum, cnt) = phis
                .iter()
                .zip(t.iter())
                .filter(|(_, a)| **a == want)
                .fold((0.0, 0usize), |(s, c), (p, _)| (s + p, c + 1));
            (cnt > 0).then(|| sum / cnt as f64)
        };
        act = mean_where(true);
        inact = mean_where(false);
    }
    IterTrace { iter, tau_sq, mean_phi_active: act, mean_phi_inactive: inact }
}

/// Per-iteration trace dump (iteration, tau_sq, mean phi over true actives,
/// mean phi over inactives) as CSV.
pub fn trace_csv(trace: &[IterTrace]) -> String {
    let mut out = String::from("iteration,tau_sq,mean_phi_active,mean_phi_inactive\n");
    for t in trace {
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.16e}")).unwrap_or_default();
        out.push_str(&format!(
            "{},{:.16e},{},{}\n",
            t.iter,
            t.tau_sq,
            fmt(t.mean_phi_active),
            fmt(t.mean_phi_inactive)
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{
        generate_pilots, sample_instance, synthesize_received_opts, SystemConfig,
    };
    use crate::rng::{complex_gaussian, substream};
    use ndarray::Array1;

    fn random_vec(m: usize, seed: u64) -> Array1<Complex64> {
        let mut rng = substream(seed, 99);
        Array1::from_shape_simple_fn(m, || complex_gaussian(&mut rng, 1.0))
    }

    #[test]
    fn denoiser_all_active_is_linear_mmse() {
        let x = random_vec(8, 1);
        let out = mmse_denoise(x.view(), 2.0, 0.5, 1.0).unwrap();
        assert_eq!(out.phi, 1.0);
        let g = 2.0 / 2.5;
        for (v, o) in x.iter().zip(out.value.iter()) {
            assert!((v * g - o).norm() < 1e-15);
        }
    }

    #[test]
    fn denoiser_zero_input() {
        let x = Array1::from_elem(4, Complex64::new(0.0, 0.0));
        let out = mmse_denoise(x.view(), 1.0, 1.0, 0.3).unwrap();
        assert_eq!(out.pi_stat, 0.0);
        assert!(out.pi_stat < out.psi_stat);
        assert!(out.value.iter().all(|v| *v == Complex64::new(0.0, 0.0)));
    }

    #[test]
    fn denoiser_half_activity_boundary() {
        // beta = tau^2 = 1, M = 1, eps = 0.5, ||x||^2 = 2 ln 2 puts pi = psi
        // so phi = 1/2.
        let norm = (2.0 * std::f64::consts::LN_2).sqrt();
        let x = Array1::from_elem(1, Complex64::new(norm, 0.0));
        let out = mmse_denoise(x.view(), 1.0, 1.0, 0.5).unwrap();
        assert!((out.pi_stat - out.psi_stat).abs() < 1e-14);
        assert!((out.phi - 0.5).abs() < 1e-12);
    }

    #[test]
    fn denoiser_rejects_bad_args() {
        let x = random_vec(2, 3);
        assert!(mmse_denoise(x.view(), -1.0, 1.0, 0.5).is_err());
        assert!(mmse_denoise(x.view(), 1.0, 0.0, 0.5).is_err());
        // eps = 0 is the degenerate prior, not an error.
        let out = mmse_denoise(x.view(), 1.0, 1.0, 0.0).unwrap();
        assert_eq!(out.phi, 0.0);
        assert!(out.value.iter().all(|v| *v == Complex64::new(0.0, 0.0)));
    }

    #[test]
    fn divergence_linear_case() {
        let x = random_vec(6, 4);
        let d = denoiser_divergence(x.view(), 3.0, 1.5, 1.0).unwrap();
        assert!((d - 3.0 / 4.5).abs() < 1e-15);
    }

    #[test]
    fn divergence_at_zero_matches_closed_form() {
        let (beta, tau_sq, eps, m) = (2.0, 0.5, 0.1, 4usize);
        let x = Array1::from_elem(m, Complex64::new(0.0, 0.0));
        let d = denoiser_divergence(x.view(), beta, tau_sq, eps).unwrap();
        let phi0 = 1.0 / (1.0 + (1.0 - eps) / eps * (1.0 + beta / tau_sq).powi(m as i32));
        let g = beta / (beta + tau_sq);
        assert!((d - g * phi0).abs() < 1e-15, "{d} vs {}", g * phi0);
    }

    /// Central finite differences of the Wirtinger trace:
    /// d/dx = (d/dRe - i d/dIm)/2, summed over coordinates.
    fn fd_divergence(x: &Array1<Complex64>, beta: f64, tau_sq: f64, eps: f64) -> f64 {
        let h = 1e-6;
        let eta = |v: &Array1<Complex64>| {
            mmse_denoise(v.view(), beta, tau_sq, eps).unwrap().value
        };
        let mut tr = Complex64::new(0.0, 0.0);
        for j in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += Complex64::new(h, 0.0);
            xm[j] -= Complex64::new(h, 0.0);
            let d_re = (eta(&xp)[j] - eta(&xm)[j]) / (2.0 * h);
            let mut yp = x.clone();
            let mut ym = x.clone();
            yp[j] += Complex64::new(0.0, h);
            ym[j] -= Complex64::new(0.0, h);
            let d_im = (eta(&yp)[j] - eta(&ym)[j]) / (2.0 * h);
            tr += (d_re - Complex64::i() * d_im) * 0.5;
        }
        assert!(tr.im.abs() < 1e-6, "Wirtinger trace should be real");
        tr.re / x.len() as f64
    }

    #[test]
    fn divergence_matches_finite_differences() {
        for seed in 0..50u64 {
            let x = random_vec(5, seed);
            let (beta, tau_sq, eps) = (1.3, 0.7, 0.2);
            let analytic = denoiser_divergence(x.view(), beta, tau_sq, eps).unwrap();
            let fd = fd_divergence(&x, beta, tau_sq, eps);
            let rel = (analytic - fd).abs() / analytic.abs().max(1e-12);
            assert!(rel < 1e-6, "seed {seed}: {analytic} vs {fd}");
        }
    }

    #[test]
    fn phi_bounded_and_value_contracts() {
        for seed in 0..200u64 {
            let x = random_vec(3, seed);
            let out = mmse_denoise(x.view(), 0.8, 0.4, 0.15).unwrap();
            assert!((0.0..=1.0).contains(&out.phi));
            let in_norm: f64 = x.iter().map(|v| v.norm_sqr()).sum::<f64>();
            let out_norm: f64 = out.value.iter().map(|v| v.norm_sqr()).sum::<f64>();
            let g = 0.8 / 1.2;
            assert!(out_norm.sqrt() <= g * in_norm.sqrt() + 1e-12);
        }
    }

    fn small_problem(
        eps: f64,
        seed: u64,
        noise: bool,
    ) -> (ReceivedMatrix, PilotMatrix, LargeScaleFading, SystemConfig, SparseChannelMatrix) {
        let cfg = SystemConfig::new(50, 32, 4, eps, 4.0, 1e-4, seed).unwrap();
        let fading = LargeScaleFading::from_betas(vec![1.0; 50]).unwrap();
        let a = generate_pilots(&cfg);
        let inst = sample_instance(&cfg, &fading).unwrap();
        let y = synthesize_received_opts(&a, &inst, &cfg, noise).unwrap();
        (y, a, fading, cfg, inst)
    }
    use crate::model::SparseChannelMatrix;

    #[test]
    fn zero_observation_is_fixed_point() {
        let (mut y, a, fading, cfg, _) = small_problem(0.5, 21, true);
        y.y.fill(Complex64::new(0.0, 0.0));
        // Empirical tau would be 0 on a zero residual; a schedule keeps the
        // denoiser well-defined while exercising the fixed point.
        let run = amp_run(&y, &a, &fading, &cfg, 5, &TauPolicy::Schedule(vec![1.0]), None).unwrap();
        assert!(run.state.x_est.iter().all(|v| *v == Complex64::new(0.0, 0.0)));
        assert!(run.state.residual.iter().all(|v| *v == Complex64::new(0.0, 0.0)));
    }

    #[test]
    fn zero_iterations_returns_initial_state() {
        let (y, a, fading, cfg, _) = small_problem(0.5, 22, true);
        let run = amp_run(&y, &a, &fading, &cfg, 0, &TauPolicy::Empirical, None).unwrap();
        assert_eq!(run.state.iter, 0);
        assert!(run.state.x_est.iter().all(|v| *v == Complex64::new(0.0, 0.0)));
        assert!(run.tau_trace.is_empty());
    }

    #[test]
    fn runs_are_deterministic() {
        let (y, a, fading, cfg, _) = small_problem(0.3, 23, true);
        let r1 = amp_run(&y, &a, &fading, &cfg, 8, &TauPolicy::Empirical, None).unwrap();
        let r2 = amp_run(&y, &a, &fading, &cfg, 8, &TauPolicy::Empirical, None).unwrap();
        assert_eq!(r1.state, r2.state);
        assert_eq!(r1.tau_trace, r2.tau_trace);
    }

    /// Straight-line scalar AMP step written independently of the library
    /// path: eps = 1, M = 1, so the denoiser is the plain linear shrinker.
    #[test]
    fn single_step_matches_scalar_oracle() {
        let cfg = SystemConfig::new(12, 8, 1, 1.0, 2.0, 1e-3, 77).unwrap();
        let fading = LargeScaleFading::from_betas(vec![0.9; 12]).unwrap();
        let a = generate_pilots(&cfg);
        let inst = sample_instance(&cfg, &fading).unwrap();
        let y = synthesize_received_opts(&a, &inst, &cfg, true).unwrap();

        let run = amp_run(&y, &a, &fading, &cfg, 1, &TauPolicy::Empirical, None).unwrap();

        // Oracle: plain loops, no library calls past this point.
        let sqrt_xi = 2.0f64.sqrt();
        let l = 8;
        let n = 12;
        let beta = 0.9;
        let mut r0 = vec![Complex64::new(0.0, 0.0); l];
        for li in 0..l {
            r0[li] = y.y[[li, 0]] / sqrt_xi;
        }
        let tau_sq: f64 = r0.iter().map(|v| v.norm_sqr()).sum::<f64>() / l as f64;
        let g = beta / (beta + tau_sq);
        let mut x1 = vec![Complex64::new(0.0, 0.0); n];
        for dev in 0..n {
            let mut mf = Complex64::new(0.0, 0.0);
            for li in 0..l {
                mf += a.a[[li, dev]].conj() * r0[li];
            }
            x1[dev] = mf * g;
        }
        let onsager = (n as f64 / l as f64) * g;
        let mut r1 = vec![Complex64::new(0.0, 0.0); l];
        for li in 0..l {
            let mut ax = Complex64::new(0.0, 0.0);
            for dev in 0..n {
                ax += a.a[[li, dev]] * x1[dev];
            }
            r1[li] = r0[li] - ax + r0[li] * onsager;
        }

        for dev in 0..n {
            assert!((run.state.x_est[[dev, 0]] - x1[dev]).norm() < 1e-12);
        }
        for li in 0..l {
            assert!((run.state.residual[[li, 0]] - r1[li]).norm() < 1e-12);
        }
    }

    #[test]
    fn noiseless_single_device_recovers_channel() {
        // K = 1 active device, L >> 1, no noise: the final statistic for the
        // active device should align with its true channel.
        let cfg = SystemConfig::new(50, 32, 4, 0.02, 1.0, 1e-9, 4242).unwrap();
        let fading = LargeScaleFading::from_betas(vec![1.0; 50]).unwrap();
        let a = generate_pilots(&cfg);
        let mut inst = sample_instance(&cfg, &fading).unwrap();
        // Force exactly one active device.
        let mut rng = substream(1234, 8);
        inst.x.fill(Complex64::new(0.0, 0.0));
        inst.activity.iter_mut().for_each(|v| *v = false);
        inst.activity[17] = true;
        for v in inst.x.row_mut(17).iter_mut() {
            *v = complex_gaussian(&mut rng, 1.0);
        }
        let y = synthesize_received_opts(&a, &inst, &cfg, false).unwrap();
        let run = amp_run(&y, &a, &fading, &cfg, 15, &TauPolicy::Empirical, None).unwrap();

        // Matched-filter oracle: cosine similarity of the estimate with the
        // true channel.
        let est = run.state.x_est.row(17);
        let truth = inst.x.row(17);
        let inner: Complex64 = est.iter().zip(truth.iter()).map(|(e, t)| e * t.conj()).sum();
        let cos = inner.norm()
            / (est.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
                * truth.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt());
        assert!(cos > 0.99, "cosine similarity {cos}");
    }

    #[test]
    fn all_active_pipeline_equals_linear_mmse() {
        // With eps = 1 the denoiser is linear, so a single AMP iteration
        // produces exactly g * (A^H Y' ) for X^0 = 0; verify to 1e-10.
        let (y, a, fading, cfg, _) = small_problem(1.0, 31, true);
        let run = amp_run(&y, &a, &fading, &cfg, 1, &TauPolicy::Empirical, None).unwrap();
        let y_norm = y.y.mapv(|v| v / 2.0); // sqrt(xi) = 2
        let a_h = a.a.t().mapv(|v| v.conj());
        let x_hat = a_h.dot(&y_norm);
        let tau_sq = y_norm.iter().map(|v| v.norm_sqr()).sum::<f64>() / (32.0 * 4.0);
        let g = 1.0 / (1.0 + tau_sq);
        for (e, h) in run.state.x_est.iter().zip(x_hat.iter()) {
            assert!((e - h * g).norm() < 1e-10);
        }
    }

    #[test]
    fn trace_records_phi_by_activity() {
        let (y, a, fading, cfg, inst) = small_problem(0.3, 25, true);
        let run =
            amp_run(&y, &a, &fading, &cfg, 4, &TauPolicy::Empirical, Some(&inst.activity)).unwrap();
        assert!(!run.trace.is_empty());
        let last = run.trace.last().unwrap();
        let (aph, iph) = (last.mean_phi_active.unwrap(), last.mean_phi_inactive.unwrap());
        assert!(aph > iph, "active phi {aph} <= inactive phi {iph}");
        let csv = trace_csv(&run.trace);
        assert!(csv.starts_with("iteration,tau_sq,"));
        assert_eq!(csv.lines().count(), run.trace.len() + 1);
    }
}
