//! Analytic performance layer: exact and large-antenna detection error
//! probabilities and channel-error second moments, all evaluated at a given
//! (beta, tau^2) pair — typically the state-evolution fixed point.
//!
//! With the norm test at threshold theta, the statistic is a scaled chi^2
//! with 2M degrees of freedom under either hypothesis, giving
//!
//!   p_md = P(M, b M),  p_fa = Q(M, c M),
//!   b = (tau^2/beta) ln(1 + beta/tau^2),
//!   c = ((beta+tau^2)/beta) ln(1 + beta/tau^2),
//!
//! with P/Q the regularized incomplete gamma pair and b < 1 < c always.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::{complex_gaussian, mix, stream, substream};
use crate::specfun::{reg_gamma_lower, reg_gamma_upper};

/// The chi-square scale coefficients (b, c) of the norm test.
pub fn bc_coeffs(beta: f64, tau_sq: f64) -> Result<(f64, f64)> {
    if !(beta > 0.0) || !(tau_sq > 0.0) || !beta.is_finite() || !tau_sq.is_finite() {
        return Err(Error::domain("bc_coeffs requires finite beta > 0, tau_sq > 0"));
    }
    let log_term = (beta / tau_sq).ln_1p();
    let b = tau_sq / beta * log_term;
    let c = (beta + tau_sq) / beta * log_term;
    Ok((b, c))
}

/// Exact (p_md, p_fa) for M antennas.
pub fn error_probs_exact(beta: f64, tau_sq: f64, m: usize) -> Result<(f64, f64)> {
    if m == 0 {
        return Err(Error::domain("m must be >= 1"));
    }
    let (b, c) = bc_coeffs(beta, tau_sq)?;
    let mf = m as f64;
    let p_md = reg_gamma_lower(mf, b * mf)?;
    let p_fa = reg_gamma_upper(mf, c * mf)?;
    Ok((p_md, p_fa))
}

/// Large-M expansions of the same probabilities:
///
///   p_md ~ -exp(-M nu^2/2) / (2 sqrt(2 pi M)) (1/(b-1) + 1/nu),
///   p_fa ~ +exp(-M vs^2/2) / (2 sqrt(2 pi M)) (1/(c-1) + 1/vs),
///
/// with nu = -sqrt(2(b - 1 - ln b)) < 0 and vs = sqrt(2(c - 1 - ln c)) > 0.
/// Results are clamped to [0, 1].
pub fn error_probs_asymptotic(beta: f64, tau_sq: f64, m: usize) -> Result<(f64, f64)> {
    if m == 0 {
        return Err(Error::domain("m must be >= 1"));
    }
    let (b, c) = bc_coeffs(beta, tau_sq)?;
    let mf = m as f64;
    let nu = -(2.0 * (b - 1.0 - b.ln())).sqrt();
    let vs = (2.0 * (c - 1.0 - c.ln())).sqrt();
    let scale = |rate: f64| (-mf * rate * rate / 2.0).exp() / (2.0 * (2.0 * std::f64::consts::PI * mf).sqrt());
    let p_md = -scale(nu) * (1.0 / (b - 1.0) + 1.0 / nu);
    let p_fa = scale(vs) * (1.0 / (c - 1.0) + 1.0 / vs);
    Ok((p_md.clamp(0.0, 1.0), p_fa.clamp(0.0, 1.0)))
}

/// Per-antenna channel-error second moments of the denoised estimate for an
/// active device:
///
///   upsilon       = (1/M) E ||eta(h + tau v)||^2
///   delta_upsilon = (1/M) E ||eta(h + tau v) - h||^2
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ChannelStats {
    pub upsilon: f64,
    pub delta_upsilon: f64,
    pub upsilon_se: f64,
    pub delta_upsilon_se: f64,
}

/// Finite-M moments, by Monte Carlo over h ~ CN(0, beta I), v ~ CN(0, I).
pub fn channel_stats_finite(
    beta: f64,
    tau_sq: f64,
    eps: f64,
    m: usize,
    n_samples: usize,
    seed: u64,
) -> Result<ChannelStats> {
    let _ = bc_coeffs(beta, tau_sq)?;
    if m == 0 || n_samples < 1000 {
        return Err(Error::domain("need m >= 1 and at least 1e3 samples"));
    }
    if !(0.0..=1.0).contains(&eps) {
        return Err(Error::domain("eps must lie in [0, 1]"));
    }
    use crate::amp::phi_statistics;
    const SHARD: usize = 2048;
    let g = beta / (beta + tau_sq);
    let acc = (0..n_samples.div_ceil(SHARD))
        .into_par_iter()
        .map(|shard| {
            let count = SHARD.min(n_samples - shard * SHARD);
            let mut rng = substream(mix(seed, &[shard as u64]), stream::MONTE_CARLO);
            let mut a = [0.0f64; 4]; // sums of ups, ups^2, dup, dup^2
            for _ in 0..count {
                let mut ups = 0.0;
                let mut cross_re = 0.0;
                let mut h_norm = 0.0;
                // accumulate ||x_hat||^2, Re<x_hat, h>, ||h||^2 for one draw
                let mut xhat_norm = 0.0;
                let mut hs = Vec::with_capacity(m);
                let mut xs = Vec::with_capacity(m);
                for _ in 0..m {
                    let h = complex_gaussian(&mut rng, beta);
                    let v = complex_gaussian(&mut rng, tau_sq);
                    let x = h + v;
                    xhat_norm += x.norm_sqr();
                    hs.push(h);
                    xs.push(x);
                }
                let (phi, _, _) = phi_statistics(xhat_norm, beta, tau_sq, eps, m)
                    .expect("phi domain");
                let coef = phi * g;
                for (h, x) in hs.iter().zip(&xs) {
                    let e = coef * x;
                    ups += e.norm_sqr();
                    cross_re += (e * h.conj()).re;
                    h_norm += h.norm_sqr();
                }
                let dup = (ups - 2.0 * cross_re + h_norm) / m as f64;
                let ups = ups / m as f64;
                a[0] += ups;
                a[1] += ups * ups;
                a[2] += dup;
                a[3] += dup * dup;
            }
            a
        })
        .reduce(
            || [0.0; 4],
            |x, y| [x[0] + y[0], x[1] + y[1], x[2] + y[2], x[3] + y[3]],
        );
    let n = n_samples as f64;
    let mean_u = acc[0] / n;
    let mean_d = acc[2] / n;
    let se = |sum_sq: f64, mean: f64| ((sum_sq / n - mean * mean).max(0.0) / n).sqrt();
    Ok(ChannelStats {
        upsilon: mean_u,
        delta_upsilon: mean_d,
        upsilon_se: se(acc[1], mean_u),
        delta_upsilon_se: se(acc[3], mean_d),
    })
}

/// Large-M limits: phi -> 1 for an active device, so the estimator becomes
/// the linear MMSE filter and
///
///   upsilon = beta^2/(beta + tau^2),  delta_upsilon = beta tau^2/(beta + tau^2).
pub fn channel_stats_asymptotic(beta: f64, tau_sq: f64) -> Result<ChannelStats> {
    let _ = bc_coeffs(beta, tau_sq)?;
    Ok(ChannelStats {
        upsilon: beta * beta / (beta + tau_sq),
        delta_upsilon: beta * tau_sq / (beta + tau_sq),
        upsilon_se: 0.0,
        delta_upsilon_se: 0.0,
    })
}

/// One row of an analytic performance curve.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct AnalyticRow {
    pub parameter: f64,
    pub p_md_exact: f64,
    pub p_fa_exact: f64,
    pub p_md_asym: f64,
    pub p_fa_asym: f64,
    pub upsilon: f64,
    pub delta_upsilon: f64,
}

/// Evaluate the analytic layer for a single (beta, tau^2, M) operating
/// point, labeled by `parameter` (e.g. the antenna count of a sweep).
pub fn analytic_row(parameter: f64, beta: f64, tau_sq: f64, m: usize) -> Result<AnalyticRow> {
    let (p_md_exact, p_fa_exact) = error_probs_exact(beta, tau_sq, m)?;
    let (p_md_asym, p_fa_asym) = error_probs_asymptotic(beta, tau_sq, m)?;
    let stats = channel_stats_asymptotic(beta, tau_sq)?;
    Ok(AnalyticRow {
        parameter,
        p_md_exact,
        p_fa_exact,
        p_md_asym,
        p_fa_asym,
        upsilon: stats.upsilon,
        delta_upsilon: stats.delta_upsilon,
    })
}

pub fn analytic_csv(rows: &[AnalyticRow]) -> String {
    let mut out = String::from(
        "parameter,p_md_exact,p_fa_exact,p_md_asym,p_fa_asym,upsilon,delta_upsilon\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
            r.parameter, r.p_md_exact, r.p_fa_exact, r.p_md_asym, r.p_fa_asym, r.upsilon,
            r.delta_upsilon
        ));
    }
    out
}
