//! Activity decisions and channel estimates from an AMP run.
//!
//! The MMSE denoiser's posterior activity probability crosses 1/2 exactly at
//!
//!   ||x_hat||^2 > theta = M ln(1 + beta/tau^2) / (1/tau^2 - 1/(tau^2+beta)),
//!
//! so detection reduces to a per-device norm test against `theta` (it does
//! not depend on eps once the LLR threshold is fixed at zero).  Channel
//! estimates for devices declared active are the corresponding rows of the
//! AMP estimate.

use ndarray::{Array1, Array2};
use num_complex::Complex64;

use crate::amp::AmpRun;
use crate::error::{Error, Result};

/// Squared-norm threshold of the posterior-0.5 test.
pub fn detection_threshold(beta: f64, tau_sq: f64, m: usize) -> Result<f64> {
    if !(beta > 0.0) || !(tau_sq > 0.0) || m == 0 {
        return Err(Error::domain("threshold needs beta > 0, tau_sq > 0, m >= 1"));
    }
    let s = 1.0 / tau_sq - 1.0 / (tau_sq + beta);
    Ok(m as f64 * (beta / tau_sq).ln_1p() / s)
}

/// Per-device activity decisions from the matched-filter statistics of a
/// finished run.  Ties (norm exactly at threshold) resolve to inactive.
pub fn detect(run: &AmpRun, betas: &[f64]) -> Result<Vec<bool>> {
    let (n, m) = run.x_stat.dim();
    if betas.len() != n {
        return Err(Error::dimension(format!(
            "betas length {} does not match {} devices",
            betas.len(),
            n
        )));
    }
    let tau_sq = run.state.tau_sq;
    let mut out = Vec::with_capacity(n);
    for (k, row) in run.x_stat.rows().into_iter().enumerate() {
        let theta = detection_threshold(betas[k], tau_sq, m)?;
        let norm_sq: f64 = row.iter().map(|z| z.norm_sqr()).sum();
        out.push(norm_sq > theta);
    }
    Ok(out)
}

/// Channel estimates: the AMP estimate row for declared-active devices,
/// zeros elsewhere.
pub fn estimate_channels(run: &AmpRun, decisions: &[bool]) -> Result<Array2<Complex64>> {
    let (n, m) = run.state.x_est.dim();
    if decisions.len() != n {
        return Err(Error::dimension("decisions length must match device count"));
    }
    let mut est = Array2::zeros((n, m));
    for (k, &active) in decisions.iter().enumerate() {
        if active {
            est.row_mut(k).assign(&run.state.x_est.row(k));
        }
    }
    Ok(est)
}

/// Counts of the four decision outcomes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
pub struct Confusion {
    pub true_active: u64,
    pub missed: u64,
    pub false_alarm: u64,
    pub true_inactive: u64,
}

impl Confusion {
    pub fn from_decisions(decisions: &[bool], truth: &[bool]) -> Result<Confusion> {
        if decisions.len() != truth.len() {
            return Err(Error::dimension("decision/truth length mismatch"));
        }
        let mut c = Confusion::default();
        for (&d, &t) in decisions.iter().zip(truth) {
            match (t, d) {
                (true, true) => c.true_active += 1,
                (true, false) => c.missed += 1,
                (false, true) => c.false_alarm += 1,
                (false, false) => c.true_inactive += 1,
            }
        }
        Ok(c)
    }

    pub fn n_active(&self) -> u64 {
        self.true_active + self.missed
    }

    pub fn n_inactive(&self) -> u64 {
        self.false_alarm + self.true_inactive
    }

    /// Empirical miss rate; NaN when there are no active devices.
    pub fn miss_rate(&self) -> f64 {
        self.missed as f64 / self.n_active() as f64
    }

    pub fn false_alarm_rate(&self) -> f64 {
        self.false_alarm as f64 / self.n_inactive() as f64
    }

    pub fn merge(&self, other: &Confusion) -> Confusion {
        Confusion {
            true_active: self.true_active + other.true_active,
            missed: self.missed + other.missed,
            false_alarm: self.false_alarm + other.false_alarm,
            true_inactive: self.true_inactive + other.true_inactive,
        }
    }
}

/// Full per-run report: decisions, counts, and channel-estimate error.
#[derive(Debug, Clone)]
pub struct DetectionReport {
    pub decisions: Vec<bool>,
    pub confusion: Confusion,
    /// Mean squared estimation error over truly active devices, per antenna:
    /// (1/(K M)) sum_{k active} ||h_hat_k - h_k||^2.  NaN without truth.
    pub active_mse: f64,
}

/// Score a run against the ground-truth activity pattern and (optionally)
/// the true channel rows.
pub fn score(
    run: &AmpRun,
    betas: &[f64],
    truth: &[bool],
    x_true: Option<&Array2<Complex64>>,
) -> Result<DetectionReport> {
    let decisions = detect(run, betas)?;
    let confusion = Confusion::from_decisions(&decisions, truth)?;
    let active_mse = match x_true {
        Some(x_true) => {
            let m = run.state.x_est.ncols() as f64;
            let estimates = estimate_channels(run, &decisions)?;
            let mut err = 0.0;
            let mut count = 0u64;
            for (k, &t) in truth.iter().enumerate() {
                if t {
                    let d = &estimates.row(k) - &x_true.row(k);
                    err += d.iter().map(|z| z.norm_sqr()).sum::<f64>();
                    count += 1;
                }
            }
            err / (count as f64 * m)
        }
        None => f64::NAN,
    };
    Ok(DetectionReport { decisions, confusion, active_mse })
}

/// Per-device CSV: index, squared norm, threshold, decision, truth.
pub fn decisions_csv(run: &AmpRun, betas: &[f64], truth: &[bool]) -> Result<String> {
    let decisions = detect(run, betas)?;
    if truth.len() != decisions.len() {
        return Err(Error::dimension("truth length mismatch"));
    }
    let m = run.x_stat.ncols();
    let mut out = String::from("index,norm_sq,threshold,decision,truth\n");
    for (k, row) in run.x_stat.rows().into_iter().enumerate() {
        let norm_sq: f64 = row.iter().map(|z| z.norm_sqr()).sum();
        let theta = detection_threshold(betas[k], run.state.tau_sq, m)?;
        out.push_str(&format!(
            "{k},{norm_sq:.16e},{theta:.16e},{},{}\n",
            decisions[k] as u8, truth[k] as u8
        ));
    }
    Ok(out)
}

/// Norm test for a single statistic row; exposed for analytic cross-checks.
pub fn decide_row(row: &Array1<Complex64>, beta: f64, tau_sq: f64) -> Result<bool> {
    let theta = detection_threshold(beta, tau_sq, row.len())?;
    Ok(row.iter().map(|z| z.norm_sqr()).sum::<f64>() > theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::amp::phi_statistics;
    use crate::rng::{complex_gaussian, substream};

    #[test]
    fn threshold_closed_form_examples() {
        // beta = tau^2 = 1, M = 1: theta = ln 2 / (1 - 1/2) = 2 ln 2.
        let t = detection_threshold(1.0, 1.0, 1).unwrap();
        assert!((t - 2.0 * 2f64.ln()).abs() < 1e-14);
        // theta is linear in M.
        let t8 = detection_threshold(1.0, 1.0, 8).unwrap();
        assert!((t8 - 8.0 * t).abs() < 1e-13);
    }

    #[test]
    fn threshold_small_beta_limit() {
        // beta -> 0: theta/M -> tau^2 (ln(1+x)/x -> 1 against s -> b/t^4... )
        // ln(1+b/t)/ (1/t - 1/(t+b)) = ln(1+b/t) t(t+b)/b -> t as b -> 0.
        let tau_sq = 0.73;
        let t = detection_threshold(1e-9, tau_sq, 1).unwrap();
        assert!((t - tau_sq).abs() < 1e-6);
    }

    #[test]
    fn threshold_rejects_bad_domain() {
        assert!(detection_threshold(0.0, 1.0, 4).is_err());
        assert!(detection_threshold(1.0, -1.0, 4).is_err());
        assert!(detection_threshold(1.0, 1.0, 0).is_err());
    }

    #[test]
    fn norm_test_equals_posterior_half_test() {
        // Decision via theta must agree with pi > psi from the denoiser
        // statistics for random inputs, including near the boundary.
        let mut rng = substream(42, 9);
        let (beta, tau_sq, m) = (0.8, 0.3, 6);
        for trial in 0..500 {
            let scale = if trial % 3 == 0 { 0.6 } else { 1.0 };
            let row = Array1::from_iter(
                (0..m).map(|_| complex_gaussian(&mut rng, scale * (beta + tau_sq))),
            );
            let norm_sq: f64 = row.iter().map(|z| z.norm_sqr()).sum();
            let (_, pi, psi) = phi_statistics(norm_sq, beta, tau_sq, 0.1, m).unwrap();
            let by_theta = decide_row(&row, beta, tau_sq).unwrap();
            assert_eq!(by_theta, pi > psi, "disagreement at norm_sq {norm_sq}");
        }
    }

    #[test]
    fn tie_resolves_inactive() {
        let theta = detection_threshold(1.0, 1.0, 1).unwrap();
        let row = Array1::from(vec![Complex64::new(theta.sqrt(), 0.0)]);
        assert!(!decide_row(&row, 1.0, 1.0).unwrap());
    }

    #[test]
    fn confusion_counts_and_rates() {
        let decisions = vec![true, false, true, false, false];
        let truth = vec![true, true, false, false, false];
        let c = Confusion::from_decisions(&decisions, &truth).unwrap();
        assert_eq!(
            c,
            Confusion { true_active: 1, missed: 1, false_alarm: 1, true_inactive: 2 }
        );
        assert!((c.miss_rate() - 0.5).abs() < 1e-15);
        assert!((c.false_alarm_rate() - 1.0 / 3.0).abs() < 1e-15);
        let merged = c.merge(&c);
        assert_eq!(merged.n_active(), 4);
        assert_eq!(merged.n_inactive(), 6);
    }

    #[test]
    fn confusion_rejects_length_mismatch() {
        assert!(Confusion::from_decisions(&[true], &[true, false]).is_err());
    }

    #[test]
    fn mixture_detection_rates_track_chi_square_tails() {
        // Under the scalar model the statistic ||h + tau v||^2 (active) and
        // ||tau v||^2 (inactive) are scaled chi^2 with 2M dof; empirical
        // rates must sit near the exact tail probabilities.
        use crate::specfun::{reg_gamma_lower, reg_gamma_upper};
        let (beta, tau_sq, m) = (1.0, 0.25, 4usize);
        let theta = detection_threshold(beta, tau_sq, m).unwrap();
        let p_md = reg_gamma_lower(m as f64, theta / (beta + tau_sq)).unwrap();
        let p_fa = reg_gamma_upper(m as f64, theta / tau_sq).unwrap();

        let mut rng = substream(77, 4);
        let trials = 200_000;
        let (mut miss, mut fa) = (0u64, 0u64);
        for _ in 0..trials {
            let active: f64 =
                (0..m).map(|_| complex_gaussian(&mut rng, beta + tau_sq).norm_sqr()).sum();
            if active <= theta {
                miss += 1;
            }
            let inactive: f64 =
                (0..m).map(|_| complex_gaussian(&mut rng, tau_sq).norm_sqr()).sum();
            if inactive > theta {
                fa += 1;
            }
        }
        let t = trials as f64;
        let (emp_md, emp_fa) = (miss as f64 / t, fa as f64 / t);
        let se_md = (p_md * (1.0 - p_md) / t).sqrt();
        let se_fa = (p_fa * (1.0 - p_fa) / t).sqrt();
        assert!((emp_md - p_md).abs() < 4.0 * se_md, "md {emp_md} vs {p_md}");
        assert!((emp_fa - p_fa).abs() < 4.0 * se_fa, "fa {emp_fa} vs {p_fa}");
    }
}
