//! Batch experiment runner: seeded parallel Monte Carlo trials of the full
//! pipeline (instance synthesis, AMP, detection) swept over one axis, with
//! analytic overlays evaluated at the state-evolution fixed point of each
//! sweep point.
//!
//! Reproducibility contract: identical (spec, seed) produce byte-identical
//! output regardless of worker count. Trial t of sweep point s uses the
//! sub-seed mix(seed, [s, t]) and trials are reduced in index order.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::amp::{amp_run, TauPolicy, DEFAULT_MAX_ITERS};
use crate::analysis::{channel_stats_asymptotic, error_probs_asymptotic, error_probs_exact};
use crate::detector::{score, Confusion};
use crate::error::{Error, Result};
use crate::model::{
    generate_pilots, sample_instance, synthesize_received, LargeScaleFading, PilotMatrix,
    SystemConfig,
};
use crate::rng::mix;
use crate::state_evolution::{se_fixed_point, SeParams, SeVariant};

/// 99% two-sided normal quantile used for Wilson intervals.
pub const WILSON_Z99: f64 = 2.5758293035489004;

/// Physical-layer portion of an experiment, with explicit units in the key
/// names. Powers are in dBm; xi = pilot_len * tx power (linear mW).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub n_devices: usize,
    pub pilot_len: usize,
    pub n_antennas: usize,
    pub activity_prob: f64,
    pub tx_power_dbm: f64,
    pub noise_psd_dbm_hz: f64,
    pub bandwidth_hz: f64,
    /// Coherence budget in symbols; when set, pilot_len must stay below it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coherence_symbols: Option<usize>,
}

impl SystemSpec {
    /// Total noise power in linear mW over the configured bandwidth.
    pub fn noise_mw(&self) -> f64 {
        let dbm = self.noise_psd_dbm_hz + 10.0 * self.bandwidth_hz.log10();
        10f64.powf(dbm / 10.0)
    }

    pub fn tx_power_mw(&self) -> f64 {
        10f64.powf(self.tx_power_dbm / 10.0)
    }

    /// Concrete per-trial configuration after applying the sweep axis.
    pub fn config(&self, seed: u64) -> Result<SystemConfig> {
        if let Some(t) = self.coherence_symbols {
            if self.pilot_len >= t {
                return Err(Error::config(format!(
                    "pilot_len {} must be below the coherence budget of {} symbols",
                    self.pilot_len, t
                )));
            }
        }
        SystemConfig::new(
            self.n_devices,
            self.pilot_len,
            self.n_antennas,
            self.activity_prob,
            self.pilot_len as f64 * self.tx_power_mw(),
            self.noise_mw(),
            seed,
        )
    }
}

/// How the large-scale fading population is produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FadingSpec {
    /// Devices dropped uniformly on [d_min_km, d_max_km] with the standard
    /// path-loss law.
    UniformCell { d_min_km: f64, d_max_km: f64 },
    /// Explicit linear power gains.
    Betas { betas: Vec<f64> },
}

impl FadingSpec {
    pub fn realize(&self, n: usize, seed: u64) -> Result<LargeScaleFading> {
        match self {
            FadingSpec::UniformCell { d_min_km, d_max_km } => {
                LargeScaleFading::uniform_cell(n, *d_min_km, *d_max_km, seed)
            }
            FadingSpec::Betas { betas } => {
                if betas.len() != n {
                    return Err(Error::config(format!(
                        "fading lists {} betas for {} devices",
                        betas.len(),
                        n
                    )));
                }
                LargeScaleFading::from_betas(betas.clone())
            }
        }
    }
}

/// Which quantity the sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Antennas,
    PilotLen,
    TxPowerDbm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

/// Complete description of one experiment. Serializes to/from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub seed: u64,
    pub trials: usize,
    /// Redraw pilots each trial (default); set to keep one pilot matrix.
    #[serde(default)]
    pub fixed_pilots: bool,
    pub system: SystemSpec,
    pub fading: FadingSpec,
    pub sweep: SweepSpec,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::config("trials must be >= 1"));
        }
        if self.sweep.values.is_empty() {
            return Err(Error::config("sweep values must be nonempty"));
        }
        if self.sweep.values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config("sweep values must be strictly increasing"));
        }
        if matches!(self.sweep.axis, SweepAxis::Antennas | SweepAxis::PilotLen)
            && self.sweep.values.iter().any(|v| v.fract() != 0.0 || *v < 1.0)
        {
            return Err(Error::config("integer sweep axis requires positive integer values"));
        }
        // Every sweep point must yield a feasible configuration.
        for (i, &v) in self.sweep.values.iter().enumerate() {
            self.point_system(v)?.config(mix(self.seed, &[i as u64, 0]))?;
        }
        Ok(())
    }

    fn point_system(&self, value: f64) -> Result<SystemSpec> {
        let mut sys = self.system.clone();
        match self.sweep.axis {
            SweepAxis::Antennas => sys.n_antennas = value as usize,
            SweepAxis::PilotLen => sys.pilot_len = value as usize,
            SweepAxis::TxPowerDbm => sys.tx_power_dbm = value,
        }
        Ok(sys)
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let spec: ExperimentSpec =
            toml::from_str(s).map_err(|e| Error::config(format!("bad experiment spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::config(format!("serialize: {e}")))
    }
}

/// Wilson score interval for k successes out of n at quantile z; (0, 1)
/// when n = 0.
pub fn wilson_interval(k: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let (kf, nf) = (k as f64, n as f64);
    let z2 = z * z;
    let denom = nf + z2;
    let center = (kf + z2 / 2.0) / denom;
    let half = z * (kf * (nf - kf) / nf + z2 / 4.0).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Aggregated result for one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub sweep_value: f64,
    pub trials: u64,
    pub n_active: u64,
    pub n_inactive: u64,
    pub missed: u64,
    pub false_alarms: u64,
    /// Empirical miss rate; NaN when no device was ever active.
    pub p_md_emp: f64,
    pub p_md_lo: f64,
    pub p_md_hi: f64,
    pub p_fa_emp: f64,
    pub p_fa_lo: f64,
    pub p_fa_hi: f64,
    /// Population-averaged analytic predictions at the SE fixed point.
    pub p_md_exact: f64,
    pub p_fa_exact: f64,
    pub p_md_asym: f64,
    pub p_fa_asym: f64,
    /// Empirical channel-error moments over truly active devices.
    pub upsilon_emp: f64,
    pub delta_upsilon_emp: f64,
    /// Population-averaged large-antenna limits.
    pub upsilon_asym: f64,
    pub delta_upsilon_asym: f64,
    pub tau_fp_sq: f64,
    /// Analytic exact rates fall inside the 99% Wilson intervals.
    pub consistent: bool,
    /// Wall-clock for the point, milliseconds. Excluded from emitted files
    /// so that outputs stay byte-stable across runs.
    #[serde(skip)]
    pub wall_ms: u64,
}

struct TrialOutcome {
    confusion: Confusion,
    ups_sum: f64,
    dup_sum: f64,
    active_rows: u64,
}

fn run_trial(
    sys: &SystemSpec,
    fading: &LargeScaleFading,
    fixed_pilots: Option<&PilotMatrix>,
    seed: u64,
) -> Result<TrialOutcome> {
    let cfg = sys.config(seed)?;
    let owned;
    let pilots = match fixed_pilots {
        Some(p) => p,
        None => {
            owned = generate_pilots(&cfg);
            &owned
        }
    };
    let instance = sample_instance(&cfg, fading)?;
    let received = synthesize_received(pilots, &instance, &cfg)?;
    let run = amp_run(
        &received,
        pilots,
        fading,
        &cfg,
        DEFAULT_MAX_ITERS,
        &TauPolicy::Empirical,
        Some(&instance.activity),
    )?;
    let report = score(&run, &fading.betas, &instance.activity, None)?;
    // Channel moments per truly active row, on the denoised estimate.
    let m = cfg.n_antennas as f64;
    let mut ups_sum = 0.0;
    let mut dup_sum = 0.0;
    let mut active_rows = 0u64;
    for (k, &act) in instance.activity.iter().enumerate() {
        if act {
            let est = run.state.x_est.row(k);
            let truth = instance.x.row(k);
            ups_sum += est.iter().map(|z| z.norm_sqr()).sum::<f64>() / m;
            dup_sum += est
                .iter()
                .zip(truth.iter())
                .map(|(e, h)| (e - h).norm_sqr())
                .sum::<f64>()
                / m;
            active_rows += 1;
        }
    }
    Ok(TrialOutcome { confusion: report.confusion, ups_sum, dup_sum, active_rows })
}

/// Analytic overlays averaged over the beta population at a common tau^2.
fn population_overlay(betas: &[f64], tau_sq: f64, m: usize) -> Result<[f64; 6]> {
    let mut acc = [0.0f64; 6];
    for &beta in betas {
        let (md, fa) = error_probs_exact(beta, tau_sq, m)?;
        let (mda, faa) = error_probs_asymptotic(beta, tau_sq, m)?;
        let stats = channel_stats_asymptotic(beta, tau_sq)?;
        acc[0] += md;
        acc[1] += fa;
        acc[2] += mda;
        acc[3] += faa;
        acc[4] += stats.upsilon;
        acc[5] += stats.delta_upsilon;
    }
    let n = betas.len() as f64;
    for a in &mut acc {
        *a /= n;
    }
    Ok(acc)
}

/// Run the experiment: for each sweep point, `trials` independent pipeline
/// runs plus one state-evolution solve for the analytic overlay.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Vec<ResultRecord>> {
    spec.validate()?;
    let mut records = Vec::with_capacity(spec.sweep.values.len());
    for (s, &value) in spec.sweep.values.iter().enumerate() {
        let start = std::time::Instant::now();
        let sys = spec.point_system(value)?;
        // One fading population per point, derived from the base seed only,
        // so all trials share the beta vector the detector is given.
        let fading = spec.fading.realize(sys.n_devices, mix(spec.seed, &[s as u64]))?;
        let base_cfg = sys.config(spec.seed)?;
        let fixed = spec
            .fixed_pilots
            .then(|| generate_pilots(&base_cfg));

        // SE fixed point for the analytic overlay (noisy map: modest tol).
        let se = SeParams::from_config(&base_cfg, &fading)?;
        let traj = se_fixed_point(&se, SeVariant::Full, 1e-4, 200, 20_000, mix(spec.seed, &[s as u64, u64::MAX]))?;
        let tau_fp_sq = traj.fixed_point;

        // Index-ordered collect + sequential reduce keeps the aggregate
        // identical for any worker count.
        let outcomes: Result<Vec<TrialOutcome>> = (0..spec.trials)
            .into_par_iter()
            .map(|t| run_trial(&sys, &fading, fixed.as_ref(), mix(spec.seed, &[s as u64, t as u64])))
            .collect();
        let outcomes = outcomes?;
        let mut confusion = Confusion::default();
        let (mut ups, mut dup, mut rows) = (0.0, 0.0, 0u64);
        for o in &outcomes {
            confusion = confusion.merge(&o.confusion);
            ups += o.ups_sum;
            dup += o.dup_sum;
            rows += o.active_rows;
        }

        let overlay = population_overlay(&fading.betas, tau_fp_sq, sys.n_antennas)?;
        let (p_md_lo, p_md_hi) = wilson_interval(confusion.missed, confusion.n_active(), WILSON_Z99);
        let (p_fa_lo, p_fa_hi) =
            wilson_interval(confusion.false_alarm, confusion.n_inactive(), WILSON_Z99);
        let md_ok = confusion.n_active() == 0
            || (p_md_lo..=p_md_hi).contains(&overlay[0]);
        let fa_ok = (p_fa_lo..=p_fa_hi).contains(&overlay[1]);
        records.push(ResultRecord {
            sweep_value: value,
            trials: spec.trials as u64,
            n_active: confusion.n_active(),
            n_inactive: confusion.n_inactive(),
            missed: confusion.missed,
            false_alarms: confusion.false_alarm,
            p_md_emp: confusion.miss_rate(),
            p_md_lo,
            p_md_hi,
            p_fa_emp: confusion.false_alarm_rate(),
            p_fa_lo,
            p_fa_hi,
            p_md_exact: overlay[0],
            p_fa_exact: overlay[1],
            p_md_asym: overlay[2],
            p_fa_asym: overlay[3],
            upsilon_emp: if rows > 0 { ups / rows as f64 } else { f64::NAN },
            delta_upsilon_emp: if rows > 0 { dup / rows as f64 } else { f64::NAN },
            upsilon_asym: overlay[4],
            delta_upsilon_asym: overlay[5],
            tau_fp_sq,
            consistent: md_ok && fa_ok,
            wall_ms: start.elapsed().as_millis() as u64,
        });
    }
    Ok(records)
}

/// The reference configuration: 2000 devices, 5% activity, 23 dBm transmit
/// power, -169 dBm/Hz noise over 1 MHz, a 1000-symbol coherence budget,
/// devices uniform on [0.05, 1] km, pilots of length 110, antenna sweep.
pub fn preset_section6() -> ExperimentSpec {
    ExperimentSpec {
        seed: 1,
        trials: 10_000,
        fixed_pilots: false,
        system: SystemSpec {
            n_devices: 2000,
            pilot_len: 110,
            n_antennas: 8,
            activity_prob: 0.05,
            tx_power_dbm: 23.0,
            noise_psd_dbm_hz: -169.0,
            bandwidth_hz: 1e6,
            coherence_symbols: Some(1000),
        },
        fading: FadingSpec::UniformCell { d_min_km: 0.05, d_max_km: 1.0 },
        sweep: SweepSpec { axis: SweepAxis::Antennas, values: vec![8.0, 16.0, 32.0, 64.0] },
    }
}

pub const RESULT_COLUMNS: [&str; 22] = [
    "sweep_value",
    "trials",
    "n_active",
    "n_inactive",
    "missed",
    "false_alarms",
    "p_md_emp",
    "p_md_lo",
    "p_md_hi",
    "p_fa_emp",
    "p_fa_lo",
    "p_fa_hi",
    "p_md_exact",
    "p_fa_exact",
    "p_md_asym",
    "p_fa_asym",
    "upsilon_emp",
    "delta_upsilon_emp",
    "upsilon_asym",
    "delta_upsilon_asym",
    "tau_fp_sq",
    "consistent",
];

/// Output format of [`emit`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Json,
}

pub fn records_to_csv(records: &[ResultRecord]) -> String {
    let mut out = RESULT_COLUMNS.join(",");
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{:.16e},{},{},{},{},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{}",
            r.sweep_value,
            r.trials,
            r.n_active,
            r.n_inactive,
            r.missed,
            r.false_alarms,
            r.p_md_emp,
            r.p_md_lo,
            r.p_md_hi,
            r.p_fa_emp,
            r.p_fa_lo,
            r.p_fa_hi,
            r.p_md_exact,
            r.p_fa_exact,
            r.p_md_asym,
            r.p_fa_asym,
            r.upsilon_emp,
            r.delta_upsilon_emp,
            r.upsilon_asym,
            r.delta_upsilon_asym,
            r.tau_fp_sq,
            r.consistent,
        );
    }
    out
}

/// Parse the CSV produced by [`records_to_csv`] back into records
/// (wall_ms is not emitted and comes back as zero).
pub fn records_from_csv(csv: &str) -> Result<Vec<ResultRecord>> {
    let mut lines = csv.lines();
    let header = lines.next().ok_or_else(|| Error::config("empty csv"))?;
    if header != RESULT_COLUMNS.join(",") {
        return Err(Error::config("unexpected csv header"));
    }
    let mut out = Vec::new();
    for (ln, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != RESULT_COLUMNS.len() {
            return Err(Error::config(format!("line {}: wrong field count", ln + 2)));
        }
        let f = |i: usize| -> Result<f64> {
            fields[i]
                .parse()
                .map_err(|e| Error::config(format!("line {}: {e}", ln + 2)))
        };
        let u = |i: usize| -> Result<u64> {
            fields[i]
                .parse()
                .map_err(|e| Error::config(format!("line {}: {e}", ln + 2)))
        };
        out.push(ResultRecord {
            sweep_value: f(0)?,
            trials: u(1)?,
            n_active: u(2)?,
            n_inactive: u(3)?,
            missed: u(4)?,
            false_alarms: u(5)?,
            p_md_emp: f(6)?,
            p_md_lo: f(7)?,
            p_md_hi: f(8)?,
            p_fa_emp: f(9)?,
            p_fa_lo: f(10)?,
            p_fa_hi: f(11)?,
            p_md_exact: f(12)?,
            p_fa_exact: f(13)?,
            p_md_asym: f(14)?,
            p_fa_asym: f(15)?,
            upsilon_emp: f(16)?,
            delta_upsilon_emp: f(17)?,
            upsilon_asym: f(18)?,
            delta_upsilon_asym: f(19)?,
            tau_fp_sq: f(20)?,
            consistent: fields[21]
                .parse()
                .map_err(|e| Error::config(format!("line {}: {e}", ln + 2)))?,
            wall_ms: 0,
        });
    }
    Ok(out)
}

pub fn records_to_json(records: &[ResultRecord]) -> Result<String> {
    let mut s = serde_json::to_string_pretty(records)
        .map_err(|e| Error::config(format!("json serialize: {e}")))?;
    s.push('\n');
    Ok(s)
}

/// Write records to `path` in the requested format. Bit-stable: fixed
/// column order, 17-significant-digit floats, LF endings.
pub fn emit(records: &[ResultRecord], path: &Path, format: OutputFormat) -> Result<()> {
    let body = match format {
        OutputFormat::Csv => records_to_csv(records),
        OutputFormat::Json => records_to_json(records)?,
    };
    std::fs::write(path, body).map_err(|e| Error::io(path.display().to_string(), e))
}
