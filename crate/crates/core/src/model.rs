//! Random problem instances: pilots, large-scale fading, sparse channel
//! matrices and the received pilot-phase signal.
//!
//! All generators are pure functions of `(config, seed)`; distinct seed
//! streams keep pilots, activities, channels and noise independently
//! reproducible. Fading coefficients are stored in linear scale; dB only
//! appears at the CLI/CSV boundary.

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{complex_gaussian, stream, substream};

/// System-level dimensions and physical parameters.
///
/// `pilot_energy` is the total transmit energy of a pilot sequence
/// (xi = L * rho_pilot); `noise_var` is the AWGN variance per receive
/// dimension, in the same linear power units.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SystemConfig {
    pub n_devices: usize,
    pub pilot_len: usize,
    pub n_antennas: usize,
    pub activity_prob: f64,
    pub pilot_energy: f64,
    pub noise_var: f64,
    pub seed: u64,
}

impl SystemConfig {
    pub fn new(
        n_devices: usize,
        pilot_len: usize,
        n_antennas: usize,
        activity_prob: f64,
        pilot_energy: f64,
        noise_var: f64,
        seed: u64,
    ) -> Result<Self> {
        let cfg = SystemConfig {
            n_devices,
            pilot_len,
            n_antennas,
            activity_prob,
            pilot_energy,
            noise_var,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_devices == 0 || self.pilot_len == 0 || self.n_antennas == 0 {
            return Err(Error::config("n_devices, pilot_len, n_antennas must be >= 1"));
        }
        if !(self.activity_prob > 0.0 && self.activity_prob <= 1.0) {
            return Err(Error::config(format!(
                "activity_prob must lie in (0, 1], got {}",
                self.activity_prob
            )));
        }
        for (name, v) in [("pilot_energy", self.pilot_energy), ("noise_var", self.noise_var)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::config(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Overloading ratio omega = N / L.
    pub fn omega(&self) -> f64 {
        self.n_devices as f64 / self.pilot_len as f64
    }

    /// Effective noise level sigma^2 / xi of the normalized system.
    pub fn noise_over_energy(&self) -> f64 {
        self.noise_var / self.pilot_energy
    }
}

/// Path-loss map distance (km) -> linear-scale beta:
/// beta_dB = -128.1 - 36.7 log10(d).
pub fn pathloss_beta(d_km: f64) -> Result<f64> {
    Ok(10f64.powf(pathloss_beta_db(d_km)? / 10.0))
}

/// Same map, in dB.
pub fn pathloss_beta_db(d_km: f64) -> Result<f64> {
    if !(d_km > 0.0) || !d_km.is_finite() {
        return Err(Error::domain(format!("distance must be > 0 km, got {d_km}")));
    }
    Ok(-128.1 - 36.7 * d_km.log10())
}

/// Per-device large-scale fading coefficients (linear scale), optionally
/// with the distances they were derived from.
#[derive(Debug, Clone, PartialEq)]
pub struct LargeScaleFading {
    pub betas: Vec<f64>,
    pub distances: Option<Vec<f64>>,
}

impl LargeScaleFading {
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::config("beta vector must be nonempty"));
        }
        if betas.iter().any(|b| !(*b > 0.0) || !b.is_finite()) {
            return Err(Error::config("all betas must be finite and > 0"));
        }
        Ok(LargeScaleFading { betas, distances: None })
    }

    pub fn from_distances(distances: Vec<f64>) -> Result<Self> {
        let betas = distances
            .iter()
            .map(|&d| pathloss_beta(d))
            .collect::<Result<Vec<_>>>()?;
        if betas.is_empty() {
            return Err(Error::config("distance vector must be nonempty"));
        }
        Ok(LargeScaleFading { betas, distances: Some(distances) })
    }

    /// Devices dropped uniformly on the interval [d_min, d_max] km.
    ///
    /// The distance law is an assumption: the reference scenario only says
    /// devices are randomly placed between the two radii.
    pub fn uniform_cell(n: usize, d_min_km: f64, d_max_km: f64, seed: u64) -> Result<Self> {
        if !(d_min_km > 0.0 && d_max_km > d_min_km) {
            return Err(Error::config(format!(
                "need 0 < d_min < d_max, got [{d_min_km}, {d_max_km}]"
            )));
        }
        let mut rng = substream(seed, stream::FADING);
        let distances: Vec<f64> =
            (0..n).map(|_| rng.gen_range(d_min_km..d_max_km)).collect();
        Self::from_distances(distances)
    }

    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    pub fn mean_beta(&self) -> f64 {
        self.betas.iter().sum::<f64>() / self.betas.len() as f64
    }

    /// CSV export: one row per device (index, distance_km, beta_db, active).
    /// Distance and activity columns are empty when not available.
    pub fn csv(&self, activity: Option<&[bool]>) -> String {
        let mut out = String::from("index,distance_km,beta_db,active\n");
        for (i, &beta) in self.betas.iter().enumerate() {
            let d = self
                .distances
                .as_ref()
                .map(|d| format!("{:.16e}", d[i]))
                .unwrap_or_default();
            let act = activity
                .map(|a| if a[i] { "1" } else { "0" })
                .unwrap_or("");
            out.push_str(&format!("{i},{d},{:.16e},{act}\n", 10.0 * beta.log10()));
        }
        out
    }
}

/// L x N matrix of unit-energy random pilots; entries i.i.d. CN(0, 1/L).
#[derive(Debug, Clone, PartialEq)]
pub struct PilotMatrix {
    pub a: Array2<Complex64>,
}

impl PilotMatrix {
    pub fn pilot_len(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_devices(&self) -> usize {
        self.a.ncols()
    }
}

/// Deterministic in `(cfg, cfg.seed)`; entry variance 1/L so the expected
/// squared column norm is 1.
pub fn generate_pilots(cfg: &SystemConfig) -> PilotMatrix {
    let mut rng = substream(cfg.seed, stream::PILOTS);
    let var = 1.0 / cfg.pilot_len as f64;
    let a = Array2::from_shape_simple_fn((cfg.pilot_len, cfg.n_devices), || {
        complex_gaussian(&mut rng, var)
    });
    PilotMatrix { a }
}

/// N x M row-sparse channel matrix: row n is zero unless device n is active,
/// in which case it is CN(0, beta_n I).
#[derive(Debug, Clone, PartialEq)]
pub struct SparseChannelMatrix {
    pub x: Array2<Complex64>,
    pub activity: Vec<bool>,
}

impl SparseChannelMatrix {
    pub fn active_count(&self) -> usize {
        self.activity.iter().filter(|a| **a).count()
    }

    /// The channel of device n, or None if it is inactive.
    pub fn channel(&self, n: usize) -> Option<Array1<Complex64>> {
        self.activity[n].then(|| self.x.row(n).to_owned())
    }
}

/// Each device is active independently with probability eps; active rows
/// are CN(0, beta_n I).
pub fn sample_instance(cfg: &SystemConfig, fading: &LargeScaleFading) -> Result<SparseChannelMatrix> {
    if fading.len() != cfg.n_devices {
        return Err(Error::dimension(format!(
            "fading has {} entries for {} devices",
            fading.len(),
            cfg.n_devices
        )));
    }
    let mut act_rng = substream(cfg.seed, stream::ACTIVITY);
    let mut chan_rng = substream(cfg.seed, stream::CHANNELS);
    let m = cfg.n_antennas;
    let mut x = Array2::zeros((cfg.n_devices, m));
    let mut activity = vec![false; cfg.n_devices];
    for n in 0..cfg.n_devices {
        // eps = 1 must mean always active, so compare strictly below eps.
        if act_rng.gen::<f64>() < cfg.activity_prob {
            activity[n] = true;
            let beta = fading.betas[n];
            for v in x.row_mut(n).iter_mut() {
                *v = complex_gaussian(&mut chan_rng, beta);
            }
        }
    }
    Ok(SparseChannelMatrix { x, activity })
}

/// L x M received pilot-phase signal.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceivedMatrix {
    pub y: Array2<Complex64>,
}

/// Y = sqrt(xi) A X + Z with Z entries i.i.d. CN(0, sigma^2).
pub fn synthesize_received(
    a: &PilotMatrix,
    x: &SparseChannelMatrix,
    cfg: &SystemConfig,
) -> Result<ReceivedMatrix> {
    synthesize_received_opts(a, x, cfg, true)
}

/// As [`synthesize_received`], with the noise draw suppressible for
/// noiseless test instances.
pub fn synthesize_received_opts(
    a: &PilotMatrix,
    x: &SparseChannelMatrix,
    cfg: &SystemConfig,
    with_noise: bool,
) -> Result<ReceivedMatrix> {
    if a.pilot_len() != cfg.pilot_len
        || a.n_devices() != cfg.n_devices
        || x.x.nrows() != cfg.n_devices
        || x.x.ncols() != cfg.n_antennas
    {
        return Err(Error::dimension(format!(
            "pilots {}x{}, channels {}x{} vs config L={}, N={}, M={}",
            a.pilot_len(),
            a.n_devices(),
            x.x.nrows(),
            x.x.ncols(),
            cfg.pilot_len,
            cfg.n_devices,
            cfg.n_antennas
        )));
    }
    let sqrt_xi = Complex64::new(cfg.pilot_energy.sqrt(), 0.0);
    let mut y = a.a.dot(&x.x);
    y.mapv_inplace(|v| v * sqrt_xi);
    if with_noise {
        let mut rng = substream(cfg.seed, stream::NOISE);
        for v in y.iter_mut() {
            *v += complex_gaussian(&mut rng, cfg.noise_var);
        }
    }
    Ok(ReceivedMatrix { y })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(n: usize, l: usize, m: usize, eps: f64, seed: u64) -> SystemConfig {
        SystemConfig::new(n, l, m, eps, 1.0, 0.1, seed).unwrap()
    }

    #[test]
    fn pathloss_reference_points() {
        // d = 1 km: the constant term alone.
        assert!((pathloss_beta_db(1.0).unwrap() + 128.1).abs() < 1e-12);
        // Frozen against an independent high-precision evaluation.
        assert!((pathloss_beta_db(0.05).unwrap() + 80.3522).abs() < 1e-3);
        let lin = pathloss_beta(0.05).unwrap();
        assert!((lin - 9.2215e-9).abs() / 9.2215e-9 < 1e-4, "got {lin}");
        assert!((pathloss_beta_db(0.8).unwrap() + 124.5434).abs() < 1e-3);
    }

    #[test]
    fn pathloss_rejects_nonpositive_distance() {
        assert!(pathloss_beta(0.0).is_err());
        assert!(pathloss_beta(-1.0).is_err());
    }

    #[test]
    fn pilots_deterministic_and_unit_energy() {
        let c = cfg(2000, 100, 2, 0.05, 42);
        let a1 = generate_pilots(&c);
        let a2 = generate_pilots(&c);
        assert_eq!(a1, a2);

        // Mean |entry|^2 over 2e5 entries within 5 standard errors of 1/L.
        let n_entries = (c.pilot_len * c.n_devices) as f64;
        let mean_sq = a1.a.iter().map(|v| v.norm_sqr()).sum::<f64>() / n_entries;
        let se = (1.0 / c.pilot_len as f64) / n_entries.sqrt();
        assert!((mean_sq - 0.01).abs() < 5.0 * se, "mean {mean_sq}");

        // Expected squared column norm is 1 for any L: check the sample
        // mean of column norms.
        let col_mean = (0..c.n_devices)
            .map(|j| a1.a.column(j).iter().map(|v| v.norm_sqr()).sum::<f64>())
            .sum::<f64>()
            / c.n_devices as f64;
        assert!((col_mean - 1.0).abs() < 0.02, "column norm mean {col_mean}");
    }

    #[test]
    fn instance_degenerate_activity() {
        let fading = LargeScaleFading::from_betas(vec![1.0; 40]).unwrap();
        let all_off = sample_instance(&cfg(40, 10, 3, 1e-12, 7), &fading).unwrap();
        // eps -> 0 limit: essentially all rows zero.
        assert_eq!(all_off.active_count(), 0);
        assert!(all_off.x.iter().all(|v| *v == Complex64::new(0.0, 0.0)));

        let all_on = sample_instance(&cfg(40, 10, 3, 1.0, 7), &fading).unwrap();
        assert_eq!(all_on.active_count(), 40);
        assert!(all_on.x.rows().into_iter().all(|r| r.iter().any(|v| v.norm_sqr() > 0.0)));
    }

    #[test]
    fn instance_mean_active_count() {
        let fading = LargeScaleFading::from_betas(vec![1.0; 2000]).unwrap();
        let trials = 1000usize;
        let mut total = 0usize;
        for t in 0..trials {
            let c = cfg(2000, 100, 1, 0.05, t as u64);
            total += sample_instance(&c, &fading).unwrap().active_count();
        }
        let mean = total as f64 / trials as f64;
        // Binomial(2000, 0.05): SE of the mean over 1000 draws.
        let se = (2000.0 * 0.05 * 0.95 / trials as f64).sqrt();
        assert!((mean - 100.0).abs() < 5.0 * se, "mean active {mean}");
    }

    #[test]
    fn instance_row_sparsity_matches_activity() {
        let fading = LargeScaleFading::uniform_cell(300, 0.05, 1.0, 5).unwrap();
        let inst = sample_instance(&cfg(300, 50, 4, 0.3, 11), &fading).unwrap();
        for n in 0..300 {
            let zero_row = inst.x.row(n).iter().all(|v| *v == Complex64::new(0.0, 0.0));
            assert_eq!(zero_row, !inst.activity[n]);
        }
    }

    #[test]
    fn instance_rejects_mismatched_fading() {
        let fading = LargeScaleFading::from_betas(vec![1.0; 10]).unwrap();
        assert!(sample_instance(&cfg(11, 5, 2, 0.5, 0), &fading).is_err());
    }

    #[test]
    fn active_row_variance_tracks_beta() {
        let beta = 3.0e-10;
        let fading = LargeScaleFading::from_betas(vec![beta; 500]).unwrap();
        let c = cfg(500, 50, 32, 1.0, 13);
        let inst = sample_instance(&c, &fading).unwrap();
        let n_entries = (500 * 32) as f64;
        let mean = inst.x.iter().map(|v| v.norm_sqr()).sum::<f64>() / n_entries;
        let se = beta / n_entries.sqrt();
        assert!((mean - beta).abs() < 5.0 * se, "row variance {mean}");
    }

    #[test]
    fn received_trivial_cases() {
        let c = cfg(30, 10, 2, 0.5, 3);
        let a = generate_pilots(&c);
        let zero_x = SparseChannelMatrix {
            x: Array2::zeros((30, 2)),
            activity: vec![false; 30],
        };
        // X = 0, noise suppressed: Y = 0 exactly.
        let y = synthesize_received_opts(&a, &zero_x, &c, false).unwrap();
        assert!(y.y.iter().all(|v| *v == Complex64::new(0.0, 0.0)));

        // xi = 0: Y = Z exactly. Built directly since constructors require
        // positive energy.
        let mut c0 = c.clone();
        c0.pilot_energy = 0.0;
        let fading = LargeScaleFading::from_betas(vec![1.0; 30]).unwrap();
        let inst = sample_instance(&c, &fading).unwrap();
        let y0 = synthesize_received(&a, &inst, &c0).unwrap();
        let mut rng = substream(c0.seed, stream::NOISE);
        let z = Array2::from_shape_simple_fn((10, 2), || complex_gaussian(&mut rng, c0.noise_var));
        assert_eq!(y0.y, z);
    }

    #[test]
    fn received_noise_variance() {
        let c = SystemConfig::new(4, 500, 200, 0.5, 1.0, 0.37, 9).unwrap();
        let zero_x = SparseChannelMatrix {
            x: Array2::zeros((4, 200)),
            activity: vec![false; 4],
        };
        let y = synthesize_received(&generate_pilots(&c), &zero_x, &c).unwrap();
        let n_entries = (500 * 200) as f64;
        let mean = y.y.iter().map(|v| v.norm_sqr()).sum::<f64>() / n_entries;
        let se = 0.37 / n_entries.sqrt();
        assert!((mean - 0.37).abs() < 5.0 * se, "noise variance {mean}");
    }

    #[test]
    fn received_rejects_dimension_mismatch() {
        let c = cfg(30, 10, 2, 0.5, 3);
        let a = generate_pilots(&c);
        let bad = SparseChannelMatrix {
            x: Array2::zeros((29, 2)),
            activity: vec![false; 29],
        };
        assert!(synthesize_received(&a, &bad, &c).is_err());
    }

    #[test]
    fn fading_csv_shape() {
        let fading = LargeScaleFading::from_distances(vec![0.1, 0.8]).unwrap();
        let csv = fading.csv(Some(&[true, false]));
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "index,distance_km,beta_db,active");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("0,") && lines[1].ends_with(",1"));
    }
}
