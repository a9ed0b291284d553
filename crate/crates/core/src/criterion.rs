//! Per-epoch heavy-tail indicator, phase segmentation and stopping rules.
//!
//! All rules work on record indices: a trajectory may skip epochs and every
//! window is counted in records.

use serde::{Deserialize, Serialize};

use crate::calibration::threshold_d_star;
use crate::error::{Error, Result};
use crate::powerlaw::{fit_exponential, loglik_ratio, select_xmin, TailSample, DEFAULT_SIGNIFICANCE};
use crate::spectra::Spectrum;

pub const DEFAULT_PATIENCE: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u64,
    pub alpha: f64,
    pub x_min: f64,
    pub n_tail: usize,
    pub d_tilde: f64,
    pub d_star: f64,
    pub indicator: f64,
    /// Log-likelihood ratio of the power law against the exponential.
    pub r_exp: f64,
    pub p_value: f64,
    pub heavy_tailed: bool,
}

impl EpochRecord {
    /// Fills in `indicator` and `heavy_tailed` from the two distances.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        epoch: u64,
        alpha: f64,
        x_min: f64,
        n_tail: usize,
        d_tilde: f64,
        d_star: f64,
        r_exp: f64,
        p_value: f64,
    ) -> Self {
        EpochRecord {
            epoch,
            alpha,
            x_min,
            n_tail,
            d_tilde,
            d_star,
            indicator: d_star - d_tilde,
            r_exp,
            p_value,
            heavy_tailed: d_tilde <= d_star,
        }
    }
}

/// Fits the tail of one spectrum and scores it against `C/√n_tail`.
/// The returned record has epoch 0; callers set the real epoch.
pub fn evaluate_epoch(spectrum: &Spectrum, c: f64, min_tail: usize) -> Result<EpochRecord> {
    let fit = select_xmin(spectrum, min_tail)?;
    let tail = TailSample::from_spectrum(spectrum, fit.x_min)?;
    let exp = fit_exponential(&tail)?;
    let cmp = loglik_ratio(&tail, &fit, &exp, DEFAULT_SIGNIFICANCE)?;
    let d_star = threshold_d_star(c, fit.n_tail)?;
    Ok(EpochRecord::from_parts(
        0,
        fit.alpha,
        fit.x_min,
        fit.n_tail,
        fit.ks_d,
        d_star,
        cmp.r,
        cmp.p_value,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub model_label: String,
    records: Vec<EpochRecord>,
}

impl Trajectory {
    pub fn new(model_label: impl Into<String>, records: Vec<EpochRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::InvalidInput("trajectory has no records".into()));
        }
        if let Some(w) = records.windows(2).find(|w| w[1].epoch <= w[0].epoch) {
            return Err(Error::InvalidInput(format!(
                "epochs must increase strictly, found {} after {}",
                w[1].epoch, w[0].epoch
            )));
        }
        Ok(Trajectory {
            model_label: model_label.into(),
            records,
        })
    }

    pub fn records(&self) -> &[EpochRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn push(&mut self, record: EpochRecord) -> Result<()> {
        let last = self.records.last().map(|r| r.epoch);
        if last.is_some_and(|e| record.epoch <= e) {
            return Err(Error::InvalidInput(format!(
                "epoch {} does not follow {}",
                record.epoch,
                last.unwrap_or_default()
            )));
        }
        self.records.push(record);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseRuleParams {
    /// Window length in records.
    pub window: usize,
    /// Phase I ends once the rolling std of alpha falls below this.
    pub alpha_std_threshold: f64,
    /// ...and alpha itself is below this ceiling.
    pub alpha_ceiling: f64,
    /// Phase III starts once the x_min slope stays above this for a window.
    pub xmin_slope_threshold: f64,
}

impl Default for PhaseRuleParams {
    fn default() -> Self {
        PhaseRuleParams {
            window: 5,
            alpha_std_threshold: 0.25,
            alpha_ceiling: 3.0,
            xmin_slope_threshold: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSegmentation {
    /// Last epoch of phase I.
    pub phase1_end: u64,
    /// Last epoch of phase II.
    pub phase2_end: u64,
    pub rule_params: PhaseRuleParams,
}

impl PhaseSegmentation {
    /// Phase number (1, 2 or 3) of `epoch`.
    pub fn phase_of(&self, epoch: u64) -> u8 {
        if epoch <= self.phase1_end {
            1
        } else if epoch <= self.phase2_end {
            2
        } else {
            3
        }
    }
}

fn population_std(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt()
}

/// Least-squares slope of `ys` against `0, 1, 2, ...`.
fn ls_slope(ys: &[f64]) -> f64 {
    let n = ys.len() as f64;
    let x_bar = (n - 1.0) / 2.0;
    let y_bar = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, y) in ys.iter().enumerate() {
        let dx = i as f64 - x_bar;
        sxy += dx * (y - y_bar);
        sxx += dx * dx;
    }
    sxy / sxx
}

/// Splits a trajectory into exploration, heavy-tail and saturation phases.
///
/// Phase I ends at the first record `i` (with a full window behind it) whose
/// trailing window of alphas has population std below `alpha_std_threshold`
/// and whose alpha is below `alpha_ceiling`. Phase III starts at the first
/// later record `j` such that the x_min slopes of the `window` consecutive
/// forward windows starting at `j, ..., j + window - 1` all exceed
/// `xmin_slope_threshold`. A boundary that is never reached is clamped to
/// the last epoch.
pub fn classify_phases(trajectory: &Trajectory, params: &PhaseRuleParams) -> Result<PhaseSegmentation> {
    let w = params.window;
    if w < 2 {
        return Err(Error::InvalidConfig(format!("window must be at least 2, got {w}")));
    }
    let recs = trajectory.records();
    let n = recs.len();
    if n < 2 * w {
        return Err(Error::InvalidInput(format!(
            "trajectory of {n} records is shorter than two windows of {w}"
        )));
    }
    let alphas: Vec<f64> = recs.iter().map(|r| r.alpha).collect();
    let xmins: Vec<f64> = recs.iter().map(|r| r.x_min).collect();
    let last = n - 1;

    let p1 = (w - 1..n)
        .find(|&i| {
            population_std(&alphas[i + 1 - w..=i]) < params.alpha_std_threshold && alphas[i] < params.alpha_ceiling
        })
        .unwrap_or(last);

    let rising = |k: usize| ls_slope(&xmins[k..k + w]) > params.xmin_slope_threshold;
    // The last forward window starting at j + w - 1 must fit inside the record list.
    let p3_start = (p1 + 1..n)
        .take_while(|&j| j + 2 * w - 2 <= last)
        .find(|&j| (j..j + w).all(rising));
    let p2 = p3_start.map_or(last, |j| j - 1);

    Ok(PhaseSegmentation {
        phase1_end: recs[p1].epoch,
        phase2_end: recs[p2].epoch,
        rule_params: *params,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopMode {
    Offline,
    Online,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StopDecision {
    pub stop_epoch: u64,
    pub peak_indicator: f64,
    pub mode: StopMode,
    /// `None` means unlimited patience.
    pub patience: Option<usize>,
    pub triggered: bool,
}

/// Picks the epoch where the heavy-tail indicator peaks.
///
/// Offline mode takes the global argmax (earliest on ties). Online mode scans
/// in order and fires once the running maximum is positive and has not
/// improved for `patience` records; `None` never fires. In both modes
/// `stop_epoch` is the argmax of the records seen.
pub fn stop_epoch(trajectory: &Trajectory, mode: StopMode, patience: Option<usize>) -> StopDecision {
    let recs = trajectory.records();
    let mut best = 0;
    let mut since = 0usize;
    for (i, rec) in recs.iter().enumerate() {
        if rec.indicator > recs[best].indicator {
            best = i;
            since = 0;
        } else if i > 0 {
            since += 1;
        }
        if mode == StopMode::Online && recs[best].indicator > 0.0 && patience.is_some_and(|p| since >= p) {
            return StopDecision {
                stop_epoch: recs[best].epoch,
                peak_indicator: recs[best].indicator,
                mode,
                patience,
                triggered: true,
            };
        }
    }
    let peak = recs[best].indicator;
    StopDecision {
        stop_epoch: recs[best].epoch,
        peak_indicator: peak,
        mode,
        patience,
        triggered: mode == StopMode::Offline && peak > 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(epoch: u64, indicator: f64) -> EpochRecord {
        EpochRecord::from_parts(epoch, 2.5, 0.1, 50, 0.2, 0.2 + indicator, 1.0, 0.5)
    }

    fn traj(points: &[(u64, f64)]) -> Trajectory {
        Trajectory::new("t", points.iter().map(|&(e, v)| rec(e, v)).collect()).unwrap()
    }

    fn shaped(alphas: &[f64], xmins: &[f64]) -> Trajectory {
        let recs = alphas
            .iter()
            .zip(xmins)
            .enumerate()
            .map(|(i, (&a, &x))| EpochRecord::from_parts(i as u64 + 1, a, x, 50, 0.1, 0.2, 1.0, 0.5))
            .collect();
        Trajectory::new("t", recs).unwrap()
    }

    #[test]
    fn boundary_is_heavy_tailed() {
        let r = EpochRecord::from_parts(1, 2.0, 1.0, 100, 0.2, 0.2, 0.0, 1.0);
        assert!(r.heavy_tailed);
        assert_eq!(r.indicator, 0.0);
    }

    #[test]
    fn offline_examples() {
        let t = traj(&[(10, -0.1), (20, 0.02), (30, 0.05), (40, 0.04), (50, 0.03)]);
        let d = stop_epoch(&t, StopMode::Offline, None);
        assert_eq!(d.stop_epoch, 30);
        assert!((d.peak_indicator - 0.05).abs() < 1e-12);
        assert!(d.triggered);

        let t = traj(&[(10, 0.01), (30, 0.05), (40, 0.01), (60, 0.05)]);
        assert_eq!(stop_epoch(&t, StopMode::Offline, None).stop_epoch, 30);

        let t = traj(&[(1, -0.3), (2, -0.1), (3, -0.2)]);
        let d = stop_epoch(&t, StopMode::Offline, None);
        assert!(!d.triggered);
        assert_eq!(d.stop_epoch, 2);
    }

    #[test]
    fn online_patience() {
        let t = traj(&[
            (1, -0.1),
            (2, 0.02),
            (3, 0.05),
            (4, 0.04),
            (5, 0.03),
            (6, 0.01),
            (7, 0.2),
        ]);
        let d = stop_epoch(&t, StopMode::Online, Some(0));
        assert!(d.triggered);
        assert_eq!(d.stop_epoch, 2);

        let d = stop_epoch(&t, StopMode::Online, Some(2));
        assert!(d.triggered);
        assert_eq!(d.stop_epoch, 3);

        let d = stop_epoch(&t, StopMode::Online, Some(4));
        assert!(!d.triggered);
        assert_eq!(d.stop_epoch, 7);

        let d = stop_epoch(&t, StopMode::Online, None);
        assert!(!d.triggered);
    }

    #[test]
    fn online_needs_positive_peak() {
        let t = traj(&[(1, -0.1), (2, -0.2), (3, -0.3), (4, -0.4)]);
        assert!(!stop_epoch(&t, StopMode::Online, Some(0)).triggered);
    }

    #[test]
    fn trajectory_guards() {
        assert!(Trajectory::new("t", vec![]).is_err());
        assert!(Trajectory::new("t", vec![rec(2, 0.0), rec(2, 0.0)]).is_err());
        let mut t = traj(&[(1, 0.0)]);
        assert!(t.push(rec(1, 0.0)).is_err());
        t.push(rec(5, 0.0)).unwrap();
        assert_eq!(t.len(), 2);
    }

    #[test]
    fn constant_trajectory_phases() {
        let t = shaped(&[2.5; 20], &[0.1; 20]);
        let seg = classify_phases(&t, &PhaseRuleParams::default()).unwrap();
        assert_eq!(seg.phase1_end, 5);
        assert_eq!(seg.phase2_end, 20);
    }

    #[test]
    fn short_trajectory_rejected() {
        let t = shaped(&[2.5; 3], &[0.1; 3]);
        assert!(matches!(
            classify_phases(&t, &PhaseRuleParams::default()),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn three_phase_shape() {
        let mut alphas = vec![9.0, 6.0, 11.0, 5.0, 8.0, 7.0, 10.0, 6.5];
        let mut xmins = vec![0.3, 0.05, 0.2, 0.4, 0.1, 0.02, 0.3, 0.2];
        alphas.extend([2.5; 12]);
        xmins.extend([0.1; 12]);
        for k in 0..10 {
            alphas.push(3.0);
            xmins.push(0.1 + 0.01 * f64::from(k + 1));
        }
        let t = shaped(&alphas, &xmins);
        let seg = classify_phases(&t, &PhaseRuleParams::default()).unwrap();
        // A window whose last point starts the climb already has positive slope.
        assert_eq!(seg.phase1_end, 13);
        assert_eq!(seg.phase2_end, 16);
        assert_eq!(seg.phase_of(13), 1);
        assert_eq!(seg.phase_of(14), 2);
        assert_eq!(seg.phase_of(17), 3);
    }

    #[test]
    fn slope_of_line() {
        assert!((ls_slope(&[1.0, 3.0, 5.0, 7.0]) - 2.0).abs() < 1e-12);
        assert_eq!(population_std(&[2.0, 4.0]), 1.0);
    }

    proptest! {
        #[test]
        fn offline_ignores_lower_appended_records(
            base in prop::collection::vec(-1.0f64..1.0, 1..30),
            tail in prop::collection::vec(0.0f64..1.0, 0..10),
        ) {
            let pts: Vec<(u64, f64)> = base.iter().enumerate().map(|(i, &v)| (i as u64, v)).collect();
            let t = traj(&pts);
            let before = stop_epoch(&t, StopMode::Offline, None);
            let mut longer = t.clone();
            for (k, frac) in tail.iter().enumerate() {
                let v = before.peak_indicator - 0.01 - frac;
                longer.push(rec(base.len() as u64 + k as u64, v)).unwrap();
            }
            let after = stop_epoch(&longer, StopMode::Offline, None);
            prop_assert_eq!(before.stop_epoch, after.stop_epoch);
            prop_assert_eq!(before.peak_indicator, after.peak_indicator);
        }

        #[test]
        fn indicator_sign_matches_verdict(d in 0.0f64..1.0, s in 0.0f64..1.0) {
            let r = EpochRecord::from_parts(1, 2.0, 1.0, 10, d, s, 0.0, 1.0);
            prop_assert_eq!(r.heavy_tailed, r.indicator >= 0.0);
        }

        #[test]
        fn looser_alpha_threshold_ends_phase1_no_later(
            alphas in prop::collection::vec(1.5f64..6.0, 10..40),
            t1 in 0.01f64..1.0,
            extra in 0.0f64..1.0,
        ) {
            let xmins = vec![0.1; alphas.len()];
            let t = shaped(&alphas, &xmins);
            let tight = PhaseRuleParams { alpha_std_threshold: t1, ..PhaseRuleParams::default() };
            let loose = PhaseRuleParams { alpha_std_threshold: t1 + extra, ..PhaseRuleParams::default() };
            let a = classify_phases(&t, &tight).unwrap();
            let b = classify_phases(&t, &loose).unwrap();
            prop_assert!(b.phase1_end <= a.phase1_end);
            prop_assert!(b.phase1_end <= b.phase2_end);
        }
    }
}
