//! Path-reconstruction privacy loss: discrete Fréchet distance, path
//! similarity, per-server loss calibration and the total loss function.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::fit_saturating_rate;
use crate::stats::mean;
use crate::trajectory::{euclidean, subsample, GeoSample, PlanarPath, Projection, Trajectory};

/// Discrete Fréchet distance under the Euclidean metric, O(|P|·|Q|) time
/// and O(|Q|) memory.
pub fn discrete_frechet(p: &PlanarPath, q: &PlanarPath) -> f64 {
    frechet_points(p.points(), q.points())
}

pub(crate) fn frechet_points(p: &[[f64; 2]], q: &[[f64; 2]]) -> f64 {
    assert!(!p.is_empty() && !q.is_empty(), "paths must be non-empty");
    let mut prev = vec![0.0_f64; q.len()];
    let mut cur = vec![0.0_f64; q.len()];
    for (i, a) in p.iter().enumerate() {
        for (j, b) in q.iter().enumerate() {
            let d = euclidean(a, b);
            cur[j] = match (i, j) {
                (0, 0) => d,
                (0, _) => cur[j - 1].max(d),
                (_, 0) => prev[0].max(d),
                _ => prev[j].min(prev[j - 1]).min(cur[j - 1]).max(d),
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[q.len() - 1]
}

/// `1 - min(1, d_F(full, reconstructed) / diameter(full))`.
pub fn path_similarity(full: &PlanarPath, reconstructed: &PlanarPath) -> Result<f64> {
    if full.len() < 2 || reconstructed.len() < 2 {
        return Err(Error::domain("similarity needs paths of at least two points"));
    }
    let diameter = full.diameter();
    if diameter <= 0.0 {
        return Err(Error::domain("full path has zero diameter"));
    }
    Ok(1.0 - (discrete_frechet(full, reconstructed) / diameter).min(1.0))
}

/// Similarity between a full trajectory and the samples an observer holds,
/// both projected in the full trajectory's frame. Fewer than two captured
/// samples score 0.
pub fn reconstruction_similarity(full: &Trajectory, captured: &[GeoSample]) -> Result<f64> {
    if captured.len() < 2 {
        return Ok(0.0);
    }
    let proj = Projection::centered_on(full);
    let full_path = proj.project_samples(full.samples())?;
    let partial = proj.project_samples(captured)?;
    path_similarity(&full_path, &partial)
}

/// Coefficients of the three-term loss `1 - e^{-k f/s} - e^{-p f} - e^{-q/s}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossModel {
    /// Per-server decay, minutes per sample.
    pub k: f64,
    /// Frequency-term coefficient, minutes per sample.
    pub p: f64,
    /// Server-term coefficient.
    pub q: f64,
    /// Lower clamp on the returned loss.
    pub eps_clamp: f64,
}

impl Default for LossModel {
    fn default() -> Self {
        Self {
            k: 12.447,
            p: 0.1,
            q: 10.0,
            eps_clamp: 1e-9,
        }
    }
}

impl LossModel {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !(positive(self.k) && positive(self.p) && positive(self.q)) {
            return Err(Error::domain(format!("loss coefficients must be positive: {self:?}")));
        }
        if !(self.eps_clamp > 0.0 && self.eps_clamp < 1.0) {
            return Err(Error::domain("eps_clamp must lie in (0, 1)"));
        }
        Ok(())
    }

    /// Loss seen by a single server: `1 - exp(-k f_d / s)`.
    pub fn per_server(&self, f_d: f64, s: f64) -> f64 {
        1.0 - (-self.k * f_d / s).exp()
    }

    /// The loss formula before clamping; may be negative.
    pub fn raw(&self, f_d: f64, s: f64) -> f64 {
        1.0 - (-self.k * f_d / s).exp() - (-self.p * f_d).exp() - (-self.q / s).exp()
    }
}

/// Loss value plus the unclamped value it came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossEval {
    pub value: f64,
    pub unclamped: f64,
}

impl LossEval {
    pub fn clamped(&self) -> bool {
        self.value != self.unclamped
    }
}

/// Total privacy loss clamped into `[eps_clamp, 1]`.
pub fn total_loss(model: &LossModel, f_d: f64, s: f64) -> f64 {
    total_loss_eval(model, f_d, s).value
}

pub fn total_loss_eval(model: &LossModel, f_d: f64, s: f64) -> LossEval {
    let unclamped = model.raw(f_d, s);
    LossEval {
        value: unclamped.clamp(model.eps_clamp, 1.0),
        unclamped,
    }
}

/// The calibration frequency ladder 1/2, 1/3, ..., 1/10 samples per minute.
pub fn default_frequency_ladder() -> Vec<f64> {
    (2..=10).map(|d| 1.0 / f64::from(d)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    pub f_d: f64,
    pub mean_similarity: f64,
    pub fitted_prediction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub fitted_k: f64,
    pub residual_rms: f64,
    pub points: Vec<CalibrationPoint>,
    /// Set when the fit collapsed to a non-positive or vanishing rate.
    pub degenerate: bool,
}

impl CalibrationReport {
    /// Loss model with this report's per-server coefficient and the other
    /// coefficients taken from `base`.
    pub fn loss_model(&self, base: &LossModel) -> Result<LossModel> {
        if self.degenerate {
            return Err(Error::FitDiverged(format!(
                "degenerate calibration (k = {})",
                self.fitted_k
            )));
        }
        let model = LossModel {
            k: self.fitted_k,
            ..*base
        };
        model.validate()?;
        Ok(model)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["f_d", "mean_similarity", "fitted_prediction"])?;
        for p in &self.points {
            w.serialize((p.f_d, p.mean_similarity, p.fitted_prediction))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Threshold under which a fitted rate counts as collapsed.
const DEGENERATE_RATE: f64 = 1e-8;

/// Fits `1 - exp(-k x)` to `(x, similarity)` points and packages the result.
pub fn fit_loss_curve(x: &[f64], similarity: &[f64]) -> Result<CalibrationReport> {
    let (k, report) = fit_saturating_rate(x, similarity)?;
    Ok(CalibrationReport {
        fitted_k: k,
        residual_rms: report.residual_rms,
        points: x
            .iter()
            .zip(similarity)
            .map(|(&f_d, &mean_similarity)| CalibrationPoint {
                f_d,
                mean_similarity,
                fitted_prediction: 1.0 - (-k * f_d).exp(),
            })
            .collect(),
        degenerate: !(k > DEGENERATE_RATE),
    })
}

/// Mean similarity between each full trajectory and its subsample at
/// `f_d`. Vehicles are scored in parallel and averaged in input order.
pub fn mean_subsample_similarity(trajs: &[Trajectory], f_d: f64) -> Result<f64> {
    let scores = trajs
        .par_iter()
        .map(|t| reconstruction_similarity(t, subsample(t, f_d)?.samples()))
        .collect::<Result<Vec<f64>>>()?;
    mean(&scores).ok_or(Error::NoTrajectories)
}

/// Measures mean subsample similarity at each frequency and fits the
/// per-server rate `k` of `1 - exp(-k f)`.
pub fn calibrate_per_server_loss(trajs: &[Trajectory], freqs: &[f64]) -> Result<CalibrationReport> {
    if trajs.is_empty() {
        return Err(Error::NoTrajectories);
    }
    if trajs.iter().any(|t| t.len() < 2) {
        return Err(Error::domain("every trajectory needs at least two samples"));
    }
    if freqs.is_empty() || freqs.iter().any(|&f| !(f > 0.0 && f <= 1.0)) {
        return Err(Error::domain("calibration frequencies must lie in (0, 1]"));
    }
    let mut distinct = freqs.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::Underdetermined("fewer than 2 distinct frequencies".into()));
    }
    let sims = freqs
        .iter()
        .map(|&f| mean_subsample_similarity(trajs, f))
        .collect::<Result<Vec<_>>>()?;
    fit_loss_curve(freqs, &sims)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(pts: &[(f64, f64)]) -> PlanarPath {
        PlanarPath::new(pts.iter().map(|&(x, y)| [x, y]).collect()).unwrap()
    }

    #[test]
    fn frechet_examples() {
        let p = path(&[(0.0, 0.0), (1.0, 0.0), (2.0, 1.0)]);
        assert_eq!(discrete_frechet(&p, &p), 0.0);
        assert_eq!(discrete_frechet(&path(&[(0.0, 0.0)]), &path(&[(3.0, 4.0)])), 5.0);
        assert_eq!(
            discrete_frechet(&path(&[(0.0, 0.0), (1.0, 0.0)]), &path(&[(0.0, 1.0), (1.0, 1.0)])),
            1.0
        );
    }

    #[test]
    fn similarity_examples() {
        let full = path(&(0..10).map(|i| (i as f64 * 100.0 / 9.0, 0.0)).collect::<Vec<_>>());
        assert_eq!(path_similarity(&full, &full).unwrap(), 1.0);
        let ends = path(&[(0.0, 0.0), (100.0, 0.0)]);
        // collinear endpoints: interior points couple to the nearer end
        let sim = path_similarity(&full, &ends).unwrap();
        assert!((sim - (1.0 - (400.0 / 9.0) / 100.0)).abs() < 1e-12, "{sim}");
        let far = path(&[(0.0, 500.0), (100.0, 500.0)]);
        assert_eq!(path_similarity(&full, &far).unwrap(), 0.0);
        let flat = path(&[(1.0, 1.0), (1.0, 1.0)]);
        assert!(path_similarity(&flat, &flat).is_err());
        assert!(path_similarity(&path(&[(0.0, 0.0)]), &full).is_err());
    }

    #[test]
    fn total_loss_examples() {
        let m = LossModel::default();
        // mpmath: 0.0951132525406962
        let l = total_loss_eval(&m, 1.0, 1.0);
        assert!((l.unclamped - 0.095_113_252_540_696_2).abs() < 1e-15);
        assert!(!l.clamped());
        // mpmath: -3.40584405504427e-6
        let l = total_loss_eval(&m, 7.31, 15.12);
        assert!((l.unclamped + 3.405_844_055_044_27e-6).abs() < 1e-15);
        assert_eq!(l.value, 1e-9);
        // huge p and q leave only the per-server term
        let m2 = LossModel { p: 1e6, q: 1e12, ..m };
        assert!((total_loss(&m2, 0.3, 2.0) - m.per_server(0.3, 2.0)).abs() < 1e-12);
    }

    #[test]
    fn loss_model_validation() {
        assert!(LossModel::default().validate().is_ok());
        assert!(LossModel { k: 0.0, ..Default::default() }.validate().is_err());
        assert!(LossModel { eps_clamp: 1.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn ladder() {
        let l = default_frequency_ladder();
        assert_eq!(l.len(), 9);
        assert_eq!(l[0], 0.5);
        assert_eq!(l[8], 0.1);
    }

    #[test]
    fn planted_and_degenerate_loss_fits() {
        let f = default_frequency_ladder();
        let y: Vec<f64> = f.iter().map(|&x| 1.0 - (-12.447 * x).exp()).collect();
        let rep = fit_loss_curve(&f, &y).unwrap();
        assert!((rep.fitted_k - 12.447).abs() < 1e-6);
        assert!(!rep.degenerate);

        let rep = fit_loss_curve(&f, &vec![0.0; f.len()]).unwrap();
        assert!(rep.degenerate);
        assert!(rep.loss_model(&LossModel::default()).is_err());
    }

    #[test]
    fn calibration_errors() {
        let trajs = crate::trajectory::generate_synthetic(2, 30, 1).unwrap();
        assert!(matches!(
            calibrate_per_server_loss(&trajs, &[0.5, 0.5]),
            Err(Error::Underdetermined(_))
        ));
        assert!(calibrate_per_server_loss(&trajs, &[0.0, 0.5]).is_err());
        assert!(matches!(calibrate_per_server_loss(&[], &[0.5, 0.25]), Err(Error::NoTrajectories)));
    }

    #[test]
    fn calibration_csv() {
        let trajs = crate::trajectory::generate_synthetic(4, 60, 2).unwrap();
        let rep = calibrate_per_server_loss(&trajs, &default_frequency_ladder()).unwrap();
        assert!(rep.fitted_k > 0.0);
        assert!(rep.points.iter().all(|p| (0.0..=1.0).contains(&p.mean_similarity)));
        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 10);
    }
}
