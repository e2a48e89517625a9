//! Data consumer utility: per-cell utility, the average-utility surface
//! over (vehicles, frequency), and its saturating-exponential fit.

use std::io::Write;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::fit_saturating_exponential;
use crate::grid::{build_map, build_map_with, CountMode, GridSpec};
use crate::stats::{derive_seed, pairwise_sum};
use crate::trajectory::{subsample, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UtilityModel {
    /// Saturation level of the fitted utility.
    pub alpha: f64,
    /// Rate per (vehicle x samples/min).
    pub beta: f64,
    /// Per-cell utility shape parameter.
    pub a: f64,
}

impl Default for UtilityModel {
    fn default() -> Self {
        Self {
            alpha: 0.99,
            beta: 0.45,
            a: 100.0,
        }
    }
}

impl UtilityModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::domain(format!("alpha {} outside (0, 1]", self.alpha)));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::domain(format!("beta {} must be positive", self.beta)));
        }
        if !(self.a > 0.0 && self.a.is_finite()) {
            return Err(Error::domain(format!("a {} must be positive", self.a)));
        }
        Ok(())
    }
}

/// Utility of one cell holding `n` contributing vehicles:
/// `1 - 1 / (1 + a exp(-1/sqrt(n)))`, with `n = 0` mapped to its limit 0.
pub fn grid_utility(n: f64, a: f64) -> f64 {
    if n <= 0.0 {
        return 0.0;
    }
    1.0 - 1.0 / (1.0 + a * (-1.0 / n.sqrt()).exp())
}

/// `alpha (1 - exp(-beta v f_d))`.
pub fn eval_utility(model: &UtilityModel, v: f64, f_d: f64) -> f64 {
    model.alpha * (1.0 - (-model.beta * v * f_d).exp())
}

/// Which cells the surface average runs over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AverageOver {
    /// Cells occupied at least once by the full dataset at native rate.
    #[default]
    EverOccupied,
    /// Cells occupied by the current sub-population.
    Occupied,
    /// Every grid cell in every time bin spanned by the dataset.
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SurfaceOptions {
    pub count_mode: CountMode,
    pub average_over: AverageOver,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfacePoint {
    pub n_vehicles: usize,
    pub f_d: f64,
    pub avg_utility: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilitySurface {
    pub points: Vec<SurfacePoint>,
}

impl UtilitySurface {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["n_vehicles", "f_d", "avg_utility"])?;
        for p in &self.points {
            w.serialize((p.n_vehicles, p.f_d, p.avg_utility))?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn build_utility_surface(
    trajs: &[Trajectory],
    spec: &GridSpec,
    vehicle_counts: &[usize],
    freqs: &[f64],
    a: f64,
    seed: u64,
) -> Result<UtilitySurface> {
    build_utility_surface_with(trajs, spec, vehicle_counts, freqs, a, seed, &SurfaceOptions::default())
}

/// Average cell utility for every (vehicle count, frequency) pair. Each
/// point draws its own seeded vehicle subset without replacement.
pub fn build_utility_surface_with(
    trajs: &[Trajectory],
    spec: &GridSpec,
    vehicle_counts: &[usize],
    freqs: &[f64],
    a: f64,
    seed: u64,
    opts: &SurfaceOptions,
) -> Result<UtilitySurface> {
    spec.validate()?;
    if vehicle_counts.is_empty() || freqs.is_empty() {
        return Err(Error::domain("vehicle counts and frequencies must be non-empty"));
    }
    if let Some(&too_many) = vehicle_counts.iter().find(|&&n| n > trajs.len()) {
        return Err(Error::domain(format!(
            "vehicle count {too_many} exceeds the {} available trajectories",
            trajs.len()
        )));
    }
    if freqs.iter().any(|&f| !(f > 0.0)) {
        return Err(Error::domain("frequencies must be positive"));
    }
    if !(a > 0.0) {
        return Err(Error::domain("a must be positive"));
    }

    let full = build_map_with(trajs, spec, opts.count_mode).0;
    let denominator = match opts.average_over {
        AverageOver::EverOccupied => Some(full.len()),
        AverageOver::Occupied => None,
        AverageOver::All => {
            let (nx, ny) = spec.dims();
            let times = trajs.iter().flat_map(|t| t.samples()).map(|s| spec.time_index(s.t));
            let (lo, hi) = times.fold((i64::MAX, i64::MIN), |(lo, hi), t| (lo.min(t), hi.max(t)));
            let bins = if lo > hi { 0 } else { (hi - lo + 1) as usize };
            Some(nx as usize * ny as usize * bins)
        }
    };

    let grid: Vec<(usize, f64)> = vehicle_counts
        .iter()
        .flat_map(|&n| freqs.iter().map(move |&f| (n, f)))
        .collect();
    let points = grid
        .par_iter()
        .enumerate()
        .map(|(idx, &(n, f))| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, idx as u64));
            let chosen = sample(&mut rng, trajs.len(), n);
            let subset = chosen
                .iter()
                .map(|i| {
                    let t = &trajs[i];
                    if t.len() < 2 {
                        Ok(t.clone())
                    } else {
                        subsample(t, f)
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            let map = build_map_with(&subset, spec, opts.count_mode).0;
            let utilities: Vec<f64> = map.counts().values().map(|&c| grid_utility(c as f64, a)).collect();
            let cells = denominator.unwrap_or(map.len());
            let avg_utility = if cells == 0 {
                0.0
            } else {
                pairwise_sum(&utilities) / cells as f64
            };
            Ok(SurfacePoint {
                n_vehicles: n,
                f_d: f,
                avg_utility,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(UtilitySurface { points })
}

/// Largest fitted utility below which a fit is treated as collapsed.
const DEGENERATE_UTILITY: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityFit {
    pub model: UtilityModel,
    pub residual_rms: f64,
}

/// Least-squares fit of `alpha (1 - exp(-beta x))` with `x = n_vehicles * f_d`.
/// `a` is carried over from `base`.
pub fn fit_utility(surface: &UtilitySurface, base: &UtilityModel) -> Result<UtilityFit> {
    let x: Vec<f64> = surface.points.iter().map(|p| p.n_vehicles as f64 * p.f_d).collect();
    let y: Vec<f64> = surface.points.iter().map(|p| p.avg_utility).collect();
    let (alpha, beta, report) = fit_saturating_exponential(&x, &y)?;
    let model = UtilityModel {
        alpha,
        beta,
        a: base.a,
    };
    let peak = x.iter().map(|&xi| eval_utility(&model, xi, 1.0)).fold(0.0_f64, f64::max);
    if !(peak > DEGENERATE_UTILITY) {
        return Err(Error::FitDiverged(format!(
            "degenerate utility fit: predictions vanish (alpha = {alpha}, beta = {beta})"
        )));
    }
    model.validate().map_err(|e| {
        Error::FitDiverged(format!("fitted utility model is degenerate ({e}): alpha = {alpha}, beta = {beta}"))
    })?;
    Ok(UtilityFit {
        model,
        residual_rms: report.residual_rms,
    })
}

/// Average utility of the full dataset at native rate (reference value).
pub fn full_dataset_utility(trajs: &[Trajectory], spec: &GridSpec, a: f64) -> f64 {
    let map = build_map(trajs, spec);
    let u: Vec<f64> = map.counts().values().map(|&c| grid_utility(c as f64, a)).collect();
    if u.is_empty() {
        0.0
    } else {
        pairwise_sum(&u) / u.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::generate_synthetic;

    #[test]
    fn grid_utility_examples() {
        assert_eq!(grid_utility(0.0, 100.0), 0.0);
        // mpmath: 0.973536533321316515
        assert!((grid_utility(1.0, 100.0) - 0.973_536_533_321_316_5).abs() < 1e-15);
        assert!((grid_utility(1e18, 100.0) - 100.0 / 101.0).abs() < 1e-8);
    }

    #[test]
    fn eval_utility_examples() {
        let m = UtilityModel::default();
        assert_eq!(eval_utility(&m, 0.0, 3.0), 0.0);
        // mpmath: 0.979002093427140117
        assert!((eval_utility(&m, 10.0, 1.0) - 0.979_002_093_427_140_1).abs() < 1e-15);
        assert_eq!(eval_utility(&m, 1e6, 10.0), m.alpha);
    }

    #[test]
    fn zero_vehicles_row() {
        let trajs = generate_synthetic(5, 40, 3).unwrap();
        let s = build_utility_surface(&trajs, &GridSpec::default(), &[0, 5], &[0.5], 100.0, 1).unwrap();
        assert_eq!(s.points[0].avg_utility, 0.0);
        assert!(s.points[1].avg_utility > 0.0);
    }

    #[test]
    fn surface_errors() {
        let trajs = generate_synthetic(3, 20, 3).unwrap();
        let spec = GridSpec::default();
        assert!(build_utility_surface(&trajs, &spec, &[4], &[1.0], 100.0, 1).is_err());
        assert!(build_utility_surface(&trajs, &spec, &[], &[1.0], 100.0, 1).is_err());
        assert!(build_utility_surface(&trajs, &spec, &[1], &[0.0], 100.0, 1).is_err());
    }

    #[test]
    fn surface_is_seed_deterministic() {
        let trajs = generate_synthetic(10, 60, 4).unwrap();
        let spec = GridSpec::default();
        let a = build_utility_surface(&trajs, &spec, &[2, 5, 10], &[1.0, 0.5], 100.0, 9).unwrap();
        let b = build_utility_surface(&trajs, &spec, &[2, 5, 10], &[1.0, 0.5], 100.0, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn averaging_modes_order() {
        let trajs = generate_synthetic(10, 60, 4).unwrap();
        let spec = GridSpec::default();
        let run = |average_over| {
            let opts = SurfaceOptions { average_over, ..Default::default() };
            build_utility_surface_with(&trajs, &spec, &[5], &[0.5], 100.0, 2, &opts).unwrap().points[0].avg_utility
        };
        let (ever, occ, all) = (run(AverageOver::EverOccupied), run(AverageOver::Occupied), run(AverageOver::All));
        assert!(all <= ever && ever <= occ, "{all} {ever} {occ}");
    }

    #[test]
    fn planted_fit_and_degenerate() {
        let m = UtilityModel::default();
        let points = (1..=8)
            .flat_map(|n| [1.0, 0.5, 0.25].map(|f| (n, f)))
            .map(|(n, f)| SurfacePoint { n_vehicles: n, f_d: f, avg_utility: eval_utility(&m, n as f64, f) })
            .collect();
        let fit = fit_utility(&UtilitySurface { points }, &m).unwrap();
        assert!((fit.model.alpha - 0.99).abs() < 1e-6);
        assert!((fit.model.beta - 0.45).abs() < 1e-6);

        let zeros = (1..=5)
            .map(|n| SurfacePoint { n_vehicles: n, f_d: 1.0, avg_utility: 0.0 })
            .collect();
        assert!(fit_utility(&UtilitySurface { points: zeros }, &m).is_err());

        let two = vec![
            SurfacePoint { n_vehicles: 1, f_d: 1.0, avg_utility: 0.3 },
            SurfacePoint { n_vehicles: 2, f_d: 1.0, avg_utility: 0.5 },
        ];
        assert!(matches!(fit_utility(&UtilitySurface { points: two }, &m), Err(Error::Underdetermined(_))));
    }
}
