//! Profit maximization over `(c1, f_d, s)`: multi-start Nelder-Mead, an
//! exhaustive grid oracle for certification, and parameter sweeps.

use std::cell::Cell;
use std::cmp::Ordering;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::econ::{profit, EconParams, ParticipationModel, ServerCostModel};
use crate::error::{Error, Result};
use crate::nelder_mead::{maximize, NelderMeadOptions, NelderMeadResult};
use crate::stats::derive_seed;

/// Search box. The optimizer works in log coordinates on every axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Bounds {
    pub c1: (f64, f64),
    pub f_d: (f64, f64),
    pub s: (f64, f64),
}

impl Default for Bounds {
    fn default() -> Self {
        Self {
            c1: (1e-9, 1e-3),
            f_d: (0.1, 60.0),
            s: (1.0, 100.0),
        }
    }
}

/// Relative step of the stationarity probe.
const PROBE_STEP: f64 = 1e-3;

impl Bounds {
    /// Requires `0 < lo <= hi` on every axis (`lo == hi` pins the axis) and
    /// `s >= 1`.
    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [("c1", self.c1), ("f_d", self.f_d), ("s", self.s)] {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return Err(Error::domain(format!("bounds for {name} must satisfy 0 < lo <= hi, got ({lo}, {hi})")));
            }
        }
        if self.s.0 < 1.0 {
            return Err(Error::domain("server bounds must start at 1 or above"));
        }
        Ok(())
    }

    fn axes(&self) -> [(f64, f64); 3] {
        [self.c1, self.f_d, self.s]
    }

    /// Unit-cube coordinates to `(c1, f_d, s)`.
    pub fn from_unit(&self, u: &[f64]) -> [f64; 3] {
        [
            axis_point(self.c1, u[0], true),
            axis_point(self.f_d, u[1], true),
            axis_point(self.s, u[2], true),
        ]
    }

    pub fn contains(&self, x: &[f64; 3]) -> bool {
        self.axes().iter().zip(x).all(|(&(lo, hi), &v)| lo <= v && v <= hi)
    }
}

/// Point at fraction `t` along `[lo, hi]`, hitting both ends exactly.
fn axis_point((lo, hi): (f64, f64), t: f64, log: bool) -> f64 {
    if t <= 0.0 {
        lo
    } else if t >= 1.0 {
        hi
    } else if log {
        (lo.ln() + t * (hi.ln() - lo.ln())).exp().clamp(lo, hi)
    } else {
        (lo + t * (hi - lo)).clamp(lo, hi)
    }
}

/// Profit at the neighbouring integer server counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegerServers {
    pub s_floor: f64,
    pub profit_floor: f64,
    pub s_ceil: f64,
    pub profit_ceil: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub c1: f64,
    pub f_d: f64,
    pub s: f64,
    pub profit: f64,
    pub participation: ParticipationModel,
    pub server_cost: ServerCostModel,
    pub n_evaluations: usize,
    pub converged: bool,
    /// Largest profit gain found by ±0.1% single-coordinate probes.
    pub stationarity_gap: f64,
    pub integer_servers: IntegerServers,
}

impl Solution {
    fn at(params: &EconParams, bounds: &Bounds, x: [f64; 3], n_evaluations: usize, converged: bool) -> Self {
        let [c1, f_d, s] = x;
        let value = profit(params, c1, f_d, s);
        let s_floor = s.floor().max(bounds.s.0.ceil()).min(bounds.s.1);
        let s_ceil = s.ceil().min(bounds.s.1.floor()).max(bounds.s.0);
        Solution {
            c1,
            f_d,
            s,
            profit: value,
            participation: params.participation,
            server_cost: params.server_cost,
            n_evaluations,
            converged,
            stationarity_gap: stationarity_gap(params, bounds, x, value),
            integer_servers: IntegerServers {
                s_floor,
                profit_floor: profit(params, c1, f_d, s_floor),
                s_ceil,
                profit_ceil: profit(params, c1, f_d, s_ceil),
            },
        }
    }

    pub fn point(&self) -> [f64; 3] {
        [self.c1, self.f_d, self.s]
    }
}

/// Largest improvement over `value` among in-bounds ±0.1% perturbations
/// of one coordinate at a time; zero when none improves.
pub fn stationarity_gap(params: &EconParams, bounds: &Bounds, x: [f64; 3], value: f64) -> f64 {
    let mut gap = 0.0_f64;
    for (i, &(lo, hi)) in bounds.axes().iter().enumerate() {
        for dir in [-1.0, 1.0] {
            let mut probe = x;
            probe[i] = (x[i] * (1.0 + dir * PROBE_STEP)).clamp(lo, hi);
            if probe[i] != x[i] {
                gap = gap.max(profit(params, probe[0], probe[1], probe[2]) - value);
            }
        }
    }
    gap
}

/// Higher profit first; ties broken by lexicographic `(c1, f_d, s)`.
fn rank(a: (f64, [f64; 3]), b: (f64, [f64; 3])) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| {
        a.1.iter()
            .zip(&b.1)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizeOptions {
    /// Latin-hypercube starts in the `(f_d, s)` plane.
    pub n_starts: usize,
    /// Log-spaced `c1` values scanned before each golden-section refinement.
    pub c1_scan: usize,
    /// Points per axis of the `(f_d, s)` screening grid (0 disables it).
    pub screen_resolution: usize,
    /// Screening-grid local maxima used as additional starts.
    pub screen_starts: usize,
    /// Points on each edge of the `(f_d, s)` square scanned for optima
    /// pressed against a bound (0 disables it).
    pub edge_resolution: usize,
    /// Edge-scan local maxima used as additional starts.
    pub edge_starts: usize,
    /// Extra Nelder-Mead restarts per local search while they improve.
    pub polish_rounds: usize,
    pub nelder_mead: NelderMeadOptions,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self {
            n_starts: 32,
            c1_scan: 33,
            screen_resolution: 17,
            screen_starts: 8,
            edge_resolution: 65,
            edge_starts: 4,
            polish_rounds: 4,
            nelder_mead: NelderMeadOptions::default(),
        }
    }
}

/// Latin-hypercube sample of `n` points in the unit cube of dimension `dim`.
pub fn latin_hypercube(n: usize, dim: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut points = vec![vec![0.0; dim]; n];
    for d in 0..dim {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(rng);
        for (p, &k) in points.iter_mut().zip(&strata) {
            p[d] = (k as f64 + rng.random::<f64>()) / n as f64;
        }
    }
    points
}

pub fn optimize_profit(params: &EconParams, bounds: &Bounds, n_starts: usize, seed: u64) -> Result<Solution> {
    optimize_profit_with(
        params,
        bounds,
        seed,
        &OptimizeOptions {
            n_starts,
            ..Default::default()
        },
    )
}

const GOLDEN_TOL: f64 = 1e-9;

/// Golden-section maximization of `g` on `[lo, hi]`; returns `(t, g(t))`.
fn golden_section<G: Fn(f64) -> f64>(g: G, mut lo: f64, mut hi: f64) -> (f64, f64) {
    let ratio = (5.0_f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - ratio * (hi - lo);
    let mut x2 = lo + ratio * (hi - lo);
    let (mut g1, mut g2) = (g(x1), g(x2));
    while hi - lo > GOLDEN_TOL {
        if g1 >= g2 {
            hi = x2;
            x2 = x1;
            g2 = g1;
            x1 = hi - ratio * (hi - lo);
            g1 = g(x1);
        } else {
            lo = x1;
            x1 = x2;
            g1 = g2;
            x2 = lo + ratio * (hi - lo);
            g2 = g(x2);
        }
    }
    if g1 >= g2 {
        (x1, g1)
    } else {
        (x2, g2)
    }
}

/// Best unit-scale `c1` for fixed unit `(f_d, s)`: a uniform scan, then a
/// golden-section refinement around each of the two best scan points.
/// Returns `(t, value, evaluations)`.
fn best_c1<F: Fn(&[f64]) -> f64>(objective: &F, uf: f64, us: f64, scan: usize) -> (f64, f64, usize) {
    let scan = scan.max(3);
    let evals = Cell::new(0usize);
    let at = |i: usize| i as f64 / (scan - 1) as f64;
    let g = |t: f64| {
        evals.set(evals.get() + 1);
        objective(&[t, uf, us])
    };
    let mut scored: Vec<(f64, usize)> = (0..scan).map(|i| (g(at(i)), i)).collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut best = (at(scored[0].1), scored[0].0);
    for &(_, i) in scored.iter().take(2) {
        let (t, v) = golden_section(g, at(i.saturating_sub(1)), at((i + 1).min(scan - 1)));
        if v > best.1 || (v == best.1 && t < best.0) {
            best = (t, v);
        }
    }
    (best.0, best.1, evals.get())
}

/// Local maxima of `objective` on a uniform unit-square grid with `n`
/// points per axis, best first, at most `keep` of them. A cell must beat
/// its earlier neighbours and match or beat its later ones, so a flat
/// plateau contributes one cell. Returns the cells and the evaluation count.
fn screen<F>(objective: F, n: usize, keep: usize) -> (Vec<Vec<f64>>, usize)
where
    F: Fn(&[f64]) -> (f64, usize) + Sync,
{
    if n < 2 || keep == 0 {
        return (Vec::new(), 0);
    }
    let at = |i: usize| i as f64 / (n - 1) as f64;
    let scored: Vec<(f64, usize)> = (0..n * n)
        .into_par_iter()
        .map(|idx| objective(&[at(idx / n), at(idx % n)]))
        .collect();
    let evaluations = scored.iter().map(|(_, e)| e).sum();
    let value = |i: usize, j: usize| scored[i * n + j].0;
    let mut peaks: Vec<(f64, [f64; 3])> = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let v = value(i, j);
            let is_peak = (i.saturating_sub(1)..(i + 2).min(n))
                .flat_map(|a| (j.saturating_sub(1)..(j + 2).min(n)).map(move |b| (a, b)))
                .filter(|&(a, b)| (a, b) != (i, j))
                .all(|(a, b)| if (a, b) < (i, j) { v > value(a, b) } else { v >= value(a, b) });
            if is_peak {
                peaks.push((v, [at(i), at(j), 0.0]));
            }
        }
    }
    peaks.sort_by(|a, b| rank(*a, *b));
    (peaks.into_iter().take(keep).map(|(_, u)| u[..2].to_vec()).collect(), evaluations)
}

/// Local maxima of `objective` along the four edges of the unit square,
/// `n` points per edge, best first, at most `keep` of them. Same plateau
/// rule as [`screen`].
fn edge_scan<F>(objective: F, n: usize, keep: usize) -> (Vec<Vec<f64>>, usize)
where
    F: Fn(&[f64]) -> (f64, usize) + Sync,
{
    if n < 2 || keep == 0 {
        return (Vec::new(), 0);
    }
    let at = |i: usize| i as f64 / (n - 1) as f64;
    let edges: [fn(f64) -> [f64; 2]; 4] = [|t| [t, 0.0], |t| [t, 1.0], |t| [0.0, t], |t| [1.0, t]];
    let mut evaluations = 0;
    let mut peaks: Vec<(f64, [f64; 3])> = Vec::new();
    for edge in edges {
        let scored: Vec<(f64, usize)> = (0..n).into_par_iter().map(|i| objective(&edge(at(i)))).collect();
        evaluations += scored.iter().map(|(_, e)| e).sum::<usize>();
        for i in 0..n {
            let v = scored[i].0;
            let left = i == 0 || v > scored[i - 1].0;
            let right = i + 1 == n || v >= scored[i + 1].0;
            if left && right {
                let [a, b] = edge(at(i));
                peaks.push((v, [a, b, 0.0]));
            }
        }
    }
    peaks.sort_by(|a, b| rank(*a, *b));
    (peaks.into_iter().take(keep).map(|(_, u)| u[..2].to_vec()).collect(), evaluations)
}

/// Nelder-Mead restarted from its own result while that improves, at most
/// `1 + rounds` runs. Fresh simplices let the search creep along ridges
/// and cliffs where a collapsed simplex stalls.
fn restarted<F: FnMut(&[f64]) -> f64>(
    mut objective: F,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    rounds: usize,
    opts: &NelderMeadOptions,
) -> Result<NelderMeadResult> {
    let mut best = maximize(&mut objective, x0, lower, upper, opts)?;
    for _ in 0..rounds {
        let again = maximize(&mut objective, &best.x, lower, upper, opts)?;
        let improved = again.value > best.value;
        let evaluations = best.evaluations + again.evaluations;
        if improved {
            best = again;
        }
        best.evaluations = evaluations;
        if !improved {
            break;
        }
    }
    Ok(best)
}

/// Maximizes profit in two stages. First `c1` is profiled out (for each
/// `(f_d, s)` the best `c1` is found by a scan plus golden section) and
/// Nelder-Mead runs on the profile from Latin-hypercube starts and the
/// local maxima of a screening grid and of finer scans along its edges. Then full three-dimensional Nelder-Mead
/// restarts polish the best point. Every local search is restarted while
/// it improves.
pub fn optimize_profit_with(params: &EconParams, bounds: &Bounds, seed: u64, opts: &OptimizeOptions) -> Result<Solution> {
    bounds.validate()?;
    if opts.n_starts == 0 {
        return Err(Error::domain("n_starts must be at least 1"));
    }
    let objective = |u: &[f64]| {
        let [c1, f_d, s] = bounds.from_unit(u);
        profit(params, c1, f_d, s)
    };
    let profiled = |v: &[f64]| {
        let (_, value, evals) = best_c1(&objective, v[0], v[1], opts.c1_scan);
        (value, evals)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut starts = latin_hypercube(opts.n_starts, 2, &mut rng);
    let (screened, mut evaluations) = screen(profiled, opts.screen_resolution, opts.screen_starts);
    starts.extend(screened);
    let (edge_peaks, edge_evaluations) = edge_scan(profiled, opts.edge_resolution, opts.edge_starts);
    evaluations += edge_evaluations;
    starts.extend(edge_peaks);
    let runs = starts
        .par_iter()
        .map(|v0| {
            let mut inner = 0usize;
            let counted = |v: &[f64]| {
                let (value, evals) = profiled(v);
                inner += evals;
                value
            };
            let r = restarted(counted, v0, &[0.0; 2], &[1.0; 2], opts.polish_rounds, &opts.nelder_mead)?;
            let (t, value, evals) = best_c1(&objective, r.x[0], r.x[1], opts.c1_scan);
            Ok((value, vec![t, r.x[0], r.x[1]], r.converged, inner + evals))
        })
        .collect::<Result<Vec<_>>>()?;
    evaluations += runs.iter().map(|r| r.3).sum::<usize>();
    let (start_value, start_u, start_converged, _) = runs
        .into_iter()
        .min_by(|a, b| rank((a.0, bounds.from_unit(&a.1)), (b.0, bounds.from_unit(&b.1))))
        .expect("at least one start");

    let polished = restarted(objective, &start_u, &[0.0; 3], &[1.0; 3], opts.polish_rounds, &opts.nelder_mead)?;
    evaluations += polished.evaluations;
    let (x, converged) = if rank(
        (polished.value, bounds.from_unit(&polished.x)),
        (start_value, bounds.from_unit(&start_u)),
    )
    .is_lt()
    {
        (bounds.from_unit(&polished.x), polished.converged)
    } else {
        (bounds.from_unit(&start_u), start_converged)
    };
    Ok(Solution::at(params, bounds, x, evaluations, converged))
}

/// Grid resolution per axis `(c1, f_d, s)`.
pub type Resolution = [usize; 3];

fn axis_values(range: (f64, f64), n: usize, log: bool) -> Vec<f64> {
    (0..n).map(|i| axis_point(range, i as f64 / (n - 1) as f64, log)).collect()
}

/// Exhaustive evaluation on a grid (c1 log-spaced, f_d and s linear) that
/// includes both ends of every axis. Returns the argmax.
pub fn grid_oracle(params: &EconParams, bounds: &Bounds, resolution: Resolution) -> Result<Solution> {
    bounds.validate()?;
    if resolution.iter().any(|&r| r < 2) {
        return Err(Error::domain("grid resolution must be at least 2 per axis"));
    }
    let c1s = axis_values(bounds.c1, resolution[0], true);
    let fs = axis_values(bounds.f_d, resolution[1], false);
    let ss = axis_values(bounds.s, resolution[2], false);

    let slab_best: Vec<(f64, [f64; 3])> = c1s
        .par_iter()
        .map(|&c1| {
            let mut best = (f64::NEG_INFINITY, [c1, fs[0], ss[0]]);
            for &f in &fs {
                for &s in &ss {
                    let cand = (profit(params, c1, f, s), [c1, f, s]);
                    if rank(cand, best).is_lt() {
                        best = cand;
                    }
                }
            }
            best
        })
        .collect();
    let (value, x) = slab_best
        .into_iter()
        .min_by(|a, b| rank(*a, *b))
        .expect("non-empty grid");
    if !value.is_finite() {
        return Err(Error::NonFinite {
            point: x.to_vec(),
            value,
        });
    }
    Ok(Solution::at(params, bounds, x, resolution.iter().product(), true))
}

/// Parameters a sweep can vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    C2,
    C3,
    Beta,
    #[serde(rename = "V")]
    Vehicles,
    Sigma,
}

impl SweepParameter {
    /// Copy of `params` with this parameter set to `value`.
    pub fn apply(self, params: &EconParams, value: f64) -> Result<EconParams> {
        let mut p = *params;
        match self {
            Self::C2 => p.c2 = value,
            Self::C3 => p.c3 = value,
            Self::Beta => p.utility.beta = value,
            Self::Vehicles => p.vehicles = value,
            Self::Sigma => p.sigma = value,
        }
        p.validate()?;
        Ok(p)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::C2 => "c2",
            Self::C3 => "c3",
            Self::Beta => "beta",
            Self::Vehicles => "V",
            Self::Sigma => "sigma",
        }
    }
}

impl fmt::Display for SweepParameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepParameter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "c2" => Ok(Self::C2),
            "c3" => Ok(Self::C3),
            "beta" => Ok(Self::Beta),
            "V" | "v" | "vehicles" => Ok(Self::Vehicles),
            "sigma" => Ok(Self::Sigma),
            other => Err(Error::domain(format!("unknown sweep parameter `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
    pub solutions: Vec<Solution>,
}

impl SweepResult {
    /// `param_value,c1,f_d,s,profit`, one row per value.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["param_value", "c1", "f_d", "s", "profit"])?;
        for (v, s) in self.values.iter().zip(&self.solutions) {
            w.serialize((v, s.c1, s.f_d, s.s, s.profit))?;
        }
        w.flush()?;
        Ok(())
    }

    /// `parameter,param_value,variable,value` long format for plotting.
    pub fn write_long_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["parameter", "param_value", "variable", "value"])?;
        for (v, s) in self.values.iter().zip(&self.solutions) {
            for (name, value) in [("c1", s.c1), ("f_d", s.f_d), ("s", s.s), ("profit", s.profit)] {
                w.serialize((self.parameter.name(), v, name, value))?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Re-optimizes for each value. Every value uses the same seed, so the
/// result for a value does not depend on the other values or their order.
pub fn sweep(
    params: &EconParams,
    bounds: &Bounds,
    parameter: SweepParameter,
    values: &[f64],
    n_starts: usize,
    seed: u64,
) -> Result<SweepResult> {
    if values.is_empty() {
        return Err(Error::domain("sweep needs at least one value"));
    }
    let solutions = values
        .par_iter()
        .map(|&v| optimize_profit(&parameter.apply(params, v)?, bounds, n_starts, seed))
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult {
        parameter,
        values: values.to_vec(),
        solutions,
    })
}

/// Seed for the `index`-th independent optimization of a batch.
pub fn batch_seed(root: u64, index: usize) -> u64 {
    derive_seed(root, index as u64)
}
