use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::{json, Value};

use privshare_core::econ::{
    profit, profit_breakdown, validate_params, EconParams, ParticipationModel, ProfitBreakdown, ServerCostModel,
};
use privshare_core::grid::build_map_with;
use privshare_core::optimize::{grid_oracle, optimize_profit, sweep, Solution};
use privshare_core::privacy::calibrate_per_server_loss;
use privshare_core::smpc::{
    adversary_reconstruct, aggregate_secure, empirical_privacy_curve, partial_maps, route_samples, AdversaryModel,
};
use privshare_core::stats::derive_seed;
use privshare_core::trajectory::{generate_synthetic_with, parse_traces, write_traces, Trajectory};
use privshare_core::utility::{build_utility_surface_with, fit_utility, SurfaceOptions};
use privshare_core::{Error, GridSpec};

use crate::config::RunConfig;
use crate::output::Artifacts;

/// Reference optimum the `optimize` output is compared against.
pub const REFERENCE: [f64; 3] = [3.57e-6, 7.31, 15.12];

/// Sub-seed slots derived from the root seed.
#[derive(Debug, Clone, Copy)]
enum Stream {
    Data = 0,
    Optimizer = 1,
    Surface = 2,
    Routing = 3,
    Shares = 4,
    Curve = 5,
}

impl Stream {
    fn name(self) -> &'static str {
        match self {
            Stream::Data => "data",
            Stream::Optimizer => "optimizer",
            Stream::Surface => "utility_surface",
            Stream::Routing => "routing",
            Stream::Shares => "shares",
            Stream::Curve => "privacy_curve",
        }
    }
}

/// Shared state of one command run: config plus the seeds handed out.
pub struct Run {
    pub config: RunConfig,
    pub synthetic: bool,
    seeds: BTreeMap<&'static str, u64>,
    artifacts: Artifacts,
}

impl Run {
    pub fn new(config: RunConfig, synthetic: bool) -> Self {
        Self {
            config,
            synthetic,
            seeds: BTreeMap::new(),
            artifacts: Artifacts::new(),
        }
    }

    fn seed(&mut self, stream: Stream) -> u64 {
        let seed = derive_seed(self.config.seed, stream as u64);
        self.seeds.insert(stream.name(), seed);
        seed
    }

    pub fn finish(self, command: &str) -> Result<()> {
        let dir = self.config.out_dir.clone();
        for path in self.artifacts.commit(&dir, command, &self.config, &self.seeds)? {
            println!("wrote {}", path.display());
        }
        Ok(())
    }

    fn trajectories(&mut self) -> Result<Vec<Trajectory>> {
        if self.synthetic {
            let seed = self.seed(Stream::Data);
            let s = self.config.synthetic;
            return Ok(generate_synthetic_with(&s.walk, s.vehicles, s.duration, seed)?);
        }
        match &self.config.traces {
            Some(path) => {
                let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
                let trajs = parse_traces(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))?;
                if trajs.is_empty() {
                    return Err(Error::NoTrajectories.into());
                }
                Ok(trajs)
            }
            None => bail!("this command needs traces: set `traces` in the config, pass --traces, or use --synthetic"),
        }
    }
}

pub fn gen(run: &mut Run) -> Result<()> {
    run.synthetic = true;
    let trajs = run.trajectories()?;
    run.artifacts.with("traces.csv", |w| write_traces(&trajs, w))?;
    Ok(())
}

pub fn ingest(run: &mut Run) -> Result<()> {
    let trajs = run.trajectories()?;
    let spec = run.config.grid;
    let (map, diag) = build_map_with(&trajs, &spec, run.config.utility_surface.count_mode);
    let samples: usize = trajs.iter().map(Trajectory::len).sum();
    let (t_min, t_max) = trajs
        .iter()
        .flat_map(|t| t.samples())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s.t), hi.max(s.t)));
    run.artifacts.with("map.csv", |w| map.write_csv(w))?;
    run.artifacts.json("map.json", &map)?;
    run.artifacts.json(
        "ingest.json",
        &json!({
            "vehicles": trajs.len(),
            "samples": samples,
            "samples_outside_bbox": diag.samples_outside_bbox,
            "occupied_cells": map.len(),
            "time_span_minutes": [t_min, t_max],
        }),
    )?;
    Ok(())
}

pub fn calibrate_loss(run: &mut Run) -> Result<()> {
    let trajs = run.trajectories()?;
    let report = calibrate_per_server_loss(&trajs, &run.config.calibration.frequencies)?;
    report.loss_model(&run.config.econ.loss)?;
    run.artifacts.with("loss_calibration.csv", |w| report.write_csv(w))?;
    run.artifacts.json("loss_calibration.json", &report)?;
    Ok(())
}

pub fn calibrate_utility(run: &mut Run) -> Result<()> {
    let trajs = run.trajectories()?;
    let seed = run.seed(Stream::Surface);
    let cfg = &run.config.utility_surface;
    let opts = SurfaceOptions {
        count_mode: cfg.count_mode,
        average_over: cfg.average_over,
    };
    let surface = build_utility_surface_with(
        &trajs,
        &run.config.grid,
        &cfg.vehicle_counts,
        &cfg.frequencies,
        run.config.econ.utility.a,
        seed,
        &opts,
    )?;
    let fit = fit_utility(&surface, &run.config.econ.utility)?;
    run.artifacts.with("utility_surface.csv", |w| surface.write_csv(w))?;
    run.artifacts.json("utility_fit.json", &fit)?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct ReferenceComparison {
    c1: f64,
    f_d: f64,
    s: f64,
    profit_at_point: f64,
    relative_deviation: [f64; 3],
    within_25_percent: bool,
    optimum_dominates_point: bool,
}

fn reference_comparison(params: &EconParams, sol: &Solution) -> ReferenceComparison {
    let [c1, f_d, s] = REFERENCE;
    let deviation = [0, 1, 2].map(|i| (sol.point()[i] - REFERENCE[i]) / REFERENCE[i]);
    let at_point = profit(params, c1, f_d, s);
    ReferenceComparison {
        c1,
        f_d,
        s,
        profit_at_point: at_point,
        relative_deviation: deviation,
        within_25_percent: deviation.iter().all(|d| d.abs() <= 0.25),
        optimum_dominates_point: sol.profit >= at_point,
    }
}

fn optimize_one(run: &RunConfig, params: &EconParams, seed: u64) -> Result<Value> {
    let sol = optimize_profit(params, &run.bounds, run.optimizer.n_starts, seed)?;
    let breakdown = profit_breakdown(params, sol.c1, sol.f_d, sol.s);
    let oracle = match run.optimizer.oracle_resolution {
        0 => Value::Null,
        r => {
            let grid = grid_oracle(params, &run.bounds, [r; 3])?;
            json!({
                "resolution": [r, r, r],
                "c1": grid.c1,
                "f_d": grid.f_d,
                "s": grid.s,
                "profit": grid.profit,
                "optimizer_margin": sol.profit - grid.profit,
            })
        }
    };
    Ok(json!({
        "participation": params.participation,
        "server_cost": params.server_cost,
        "solution": sol,
        "breakdown": breakdown,
        "guidance_warnings": validate_params(params, sol.c1, sol.s),
        "grid_oracle": oracle,
        "reference_optimum": reference_comparison(params, &sol),
    }))
}

pub fn optimize(run: &mut Run, all_modes: bool) -> Result<()> {
    let seed = run.seed(Stream::Optimizer);
    let cfg = &run.config;
    let primary = optimize_one(cfg, &cfg.econ, seed)?;
    let mut doc = json!({ "result": primary });
    if all_modes {
        let mut all = Vec::new();
        for participation in ParticipationModel::ALL {
            for cost in ServerCostModel::ALL {
                all.push(optimize_one(cfg, &cfg.econ.with_modes(participation, cost), seed)?);
            }
        }
        doc["all_modes"] = Value::Array(all);
    }
    let sol: Solution = serde_json::from_value(doc["result"]["solution"].clone())?;
    let rows = [
        profit_breakdown(&cfg.econ, sol.c1, sol.f_d, sol.s),
        profit_breakdown(&cfg.econ, REFERENCE[0], REFERENCE[1], REFERENCE[2]),
    ];
    run.artifacts.json("solution.json", &doc)?;
    run.artifacts.with("profit_decomposition.csv", |w| ProfitBreakdown::write_csv(&rows, w))?;
    Ok(())
}

pub fn run_sweep(run: &mut Run) -> Result<()> {
    let seed = run.seed(Stream::Optimizer);
    let cfg = &run.config;
    let result = sweep(
        &cfg.econ,
        &cfg.bounds,
        cfg.sweep.parameter,
        &cfg.sweep.values,
        cfg.optimizer.n_starts,
        seed,
    )?;
    run.artifacts.with("sweep.csv", |w| result.write_csv(w))?;
    run.artifacts.with("sweep_long.csv", |w| result.write_long_csv(w))?;
    run.artifacts.json("sweep.json", &result)?;
    Ok(())
}

pub fn simulate(run: &mut Run, keep_shares: bool) -> Result<()> {
    let trajs = run.trajectories()?;
    let routing_seed = run.seed(Stream::Routing);
    let share_seed = run.seed(Stream::Shares);
    let curve_seed = run.seed(Stream::Curve);
    let cfg = &run.config;
    let sim = &cfg.simulation;
    let spec: GridSpec = cfg.grid;

    let inboxes = route_samples(&trajs, sim.f_d, sim.servers, routing_seed)?;
    let partials = partial_maps(&inboxes, &spec)?;
    let transcript = aggregate_secure(&partials, share_seed)?;

    // plaintext reference: every routed sample counted once, per server
    let mut plain: BTreeMap<_, u64> = BTreeMap::new();
    for m in &partials {
        for (k, &c) in m.counts() {
            *plain.entry(*k).or_default() += c;
        }
    }
    let exact = transcript.reconstructed.counts() == &plain;
    if !exact {
        bail!("secure aggregation disagrees with the plaintext sum");
    }

    let adversary = AdversaryModel::first(sim.compromised, sim.servers);
    let recon = adversary_reconstruct(&trajs, &inboxes, &adversary)?;
    let seeds: Vec<u64> = (0..sim.curve_seeds as u64).map(|i| derive_seed(curve_seed, i)).collect();
    let curve = empirical_privacy_curve(
        &trajs,
        &sim.curve_frequencies,
        &sim.curve_servers,
        sim.compromised,
        &seeds,
        cfg.econ.loss.k,
    )?;
    let mean_similarity = recon.iter().map(|r| r.similarity).sum::<f64>() / recon.len() as f64;

    let mut recon_csv = csv::Writer::from_writer(Vec::new());
    recon_csv.write_record(["vehicle_id", "captured", "similarity"])?;
    for r in &recon {
        recon_csv.serialize((&r.vehicle_id, r.captured, r.similarity))?;
    }
    let recon_bytes = recon_csv.into_inner().context("buffering reconstructions")?;

    run.artifacts
        .json("transcript.json", &transcript.to_json(keep_shares, sim.share_elision_threshold)?)?;
    run.artifacts.with("aggregate_map.csv", |w| transcript.reconstructed.write_csv(w))?;
    run.artifacts.bytes("reconstructions.csv", recon_bytes);
    run.artifacts.with("privacy_curve.csv", |w| curve.write_csv(w))?;
    run.artifacts.json(
        "simulation.json",
        &json!({
            "servers": sim.servers,
            "compromised": sim.compromised,
            "f_d": sim.f_d,
            "routed_samples": inboxes.iter().map(|b| b.received.len()).sum::<usize>(),
            "aggregated_cells": transcript.cells.len(),
            "reconstruction_exact": exact,
            "mean_adversary_similarity": mean_similarity,
            "model_prediction": 1.0 - (-cfg.econ.loss.k * sim.f_d / sim.servers as f64).exp(),
            "curve": curve,
        }),
    )?;
    Ok(())
}

fn read_json(run: &Run, name: &str) -> Result<Option<Value>> {
    let path = run.config.out_dir.join(name);
    if !path.is_file() {
        return Ok(None);
    }
    let file = File::open(&path).with_context(|| format!("opening {}", path.display()))?;
    let value = serde_json::from_reader(BufReader::new(file)).with_context(|| format!("parsing {}", path.display()))?;
    Ok(Some(value))
}

pub fn report(run: &mut Run) -> Result<()> {
    let previous = read_json(run, "manifest.json")?;
    let solution = read_json(run, "solution.json")?;
    let params = run.config.econ;
    let (point, source) = match &solution {
        Some(doc) => {
            let sol: Solution = serde_json::from_value(doc["result"]["solution"].clone())
                .context("solution.json does not hold an optimize result")?;
            ([sol.c1, sol.f_d, sol.s], "optimize")
        }
        None => (REFERENCE, "reference_optimum"),
    };
    let [c1, f_d, s] = point;
    let breakdown = profit_breakdown(&params, c1, f_d, s);
    let mut doc = json!({
        "latest_run": previous,
        "decision": { "c1": c1, "f_d": f_d, "s": s, "source": source },
        "profit_decomposition": breakdown,
        "guidance_warnings": validate_params(&params, c1, s),
        "reference_profit": profit(&params, REFERENCE[0], REFERENCE[1], REFERENCE[2]),
    });
    for name in [
        "solution.json",
        "loss_calibration.json",
        "utility_fit.json",
        "sweep.json",
        "simulation.json",
        "ingest.json",
    ] {
        if let Some(v) = read_json(run, name)? {
            doc[name.trim_end_matches(".json")] = v;
        }
    }
    run.artifacts.json("report.json", &doc)?;
    Ok(())
}
