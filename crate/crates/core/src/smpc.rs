//! Simulation of the distributed collection layer: random per-sample
//! routing to servers, additive secret sharing of per-server maps, and an
//! adversary that pools what compromised servers received.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;
use std::ops::{Add, Neg, Sub};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{CellKey, SpatioTemporalMap};
use crate::privacy::{fit_loss_curve, reconstruction_similarity, CalibrationReport};
use crate::stats::{mean, pairwise_sum};
use crate::trajectory::{subsample, GeoSample, PlanarPath, Projection, Trajectory};

/// The Mersenne prime 2^61 - 1.
pub const MODULUS: u64 = (1 << 61) - 1;

/// Element of the prime field of order [`MODULUS`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(try_from = "u64", into = "u64")]
pub struct FieldElement(u64);

impl FieldElement {
    pub const ZERO: Self = Self(0);

    /// Reduces any `u64` into the field.
    pub fn new(value: u64) -> Self {
        Self(value % MODULUS)
    }

    pub fn value(self) -> u64 {
        self.0
    }

    /// Uniform element by rejection sampling on 61 random bits.
    pub fn random(rng: &mut impl Rng) -> Self {
        loop {
            let v = rng.random::<u64>() >> 3;
            if v < MODULUS {
                return Self(v);
            }
        }
    }
}

impl TryFrom<u64> for FieldElement {
    type Error = Error;

    fn try_from(v: u64) -> Result<Self> {
        if v < MODULUS {
            Ok(Self(v))
        } else {
            Err(Error::domain(format!("{v} is not below the field modulus")))
        }
    }
}

impl From<FieldElement> for u64 {
    fn from(f: FieldElement) -> u64 {
        f.0
    }
}

impl Add for FieldElement {
    type Output = Self;

    fn add(self, rhs: Self) -> Self {
        // both < 2^61, so the sum cannot overflow u64
        let s = self.0 + rhs.0;
        Self(if s >= MODULUS { s - MODULUS } else { s })
    }
}

impl Neg for FieldElement {
    type Output = Self;

    fn neg(self) -> Self {
        Self(if self.0 == 0 { 0 } else { MODULUS - self.0 })
    }
}

impl Sub for FieldElement {
    type Output = Self;

    fn sub(self, rhs: Self) -> Self {
        self + (-rhs)
    }
}

impl std::iter::Sum for FieldElement {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::ZERO, Add::add)
    }
}

/// Splits `x` into `n` additive shares: `n - 1` uniform, the last fixing
/// the sum.
pub fn share_with(x: FieldElement, n: usize, rng: &mut impl Rng) -> Vec<FieldElement> {
    assert!(n >= 1, "need at least one share");
    let mut shares: Vec<FieldElement> = (0..n - 1).map(|_| FieldElement::random(rng)).collect();
    let partial: FieldElement = shares.iter().copied().sum();
    shares.push(x - partial);
    shares
}

pub fn secret_share(x: FieldElement, n: usize, seed: u64) -> Result<Vec<FieldElement>> {
    if n == 0 {
        return Err(Error::domain("share count must be at least 1"));
    }
    Ok(share_with(x, n, &mut ChaCha8Rng::seed_from_u64(seed)))
}

/// Samples received by one server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerInbox {
    pub server_id: usize,
    pub received: Vec<(String, GeoSample)>,
}

/// Subsamples each trajectory at `f_d` and sends every retained sample to
/// an independently, uniformly chosen server.
pub fn route_samples(trajs: &[Trajectory], f_d: f64, s: usize, seed: u64) -> Result<Vec<ServerInbox>> {
    if s == 0 {
        return Err(Error::domain("need at least one server"));
    }
    let mut inboxes: Vec<ServerInbox> = (0..s)
        .map(|server_id| ServerInbox {
            server_id,
            received: Vec::new(),
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for traj in trajs {
        let kept = if traj.len() < 2 { traj.clone() } else { subsample(traj, f_d)? };
        for sample in kept.samples() {
            let server = rng.random_range(0..s);
            inboxes[server].received.push((traj.vehicle_id().to_string(), *sample));
        }
    }
    Ok(inboxes)
}

/// Record of one secure aggregation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationTranscript {
    /// Union of all partial-map cells; share vectors are indexed by it.
    pub cells: Vec<CellKey>,
    pub partials: Vec<SpatioTemporalMap>,
    /// `shares[i][j][c]`: share of server `i`'s count for cell `c` sent to server `j`.
    pub shares: Vec<Vec<Vec<FieldElement>>>,
    /// `server_sums[j][c]`: what server `j` holds after adding its shares.
    pub server_sums: Vec<Vec<FieldElement>>,
    pub reconstructed: SpatioTemporalMap,
}

impl AggregationTranscript {
    pub fn share_count(&self) -> usize {
        self.shares.len() * self.shares.len() * self.cells.len()
    }

    /// JSON document; share and server-sum matrices are dropped when
    /// `keep_shares` is false and they hold more than `threshold` elements.
    pub fn to_json(&self, keep_shares: bool, threshold: usize) -> Result<serde_json::Value> {
        let mut doc = serde_json::to_value(self)?;
        let elide = !keep_shares && self.share_count() > threshold;
        if elide {
            let obj = doc.as_object_mut().expect("struct serializes to an object");
            obj.insert("shares".into(), serde_json::Value::Null);
            obj.insert("server_sums".into(), serde_json::Value::Null);
        }
        doc.as_object_mut()
            .expect("object")
            .insert("shares_elided".into(), elide.into());
        Ok(doc)
    }
}

/// Every server shares each of its cell counts among all servers; each
/// server adds the shares it holds; the central server adds the per-server
/// sums.
pub fn aggregate_secure(partials: &[SpatioTemporalMap], seed: u64) -> Result<AggregationTranscript> {
    let first = partials.first().ok_or_else(|| Error::domain("no partial maps"))?;
    if partials.iter().any(|m| m.spec() != first.spec()) {
        return Err(Error::GridMismatch);
    }
    let s = partials.len();
    let cells: Vec<CellKey> = partials
        .iter()
        .flat_map(|m| m.counts().keys().copied())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if let Some(total) = partials.iter().map(SpatioTemporalMap::total).try_fold(0u64, u64::checked_add) {
        if total >= MODULUS {
            return Err(Error::domain("cell counts exceed the field modulus"));
        }
    } else {
        return Err(Error::domain("cell counts overflow"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shares = vec![vec![vec![FieldElement::ZERO; cells.len()]; s]; s];
    for (i, partial) in partials.iter().enumerate() {
        for (c, key) in cells.iter().enumerate() {
            let split = share_with(FieldElement::new(partial.get(key)), s, &mut rng);
            for (j, share) in split.into_iter().enumerate() {
                shares[i][j][c] = share;
            }
        }
    }
    let server_sums: Vec<Vec<FieldElement>> = (0..s)
        .map(|j| (0..cells.len()).map(|c| (0..s).map(|i| shares[i][j][c]).sum()).collect())
        .collect();

    let mut reconstructed = SpatioTemporalMap::empty(*first.spec());
    for (c, key) in cells.iter().enumerate() {
        let total: FieldElement = server_sums.iter().map(|row| row[c]).sum();
        reconstructed.set(*key, total.value())?;
    }
    Ok(AggregationTranscript {
        cells,
        partials: partials.to_vec(),
        shares,
        server_sums,
        reconstructed,
    })
}

/// Set of colluding servers. The adversary knows which vehicle produced
/// each captured sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdversaryModel {
    compromised: BTreeSet<usize>,
    knows_routing: bool,
}

impl AdversaryModel {
    pub fn new(compromised: impl IntoIterator<Item = usize>, n_servers: usize) -> Result<Self> {
        let compromised: BTreeSet<usize> = compromised.into_iter().collect();
        if let Some(&bad) = compromised.iter().find(|&&id| id >= n_servers) {
            return Err(Error::domain(format!("server {bad} outside [0, {n_servers})")));
        }
        Ok(Self {
            compromised,
            knows_routing: true,
        })
    }

    /// The first `k` servers (capped at `n_servers`).
    pub fn first(k: usize, n_servers: usize) -> Self {
        Self {
            compromised: (0..k.min(n_servers)).collect(),
            knows_routing: true,
        }
    }

    pub fn compromised(&self) -> &BTreeSet<usize> {
        &self.compromised
    }

    pub fn knows_routing(&self) -> bool {
        self.knows_routing
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleReconstruction {
    pub vehicle_id: String,
    pub captured: usize,
    /// Captured samples in time order, projected in the full path's frame.
    pub path: Option<PlanarPath>,
    pub similarity: f64,
}

/// Pools the compromised servers' samples per vehicle and scores each
/// reconstruction against the vehicle's full path (in `trajs` order).
pub fn adversary_reconstruct(
    trajs: &[Trajectory],
    inboxes: &[ServerInbox],
    adversary: &AdversaryModel,
) -> Result<Vec<VehicleReconstruction>> {
    if adversary.compromised.is_empty() {
        return Err(Error::NoAdversary);
    }
    let mut pooled: HashMap<&str, Vec<GeoSample>> = HashMap::new();
    for inbox in inboxes.iter().filter(|b| adversary.compromised.contains(&b.server_id)) {
        for (id, sample) in &inbox.received {
            pooled.entry(id.as_str()).or_default().push(*sample);
        }
    }
    trajs
        .par_iter()
        .map(|full| {
            let mut captured = pooled.get(full.vehicle_id()).cloned().unwrap_or_default();
            captured.sort_by(|a, b| a.t.total_cmp(&b.t));
            let path = (!captured.is_empty())
                .then(|| Projection::centered_on(full).project_samples(&captured))
                .transpose()?;
            Ok(VehicleReconstruction {
                vehicle_id: full.vehicle_id().to_string(),
                captured: captured.len(),
                path,
                similarity: reconstruction_similarity(full, &captured)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub f_d: f64,
    pub s: usize,
    pub mean_similarity: f64,
    /// Standard error of the mean across seeds (0 for a single seed).
    pub std_error: f64,
    /// `1 - exp(-k f_d / s)` for the reference coefficient.
    pub model_prediction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyCurve {
    pub reference_k: f64,
    pub n_compromised: usize,
    pub rows: Vec<CurveRow>,
}

impl PrivacyCurve {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["f_d", "s", "mean_similarity", "model_prediction"])?;
        for r in &self.rows {
            w.serialize((r.f_d, r.s, r.mean_similarity, r.model_prediction))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Refits the per-server coefficient on the per-server rate `f_d / s`.
    pub fn refit(&self) -> Result<CalibrationReport> {
        let x: Vec<f64> = self.rows.iter().map(|r| r.f_d / r.s as f64).collect();
        let y: Vec<f64> = self.rows.iter().map(|r| r.mean_similarity).collect();
        fit_loss_curve(&x, &y)
    }
}

/// Monte Carlo mean adversary similarity for every `(f_d, s)` pair, with
/// the first `n_compromised` servers colluding. Each seed is one routing.
pub fn empirical_privacy_curve(
    trajs: &[Trajectory],
    f_values: &[f64],
    s_values: &[usize],
    n_compromised: usize,
    seeds: &[u64],
    reference_k: f64,
) -> Result<PrivacyCurve> {
    if trajs.is_empty() {
        return Err(Error::NoTrajectories);
    }
    if f_values.is_empty() || s_values.is_empty() || seeds.is_empty() {
        return Err(Error::domain("frequency, server and seed lists must be non-empty"));
    }
    if n_compromised == 0 {
        return Err(Error::NoAdversary);
    }
    let grid: Vec<(f64, usize)> = f_values
        .iter()
        .flat_map(|&f| s_values.iter().map(move |&s| (f, s)))
        .collect();
    let rows = grid
        .par_iter()
        .map(|&(f_d, s)| {
            let adversary = AdversaryModel::first(n_compromised, s);
            let per_seed = seeds
                .iter()
                .map(|&seed| {
                    let inboxes = route_samples(trajs, f_d, s, seed)?;
                    let recon = adversary_reconstruct(trajs, &inboxes, &adversary)?;
                    let sims: Vec<f64> = recon.iter().map(|r| r.similarity).collect();
                    Ok(mean(&sims).expect("non-empty"))
                })
                .collect::<Result<Vec<f64>>>()?;
            let m = mean(&per_seed).expect("non-empty");
            let std_error = if per_seed.len() > 1 {
                let dev: Vec<f64> = per_seed.iter().map(|v| (v - m) * (v - m)).collect();
                (pairwise_sum(&dev) / (per_seed.len() - 1) as f64 / per_seed.len() as f64).sqrt()
            } else {
                0.0
            };
            Ok(CurveRow {
                f_d,
                s,
                mean_similarity: m,
                std_error,
                model_prediction: 1.0 - (-reference_k * f_d / s as f64).exp(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PrivacyCurve {
        reference_k,
        n_compromised,
        rows,
    })
}

/// Per-server occupancy maps built from the inboxes.
pub fn partial_maps(inboxes: &[ServerInbox], spec: &crate::grid::GridSpec) -> Result<Vec<SpatioTemporalMap>> {
    inboxes
        .iter()
        .map(|inbox| {
            let mut per_vehicle: BTreeMap<&str, Vec<GeoSample>> = BTreeMap::new();
            for (id, s) in &inbox.received {
                per_vehicle.entry(id.as_str()).or_default().push(*s);
            }
            let trajs = per_vehicle
                .into_iter()
                .map(|(id, mut samples)| {
                    samples.sort_by(|a, b| a.t.total_cmp(&b.t));
                    Trajectory::new(id, samples)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(crate::grid::build_map(&trajs, spec))
        })
        .collect()
}
