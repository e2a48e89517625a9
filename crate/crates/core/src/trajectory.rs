//! Vehicle trajectories: ingestion, synthetic generation, subsampling and
//! planar projection.

use std::collections::BTreeMap;
use std::io::Read;

use chrono::{DateTime, NaiveDateTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean Earth radius used by every projection in the crate.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

const TIME_EPS: f64 = 1e-9;

/// One timestamped position. `t` is in minutes since the Unix epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoSample {
    pub t: f64,
    pub lat: f64,
    pub lon: f64,
}

impl GeoSample {
    pub fn new(t: f64, lat: f64, lon: f64) -> Result<Self> {
        if !t.is_finite() {
            return Err(Error::domain(format!("timestamp {t} is not finite")));
        }
        if !(-90.0..=90.0).contains(&lat) {
            return Err(Error::domain(format!("latitude {lat} outside [-90, 90]")));
        }
        if !(-180.0..=180.0).contains(&lon) {
            return Err(Error::domain(format!("longitude {lon} outside [-180, 180]")));
        }
        Ok(Self { t, lat, lon })
    }
}

/// One vehicle's samples, strictly increasing in time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    vehicle_id: String,
    samples: Vec<GeoSample>,
}

impl Trajectory {
    pub fn new(vehicle_id: impl Into<String>, samples: Vec<GeoSample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::domain("trajectory must have at least one sample"));
        }
        if samples.windows(2).any(|w| w[1].t <= w[0].t) {
            return Err(Error::domain("trajectory samples must be strictly increasing in time"));
        }
        Ok(Self {
            vehicle_id: vehicle_id.into(),
            samples,
        })
    }

    pub fn vehicle_id(&self) -> &str {
        &self.vehicle_id
    }

    pub fn samples(&self) -> &[GeoSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Samples per minute, from the median sampling interval. `None` for a
    /// single-sample trajectory.
    pub fn native_rate(&self) -> Option<f64> {
        if self.samples.len() < 2 {
            return None;
        }
        let mut gaps: Vec<f64> = self.samples.windows(2).map(|w| w[1].t - w[0].t).collect();
        gaps.sort_by(f64::total_cmp);
        Some(1.0 / gaps[gaps.len() / 2])
    }
}

/// Points in meters on a local tangent plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanarPath {
    points: Vec<[f64; 2]>,
}

impl PlanarPath {
    pub fn new(points: Vec<[f64; 2]>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::domain("planar path must have at least one point"));
        }
        if points.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::domain("planar path coordinates must be finite"));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Largest pairwise distance between points of the path.
    pub fn diameter(&self) -> f64 {
        let mut best = 0.0_f64;
        for (i, a) in self.points.iter().enumerate() {
            for b in &self.points[i + 1..] {
                best = best.max(euclidean(a, b));
            }
        }
        best
    }
}

pub(crate) fn euclidean(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Equirectangular projection about a reference latitude/longitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    lat0: f64,
    lon0: f64,
    cos_lat0: f64,
}

impl Projection {
    pub fn new(lat0: f64, lon0: f64) -> Self {
        Self {
            lat0,
            lon0,
            cos_lat0: lat0.to_radians().cos(),
        }
    }

    /// Projection centred on the mean position of the trajectory.
    pub fn centered_on(traj: &Trajectory) -> Self {
        let n = traj.len() as f64;
        let lat = traj.samples.iter().map(|s| s.lat).sum::<f64>() / n;
        let lon = traj.samples.iter().map(|s| s.lon).sum::<f64>() / n;
        Self::new(lat, lon)
    }

    pub fn project(&self, lat: f64, lon: f64) -> [f64; 2] {
        [
            (lon - self.lon0).to_radians() * self.cos_lat0 * EARTH_RADIUS_M,
            (lat - self.lat0).to_radians() * EARTH_RADIUS_M,
        ]
    }

    pub fn unproject(&self, xy: [f64; 2]) -> (f64, f64) {
        let lat = self.lat0 + (xy[1] / EARTH_RADIUS_M).to_degrees();
        let lon = self.lon0 + (xy[0] / (EARTH_RADIUS_M * self.cos_lat0)).to_degrees();
        (lat, lon)
    }

    /// Projects a non-empty run of samples in order.
    pub fn project_samples<'a>(
        &self,
        samples: impl IntoIterator<Item = &'a GeoSample>,
    ) -> Result<PlanarPath> {
        PlanarPath::new(
            samples
                .into_iter()
                .map(|s| self.project(s.lat, s.lon))
                .collect(),
        )
    }
}

/// Projects a trajectory about its own centroid.
pub fn project_planar(traj: &Trajectory) -> PlanarPath {
    Projection::centered_on(traj)
        .project_samples(traj.samples())
        .expect("a valid trajectory projects to a valid path")
}

/// Keeps the samples at period `1 / f_d` minutes, anchored at the first
/// sample. The last sample is always kept.
pub fn subsample(traj: &Trajectory, f_d: f64) -> Result<Trajectory> {
    if !(f_d > 0.0) || !f_d.is_finite() {
        return Err(Error::domain(format!("sampling frequency {f_d} must be positive")));
    }
    let native = traj
        .native_rate()
        .ok_or_else(|| Error::domain("subsampling needs at least two samples"))?;
    if f_d > native * (1.0 + 1e-9) {
        return Err(Error::domain(format!(
            "sampling frequency {f_d} exceeds the native rate {native}"
        )));
    }
    let period = 1.0 / f_d;
    let samples = traj.samples();
    let mut kept = Vec::with_capacity((samples.len() as f64 * f_d / native) as usize + 2);
    let mut next = f64::NEG_INFINITY;
    for s in samples {
        if s.t >= next - TIME_EPS {
            kept.push(*s);
            next = s.t + period;
        }
    }
    let last = *samples.last().expect("non-empty");
    if kept.last().map(|k| k.t) != Some(last.t) {
        kept.push(last);
    }
    Trajectory::new(traj.vehicle_id.clone(), kept)
}

/// A latitude/longitude rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl BBox {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lat_min < self.lat_max
            && self.lon_min < self.lon_max
            && self.lat_min >= -90.0
            && self.lat_max <= 90.0
            && self.lon_min >= -180.0
            && self.lon_max <= 180.0;
        if ok {
            Ok(())
        } else {
            Err(Error::domain(format!("invalid bounding box {self:?}")))
        }
    }

    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        (self.lat_min..=self.lat_max).contains(&lat) && (self.lon_min..=self.lon_max).contains(&lon)
    }

    /// Smallest box holding every sample of every trajectory.
    pub fn enclosing(trajs: &[Trajectory]) -> Option<Self> {
        let mut it = trajs.iter().flat_map(|t| t.samples());
        let first = it.next()?;
        let init = BBox {
            lat_min: first.lat,
            lat_max: first.lat,
            lon_min: first.lon,
            lon_max: first.lon,
        };
        Some(it.fold(init, |b, s| BBox {
            lat_min: b.lat_min.min(s.lat),
            lat_max: b.lat_max.max(s.lat),
            lon_min: b.lon_min.min(s.lon),
            lon_max: b.lon_max.max(s.lon),
        }))
    }
}

impl Default for BBox {
    /// Central Beijing, roughly inside the 4th ring road.
    fn default() -> Self {
        Self {
            lat_min: 39.85,
            lat_max: 39.99,
            lon_min: 116.30,
            lon_max: 116.48,
        }
    }
}

/// Parses `vehicle_id,timestamp,lat,lon` CSV into one trajectory per
/// vehicle, sorted by vehicle id.
pub fn parse_traces<R: Read>(input: R) -> Result<Vec<Trajectory>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers = reader.headers().map_err(|e| Error::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    let expected = ["vehicle_id", "timestamp", "lat", "lon"];
    if headers.iter().ne(expected.iter().copied()) {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header `{}`", expected.join(",")),
        });
    }

    let mut per_vehicle: BTreeMap<String, Vec<GeoSample>> = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let parse_err = |message: String| Error::Parse { line, message };
        if record.len() != 4 {
            return Err(parse_err(format!("expected 4 fields, found {}", record.len())));
        }
        let t = parse_timestamp(&record[1]).ok_or_else(|| parse_err(format!("bad timestamp `{}`", &record[1])))?;
        let lat: f64 = record[2]
            .parse()
            .map_err(|_| parse_err(format!("bad latitude `{}`", &record[2])))?;
        let lon: f64 = record[3]
            .parse()
            .map_err(|_| parse_err(format!("bad longitude `{}`", &record[3])))?;
        let sample = GeoSample::new(t, lat, lon).map_err(|e| parse_err(e.to_string()))?;
        per_vehicle.entry(record[0].to_string()).or_default().push(sample);
    }

    if per_vehicle.is_empty() {
        return Err(Error::NoTrajectories);
    }
    per_vehicle
        .into_iter()
        .map(|(id, mut samples)| {
            // stable: among equal timestamps the first row in the file survives
            samples.sort_by(|a, b| a.t.total_cmp(&b.t));
            samples.dedup_by(|b, a| a.t == b.t);
            Trajectory::new(id, samples)
        })
        .collect()
}

/// Minutes since the Unix epoch from a real number or an ISO-8601 string.
fn parse_timestamp(raw: &str) -> Option<f64> {
    if let Ok(minutes) = raw.parse::<f64>() {
        return minutes.is_finite().then_some(minutes);
    }
    let to_minutes = |secs: i64, nanos: u32| secs as f64 / 60.0 + f64::from(nanos) / 60e9;
    if let Ok(dt) = DateTime::parse_from_rfc3339(raw) {
        return Some(to_minutes(dt.timestamp(), dt.timestamp_subsec_nanos()));
    }
    ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"]
        .iter()
        .find_map(|fmt| NaiveDateTime::parse_from_str(raw, fmt).ok())
        .map(|dt| {
            let utc = dt.and_utc();
            to_minutes(utc.timestamp(), utc.timestamp_subsec_nanos())
        })
}

/// Writes trajectories back out in the ingestion format (real minutes).
pub fn write_traces<W: std::io::Write>(trajs: &[Trajectory], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["vehicle_id", "timestamp", "lat", "lon"])?;
    for traj in trajs {
        for s in traj.samples() {
            w.write_record([
                traj.vehicle_id().to_string(),
                s.t.to_string(),
                s.lat.to_string(),
                s.lon.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Random-waypoint generator settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub bbox: BBox,
    /// Cruise speed range in meters per minute.
    pub speed_min: f64,
    pub speed_max: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            bbox: BBox::default(),
            speed_min: 200.0,
            speed_max: 800.0,
        }
    }
}

/// Seeded random-waypoint walks sampled once per minute at t = 0, 1, ...
pub fn generate_synthetic(n_vehicles: usize, duration: usize, seed: u64) -> Result<Vec<Trajectory>> {
    generate_synthetic_with(&SyntheticConfig::default(), n_vehicles, duration, seed)
}

pub fn generate_synthetic_with(
    cfg: &SyntheticConfig,
    n_vehicles: usize,
    duration: usize,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    if n_vehicles == 0 {
        return Err(Error::domain("n_vehicles must be at least 1"));
    }
    if duration < 2 {
        return Err(Error::domain("duration must be at least 2 minutes"));
    }
    if !(cfg.speed_min > 0.0 && cfg.speed_min <= cfg.speed_max) {
        return Err(Error::domain("speed range must satisfy 0 < min <= max"));
    }
    cfg.bbox.validate()?;

    let bbox = cfg.bbox;
    let proj = Projection::new(
        0.5 * (bbox.lat_min + bbox.lat_max),
        0.5 * (bbox.lon_min + bbox.lon_max),
    );
    let lo = proj.project(bbox.lat_min, bbox.lon_min);
    let hi = proj.project(bbox.lat_max, bbox.lon_max);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = n_vehicles.saturating_sub(1).to_string().len().max(4);

    (0..n_vehicles)
        .map(|v| {
            let random_point =
                |rng: &mut ChaCha8Rng| [rng.random_range(lo[0]..hi[0]), rng.random_range(lo[1]..hi[1])];
            let mut pos = random_point(&mut rng);
            let mut target = random_point(&mut rng);
            let mut speed = rng.random_range(cfg.speed_min..=cfg.speed_max);
            let mut samples = Vec::with_capacity(duration);
            for minute in 0..duration {
                let (lat, lon) = proj.unproject(pos);
                samples.push(GeoSample {
                    t: minute as f64,
                    lat: lat.clamp(bbox.lat_min, bbox.lat_max),
                    lon: lon.clamp(bbox.lon_min, bbox.lon_max),
                });
                // advance one minute, picking new waypoints as they are reached
                let mut budget = speed;
                loop {
                    let dist = euclidean(&pos, &target);
                    if dist > budget {
                        let k = budget / dist;
                        pos = [pos[0] + k * (target[0] - pos[0]), pos[1] + k * (target[1] - pos[1])];
                        break;
                    }
                    budget -= dist;
                    pos = target;
                    target = random_point(&mut rng);
                    speed = rng.random_range(cfg.speed_min..=cfg.speed_max);
                }
            }
            Trajectory::new(format!("veh-{v:0width$}"), samples)
        })
        .collect()
}
