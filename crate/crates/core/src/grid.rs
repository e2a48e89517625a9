//! Spatio-temporal occupancy grids.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::{BBox, Trajectory, EARTH_RADIUS_M};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub bbox: BBox,
    /// Cell edge in meters.
    pub cell_size: f64,
    /// Time bin width in minutes.
    pub time_bin: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            bbox: BBox::default(),
            cell_size: 1000.0,
            time_bin: 10.0,
        }
    }
}

/// `(cell_x, cell_y, time_idx)`.
pub type CellKey = (u32, u32, i64);

impl GridSpec {
    pub fn new(bbox: BBox, cell_size: f64, time_bin: f64) -> Result<Self> {
        let spec = Self {
            bbox,
            cell_size,
            time_bin,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.bbox.validate()?;
        if !(self.cell_size > 0.0 && self.cell_size.is_finite()) {
            return Err(Error::domain("cell_size must be positive"));
        }
        if !(self.time_bin > 0.0 && self.time_bin.is_finite()) {
            return Err(Error::domain("time_bin must be positive"));
        }
        Ok(())
    }

    fn cos_mid(&self) -> f64 {
        (0.5 * (self.bbox.lat_min + self.bbox.lat_max)).to_radians().cos()
    }

    /// Number of cells along x (longitude) and y (latitude).
    pub fn dims(&self) -> (u32, u32) {
        let w = (self.bbox.lon_max - self.bbox.lon_min).to_radians() * self.cos_mid() * EARTH_RADIUS_M;
        let h = (self.bbox.lat_max - self.bbox.lat_min).to_radians() * EARTH_RADIUS_M;
        let n = |m: f64| ((m / self.cell_size).ceil() as u32).max(1);
        (n(w), n(h))
    }

    /// Spatial cell of a position, or `None` outside the box.
    pub fn cell_of(&self, lat: f64, lon: f64) -> Option<(u32, u32)> {
        if !self.bbox.contains(lat, lon) {
            return None;
        }
        let (nx, ny) = self.dims();
        let x = (lon - self.bbox.lon_min).to_radians() * self.cos_mid() * EARTH_RADIUS_M;
        let y = (lat - self.bbox.lat_min).to_radians() * EARTH_RADIUS_M;
        let ix = ((x / self.cell_size).floor() as u32).min(nx - 1);
        let iy = ((y / self.cell_size).floor() as u32).min(ny - 1);
        Some((ix, iy))
    }

    pub fn time_index(&self, t: f64) -> i64 {
        (t / self.time_bin).floor() as i64
    }

    pub fn key_of(&self, t: f64, lat: f64, lon: f64) -> Option<CellKey> {
        self.cell_of(lat, lon).map(|(x, y)| (x, y, self.time_index(t)))
    }
}

/// What a cell counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountMode {
    /// Distinct vehicles with at least one sample in the cell.
    #[default]
    Vehicles,
    /// Raw samples.
    Samples,
}

/// Sparse non-zero cell counts over a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "MapDoc", try_from = "MapDoc")]
pub struct SpatioTemporalMap {
    spec: GridSpec,
    counts: BTreeMap<CellKey, u64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapDiagnostics {
    pub samples_outside_bbox: usize,
}

impl SpatioTemporalMap {
    pub fn empty(spec: GridSpec) -> Self {
        Self {
            spec,
            counts: BTreeMap::new(),
        }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn counts(&self) -> &BTreeMap<CellKey, u64> {
        &self.counts
    }

    pub fn get(&self, key: &CellKey) -> u64 {
        self.counts.get(key).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    /// Sets a cell; zero removes it.
    pub fn set(&mut self, key: CellKey, count: u64) -> Result<()> {
        let (nx, ny) = self.spec.dims();
        if key.0 >= nx || key.1 >= ny {
            return Err(Error::domain(format!("cell {key:?} outside the {nx}x{ny} grid")));
        }
        if count == 0 {
            self.counts.remove(&key);
        } else {
            self.counts.insert(key, count);
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["cell_x", "cell_y", "time_idx", "count"])?;
        for (&(x, y, t), &c) in &self.counts {
            w.serialize((x, y, t, c))?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct MapDoc {
    spec: GridSpec,
    cells: Vec<MapCell>,
}

#[derive(Serialize, Deserialize)]
struct MapCell {
    cell_x: u32,
    cell_y: u32,
    time_idx: i64,
    count: u64,
}

impl From<SpatioTemporalMap> for MapDoc {
    fn from(map: SpatioTemporalMap) -> Self {
        MapDoc {
            spec: map.spec,
            cells: map
                .counts
                .into_iter()
                .map(|((cell_x, cell_y, time_idx), count)| MapCell {
                    cell_x,
                    cell_y,
                    time_idx,
                    count,
                })
                .collect(),
        }
    }
}

impl TryFrom<MapDoc> for SpatioTemporalMap {
    type Error = Error;

    fn try_from(doc: MapDoc) -> Result<Self> {
        doc.spec.validate()?;
        let mut map = SpatioTemporalMap::empty(doc.spec);
        for c in doc.cells {
            if c.count == 0 {
                return Err(Error::domain("stored cells must have a positive count"));
            }
            map.set((c.cell_x, c.cell_y, c.time_idx), c.count)?;
        }
        Ok(map)
    }
}

/// Distinct-vehicle occupancy map.
pub fn build_map(trajs: &[Trajectory], spec: &GridSpec) -> SpatioTemporalMap {
    build_map_with(trajs, spec, CountMode::Vehicles).0
}

pub fn build_map_with(
    trajs: &[Trajectory],
    spec: &GridSpec,
    mode: CountMode,
) -> (SpatioTemporalMap, MapDiagnostics) {
    let mut counts: BTreeMap<CellKey, u64> = BTreeMap::new();
    let mut diag = MapDiagnostics::default();
    let mut seen = BTreeSet::new();
    for traj in trajs {
        seen.clear();
        for s in traj.samples() {
            let Some(key) = spec.key_of(s.t, s.lat, s.lon) else {
                diag.samples_outside_bbox += 1;
                continue;
            };
            if mode == CountMode::Samples || seen.insert(key) {
                *counts.entry(key).or_insert(0) += 1;
            }
        }
    }
    (SpatioTemporalMap { spec: *spec, counts }, diag)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::{generate_synthetic, GeoSample};

    fn traj(id: &str, pts: &[(f64, f64, f64)]) -> Trajectory {
        Trajectory::new(
            id,
            pts.iter().map(|&(t, lat, lon)| GeoSample::new(t, lat, lon).unwrap()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn single_and_distinct_counts() {
        let spec = GridSpec::default();
        let a = traj("a", &[(0.0, 39.9, 116.4), (1.0, 39.9001, 116.4001), (2.0, 39.9, 116.4), (3.0, 39.9, 116.4), (4.0, 39.9, 116.4)]);
        let b = traj("b", &[(5.0, 39.9002, 116.4002)]);
        let map = build_map(std::slice::from_ref(&a), &spec);
        assert_eq!(map.len(), 1);
        assert_eq!(map.total(), 1);

        let map = build_map(&[a.clone(), b], &spec);
        assert_eq!(map.len(), 1);
        assert_eq!(*map.counts().values().next().unwrap(), 2);

        let (samples, _) = build_map_with(&[a], &spec, CountMode::Samples);
        assert_eq!(samples.total(), 5);
    }

    #[test]
    fn outside_samples_are_tallied() {
        let spec = GridSpec::default();
        let a = traj("a", &[(0.0, 39.9, 116.4), (1.0, 10.0, 10.0)]);
        let (map, diag) = build_map_with(&[a], &spec, CountMode::Vehicles);
        assert_eq!(map.total(), 1);
        assert_eq!(diag.samples_outside_bbox, 1);
    }

    #[test]
    fn brute_force_vehicle_sets() {
        let spec = GridSpec::default();
        let trajs = generate_synthetic(12, 90, 3).unwrap();
        let map = build_map(&trajs, &spec);
        let mut oracle: BTreeMap<CellKey, BTreeSet<&str>> = BTreeMap::new();
        for t in &trajs {
            for s in t.samples() {
                if let Some(k) = spec.key_of(s.t, s.lat, s.lon) {
                    oracle.entry(k).or_default().insert(t.vehicle_id());
                }
            }
        }
        let expected: BTreeMap<CellKey, u64> =
            oracle.into_iter().map(|(k, v)| (k, v.len() as u64)).collect();
        assert_eq!(map.counts(), &expected);
        let bins = (90.0 / spec.time_bin).ceil() as u64;
        assert!(map.total() <= trajs.len() as u64 * bins * u64::from(spec.dims().0 * spec.dims().1));
    }

    #[test]
    fn edges_land_in_last_cell() {
        let spec = GridSpec::default();
        let (nx, ny) = spec.dims();
        let c = spec.cell_of(spec.bbox.lat_max, spec.bbox.lon_max).unwrap();
        assert_eq!(c, (nx - 1, ny - 1));
        assert_eq!(spec.cell_of(spec.bbox.lat_min, spec.bbox.lon_min), Some((0, 0)));
    }

    #[test]
    fn json_and_csv_export() {
        let spec = GridSpec::default();
        let map = build_map(&generate_synthetic(3, 30, 9).unwrap(), &spec);
        let json = serde_json::to_string(&map).unwrap();
        let back: SpatioTemporalMap = serde_json::from_str(&json).unwrap();
        assert_eq!(back, map);

        let mut buf = Vec::new();
        map.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("cell_x,cell_y,time_idx,count\n"));
        assert_eq!(text.lines().count(), map.len() + 1);
    }

    #[test]
    fn rejects_zero_count_and_out_of_grid_cells() {
        let spec = GridSpec::default();
        let bad = r#"{"spec":SPEC,"cells":[{"cell_x":0,"cell_y":0,"time_idx":0,"count":0}]}"#
            .replace("SPEC", &serde_json::to_string(&spec).unwrap());
        assert!(serde_json::from_str::<SpatioTemporalMap>(&bad).is_err());
        let mut map = SpatioTemporalMap::empty(spec);
        assert!(map.set((10_000, 0, 0), 1).is_err());
    }

    #[test]
    fn invalid_specs() {
        assert!(GridSpec::new(BBox::default(), 0.0, 10.0).is_err());
        assert!(GridSpec::new(BBox::default(), 100.0, -1.0).is_err());
        let flipped = BBox { lat_min: 1.0, lat_max: 0.0, lon_min: 0.0, lon_max: 1.0 };
        assert!(GridSpec::new(flipped, 100.0, 1.0).is_err());
    }
}
