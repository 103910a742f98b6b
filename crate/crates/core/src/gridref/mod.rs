//! GPS to MGRS gridding, the spatio-temporal lattice and noise profiles.
//!
//! A lattice models one road: spatial cell `g` counts `omega`-metre squares
//! along the road starting at `origin`, temporal cell `t` counts `t_width`
//! second slots starting at `t0`. Profiles are stored as vectors with space
//! varying fastest, so cell `(g, t)` sits at index `t * n_s + g` (0-based).

mod mgrs;
pub mod utm;

pub use mgrs::{latlon_to_mgrs, mgrs_to_latlon, MgrsIndex, Precision};

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reconstruct::{Sample, SampleSet};

/// Largest level difference between adjacent measured cells before a warning.
pub const ADJACENT_LIMIT_DB: f64 = 5.0;

/// Direction in which spatial cells advance from the origin.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    #[default]
    East,
    North,
}

fn default_omega() -> f64 {
    10.0
}

fn default_t_width() -> f64 {
    1.0
}

/// The spatio-temporal grid of one road segment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    pub n_s: usize,
    pub n_t: usize,
    #[serde(default = "default_omega")]
    pub omega: f64,
    #[serde(rename = "t", default = "default_t_width")]
    pub t_width: f64,
    pub origin: MgrsIndex,
    #[serde(default)]
    pub t0: f64,
    #[serde(default)]
    pub axis: Axis,
}

impl Lattice {
    pub fn new(n_s: usize, n_t: usize, origin: MgrsIndex) -> Result<Self> {
        let lattice = Lattice {
            n_s,
            n_t,
            omega: origin.precision.meters() as f64,
            t_width: 1.0,
            origin,
            t0: 0.0,
            axis: Axis::East,
        };
        lattice.validate()?;
        Ok(lattice)
    }

    /// A lattice that is never mapped to the ground (simulation only).
    pub fn abstract_grid(n_s: usize, n_t: usize) -> Self {
        Lattice {
            n_s,
            n_t,
            omega: 10.0,
            t_width: 1.0,
            origin: "56JNP0000000000".parse::<MgrsIndex>().map(|m| MgrsIndex { precision: Precision::M10, easting: 0, northing: 0, ..m }).expect("static reference"),
            t0: 0.0,
            axis: Axis::East,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_s == 0 || self.n_t == 0 {
            return Err(Error::InvalidInput("lattice needs at least one cell in each dimension".into()));
        }
        if ![1.0, 10.0, 100.0].contains(&self.omega) {
            return Err(Error::InvalidInput(format!("omega must be 1, 10 or 100 m, got {}", self.omega)));
        }
        if self.origin.precision.meters() as f64 != self.omega {
            return Err(Error::InvalidInput("origin precision must equal omega".into()));
        }
        if !(self.t_width > 0.0) {
            return Err(Error::InvalidInput("temporal width must be positive".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.n_s * self.n_t
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, g: usize, t: usize) -> usize {
        t * self.n_s + g
    }

    #[inline]
    pub fn cell(&self, index: usize) -> (usize, usize) {
        (index % self.n_s, index / self.n_s)
    }

    pub fn same_shape(&self, other: &Lattice) -> bool {
        self.n_s == other.n_s && self.n_t == other.n_t
    }

    fn frame(&self) -> Result<utm::Utm> {
        self.origin.corner_utm()
    }

    /// Spatial cell containing a position, if it lies on the road strip.
    pub fn spatial_cell_of(&self, lat: f64, lon: f64) -> Result<Option<usize>> {
        let origin = self.frame()?;
        let u = utm::to_utm_in_zone(lat, lon, origin.zone, origin.north);
        let (along, across) = match self.axis {
            Axis::East => (u.easting - origin.easting, u.northing - origin.northing),
            Axis::North => (u.northing - origin.northing, u.easting - origin.easting),
        };
        if along < 0.0 || !(0.0..self.omega).contains(&across) {
            return Ok(None);
        }
        let g = (along / self.omega).floor() as usize;
        Ok((g < self.n_s).then_some(g))
    }

    pub fn spatial_cell_of_mgrs(&self, idx: &MgrsIndex) -> Result<Option<usize>> {
        let (lat, lon) = mgrs_to_latlon(idx)?;
        self.spatial_cell_of(lat, lon)
    }

    pub fn temporal_cell_of(&self, t: f64) -> Option<usize> {
        let rel = (t - self.t0) / self.t_width;
        if !(rel >= 0.0) {
            return None;
        }
        let j = rel.floor() as usize;
        (j < self.n_t).then_some(j)
    }

    /// Start time of temporal cell `t`.
    pub fn time_of(&self, t: usize) -> f64 {
        self.t0 + t as f64 * self.t_width
    }

    pub fn cell_center_latlon(&self, g: usize) -> Result<(f64, f64)> {
        let origin = self.frame()?;
        let along = (g as f64 + 0.5) * self.omega;
        let across = 0.5 * self.omega;
        let u = match self.axis {
            Axis::East => utm::Utm { easting: origin.easting + along, northing: origin.northing + across, ..origin },
            Axis::North => utm::Utm { easting: origin.easting + across, northing: origin.northing + along, ..origin },
        };
        Ok(utm::to_latlon(&u))
    }

    pub fn cell_mgrs(&self, g: usize) -> Result<MgrsIndex> {
        let (lat, lon) = self.cell_center_latlon(g)?;
        latlon_to_mgrs(lat, lon, self.origin.precision)
    }

    /// Whether the time span of the lattice overlaps `[from, to]`.
    pub fn overlaps(&self, from: f64, to: f64) -> bool {
        let end = self.time_of(self.n_t);
        self.t0 <= to && from < end
    }
}

/// Dense lattice of LAeq values with a per-cell missing flag.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseProfile {
    lattice: Lattice,
    cells: Vec<Option<f64>>,
}

impl NoiseProfile {
    pub fn empty(lattice: Lattice) -> Self {
        let n = lattice.len();
        NoiseProfile { lattice, cells: vec![None; n] }
    }

    /// Builds a fully defined profile from a vector in lattice order.
    pub fn from_dense(lattice: Lattice, values: Vec<f64>) -> Result<Self> {
        Self::devectorize(lattice, values.into_iter().map(Some).collect())
    }

    /// Inverse of [`NoiseProfile::vectorize`].
    pub fn devectorize(lattice: Lattice, cells: Vec<Option<f64>>) -> Result<Self> {
        if cells.len() != lattice.len() {
            return Err(Error::LengthMismatch { expected: lattice.len(), actual: cells.len() });
        }
        if cells.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("profile values must be finite".into()));
        }
        Ok(NoiseProfile { lattice, cells })
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn get(&self, g: usize, t: usize) -> Option<f64> {
        self.cells[self.lattice.index(g, t)]
    }

    pub fn set(&mut self, g: usize, t: usize, value: Option<f64>) {
        let i = self.lattice.index(g, t);
        self.cells[i] = value;
    }

    /// Cells in lattice order (`t * n_s + g`).
    pub fn vectorize(&self) -> Vec<Option<f64>> {
        self.cells.clone()
    }

    pub fn cells(&self) -> &[Option<f64>] {
        &self.cells
    }

    pub fn is_complete(&self) -> bool {
        self.cells.iter().all(Option::is_some)
    }

    pub fn defined_count(&self) -> usize {
        self.cells.iter().filter(|c| c.is_some()).count()
    }

    /// All values, failing if any cell is undefined.
    pub fn dense(&self) -> Result<Vec<f64>> {
        self.cells.iter().map(|c| c.ok_or(Error::UndefinedCells)).collect()
    }

    pub fn mean_std(&self) -> Option<(f64, f64)> {
        let vals: Vec<f64> = self.cells.iter().flatten().copied().collect();
        if vals.is_empty() {
            return None;
        }
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some((mean, var.sqrt()))
    }

    /// Adjacent measured cells (same time, neighbouring space) whose levels
    /// differ by more than `limit_db`.
    pub fn adjacent_jumps(&self, limit_db: f64) -> Vec<AdjacentJump> {
        let l = &self.lattice;
        let mut out = Vec::new();
        for t in 0..l.n_t {
            for g in 0..l.n_s.saturating_sub(1) {
                if let (Some(a), Some(b)) = (self.get(g, t), self.get(g + 1, t)) {
                    if (a - b).abs() > limit_db {
                        out.push(AdjacentJump { g, t, diff_db: b - a });
                    }
                }
            }
        }
        out
    }

    /// Logs a warning for every adjacent jump above [`ADJACENT_LIMIT_DB`].
    pub fn warn_adjacent_jumps(&self) -> usize {
        let jumps = self.adjacent_jumps(ADJACENT_LIMIT_DB);
        for j in &jumps {
            log::warn!("cells ({}, {}) and ({}, {}) differ by {:.2} dB", j.g, j.t, j.g + 1, j.t, j.diff_db);
        }
        jumps.len()
    }

    /// Writes an `n_s` by `n_t` matrix; undefined cells are empty fields.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        for g in 0..self.lattice.n_s {
            let row: Vec<String> = (0..self.lattice.n_t)
                .map(|t| self.get(g, t).map(|v| v.to_string()).unwrap_or_default())
                .collect();
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R, lattice: Lattice) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(input);
        let mut profile = NoiseProfile::empty(lattice);
        let mut rows = 0;
        for (g, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if g >= profile.lattice.n_s || rec.len() != profile.lattice.n_t {
                return Err(Error::InvalidInput(format!(
                    "profile CSV must be {} rows of {} values",
                    profile.lattice.n_s, profile.lattice.n_t
                )));
            }
            for (t, field) in rec.iter().enumerate() {
                let field = field.trim();
                if !field.is_empty() {
                    let v: f64 = field
                        .parse()
                        .map_err(|_| Error::InvalidInput(format!("bad value {field:?} at ({g}, {t})")))?;
                    if !v.is_finite() {
                        return Err(Error::InvalidInput(format!("non-finite value at ({g}, {t})")));
                    }
                    profile.set(g, t, Some(v));
                }
            }
            rows += 1;
        }
        if rows != profile.lattice.n_s {
            return Err(Error::InvalidInput(format!("expected {} rows, got {rows}", profile.lattice.n_s)));
        }
        Ok(profile)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdjacentJump {
    pub g: usize,
    pub t: usize,
    pub diff_db: f64,
}

/// One uploaded measurement: `<time-stamp, lat, lon, LAeq>`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub t: f64,
    pub lat: f64,
    pub lon: f64,
    pub laeq: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub device_id: Option<String>,
}

impl SampleRecord {
    pub fn new(t: f64, lat: f64, lon: f64, laeq: f64) -> Self {
        SampleRecord { t, lat, lon, laeq, device_id: None }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lat.abs() <= 90.0) || !(self.lon.abs() <= 180.0) {
            return Err(Error::OutOfRange(format!("({}, {})", self.lat, self.lon)));
        }
        if !self.t.is_finite() || !self.laeq.is_finite() {
            return Err(Error::InvalidInput("time and level must be finite".into()));
        }
        Ok(())
    }
}

/// Reads records from JSON lines.
pub fn read_records_jsonl<R: std::io::BufRead>(input: R) -> Result<Vec<SampleRecord>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

/// Reads records from CSV with a `t,lat,lon,laeq` header.
pub fn read_records_csv<R: Read>(input: R) -> Result<Vec<SampleRecord>> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}

/// Power-domain accumulator for pooling dB levels.
///
/// A single level is returned unchanged rather than round-tripped through
/// the power domain.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PowerSum {
    pub power: f64,
    pub count: u64,
    first: f64,
}

impl PowerSum {
    pub fn add(&mut self, level_db: f64) {
        if self.count == 0 {
            self.first = level_db;
        }
        self.power += 10f64.powf(level_db / 10.0);
        self.count += 1;
    }

    pub fn merge(&mut self, other: &PowerSum) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        self.power += other.power;
        self.count += other.count;
    }

    pub fn level(&self) -> Option<f64> {
        match self.count {
            0 => None,
            1 => Some(self.first),
            n => Some(10.0 * (self.power / n as f64).log10()),
        }
    }
}

/// `10 log10(mean(10^(L/10)))`
pub fn energetic_mean(levels: &[f64]) -> Option<f64> {
    let mut acc = PowerSum::default();
    levels.iter().for_each(|&l| acc.add(l));
    acc.level()
}

#[derive(Clone, Debug)]
pub struct Binned {
    pub samples: SampleSet,
    pub dropped: usize,
}

/// Places records on the lattice, pooling several records of one cell by
/// their energetic mean. Records off the road or outside the time span are
/// dropped and counted.
pub fn bin_samples(records: &[SampleRecord], lattice: &Lattice) -> Result<Binned> {
    lattice.validate()?;
    let mut cells: BTreeMap<usize, PowerSum> = BTreeMap::new();
    let mut dropped = 0;
    for r in records {
        if r.validate().is_err() {
            dropped += 1;
            continue;
        }
        let g = match lattice.spatial_cell_of(r.lat, r.lon) {
            Ok(Some(g)) => g,
            _ => {
                dropped += 1;
                continue;
            }
        };
        let Some(t) = lattice.temporal_cell_of(r.t) else {
            dropped += 1;
            continue;
        };
        cells.entry(lattice.index(g, t)).or_default().add(r.laeq);
    }
    let entries = cells
        .into_iter()
        .filter_map(|(i, acc)| {
            let (g, t) = lattice.cell(i);
            acc.level().map(|x| Sample { g, t, x })
        })
        .collect();
    Ok(Binned { samples: SampleSet::new(lattice.clone(), entries)?, dropped })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brisbane_lattice(n_s: usize, n_t: usize) -> Lattice {
        let origin = latlon_to_mgrs(-27.6105, 152.9502, Precision::M10).unwrap();
        Lattice::new(n_s, n_t, origin).unwrap()
    }

    #[test]
    fn vector_order_is_space_fastest() {
        let l = Lattice::abstract_grid(4, 2);
        assert_eq!(l.len(), 8);
        assert_eq!(l.index(0, 0), 0);
        assert_eq!(l.index(3, 0), 3);
        assert_eq!(l.index(0, 1), 4);
        assert_eq!(l.cell(6), (2, 1));
        let p = NoiseProfile::from_dense(l.clone(), (0..8).map(|v| v as f64).collect()).unwrap();
        assert_eq!(p.get(1, 1), Some(5.0));
        let back = NoiseProfile::devectorize(l, p.vectorize()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn one_cell_lattice() {
        let p = NoiseProfile::from_dense(Lattice::abstract_grid(1, 1), vec![60.0]).unwrap();
        assert_eq!(p.vectorize(), vec![Some(60.0)]);
    }

    #[test]
    fn energetic_mean_examples() {
        assert_eq!(energetic_mean(&[63.5]), Some(63.5));
        assert!((energetic_mean(&[60.0, 60.0]).unwrap() - 60.0).abs() < 1e-12);
        let oracle = 10.0 * ((1e6 + 1e7) / 2.0f64).log10();
        assert!((energetic_mean(&[60.0, 70.0]).unwrap() - oracle).abs() < 1e-12);
        assert!((oracle - 67.4036).abs() < 1e-4);
    }

    #[test]
    fn binning_pools_and_drops() {
        let lattice = brisbane_lattice(5, 4);
        let (lat, lon) = lattice.cell_center_latlon(2).unwrap();
        let records = vec![
            SampleRecord::new(1.2, lat, lon, 60.0),
            SampleRecord::new(1.7, lat, lon, 70.0),
            SampleRecord::new(0.5, lat, lon, 55.0),
            SampleRecord::new(99.0, lat, lon, 55.0),
            SampleRecord::new(0.5, lat + 0.01, lon, 55.0),
        ];
        let binned = bin_samples(&records, &lattice).unwrap();
        assert_eq!(binned.dropped, 2);
        let entries = binned.samples.entries();
        assert_eq!(entries.len(), 2);
        assert_eq!((entries[0].g, entries[0].t, entries[0].x), (2, 0, 55.0));
        assert_eq!((entries[1].g, entries[1].t), (2, 1));
        assert!((entries[1].x - 67.40362689494244).abs() < 1e-9);
    }

    #[test]
    fn cell_centres_map_back_to_their_cells() {
        let lattice = brisbane_lattice(30, 1);
        for g in 0..30 {
            let (lat, lon) = lattice.cell_center_latlon(g).unwrap();
            assert_eq!(lattice.spatial_cell_of(lat, lon).unwrap(), Some(g));
            let idx = lattice.cell_mgrs(g).unwrap();
            assert_eq!(lattice.spatial_cell_of_mgrs(&idx).unwrap(), Some(g));
        }
    }

    #[test]
    fn adjacent_jump_warning() {
        let l = Lattice::abstract_grid(3, 1);
        let p = NoiseProfile::from_dense(l, vec![60.0, 62.0, 69.0]).unwrap();
        let jumps = p.adjacent_jumps(ADJACENT_LIMIT_DB);
        assert_eq!(jumps.len(), 1);
        assert_eq!((jumps[0].g, jumps[0].t), (1, 0));
    }

    #[test]
    fn profile_csv_round_trip_with_gaps() {
        let l = Lattice::abstract_grid(2, 3);
        let mut p = NoiseProfile::from_dense(l.clone(), vec![60.5, 61.0, 62.25, 63.0, 64.0, 65.125]).unwrap();
        p.set(1, 2, None);
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "60.5,62.25,64\n61,63,\n");
        assert_eq!(NoiseProfile::read_csv(&buf[..], l).unwrap(), p);
    }

    #[test]
    fn lattice_json_sidecar() {
        let l = brisbane_lattice(6, 600);
        let json = serde_json::to_string(&l).unwrap();
        assert!(json.contains("\"origin\":\"56J"));
        let back: Lattice = serde_json::from_str(&json).unwrap();
        assert_eq!(back, l);
        let minimal: Lattice =
            serde_json::from_str(r#"{"n_s": 6, "n_t": 60, "origin": "56JNP0123465432"}"#).unwrap();
        assert_eq!(minimal.omega, 10.0);
        assert_eq!(minimal.t_width, 1.0);
    }

    #[test]
    fn record_wire_format() {
        let r: SampleRecord = serde_json::from_str(r#"{"t": 5.0, "lat": -27.6, "lon": 152.9, "laeq": 63.2}"#).unwrap();
        assert_eq!(r, SampleRecord::new(5.0, -27.6, 152.9, 63.2));
        let csv = "t,lat,lon,laeq\n5.0,-27.6,152.9,63.2\n";
        assert_eq!(read_records_csv(csv.as_bytes()).unwrap(), vec![r]);
    }
}
