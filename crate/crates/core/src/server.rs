//! Ingestion and query backend: raw records become `<second, 10 m cell,
//! LAeq>` facts, reconstruction jobs publish versioned maps, and queries read
//! the latest published map.
//!
//! On disk a store is a directory holding `records.jsonl` (append-only log of
//! accepted records) and `maps/v{n}.json` snapshots. Facts are rebuilt from
//! the log on open.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridref::{latlon_to_mgrs, Lattice, MgrsIndex, NoiseProfile, PowerSum, Precision, SampleRecord};
use crate::reconstruct::{reconstruct, Diagnostics, Method, ReconConfig, Sample, SampleSet};

/// Sanity band for uploaded levels, dBA.
pub const LEVEL_BAND: (f64, f64) = (-120.0, 140.0);
/// Default reconstruction cadence in seconds.
pub const DEFAULT_INTERVAL_S: u64 = 3600;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IngestStatus {
    Stored,
    Duplicate,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    pub status: IngestStatus,
    pub mgrs: String,
    pub second: i64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub index: usize,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub stored: usize,
    pub duplicates: usize,
    pub rejected: Vec<Rejection>,
}

/// Exact identity of a record, used to make replays idempotent.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
struct RecordKey(u64, u64, u64, u64, Option<String>);

impl From<&SampleRecord> for RecordKey {
    fn from(r: &SampleRecord) -> Self {
        RecordKey(r.t.to_bits(), r.lat.to_bits(), r.lon.to_bits(), r.laeq.to_bits(), r.device_id.clone())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum MapStatus {
    Ok,
    Failed { reason: String },
}

/// One published reconstruction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapVersion {
    pub version: u64,
    pub lattice: Lattice,
    pub method: Method,
    pub status: MapStatus,
    /// Observed cells in vector order.
    pub measured: Vec<bool>,
    /// Reconstructed levels in vector order; empty when the job failed.
    pub cells: Vec<Option<f64>>,
    #[serde(default)]
    pub diagnostics: Diagnostics,
}

impl MapVersion {
    pub fn profile(&self) -> Result<NoiseProfile> {
        NoiseProfile::devectorize(self.lattice.clone(), self.cells.clone())
    }

    pub fn is_ok(&self) -> bool {
        self.status == MapStatus::Ok
    }
}

/// Result of a reconstruction job before it is given a version number.
#[derive(Clone, Debug)]
pub struct JobOutput {
    pub lattice: Lattice,
    pub method: Method,
    pub measured: Vec<bool>,
    pub outcome: Result<(NoiseProfile, Diagnostics), String>,
}

/// Spatial part of a query.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    BBox { min_lat: f64, min_lon: f64, max_lat: f64, max_lon: f64 },
    Cells(Vec<MgrsIndex>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryRequest {
    pub region: Region,
    pub from: f64,
    pub to: f64,
    #[serde(default)]
    pub method: Option<Method>,
}

impl QueryRequest {
    pub fn validate(&self) -> Result<()> {
        if !(self.from <= self.to) {
            return Err(Error::InvalidInput(format!("empty time range [{}, {}]", self.from, self.to)));
        }
        match &self.region {
            Region::BBox { min_lat, min_lon, max_lat, max_lon } => {
                if !(min_lat <= max_lat && min_lon <= max_lon) {
                    return Err(Error::InvalidInput("bounding box is empty".into()));
                }
            }
            Region::Cells(c) if c.is_empty() => return Err(Error::InvalidInput("no cells in query".into())),
            Region::Cells(_) => {}
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Measured,
    Reconstructed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryCell {
    pub mgrs: String,
    pub lat: f64,
    pub lon: f64,
    pub t: f64,
    pub g: usize,
    pub j: usize,
    pub laeq: f64,
    pub source: Source,
    pub version: u64,
    pub method: Method,
}

/// Raw facts and published maps.
#[derive(Debug, Default)]
pub struct Repository {
    dir: Option<PathBuf>,
    log: Option<BufWriter<File>>,
    seen: HashSet<RecordKey>,
    facts: BTreeMap<i64, BTreeMap<MgrsIndex, PowerSum>>,
    maps: Vec<Arc<MapVersion>>,
    pub recon: ReconConfig,
}

impl Repository {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or creates) a store directory and replays its record log.
    pub fn open(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir.join("maps"))?;
        let mut repo = Repository::default();
        let log_path = dir.join("records.jsonl");
        if log_path.exists() {
            for (n, line) in BufReader::new(File::open(&log_path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: SampleRecord = serde_json::from_str(&line)
                    .map_err(|e| Error::InvalidInput(format!("records.jsonl line {}: {e}", n + 1)))?;
                repo.ingest(&rec)?;
            }
        }
        let mut maps = Vec::new();
        for entry in fs::read_dir(dir.join("maps"))? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "json") {
                let m: MapVersion = serde_json::from_reader(BufReader::new(File::open(&path)?))?;
                maps.push(Arc::new(m));
            }
        }
        maps.sort_by_key(|m| m.version);
        repo.maps = maps;
        repo.log = Some(BufWriter::new(OpenOptions::new().create(true).append(true).open(&log_path)?));
        repo.dir = Some(dir.to_path_buf());
        Ok(repo)
    }

    pub fn fact_count(&self) -> usize {
        self.facts.values().map(BTreeMap::len).sum()
    }

    pub fn record_count(&self) -> usize {
        self.seen.len()
    }

    pub fn maps(&self) -> &[Arc<MapVersion>] {
        &self.maps
    }

    pub fn map(&self, version: u64) -> Option<Arc<MapVersion>> {
        self.maps.iter().find(|m| m.version == version).cloned()
    }

    /// Level of the fact at `(second, cell)`, if any.
    pub fn fact(&self, second: i64, cell: &MgrsIndex) -> Option<f64> {
        self.facts.get(&second).and_then(|m| m.get(cell)).and_then(PowerSum::level)
    }

    /// Validates and stores one record. Exact repeats of an earlier record are
    /// acknowledged but not counted again.
    pub fn ingest(&mut self, rec: &SampleRecord) -> Result<Ack> {
        rec.validate()?;
        if !(LEVEL_BAND.0..=LEVEL_BAND.1).contains(&rec.laeq) {
            return Err(Error::OutOfRange(format!(
                "level {} dBA outside [{}, {}]",
                rec.laeq, LEVEL_BAND.0, LEVEL_BAND.1
            )));
        }
        let cell = latlon_to_mgrs(rec.lat, rec.lon, Precision::M10)?;
        let second = rec.t.floor() as i64;
        let ack = |status| Ack { status, mgrs: cell.to_string(), second };
        if !self.seen.insert(RecordKey::from(rec)) {
            return Ok(ack(IngestStatus::Duplicate));
        }
        if let Some(log) = self.log.as_mut() {
            serde_json::to_writer(&mut *log, rec)?;
            log.write_all(b"\n")?;
            log.flush()?;
        }
        self.facts.entry(second).or_default().entry(cell).or_default().add(rec.laeq);
        Ok(ack(IngestStatus::Stored))
    }

    pub fn ingest_all(&mut self, records: &[SampleRecord]) -> IngestReport {
        let mut report = IngestReport::default();
        for (index, r) in records.iter().enumerate() {
            match self.ingest(r) {
                Ok(Ack { status: IngestStatus::Stored, .. }) => report.stored += 1,
                Ok(_) => report.duplicates += 1,
                Err(e) => report.rejected.push(Rejection { index, reason: e.to_string() }),
            }
        }
        report
    }

    /// Facts falling on `lattice`, pooled per lattice cell.
    pub fn window_samples(&self, lattice: &Lattice) -> Result<SampleSet> {
        lattice.validate()?;
        let lo = lattice.t0.floor() as i64;
        let hi = lattice.time_of(lattice.n_t).ceil() as i64;
        let mut cells: BTreeMap<usize, PowerSum> = BTreeMap::new();
        let mut spatial: BTreeMap<MgrsIndex, Option<usize>> = BTreeMap::new();
        for (second, mgrs, acc) in self.facts.range(lo..=hi).flat_map(|(s, m)| m.iter().map(move |(g, a)| (s, g, a))) {
            let Some(j) = lattice.temporal_cell_of(*second as f64 + 0.5) else {
                continue;
            };
            let g = match spatial.get(mgrs) {
                Some(g) => *g,
                None => {
                    let g = lattice.spatial_cell_of_mgrs(mgrs)?;
                    spatial.insert(*mgrs, g);
                    g
                }
            };
            if let Some(g) = g {
                cells.entry(lattice.index(g, j)).or_default().merge(acc);
            }
        }
        let entries = cells
            .into_iter()
            .filter_map(|(i, acc)| {
                let (g, t) = lattice.cell(i);
                acc.level().map(|x| Sample { g, t, x })
            })
            .collect();
        SampleSet::new(lattice.clone(), entries)
    }

    /// Runs a job against a snapshot of the facts. Fails only when the window
    /// holds no facts; solver failures are reported in the output.
    pub fn prepare_job(&self, lattice: &Lattice) -> Result<SampleSet> {
        let samples = self.window_samples(lattice)?;
        if samples.is_empty() {
            return Err(Error::InsufficientSamples { needed: 1, got: 0 });
        }
        Ok(samples)
    }

    /// Publishes a job result under the next version number.
    pub fn publish(&mut self, job: JobOutput) -> Result<Arc<MapVersion>> {
        let version = self.maps.last().map_or(1, |m| m.version + 1);
        let (status, cells, diagnostics) = match job.outcome {
            Ok((profile, diag)) => (MapStatus::Ok, profile.vectorize(), diag),
            Err(reason) => (MapStatus::Failed { reason }, Vec::new(), Diagnostics::default()),
        };
        let map = Arc::new(MapVersion {
            version,
            lattice: job.lattice,
            method: job.method,
            status,
            measured: job.measured,
            cells,
            diagnostics,
        });
        if let Some(dir) = &self.dir {
            let path = dir.join("maps").join(format!("v{version}.json"));
            let tmp = path.with_extension("json.tmp");
            serde_json::to_writer(BufWriter::new(File::create(&tmp)?), &*map)?;
            fs::rename(tmp, path)?;
        }
        self.maps.push(map.clone());
        Ok(map)
    }

    /// Bins the window, reconstructs and publishes a new map version.
    pub fn run_reconstruction(&mut self, lattice: &Lattice, method: Method) -> Result<Arc<MapVersion>> {
        let samples = self.prepare_job(lattice)?;
        let job = solve_job(&samples, method, &self.recon);
        self.publish(job)
    }

    /// Latest successful map per lattice that matches the request, with every
    /// in-range cell tagged measured or reconstructed. No match gives an empty
    /// result.
    pub fn query(&self, q: &QueryRequest) -> Result<Vec<QueryCell>> {
        q.validate()?;
        let mut latest: Vec<&MapVersion> = Vec::new();
        for m in self.maps.iter().rev() {
            if !m.is_ok() || q.method.is_some_and(|want| want != m.method) || !m.lattice.overlaps(q.from, q.to) {
                continue;
            }
            if !latest.iter().any(|l| l.lattice == m.lattice) {
                latest.push(m);
            }
        }
        latest.reverse();
        let mut out = Vec::new();
        for m in latest {
            let l = &m.lattice;
            let mut in_region = Vec::new();
            for g in 0..l.n_s {
                let (lat, lon) = l.cell_center_latlon(g)?;
                let mgrs = l.cell_mgrs(g)?;
                let hit = match &q.region {
                    Region::BBox { min_lat, min_lon, max_lat, max_lon } => {
                        (*min_lat..=*max_lat).contains(&lat) && (*min_lon..=*max_lon).contains(&lon)
                    }
                    Region::Cells(cells) => cells.iter().any(|c| l.spatial_cell_of_mgrs(c).ok().flatten() == Some(g)),
                };
                if hit {
                    in_region.push((g, lat, lon, mgrs.to_string()));
                }
            }
            for j in 0..l.n_t {
                let (start, end) = (l.time_of(j), l.time_of(j + 1));
                if !(start <= q.to && q.from < end) {
                    continue;
                }
                for (g, lat, lon, mgrs) in &in_region {
                    let i = l.index(*g, j);
                    let Some(laeq) = m.cells[i] else { continue };
                    out.push(QueryCell {
                        mgrs: mgrs.clone(),
                        lat: *lat,
                        lon: *lon,
                        t: start,
                        g: *g,
                        j,
                        laeq,
                        source: if m.measured[i] { Source::Measured } else { Source::Reconstructed },
                        version: m.version,
                        method: m.method,
                    });
                }
            }
        }
        Ok(out)
    }
}

/// Reconstructs a prepared window. Pure; safe to run outside any lock.
pub fn solve_job(samples: &SampleSet, method: Method, cfg: &ReconConfig) -> JobOutput {
    JobOutput {
        lattice: samples.lattice().clone(),
        method,
        measured: samples.mask(),
        outcome: reconstruct(samples, method, cfg).map(|r| (r.profile, r.diagnostics)).map_err(|e| e.to_string()),
    }
}

/// Rebuilds a dense profile from query cells of one lattice.
pub fn profile_from_query(lattice: &Lattice, cells: &[QueryCell]) -> NoiseProfile {
    let mut p = NoiseProfile::empty(lattice.clone());
    for c in cells {
        if c.g < lattice.n_s && c.j < lattice.n_t {
            p.set(c.g, c.j, Some(c.laeq));
        }
    }
    p
}

/// Records that place each sample at the centre of its lattice cell.
pub fn records_for_samples(samples: &SampleSet) -> Result<Vec<SampleRecord>> {
    let l = samples.lattice();
    let centers: Vec<(f64, f64)> = (0..l.n_s).map(|g| l.cell_center_latlon(g)).collect::<Result<_>>()?;
    Ok(samples
        .entries()
        .iter()
        .map(|s| SampleRecord::new(l.time_of(s.t) + 0.5 * l.t_width, centers[s.g].0, centers[s.g].1, s.x))
        .collect())
}

/// Periodic reconstruction of a fixed road segment over the most recent
/// complete window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconSchedule {
    pub lattice: Lattice,
    pub method: Method,
    #[serde(default = "default_interval")]
    pub interval_s: u64,
}

fn default_interval() -> u64 {
    DEFAULT_INTERVAL_S
}

impl ReconSchedule {
    /// The lattice shifted to the last window that ended at or before `now`.
    pub fn window_at(&self, now: f64) -> Lattice {
        let span = self.lattice.n_t as f64 * self.lattice.t_width;
        Lattice { t0: (now / span).floor() * span - span, ..self.lattice.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridref::energetic_mean;
    use crate::simulate::{mask_uniform, synth_profile, ProfileSpec};

    fn lattice(n_s: usize, n_t: usize) -> Lattice {
        let origin = latlon_to_mgrs(51.5149, -0.1440, Precision::M10).unwrap();
        Lattice::new(n_s, n_t, origin).unwrap()
    }

    fn rec_at(l: &Lattice, g: usize, t: f64, laeq: f64) -> SampleRecord {
        let (lat, lon) = l.cell_center_latlon(g).unwrap();
        SampleRecord::new(t, lat, lon, laeq)
    }

    #[test]
    fn ingest_validates_and_merges() {
        let l = lattice(3, 4);
        let mut repo = Repository::in_memory();
        let a = repo.ingest(&rec_at(&l, 1, 2.2, 60.0)).unwrap();
        assert_eq!(a.status, IngestStatus::Stored);
        assert_eq!(a.mgrs, l.cell_mgrs(1).unwrap().to_string());
        repo.ingest(&rec_at(&l, 1, 2.7, 70.0)).unwrap();
        let cell = l.cell_mgrs(1).unwrap();
        let got = repo.fact(2, &cell).unwrap();
        assert!((got - 67.40362689494244).abs() < 1e-12);
        assert!((got - energetic_mean(&[60.0, 70.0]).unwrap()).abs() < 1e-12);

        assert!(repo.ingest(&rec_at(&l, 0, 0.0, 500.0)).is_err());
        assert!(repo.ingest(&SampleRecord::new(0.0, 95.0, 0.0, 60.0)).is_err());
        assert!(repo.ingest(&SampleRecord::new(0.0, 85.0, 0.0, 60.0)).is_err());
    }

    #[test]
    fn replay_is_idempotent() {
        let l = lattice(3, 4);
        let recs: Vec<_> = (0..6).map(|i| rec_at(&l, i % 3, i as f64 * 0.7, 55.0 + i as f64)).collect();
        let mut once = Repository::in_memory();
        once.ingest_all(&recs);
        let mut twice = Repository::in_memory();
        twice.ingest_all(&recs);
        let r = twice.ingest_all(&recs);
        assert_eq!((r.stored, r.duplicates), (0, 6));
        assert_eq!(once.facts, twice.facts);
    }

    #[test]
    fn full_coverage_reconstructs_to_binned_data() {
        let l = lattice(3, 4);
        let mut repo = Repository::in_memory();
        let mut want = Vec::new();
        for j in 0..4 {
            for g in 0..3 {
                let x = 50.0 + (g * 7 + j * 3) as f64 * 0.37;
                repo.ingest(&rec_at(&l, g, j as f64 + 0.5, x)).unwrap();
                want.push(x);
            }
        }
        let map = repo.run_reconstruction(&l, Method::L1).unwrap();
        assert!(map.is_ok());
        assert_eq!(map.profile().unwrap().dense().unwrap(), want);
        let q = QueryRequest { region: Region::Cells(vec![l.cell_mgrs(0).unwrap(), l.cell_mgrs(2).unwrap()]), from: 0.0, to: 10.0, method: None };
        let cells = repo.query(&q).unwrap();
        assert_eq!(cells.len(), 8);
        assert!(cells.iter().all(|c| c.source == Source::Measured && c.version == 1));
    }

    #[test]
    fn empty_window_and_empty_query() {
        let l = lattice(3, 4);
        let mut repo = Repository::in_memory();
        assert!(matches!(repo.run_reconstruction(&l, Method::Li), Err(Error::InsufficientSamples { .. })));
        assert!(repo.maps().is_empty());
        repo.ingest(&rec_at(&l, 0, 0.5, 60.0)).unwrap();
        repo.run_reconstruction(&l, Method::Li).unwrap();
        let far = QueryRequest { region: Region::BBox { min_lat: 0.0, min_lon: 0.0, max_lat: 1.0, max_lon: 1.0 }, from: 0.0, to: 10.0, method: None };
        assert!(repo.query(&far).unwrap().is_empty());
        let later = QueryRequest { region: Region::BBox { min_lat: 50.0, min_lon: -1.0, max_lat: 52.0, max_lon: 1.0 }, from: 100.0, to: 200.0, method: None };
        assert!(repo.query(&later).unwrap().is_empty());
    }

    #[test]
    fn failed_job_is_versioned() {
        let l = lattice(3, 4);
        let mut repo = Repository::in_memory();
        repo.ingest(&rec_at(&l, 0, 0.5, 60.0)).unwrap();
        // one sample cannot fit a GP
        let map = repo.run_reconstruction(&l, Method::Gpi).unwrap();
        assert!(matches!(map.status, MapStatus::Failed { .. }));
        assert_eq!(repo.fact_count(), 1);
        let q = QueryRequest { region: Region::BBox { min_lat: 50.0, min_lon: -1.0, max_lat: 52.0, max_lon: 1.0 }, from: 0.0, to: 10.0, method: None };
        assert!(repo.query(&q).unwrap().is_empty());
    }

    #[test]
    fn tags_follow_mask_and_reruns_match() {
        let truth = synth_profile(&ProfileSpec { n_s: 4, n_t: 30, ..ProfileSpec::reference(0, 4, 30, 2) }).unwrap();
        let l = lattice(4, 30);
        let truth = NoiseProfile::from_dense(l.clone(), truth.dense().unwrap()).unwrap();
        let samples = mask_uniform(&truth, 0.4, 9).unwrap();
        let mut repo = Repository::in_memory();
        let report = repo.ingest_all(&records_for_samples(&samples).unwrap());
        assert_eq!(report.stored, samples.len());
        assert_eq!(repo.window_samples(&l).unwrap(), samples);
        let a = repo.run_reconstruction(&l, Method::Nni).unwrap();
        let b = repo.run_reconstruction(&l, Method::Nni).unwrap();
        assert_eq!((a.version, b.version), (1, 2));
        assert_eq!(a.cells, b.cells);
        let q = QueryRequest { region: Region::BBox { min_lat: -90.0, min_lon: -180.0, max_lat: 90.0, max_lon: 180.0 }, from: 0.0, to: 1e9, method: Some(Method::Nni) };
        let cells = repo.query(&q).unwrap();
        assert_eq!(cells.len(), 120);
        assert!(cells.iter().all(|c| c.version == 2));
        let measured = cells.iter().filter(|c| c.source == Source::Measured).count();
        assert_eq!(measured, samples.len());
        assert_eq!(profile_from_query(&l, &cells).vectorize(), b.cells);
    }

    #[test]
    fn store_survives_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let l = lattice(2, 3);
        {
            let mut repo = Repository::open(dir.path()).unwrap();
            for j in 0..3 {
                repo.ingest(&rec_at(&l, j % 2, j as f64, 60.0 + j as f64)).unwrap();
            }
            repo.run_reconstruction(&l, Method::Li).unwrap();
        }
        let mut repo = Repository::open(dir.path()).unwrap();
        assert_eq!(repo.record_count(), 3);
        assert_eq!(repo.maps().len(), 1);
        let v = repo.run_reconstruction(&l, Method::Li).unwrap();
        assert_eq!(v.version, 2);
        assert_eq!(v.cells, repo.map(1).unwrap().cells);
        // replaying the log through ingest changes nothing
        let r = repo.ingest(&rec_at(&l, 0, 0.0, 60.0)).unwrap();
        assert_eq!(r.status, IngestStatus::Duplicate);
    }

    #[test]
    fn schedule_picks_last_complete_window() {
        let s = ReconSchedule { lattice: lattice(2, 3600), method: Method::L1, interval_s: DEFAULT_INTERVAL_S };
        assert_eq!(s.window_at(7300.0).t0, 3600.0);
        assert_eq!(s.window_at(7200.0).t0, 3600.0);
    }
}
