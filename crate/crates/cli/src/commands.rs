//! Subcommand definitions and their implementations.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use noisemap::acoustics::wav::{read_raw_f32, read_wav, write_wav_i16};
use noisemap::acoustics::{
    estimate_offset, generate_calibration_tone, write_leq_csv, AWeightFilter, CalibrationOffset, CalibrationRecord,
    LeqMeter, PcmFrame,
};
use noisemap::basis::{compressibility, TransformKind};
use noisemap::context::{self, ContextModel, FeatureKind};
use noisemap::experiment::{summarize, sweep, write_sweep_csv, SweepConfig};
use noisemap::gridref::{Lattice, MgrsIndex, NoiseProfile};
use noisemap::reconstruct::{reconstruct, L1Config, Method, ReconConfig, SampleSet};
use noisemap::server::{records_for_samples, QueryCell, ReconSchedule, Repository};
use noisemap::simulate::{mask_uniform, run_campaign, synth_profile, CampaignConfig, MobilityParams, ProfileSpec};
use noisemap::speech::{self, CorpusSpec, SpectralFeature, SpeechThreshold};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::http::{self, AppState, NoiseParams};
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "noisemap", version, about = "Noise levels from phone audio, crowdsensing simulation and noise-map reconstruction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the 1 kHz calibration tone, or estimate a device offset from a recording of it
    CalibrateTone(CalibrateToneArgs),
    /// A-weighted equivalent levels of a recording
    Leq(LeqArgs),
    /// Label one-minute windows as voiced or noise only, or train the threshold
    DetectSpeech(DetectSpeechArgs),
    /// Label sensor-trace windows as hand or pocket/bag
    ClassifyContext(ClassifyContextArgs),
    /// Generate a ground-truth profile and a crowdsourced sample set
    Simulate(SimulateArgs),
    /// Reconstruct a full profile from samples
    Reconstruct(ReconstructArgs),
    /// Reconstruction error over missing fractions, methods and random masks
    Sweep(SweepArgs),
    /// DCT compressibility of a profile
    AnalyzeCompress(AnalyzeArgs),
    /// Run the ingestion and query service
    Serve(ServeArgs),
    /// Query noise levels from a service or a local store
    Query(QueryArgs),
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::CalibrateTone(a) => calibrate_tone(a),
        Command::Leq(a) => leq(a),
        Command::DetectSpeech(a) => detect_speech(a),
        Command::ClassifyContext(a) => classify_context(a),
        Command::Simulate(a) => simulate(a),
        Command::Reconstruct(a) => reconstruct_cmd(a),
        Command::Sweep(a) => sweep_cmd(a),
        Command::AnalyzeCompress(a) => analyze(a),
        Command::Serve(a) => serve(a),
        Command::Query(a) => query(a),
    }
}

// ---- file helpers ----

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| CliError::File(path.to_path_buf(), e))?))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).map_err(|e| CliError::File(path.to_path_buf(), e))?))
}

/// Runs `f` against `path`, or stdout when no path is given.
fn with_output(path: Option<&Path>, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    match path {
        Some(p) => {
            let mut w = create(p)?;
            f(&mut w)?;
            w.flush()?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            f(&mut lock)?;
            lock.flush()?;
        }
    }
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_reader(open(path)?).map_err(|e| CliError::Schema(path.to_path_buf(), e.to_string()))
}

fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    with_output(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value).map_err(noisemap::Error::from)?;
        w.write_all(b"\n")?;
        Ok(())
    })
}

/// Lattice sidecar of a profile CSV: `truth.csv` -> `truth.lattice.json`.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("lattice.json")
}

pub fn save_profile(path: &Path, profile: &NoiseProfile) -> Result<()> {
    let mut w = create(path)?;
    profile.write_csv(&mut w)?;
    w.flush()?;
    let mut s = create(&sidecar_path(path))?;
    serde_json::to_writer_pretty(&mut s, profile.lattice()).map_err(noisemap::Error::from)?;
    s.write_all(b"\n")?;
    Ok(())
}

/// Loads a profile using `lattice`, else its sidecar, else an abstract lattice
/// sized from the CSV.
pub fn load_profile(path: &Path, lattice: Option<&Path>) -> Result<NoiseProfile> {
    let side = sidecar_path(path);
    let lattice = match lattice {
        Some(l) => read_json::<Lattice>(l)?,
        None if side.exists() => read_json::<Lattice>(&side)?,
        None => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::File(path.to_path_buf(), e))?;
            let rows: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
            let n_t = rows.first().map_or(0, |r| r.split(',').count());
            Lattice::abstract_grid(rows.len().max(1), n_t.max(1))
        }
    };
    lattice.validate()?;
    Ok(NoiseProfile::read_csv(open(path)?, lattice)?)
}

fn load_frame(wav: Option<&Path>, raw: Option<&Path>, sample_rate: u32) -> Result<PcmFrame> {
    match (wav, raw) {
        (Some(p), None) => Ok(read_wav(open(p)?)?),
        (None, Some(p)) => Ok(read_raw_f32(open(p)?, sample_rate)?),
        _ => Err(CliError::Usage("give exactly one of --wav or --raw".into())),
    }
}

fn parse_list<T: std::str::FromStr>(s: &str) -> std::result::Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    s.split(',').filter(|x| !x.trim().is_empty()).map(|x| x.trim().parse::<T>().map_err(|e| e.to_string())).collect()
}

fn parse_methods(s: &str) -> std::result::Result<Vec<Method>, String> {
    if s.trim() == "all" {
        Ok(Method::ALL.to_vec())
    } else {
        parse_list(s)
    }
}

// ---- calibrate-tone ----

#[derive(Debug, Args)]
pub struct CalibrateToneArgs {
    /// Where to write the generated tone (16-bit WAV)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Sample rate of the generated tone
    #[arg(long, default_value_t = 16_000)]
    pub sample_rate: u32,
    /// Recording of the tone made by the device under calibration
    #[arg(long, requires = "reference")]
    pub recorded: Option<PathBuf>,
    /// Reference meter levels, one per second of the recording (CSV with a `laeq` column or one value per line)
    #[arg(long, requires = "recorded")]
    pub reference: Option<PathBuf>,
    /// Device identifier stored with the offset
    #[arg(long, default_value = "unknown")]
    pub device_id: String,
    /// Where to write the offset JSON (stdout if omitted)
    #[arg(long)]
    pub offset_out: Option<PathBuf>,
}

fn read_levels(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::File(path.to_path_buf(), e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let field = line.split(',').next_back().unwrap_or("").trim();
        if field.is_empty() {
            continue;
        }
        match field.parse::<f64>() {
            Ok(v) => out.push(v),
            Err(_) if i == 0 => {} // header
            Err(_) => return Err(CliError::Schema(path.to_path_buf(), format!("line {}: {field:?} is not a level", i + 1))),
        }
    }
    Ok(out)
}

fn calibrate_tone(a: CalibrateToneArgs) -> Result<()> {
    if a.out.is_none() && a.recorded.is_none() {
        return Err(CliError::Usage("give --out to write the tone or --recorded/--reference to estimate an offset".into()));
    }
    if let Some(out) = &a.out {
        let tone = generate_calibration_tone(a.sample_rate)?;
        let mut w = create(out)?;
        write_wav_i16(&mut w, &tone)?;
        w.flush()?;
    }
    if let (Some(rec), Some(reference)) = (&a.recorded, &a.reference) {
        let frame = read_wav(open(rec)?)?;
        let readings = LeqMeter::new(0.0).measure(&frame)?;
        let levels = read_levels(reference)?;
        // only seconds inside the tone halves of each one-minute segment
        let seg = noisemap::acoustics::TONE_SEGMENT_S;
        let active = |i: usize| i % seg < seg / 2;
        let n = readings.len().min(levels.len());
        let rec: Vec<_> = (0..n).filter(|&i| active(i)).map(|i| readings[i]).collect();
        let refs: Vec<f64> = (0..n).filter(|&i| active(i)).map(|i| levels[i]).collect();
        let offset: CalibrationOffset = estimate_offset(&rec, &refs)?;
        write_json(a.offset_out.as_deref(), &CalibrationRecord { device_id: a.device_id, offset })?;
    }
    Ok(())
}

// ---- leq ----

#[derive(Debug, Args)]
pub struct LeqArgs {
    /// Mono WAV input (16-bit PCM or 32-bit float)
    #[arg(long)]
    pub wav: Option<PathBuf>,
    /// Headerless little-endian float32 input
    #[arg(long)]
    pub raw: Option<PathBuf>,
    /// Sample rate of --raw input
    #[arg(long, default_value_t = 16_000)]
    pub sample_rate: u32,
    /// Calibration offset in dB
    #[arg(long, default_value_t = 0.0, conflicts_with = "offset")]
    pub delta: f64,
    /// Calibration offset JSON written by calibrate-tone
    #[arg(long)]
    pub offset: Option<PathBuf>,
    /// Integration interval in seconds
    #[arg(long, default_value_t = 1.0)]
    pub interval: f64,
    /// Output CSV (stdout if omitted)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn leq(a: LeqArgs) -> Result<()> {
    let frame = load_frame(a.wav.as_deref(), a.raw.as_deref(), a.sample_rate)?;
    let delta = match &a.offset {
        Some(p) => read_json::<CalibrationRecord>(p)?.offset.delta,
        None => a.delta,
    };
    if !(a.interval > 0.0) {
        return Err(CliError::Usage("--interval must be positive".into()));
    }
    let readings = LeqMeter::with_filter(AWeightFilter::default(), delta, a.interval).measure(&frame)?;
    with_output(a.out.as_deref(), |w| Ok(write_leq_csv(w, &readings)?))
}

// ---- detect-speech ----

#[derive(Debug, Args)]
pub struct DetectSpeechArgs {
    /// Recording to label
    #[arg(long)]
    pub wav: Option<PathBuf>,
    /// Threshold model JSON; read when labelling, written when training
    #[arg(long)]
    pub model: PathBuf,
    /// Train from voiced recordings (every window counts as voiced)
    #[arg(long, num_args = 1.., value_delimiter = ',')]
    pub voiced: Vec<PathBuf>,
    /// Train from noise-only recordings
    #[arg(long, num_args = 1.., value_delimiter = ',')]
    pub noise: Vec<PathBuf>,
    /// Train on this many synthetic windows per class instead of recordings
    #[arg(long)]
    pub synthetic: Option<usize>,
    /// Seed of the synthetic corpus
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Window length in seconds
    #[arg(long, default_value_t = speech::WINDOW_S)]
    pub window: f64,
    /// Output CSV (stdout if omitted)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn features_of(paths: &[PathBuf], window: f64) -> Result<Vec<SpectralFeature>> {
    let mut out = Vec::new();
    for p in paths {
        out.extend(speech::window_features(&read_wav(open(p)?)?, window)?);
    }
    Ok(out)
}

fn detect_speech(a: DetectSpeechArgs) -> Result<()> {
    let training = !a.voiced.is_empty() || !a.noise.is_empty() || a.synthetic.is_some();
    if training {
        let (voiced, noise) = match a.synthetic {
            Some(n) => {
                let spec = CorpusSpec { window_s: a.window, ..CorpusSpec::default() };
                speech::synth_corpus(&spec, n, &mut ChaCha8Rng::seed_from_u64(a.seed))?
            }
            None => (features_of(&a.voiced, a.window)?, features_of(&a.noise, a.window)?),
        };
        let th = speech::train_threshold(&voiced, &noise)?;
        write_json(Some(&a.model), &th)?;
        let c = speech::evaluate(&th, &voiced, &noise);
        log::info!("theta {:.6}; training precision {:.3}, recall {:.3}", th.theta, c.precision(), c.recall());
        if a.wav.is_none() {
            return Ok(());
        }
    }
    let Some(wav) = &a.wav else {
        return Err(CliError::Usage("give --wav to label, or --voiced/--noise/--synthetic to train".into()));
    };
    let th: SpeechThreshold = read_json(&a.model)?;
    let labels = speech::detect(&read_wav(open(wav)?)?, &th, a.window)?;
    with_output(a.out.as_deref(), |w| {
        writeln!(w, "window_start,feature,label")?;
        for (f, l) in &labels {
            writeln!(w, "{},{},{}", f.window_start, f.median_amp_0_4k, l)?;
        }
        Ok(())
    })
}

// ---- classify-context ----

#[derive(Debug, Args)]
pub struct ClassifyContextArgs {
    /// Sensor trace CSV with columns t,z,prox_state
    #[arg(long)]
    pub trace: PathBuf,
    /// Model JSON (training pairs, k, feature_kind, threshold, delta_s); a synthetic training set is used if omitted
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Seed of the synthetic training set
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Override the model's window length (30 or 60 s)
    #[arg(long)]
    pub delta_s: Option<u32>,
    /// Override the model's proximity threshold
    #[arg(long)]
    pub threshold: Option<u32>,
    /// Output CSV (stdout if omitted)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn classify_context(a: ClassifyContextArgs) -> Result<()> {
    let mut model = match &a.model {
        Some(p) => read_json::<ContextModel>(p)?,
        None => {
            let spec = context::ClusterSpec { delta_s: a.delta_s.unwrap_or(context::DEFAULT_DELTA_S), ..Default::default() };
            let data = context::synth_dataset(&spec, 60, &mut ChaCha8Rng::seed_from_u64(a.seed));
            log::info!("no --model given; using a synthetic training set (seed {})", a.seed);
            ContextModel::fit(&data, context::DEFAULT_K, FeatureKind::Mean)?
        }
    };
    if let Some(d) = a.delta_s {
        model.delta_s = d;
    }
    if let Some(t) = a.threshold {
        model.threshold = t;
    }
    model.validate()?;
    let rows = context::read_trace_csv(open(&a.trace)?)?;
    let windows = context::windows_from_trace(&rows, model.delta_s)?;
    let spans = context::detect_switch(&windows, &model)?;
    with_output(a.out.as_deref(), |w| {
        writeln!(w, "window_start,label")?;
        for s in &spans {
            writeln!(w, "{},{}", s.start, s.label)?;
        }
        Ok(())
    })
}

// ---- simulate ----

/// A full profile spec, or one of the four reference rows (1-based).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProfileSpecInput {
    Row {
        row: usize,
        n_s: usize,
        n_t: usize,
        #[serde(default)]
        seed: u64,
    },
    Full(ProfileSpec),
}

impl ProfileSpecInput {
    pub fn resolve(&self) -> Result<ProfileSpec> {
        match *self {
            ProfileSpecInput::Row { row, n_s, n_t, seed } => {
                if !(1..=ProfileSpec::REFERENCE_ROWS.len()).contains(&row) {
                    return Err(CliError::Usage(format!("reference row {row} not in 1..=4")));
                }
                Ok(ProfileSpec::reference(row - 1, n_s, n_t, seed))
            }
            ProfileSpecInput::Full(ref s) => Ok(s.clone()),
        }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Profile spec JSON: {n_s, n_t, rho, mean, std, seed} or {row, n_s, n_t, seed}
    #[arg(long)]
    pub profile_spec: PathBuf,
    /// Number of walking volunteers
    #[arg(long, default_value_t = 5)]
    pub agents: usize,
    /// Probability that a visited cell is contributed
    #[arg(long, default_value_t = 0.6)]
    pub contribute_prob: f64,
    /// Mask cells uniformly at random with this missing fraction instead of simulating walkers
    #[arg(long)]
    pub missing: Option<f64>,
    /// Mobility parameters JSON (transition matrix, speeds, step period)
    #[arg(long)]
    pub mobility: Option<PathBuf>,
    /// Standard deviation of additive sensor noise in dB
    #[arg(long)]
    pub noise_db: Option<f64>,
    /// Seed of the sampling process
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Origin MGRS reference (10 m) of the road; a fixed reference location if omitted
    #[arg(long)]
    pub origin: Option<MgrsIndex>,
    /// Start time of the first temporal cell, seconds
    #[arg(long, default_value_t = 0.0)]
    pub t0: f64,
    /// Output directory: truth.csv (+ lattice sidecar), samples.csv, lattice.json, records.jsonl
    #[arg(long, default_value = "sim")]
    pub out_dir: PathBuf,
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let spec = read_json::<ProfileSpecInput>(&a.profile_spec)?.resolve()?;
    let generated = synth_profile(&spec)?;
    let mut lattice = Lattice::abstract_grid(spec.n_s, spec.n_t);
    if let Some(o) = a.origin {
        lattice = Lattice::new(spec.n_s, spec.n_t, o)?;
    }
    lattice.t0 = a.t0;
    let truth = NoiseProfile::from_dense(lattice.clone(), generated.dense()?)?;
    let samples = match a.missing {
        Some(f) => mask_uniform(&truth, f, a.seed)?,
        None => {
            let params: MobilityParams = match &a.mobility {
                Some(p) => read_json(p)?,
                None => MobilityParams::default(),
            };
            let cfg = CampaignConfig { n_agents: a.agents, contribute_prob: a.contribute_prob, seed: a.seed, noise_db: a.noise_db };
            run_campaign(&truth, &params, &cfg)?.samples
        }
    };
    save_profile(&a.out_dir.join("truth.csv"), &truth)?;
    let mut w = create(&a.out_dir.join("samples.csv"))?;
    samples.write_csv(&mut w)?;
    w.flush()?;
    write_json(Some(&a.out_dir.join("lattice.json")), &lattice)?;
    let mut w = create(&a.out_dir.join("records.jsonl"))?;
    for r in records_for_samples(&samples)? {
        serde_json::to_writer(&mut w, &r).map_err(noisemap::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    log::info!("{} of {} cells sampled ({:.1}% missing)", samples.len(), lattice.len(), 100.0 * samples.missing_fraction());
    Ok(())
}

// ---- reconstruct ----

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    /// Samples CSV with columns g,t,x (0-based cells)
    #[arg(long)]
    pub samples: PathBuf,
    /// Lattice JSON
    #[arg(long)]
    pub lattice: PathBuf,
    #[arg(long, value_enum, default_value_t = MethodArg::L1)]
    pub method: MethodArg,
    /// l1: relative radius of the data-consistency ball
    #[arg(long, default_value_t = L1Config::default().eps_rel)]
    pub eps: f64,
    /// l1: iteration cap
    #[arg(long, default_value_t = L1Config::default().max_iter)]
    pub max_iter: usize,
    /// l1: transform (dct over the whole vector, or separable dct2d)
    #[arg(long, value_enum, default_value_t = KindArg::Dct)]
    pub kind: KindArg,
    /// Output profile CSV (stdout if omitted); a lattice sidecar is written next to it
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Diagnostics JSON
    #[arg(long)]
    pub diagnostics: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    L1,
    Li,
    Nni,
    Gpi,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::L1 => Method::L1,
            MethodArg::Li => Method::Li,
            MethodArg::Nni => Method::Nni,
            MethodArg::Gpi => Method::Gpi,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Dct,
    Dct2d,
}

impl From<KindArg> for TransformKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Dct => TransformKind::Dct,
            KindArg::Dct2d => TransformKind::Dct2d,
        }
    }
}

#[derive(Serialize)]
struct ReconReport<'a> {
    method: Method,
    samples: usize,
    cells: usize,
    missing_fraction: f64,
    diagnostics: &'a noisemap::reconstruct::Diagnostics,
    #[serde(skip_serializing_if = "Option::is_none")]
    posterior_std: Option<&'a Vec<f64>>,
}

fn reconstruct_cmd(a: ReconstructArgs) -> Result<()> {
    let lattice: Lattice = read_json(&a.lattice)?;
    lattice.validate()?;
    let samples = SampleSet::read_csv(open(&a.samples)?, lattice)?;
    let cfg = ReconConfig {
        l1: L1Config { eps_rel: a.eps, max_iter: a.max_iter, kind: a.kind.into(), ..L1Config::default() },
        ..ReconConfig::default()
    };
    let method = Method::from(a.method);
    let r = reconstruct(&samples, method, &cfg)?;
    match &a.out {
        Some(p) => save_profile(p, &r.profile)?,
        None => with_output(None, |w| Ok(r.profile.write_csv(w)?))?,
    }
    if let Some(p) = &a.diagnostics {
        let report = ReconReport {
            method,
            samples: samples.len(),
            cells: samples.lattice().len(),
            missing_fraction: samples.missing_fraction(),
            diagnostics: &r.diagnostics,
            posterior_std: r.std.as_ref(),
        };
        write_json(Some(p), &report)?;
    }
    Ok(())
}

// ---- sweep ----

/// Sweep settings as read from `--config`; flags override.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub profile: Option<ProfileSpecInput>,
    pub truth: Option<PathBuf>,
    pub missing: Option<Vec<f64>>,
    pub methods: Option<Vec<Method>>,
    pub trials: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Experiment config JSON; flags given on the command line take precedence
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Ground-truth profile CSV
    #[arg(long, conflicts_with = "profile_spec")]
    pub truth: Option<PathBuf>,
    /// Lattice JSON for --truth (defaults to its sidecar)
    #[arg(long)]
    pub lattice: Option<PathBuf>,
    /// Generate the ground truth from this profile spec JSON instead
    #[arg(long)]
    pub profile_spec: Option<PathBuf>,
    /// Missing fractions [default: 0.3,0.5,0.7,0.9]
    #[arg(long, value_delimiter = ',')]
    pub missing: Option<Vec<f64>>,
    /// Random masks per fraction [default: 20]
    #[arg(long)]
    pub trials: Option<usize>,
    /// Methods, comma separated, or `all` [default: all]
    #[arg(long)]
    pub methods: Option<String>,
    /// Master seed of the masks [default: 1]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output CSV method,missing_frac,trial,rms_error (stdout if omitted)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn sweep_cmd(a: SweepArgs) -> Result<()> {
    let file: ExperimentConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => ExperimentConfig::default(),
    };
    let truth = if let Some(p) = a.truth.as_ref() {
        load_profile(p, a.lattice.as_deref())?
    } else if let Some(p) = a.profile_spec.as_ref() {
        synth_profile(&read_json::<ProfileSpecInput>(p)?.resolve()?)?
    } else if let Some(p) = file.truth.as_ref() {
        load_profile(p, a.lattice.as_deref())?
    } else if let Some(s) = file.profile.as_ref() {
        synth_profile(&s.resolve()?)?
    } else {
        return Err(CliError::Usage("give --truth, --profile-spec or a config with truth/profile".into()));
    };
    let cfg = SweepConfig {
        missing: a.missing.or(file.missing).unwrap_or_else(|| vec![0.3, 0.5, 0.7, 0.9]),
        methods: match a.methods {
            Some(m) => parse_methods(&m).map_err(CliError::Usage)?,
            None => file.methods.unwrap_or_else(|| Method::ALL.to_vec()),
        },
        trials: a.trials.or(file.trials).unwrap_or(20),
        seed: a.seed.or(file.seed).unwrap_or(1),
        recon: ReconConfig::default(),
    };
    let rows = sweep(&truth, &cfg)?;
    with_output(a.out.as_deref().or(file.out.as_deref()), |w| Ok(write_sweep_csv(w, &rows)?))?;
    for (m, f, e) in summarize(&rows) {
        log::info!("{m} at {:.0}% missing: mean rms {e:.3} dB", 100.0 * f);
    }
    Ok(())
}

// ---- analyze-compress ----

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Profile CSV
    #[arg(long)]
    pub profile: PathBuf,
    /// Lattice JSON (defaults to the profile's sidecar)
    #[arg(long)]
    pub lattice: Option<PathBuf>,
    /// Target RMS approximation errors in dB
    #[arg(long, value_delimiter = ',', default_value = "1.0")]
    pub target: Vec<f64>,
    #[arg(long, value_enum, default_value_t = KindArg::Dct)]
    pub kind: KindArg,
    /// Report JSON (stdout if omitted)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// CSV of sorted coefficient magnitudes (rank,magnitude)
    #[arg(long)]
    pub magnitudes: Option<PathBuf>,
}

fn analyze(a: AnalyzeArgs) -> Result<()> {
    let profile = load_profile(&a.profile, a.lattice.as_deref())?;
    let targets = a.target;
    let mut report = compressibility(&profile, &targets, a.kind.into())?;
    if let Some(p) = &a.magnitudes {
        let mut w = create(p)?;
        writeln!(w, "rank,magnitude")?;
        for (i, m) in report.sorted_coefficient_magnitudes.iter().enumerate() {
            writeln!(w, "{},{}", i + 1, m)?;
        }
        w.flush()?;
    }
    report.sorted_coefficient_magnitudes.clear();
    write_json(a.out.as_deref(), &report)
}

// ---- serve ----

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "NOISEMAP_PORT", default_value_t = 8080)]
    pub port: u16,
    #[arg(long, env = "NOISEMAP_HOST", default_value = "127.0.0.1")]
    pub host: String,
    /// Store directory (records.jsonl and maps/); in memory if omitted
    #[arg(long, env = "NOISEMAP_STORE")]
    pub store: Option<PathBuf>,
    /// Periodic reconstruction JSON {lattice, method, interval_s}
    #[arg(long)]
    pub schedule: Option<PathBuf>,
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Builder::new_multi_thread().enable_all().build()?)
}

fn serve(a: ServeArgs) -> Result<()> {
    let repo = match &a.store {
        Some(p) => Repository::open(p)?,
        None => Repository::in_memory(),
    };
    let schedule: Option<ReconSchedule> = a.schedule.as_deref().map(read_json).transpose()?;
    let state = AppState::new(repo);
    runtime()?.block_on(async move {
        let listener = tokio::net::TcpListener::bind((a.host.as_str(), a.port)).await?;
        log::info!("listening on {}", listener.local_addr()?);
        if let Some(s) = schedule {
            let state = state.clone();
            tokio::spawn(async move {
                let mut tick = tokio::time::interval(std::time::Duration::from_secs(s.interval_s.max(1)));
                loop {
                    tick.tick().await;
                    let now = std::time::SystemTime::now()
                        .duration_since(std::time::UNIX_EPOCH)
                        .map(|d| d.as_secs_f64())
                        .unwrap_or(0.0);
                    match state.reconstruct(s.window_at(now), s.method).await {
                        Ok(m) => log::info!("scheduled map version {}", m.version),
                        Err(e) => log::warn!("scheduled reconstruction skipped: {e}"),
                    }
                }
            });
        }
        http::serve(listener, state).await?;
        Ok(())
    })
}

// ---- query ----

#[derive(Debug, Args)]
pub struct QueryArgs {
    /// Base URL of a running service
    #[arg(long, conflicts_with = "store")]
    pub server: Option<String>,
    /// Local store directory to query directly
    #[arg(long)]
    pub store: Option<PathBuf>,
    /// min_lat,min_lon,max_lat,max_lon
    #[arg(long)]
    pub bbox: Option<String>,
    /// Comma-separated MGRS cells
    #[arg(long)]
    pub cells: Option<String>,
    #[arg(long)]
    pub from: f64,
    #[arg(long)]
    pub to: f64,
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    /// Output JSON (stdout if omitted)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn query(a: QueryArgs) -> Result<()> {
    let params = NoiseParams { bbox: a.bbox, cells: a.cells, from: a.from, to: a.to, method: a.method.map(Method::from) };
    let cells: Vec<QueryCell> = match (&a.server, &a.store) {
        (Some(url), None) => {
            params.to_request()?;
            let url = format!("{}/noise?{}", url.trim_end_matches('/'), params.to_query_string());
            runtime()?.block_on(async {
                let resp = reqwest::get(&url).await.map_err(|e| CliError::Http(e.to_string()))?;
                let status = resp.status();
                let body = resp.text().await.map_err(|e| CliError::Http(e.to_string()))?;
                if !status.is_success() {
                    return Err(CliError::Http(format!("{status}: {body}")));
                }
                serde_json::from_str(&body).map_err(|e| CliError::Http(e.to_string()))
            })?
        }
        (None, Some(dir)) => Repository::open(dir)?.query(&params.to_request()?)?,
        _ => return Err(CliError::Usage("give exactly one of --server or --store".into())),
    };
    write_json(a.out.as_deref(), &cells)
}
