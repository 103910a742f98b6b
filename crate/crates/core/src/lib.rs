//! Noise mapping from crowdsourced phone measurements.
//!
//! The pipeline runs from raw PCM audio to A-weighted equivalent levels
//! ([`acoustics`]), filters out voiced and pocketed windows ([`speech`],
//! [`context`]), places readings on an MGRS lattice ([`gridref`]) and
//! reconstructs the full map from the sparse samples ([`reconstruct`]).
//! [`simulate`] generates synthetic ground truth and sampling campaigns, and
//! [`server`] holds the repository behind the ingestion/query service.

pub mod acoustics;
pub mod basis;
pub mod context;
pub mod error;
pub mod experiment;
pub mod gridref;
pub mod reconstruct;
pub mod server;
pub mod simulate;
pub mod speech;

pub use acoustics::{AWeightFilter, CalibrationOffset, LeqReading, PcmFrame};
pub use basis::{CompressibilityReport, TransformBasis, TransformKind};
pub use context::{ContextLabel, ContextModel, FeatureKind, KnnModel, SensorWindow, StreamLabel};
pub use error::{Error, Result};
pub use gridref::{Lattice, MgrsIndex, NoiseProfile, Precision, SampleRecord};
pub use reconstruct::{Method, ReconConfig, ReconResult, Sample, SampleSet};
pub use server::{MapVersion, QueryRequest, Repository};
pub use simulate::{MobilityParams, ProfileSpec};
pub use speech::{SpectralFeature, SpeechLabel, SpeechThreshold};
