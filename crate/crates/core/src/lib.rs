//! Progressive Compressed Records (PCR).
//!
//! A PCR stores a batch of progressive JPEGs with their scans regrouped by
//! fidelity: labels first, then scan group 1 of every image, then scan group
//! 2, and so on. Reading a prefix of the file yields every image at reduced
//! fidelity; reading the whole file yields the original bytes.
//!
//! - [`jpeg_scan`] splits progressive JPEGs into header and scans.
//! - [`container`] encodes, writes and indexes record files.
//! - [`reader`] reads records up to a scan group and reassembles images.
//! - [`perf_model`] predicts loader and system throughput from mean sizes.
//! - [`sim`] simulates a token-bucket-limited loader feeding a compute unit.
//! - [`fidelity`] measures reconstruction quality with MS-SSIM.
//! - [`autotune`] picks a scan group by gradient cosine similarity.

pub mod container;
pub mod autotune;
pub mod decode;
pub mod error;
pub mod fidelity;
pub mod jpeg_scan;
pub mod perf_model;
pub mod reader;
pub mod sim;
pub mod synth;

pub use container::{
    encode_record, read_index, write_record, PcrIndex, PcrRecord, RecordBuilder, SampleMeta,
};
pub use decode::{DecodeError, ImageDecoder, JpegDecoder, RgbImage};
pub use error::{Error, Result};
pub use jpeg_scan::{entropy_skip, parse_scans, ByteRange, ScanError, ScanMap};
pub use perf_model::{SizeStats, ThroughputModel};
pub use reader::{assemble, iterate, read_prefix, AssembledImage, FidelityRequest, PrefixData};
pub use sim::{simulate, sweep, SimConfig, SimError, SimTrace};
pub use fidelity::{fidelity_report, mssim, FidelityReport, MssimError};
pub use autotune::{score, GradModel, TunePolicy, TuneSet, Tuner};
