use std::io;
use std::path::PathBuf;

use crate::decode::DecodeError;
use crate::jpeg_scan::ScanError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised while encoding, writing or reading PCR files.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("sample {sample_id}: {source}")]
    Scan {
        sample_id: u64,
        #[source]
        source: ScanError,
    },
    #[error("record has no images")]
    EmptyRecord,
    #[error("scan group count {0} outside 1..=64")]
    InvalidGroupCount(usize),
    #[error("duplicate sample id {0} in record")]
    DuplicateSampleId(u64),
    #[error("sample {sample_id}: {len} bytes exceeds the per-image size limit")]
    ImageTooLarge { sample_id: u64, len: usize },
    #[error("sample {sample_id}: source name longer than 65535 bytes")]
    NameTooLong { sample_id: u64 },
    #[error("not a PCR file (bad magic)")]
    BadMagic,
    #[error("unsupported PCR format version {0}")]
    VersionUnsupported(u16),
    #[error("corrupt index: {0}")]
    CorruptIndex(String),
    #[error("payload truncated in scan group {group}: expected {expected} bytes, got {actual}")]
    TruncatedPayload {
        group: usize,
        expected: u64,
        actual: u64,
    },
    #[error("scan group {requested} unavailable (record has {available} groups)")]
    FidelityUnavailable { requested: usize, available: usize },
    #[error("image {0} has no bytes in scan group 1")]
    ZeroLengthImage(usize),
    #[error("image {index} out of range ({n_images} images)")]
    ImageOutOfRange { index: usize, n_images: usize },
    #[error("scan group {requested} not loaded (prefix holds {loaded} groups)")]
    GroupNotLoaded { requested: usize, loaded: usize },
    #[error("{}: {source}", path.display())]
    File {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Decode(#[from] DecodeError),
}

impl Error {
    pub(crate) fn in_file(self, path: impl Into<PathBuf>) -> Error {
        match self {
            e @ Error::File { .. } => e,
            e => Error::File {
                path: path.into(),
                source: Box::new(e),
            },
        }
    }

    /// The innermost error, looking through file context.
    pub fn root(&self) -> &Error {
        match self {
            Error::File { source, .. } => source.root(),
            e => e,
        }
    }
}
