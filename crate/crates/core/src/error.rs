use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("class {class} has no bundles")]
    EmptyClass { class: u16 },

    #[error("all-zero amplitude row at packet {row}; rescaling undefined")]
    ZeroPowerRow { row: usize },

    #[error("series of length {len} is shorter than the filter window {window}")]
    SeriesTooShort { len: usize, window: usize },

    #[error("record has {rows} packets but the window needs {window}")]
    RecordTooShort { rows: usize, window: usize },

    #[error("subcarrier index {index} outside [{lo}, {hi}]")]
    SubcarrierOutOfRange { index: i32, lo: i32, hi: i32 },

    #[error("backward called twice on the same tape")]
    BackwardTwice,

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },

    #[error("class with fewer than two points: {0}")]
    SingletonClass(u16),
}
