use std::io;
use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    File { path: PathBuf, source: io::Error },

    #[error("{what}: {msg} (byte offset {offset})")]
    Decode {
        what: &'static str,
        offset: u64,
        msg: String,
    },

    #[error(transparent)]
    Core(#[from] csi_fusion_core::Error),

    #[error("{0}")]
    Usage(String),

    #[error("network: {0}")]
    Network(String),

    #[error("{0}")]
    Protocol(String),

    #[error("{0}")]
    Io(#[from] io::Error),
}

impl Error {
    pub fn decode(what: &'static str, offset: u64, msg: impl Into<String>) -> Self {
        Error::Decode {
            what,
            offset,
            msg: msg.into(),
        }
    }

    pub fn file(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }

    /// 1 usage, 2 bad or missing data, 3 runtime failure.
    pub fn exit_code(&self) -> i32 {
        use csi_fusion_core::Error as C;
        match self {
            Error::Usage(_) => 1,
            Error::File { .. } | Error::Decode { .. } => 2,
            Error::Core(C::Diverged { .. } | C::BackwardTwice) => 3,
            Error::Core(_) => 2,
            Error::Network(_) | Error::Protocol(_) | Error::Io(_) => 3,
        }
    }
}

/// Bounds-checked little/big-endian reader that reports failing offsets.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

macro_rules! read_int {
    ($name:ident, $t:ty, $conv:ident) => {
        pub fn $name(&mut self) -> Result<$t> {
            let b = self.take(std::mem::size_of::<$t>())?;
            Ok(<$t>::$conv(b.try_into().expect("sized")))
        }
    };
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8], what: &'static str) -> Self {
        Self { buf, pos: 0, what }
    }

    pub fn pos(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn is_empty(&self) -> bool {
        self.pos == self.buf.len()
    }

    pub fn err(&self, msg: impl Into<String>) -> Error {
        Error::decode(self.what, self.pos as u64, msg)
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(self.err(format!(
                "truncated: need {n} bytes, {} left",
                self.remaining()
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    read_int!(u8, u8, from_le_bytes);
    read_int!(u16_le, u16, from_le_bytes);
    read_int!(u32_le, u32, from_le_bytes);
    read_int!(u16_be, u16, from_be_bytes);
    read_int!(u32_be, u32, from_be_bytes);
    read_int!(i16_le, i16, from_le_bytes);
    read_int!(f32_le, f32, from_le_bytes);

    /// `n` little-endian f32 values.
    pub fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = n
            .checked_mul(4)
            .ok_or_else(|| self.err(format!("{n} values overflow")))?;
        let b = self.take(bytes)?;
        Ok(b.chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("sized")))
            .collect())
    }
}

pub(crate) fn put_f32s(out: &mut Vec<u8>, values: &[f32]) {
    out.reserve(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub(crate) fn read_file(path: &std::path::Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::file(path, e))
}

pub(crate) fn write_file(path: &std::path::Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::file(path, e))
}
