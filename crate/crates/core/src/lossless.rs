//! Stage-4 lossless packing: every payload is compressed with a DEFLATE
//! coder (gzip stream) and a block-sorting coder (bzip2 stream), and the
//! smaller result is kept. The choice costs one flag bit in the container header.

use std::io::{Read, Write};

use bzip2::read::BzDecoder;
use bzip2::write::BzEncoder;
use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::{Compression, GzBuilder};

use crate::error::{Error, Result};

/// DEFLATE level used for every gzip stream.
pub const DEFLATE_LEVEL: u32 = 9;
/// bzip2 block size in units of 100 kB.
pub const BZIP2_BLOCK: u32 = 9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Backend {
    /// LZ77 + Huffman, gzip framing.
    Deflate = 0,
    /// BWT + MTF + Huffman, bzip2 framing.
    Bwt = 1,
}

impl Backend {
    pub fn from_bit(bit: bool) -> Self {
        if bit {
            Self::Bwt
        } else {
            Self::Deflate
        }
    }

    pub fn bit(self) -> bool {
        self == Self::Bwt
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Deflate => "gzip",
            Self::Bwt => "bzip2",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LosslessChoice {
    pub backend: Backend,
    pub payload: Vec<u8>,
}

pub fn compress_with(backend: Backend, data: &[u8]) -> Vec<u8> {
    let result = match backend {
        Backend::Deflate => {
            // Fixed header fields (mtime 0, no name) keep the output deterministic.
            let mut enc: GzEncoder<Vec<u8>> = GzBuilder::new()
                .mtime(0)
                .write(Vec::with_capacity(data.len() / 2 + 32), Compression::new(DEFLATE_LEVEL));
            enc.write_all(data).and_then(|_| enc.finish())
        }
        Backend::Bwt => {
            let mut enc = BzEncoder::new(
                Vec::with_capacity(data.len() / 2 + 64),
                bzip2::Compression::new(BZIP2_BLOCK),
            );
            enc.write_all(data).and_then(|_| enc.finish())
        }
    };
    result.expect("in-memory compression cannot fail")
}

pub fn decompress_with(backend: Backend, payload: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let outcome = match backend {
        Backend::Deflate => {
            let mut dec = GzDecoder::new(payload);
            dec.read_to_end(&mut out).map(|_| dec.into_inner().len())
        }
        Backend::Bwt => {
            let mut dec = BzDecoder::new(payload);
            dec.read_to_end(&mut out).map(|_| dec.into_inner().len())
        }
    };
    match outcome {
        Ok(0) => Ok(out),
        Ok(trailing) => Err(Error::Corrupt(format!(
            "{} stream followed by {trailing} unexpected bytes",
            backend.name()
        ))),
        Err(e) => Err(Error::Corrupt(format!("{} stream: {e}", backend.name()))),
    }
}

/// Compress with both backends and keep the smaller output; ties go to DEFLATE.
pub fn compress_dual(data: &[u8]) -> LosslessChoice {
    let deflate = compress_with(Backend::Deflate, data);
    let bwt = compress_with(Backend::Bwt, data);
    if bwt.len() < deflate.len() {
        LosslessChoice {
            backend: Backend::Bwt,
            payload: bwt,
        }
    } else {
        LosslessChoice {
            backend: Backend::Deflate,
            payload: deflate,
        }
    }
}

pub fn decompress(choice: &LosslessChoice) -> Result<Vec<u8>> {
    decompress_with(choice.backend, &choice.payload)
}
