//! File formats: `.flo` flow, PFM disparity, PPM/PGM images, checkpoints,
//! config text and the on-disk dataset layout.

mod checkpoint;
mod config_text;
mod dataset;
mod flo;
mod pfm;
mod pnm;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointEntry, CHECKPOINT_VERSION};
pub use config_text::{config_to_text, parse_config, read_config};
pub use dataset::{list_samples, load_sample, save_sample, SampleFiles};
pub use flo::{decode_flo, encode_flo, read_flo, write_flo, FLO_MAGIC};
pub use pfm::{decode_pfm, encode_pfm, read_pfm, write_pfm};
pub use pnm::{decode_pgm, decode_ppm, encode_pgm, encode_ppm, read_pgm, read_ppm, write_pgm, write_ppm};

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::Result;

pub(crate) use flo::expect_single;

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(name);
    let res = (|| -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if res.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(res?)
}

/// Whitespace-separated ASCII header tokens, skipping `#` comments when
/// asked. Leaves `pos` just past the single whitespace byte that ends the
/// last token read.
struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    comments: bool,
}

impl<'a> HeaderReader<'a> {
    fn new(bytes: &'a [u8], comments: bool) -> Self {
        HeaderReader { bytes, pos: 0, comments }
    }

    fn token(&mut self) -> Option<&'a str> {
        loop {
            let b = *self.bytes.get(self.pos)?;
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if self.comments && b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n') {
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(|c| !c.is_ascii_whitespace()) {
            self.pos += 1;
        }
        let tok = std::str::from_utf8(&self.bytes[start..self.pos]).ok()?;
        // one separator byte before binary data
        if self.pos < self.bytes.len() {
            self.pos += 1;
        }
        Some(tok)
    }

    fn number<N: std::str::FromStr>(&mut self) -> Option<N> {
        self.token()?.parse().ok()
    }

    fn rest(&self) -> &'a [u8] {
        &self.bytes[self.pos.min(self.bytes.len())..]
    }
}
