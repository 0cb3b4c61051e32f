//! Flat binary checkpoint format.
//!
//! ```text
//! magic    8 bytes   "BDMLPCKP"
//! version  u32 LE
//! n        u32 LE    number of layer sizes (layers + 1)
//! sizes    n × u64 LE
//! params   f64 LE, per layer: weights row-major (out × in), then bias
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Dense, Mlp};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"BDMLPCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(net: &Mlp, mut w: W) -> Result<()> {
    let sizes = net.sizes();
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(sizes.len() as u32).to_le_bytes())?;
    for s in &sizes {
        w.write_all(&(*s as u64).to_le_bytes())?;
    }
    for layer in net.layers() {
        for r in 0..layer.output_dim() {
            for c in 0..layer.input_dim() {
                w.write_all(&layer.weights[(r, c)].to_le_bytes())?;
            }
        }
        for b in layer.bias.iter() {
            w.write_all(&b.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_array<const N: usize, R: Read>(r: &mut R, what: &str) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Checkpoint(format!("truncated {what}: {e}")))?;
    Ok(buf)
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Mlp> {
    let magic: [u8; 8] = read_array(&mut r, "magic")?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = u32::from_le_bytes(read_array(&mut r, "version")?);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let n = u32::from_le_bytes(read_array(&mut r, "header")?) as usize;
    if !(2..=64).contains(&n) {
        return Err(Error::Checkpoint(format!("implausible layer count {n}")));
    }
    let mut sizes = Vec::with_capacity(n);
    for _ in 0..n {
        let s = u64::from_le_bytes(read_array(&mut r, "layer sizes")?);
        if s == 0 || s > (1 << 24) {
            return Err(Error::Checkpoint(format!("implausible layer size {s}")));
        }
        sizes.push(s as usize);
    }
    let mut layers = Vec::with_capacity(n - 1);
    for w in sizes.windows(2) {
        let mut layer = Dense::zeros(w[0], w[1]);
        for row in 0..w[1] {
            for col in 0..w[0] {
                layer.weights[(row, col)] = f64::from_le_bytes(read_array(&mut r, "weights")?);
            }
        }
        for b in layer.bias.iter_mut() {
            *b = f64::from_le_bytes(read_array(&mut r, "bias")?);
        }
        layers.push(layer);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after parameters".into()));
    }
    Mlp::from_layers(layers)
}

impl Mlp {
    pub fn save(&self, path: &Path) -> Result<()> {
        write_checkpoint(self, BufWriter::new(File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_checkpoint(BufReader::new(File::open(path)?))
    }
}
