//! Versioned little-endian binary checkpoints of a [`PolicyNetwork`].
//!
//! Layout: magic `NPGN`, format version (u32), leaky slope, norm epsilon and
//! momentum (f64), hidden layer count (u32), then per hidden layer its input
//! and output widths (u32), a normalization flag (u8), weights, biases and,
//! when flagged, gamma, beta, running mean and running variance; finally the
//! output layer's widths, weights and biases. Parameters are stored as raw
//! f64 bits, so a round trip is bit-exact.

use std::io::{self, Read, Write};

use thiserror::Error;

use super::network::{Dense, Hidden, Norm, PolicyNetwork};

const MAGIC: &[u8; 4] = b"NPGN";
const VERSION: u32 = 1;
/// Guards allocations when reading corrupt files.
const MAX_WIDTH: u32 = 1 << 16;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a policy checkpoint")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn save<W: Write>(net: &PolicyNetwork, mut w: W) -> Result<(), CheckpointError> {
    w.write_all(MAGIC)?;
    put_u32(&mut w, VERSION)?;
    for v in [net.slope, net.eps, net.momentum] {
        put_f64(&mut w, v)?;
    }
    put_u32(&mut w, net.hidden.len() as u32)?;
    for h in &net.hidden {
        put_dense(&mut w, &h.dense)?;
        match &h.norm {
            Some(n) => {
                w.write_all(&[1])?;
                for t in [&n.gamma, &n.beta, &n.mean, &n.var] {
                    put_slice(&mut w, t)?;
                }
            }
            None => w.write_all(&[0])?,
        }
    }
    put_dense(&mut w, &net.output)?;
    w.flush()?;
    Ok(())
}

pub fn load<R: Read>(mut r: R) -> Result<PolicyNetwork, CheckpointError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = get_u32(&mut r)?;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let slope = get_f64(&mut r)?;
    let eps = get_f64(&mut r)?;
    let momentum = get_f64(&mut r)?;
    let layers = get_u32(&mut r)?;
    if layers > 64 {
        return Err(CheckpointError::Corrupt(format!("{layers} hidden layers")));
    }
    let mut hidden = Vec::with_capacity(layers as usize);
    for _ in 0..layers {
        let dense = get_dense(&mut r)?;
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        let norm = match flag[0] {
            0 => None,
            1 => {
                let n = dense.n_out;
                Some(Norm {
                    gamma: get_vec(&mut r, n)?,
                    beta: get_vec(&mut r, n)?,
                    mean: get_vec(&mut r, n)?,
                    var: get_vec(&mut r, n)?,
                })
            }
            f => return Err(CheckpointError::Corrupt(format!("normalization flag {f}"))),
        };
        if let Some(prev) = hidden.last() {
            let prev: &Hidden = prev;
            if prev.dense.n_out != dense.n_in {
                return Err(CheckpointError::Corrupt("layer widths do not chain".into()));
            }
        }
        hidden.push(Hidden { dense, norm });
    }
    let output = get_dense(&mut r)?;
    if hidden.last().is_some_and(|h| h.dense.n_out != output.n_in) {
        return Err(CheckpointError::Corrupt("output layer width does not chain".into()));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(CheckpointError::Corrupt("trailing bytes".into()));
    }
    Ok(PolicyNetwork { hidden, output, slope, eps, momentum })
}

pub fn save_file(net: &PolicyNetwork, path: &std::path::Path) -> Result<(), CheckpointError> {
    save(net, io::BufWriter::new(std::fs::File::create(path)?))
}

pub fn load_file(path: &std::path::Path) -> Result<PolicyNetwork, CheckpointError> {
    load(io::BufReader::new(std::fs::File::open(path)?))
}

fn put_u32(w: &mut impl Write, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_f64(w: &mut impl Write, v: f64) -> io::Result<()> {
    w.write_all(&v.to_bits().to_le_bytes())
}

fn put_slice(w: &mut impl Write, v: &[f64]) -> io::Result<()> {
    v.iter().try_for_each(|&x| put_f64(w, x))
}

fn put_dense(w: &mut impl Write, d: &Dense) -> io::Result<()> {
    put_u32(w, d.n_in as u32)?;
    put_u32(w, d.n_out as u32)?;
    put_slice(w, &d.w)?;
    put_slice(w, &d.b)
}

fn get_u32(r: &mut impl Read) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_f64(r: &mut impl Read) -> io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_bits(u64::from_le_bytes(b)))
}

fn get_vec(r: &mut impl Read, n: usize) -> io::Result<Vec<f64>> {
    (0..n).map(|_| get_f64(r)).collect()
}

fn get_dense(r: &mut impl Read) -> Result<Dense, CheckpointError> {
    let n_in = get_u32(r)?;
    let n_out = get_u32(r)?;
    if n_in == 0 || n_out == 0 || n_in > MAX_WIDTH || n_out > MAX_WIDTH {
        return Err(CheckpointError::Corrupt(format!("layer shape {n_in}x{n_out}")));
    }
    let (n_in, n_out) = (n_in as usize, n_out as usize);
    Ok(Dense { n_in, n_out, w: get_vec(r, n_in * n_out)?, b: get_vec(r, n_out)? })
}
