//! Weight files: a magic line, a JSON header line with the configuration and
//! array shapes, then every parameter array as little-endian `f64`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::net::PolicyNet;
use super::PolicyConfig;
use crate::error::{Error, Result};

const MAGIC: &str = "primer-policy";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    config: PolicyConfig,
    shapes: Vec<(usize, usize)>,
}

pub fn write_checkpoint<W: Write>(net: &PolicyNet, mut w: W) -> Result<()> {
    writeln!(w, "{MAGIC}")?;
    let header = Header { version: VERSION, config: net.cfg.clone(), shapes: net.shapes() };
    serde_json::to_writer(&mut w, &header)?;
    writeln!(w)?;
    for p in net.params() {
        for v in p {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint<R: BufRead>(mut r: R) -> Result<PolicyNet> {
    let mut line = String::new();
    r.read_line(&mut line)?;
    if line.trim_end() != MAGIC {
        return Err(Error::Checkpoint("not a policy checkpoint".into()));
    }
    line.clear();
    r.read_line(&mut line)?;
    let header: Header = serde_json::from_str(line.trim_end())?;
    if header.version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {}", header.version)));
    }
    header.config.validate()?;
    let mut net = PolicyNet::zeros(&header.config);
    if net.shapes() != header.shapes {
        return Err(Error::Checkpoint("layer shapes do not match the configuration".into()));
    }
    let mut buf = [0u8; 8];
    for p in net.params_mut() {
        for v in p.iter_mut() {
            r.read_exact(&mut buf).map_err(|e| Error::Checkpoint(format!("truncated parameters: {e}")))?;
            *v = f64::from_le_bytes(buf);
        }
    }
    if r.read(&mut buf)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after parameters".into()));
    }
    if !net.is_finite() {
        return Err(Error::Checkpoint("non-finite weight".into()));
    }
    Ok(net)
}

pub fn save_checkpoint(net: &PolicyNet, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(net, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<PolicyNet> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
