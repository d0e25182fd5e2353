//! Binary weight files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "ATNN" | u32 version | u32 config length | config TOML
//! u32 tensor count
//! per tensor: u32 name length | name | u8 dtype | u32 rank | u64 dims[rank] | payload
//! ```
//!
//! `dtype` is 1 for f32 and 2 for f64. Tensors appear in [`Network::tensors`] order.

use std::io::{self, Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::config::NetworkConfig;
use super::model::{build_network, Network};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"ATNN";
pub const VERSION: u32 = 1;
const DTYPE_F32: u8 = 1;
const DTYPE_F64: u8 = 2;
const MAX_NAME_LEN: u32 = 4096;
const MAX_CONFIG_LEN: u32 = 1 << 20;

pub fn save_weights<W: Write>(net: &Network, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    let cfg = net.config.to_toml();
    w.write_u32::<LittleEndian>(cfg.len() as u32)?;
    w.write_all(cfg.as_bytes())?;
    let tensors = net.tensors();
    w.write_u32::<LittleEndian>(tensors.len() as u32)?;
    for (meta, data) in tensors {
        w.write_u32::<LittleEndian>(meta.name.len() as u32)?;
        w.write_all(meta.name.as_bytes())?;
        w.write_u8(DTYPE_F64)?;
        w.write_u32::<LittleEndian>(meta.dims.len() as u32)?;
        for &d in &meta.dims {
            w.write_u64::<LittleEndian>(d as u64)?;
        }
        for &v in data {
            w.write_f64::<LittleEndian>(v)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn corrupt(e: io::Error) -> Error {
    match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::CorruptFile("unexpected end of file".into()),
        _ => Error::Io(e),
    }
}

struct Header {
    config: NetworkConfig,
    count: u32,
}

fn read_header<R: Read>(r: &mut R) -> Result<Header> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(corrupt)?;
    if &magic != MAGIC {
        return Err(Error::CorruptFile("bad magic".into()));
    }
    let version = r.read_u32::<LittleEndian>().map_err(corrupt)?;
    if version != VERSION {
        return Err(Error::VersionMismatch { found: version, expected: VERSION });
    }
    let len = r.read_u32::<LittleEndian>().map_err(corrupt)?;
    if len > MAX_CONFIG_LEN {
        return Err(Error::CorruptFile(format!("config length {len}")));
    }
    let mut text = vec![0u8; len as usize];
    r.read_exact(&mut text).map_err(corrupt)?;
    let text = String::from_utf8(text).map_err(|_| Error::CorruptFile("config is not UTF-8".into()))?;
    let config = NetworkConfig::from_toml(&text)?;
    let count = r.read_u32::<LittleEndian>().map_err(corrupt)?;
    Ok(Header { config, count })
}

fn read_tensors<R: Read>(r: &mut R, count: u32, net: &mut Network) -> Result<()> {
    let mut slots = net.tensors_mut();
    if count as usize != slots.len() {
        return Err(Error::ShapeMismatch(format!(
            "file has {count} tensors, network expects {}",
            slots.len()
        )));
    }
    for (meta, dst) in slots.iter_mut() {
        let name_len = r.read_u32::<LittleEndian>().map_err(corrupt)?;
        if name_len > MAX_NAME_LEN {
            return Err(Error::CorruptFile(format!("tensor name length {name_len}")));
        }
        let mut name = vec![0u8; name_len as usize];
        r.read_exact(&mut name).map_err(corrupt)?;
        let name = String::from_utf8(name).map_err(|_| Error::CorruptFile("tensor name is not UTF-8".into()))?;
        if name != meta.name {
            return Err(Error::ShapeMismatch(format!("expected tensor {}, found {name}", meta.name)));
        }
        let dtype = r.read_u8().map_err(corrupt)?;
        let rank = r.read_u32::<LittleEndian>().map_err(corrupt)?;
        if rank > 8 {
            return Err(Error::CorruptFile(format!("{name}: rank {rank}")));
        }
        let mut dims = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            dims.push(r.read_u64::<LittleEndian>().map_err(corrupt)? as usize);
        }
        if dims != meta.dims {
            return Err(Error::ShapeMismatch(format!("{name}: expected {:?}, found {dims:?}", meta.dims)));
        }
        match dtype {
            DTYPE_F32 => {
                for v in dst.iter_mut() {
                    *v = r.read_f32::<LittleEndian>().map_err(corrupt)? as f64;
                }
            }
            DTYPE_F64 => r.read_f64_into::<LittleEndian>(dst).map_err(corrupt)?,
            other => return Err(Error::CorruptFile(format!("{name}: unknown dtype {other}"))),
        }
    }
    Ok(())
}

/// Loads a network, rebuilding it from the config stored in the file.
pub fn load_weights<R: Read>(mut r: R) -> Result<Network> {
    let header = read_header(&mut r)?;
    let mut net = build_network(&header.config, 0)?;
    read_tensors(&mut r, header.count, &mut net)?;
    Ok(net)
}

/// Loads weights into a network built from `expected`; the stored config must match.
pub fn load_weights_into<R: Read>(mut r: R, expected: &NetworkConfig) -> Result<Network> {
    let header = read_header(&mut r)?;
    if &header.config != expected {
        return Err(Error::ShapeMismatch("stored config differs from the expected one".into()));
    }
    let mut net = build_network(expected, 0)?;
    read_tensors(&mut r, header.count, &mut net)?;
    Ok(net)
}
