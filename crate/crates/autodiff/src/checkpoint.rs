//! Named-tensor container.
//!
//! Layout, all integers little-endian `u32`:
//! `"KGDT"`, version, header length, header bytes (UTF-8 JSON), tensor count,
//! then per tensor: name length, name bytes, rank, dims, `f32` payload.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::tensor::Tensor;
use crate::AutodiffError;

const MAGIC: &[u8; 4] = b"KGDT";
const VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub header: String,
    pub tensors: Vec<(String, Tensor)>,
}

fn bad(msg: impl Into<String>) -> AutodiffError {
    AutodiffError::Checkpoint(msg.into())
}

fn write_u32<W: Write>(w: &mut W, v: usize) -> Result<(), AutodiffError> {
    let v = u32::try_from(v).map_err(|_| bad("value exceeds u32"))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<usize, AutodiffError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn read_string<R: Read>(r: &mut R, what: &str) -> Result<String, AutodiffError> {
    let len = read_u32(r)?;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| bad(format!("{what} is not UTF-8")))
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), AutodiffError> {
        w.write_all(MAGIC)?;
        write_u32(w, VERSION as usize)?;
        write_u32(w, self.header.len())?;
        w.write_all(self.header.as_bytes())?;
        write_u32(w, self.tensors.len())?;
        for (name, t) in &self.tensors {
            write_u32(w, name.len())?;
            w.write_all(name.as_bytes())?;
            write_u32(w, t.rank())?;
            for &d in t.shape() {
                write_u32(w, d)?;
            }
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, AutodiffError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = read_u32(r)?;
        if version != VERSION as usize {
            return Err(bad(format!("unsupported version {version}")));
        }
        let header = read_string(r, "header")?;
        let count = read_u32(r)?;
        let mut tensors = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let name = read_string(r, "tensor name")?;
            let rank = read_u32(r)?;
            let shape = (0..rank).map(|_| read_u32(r)).collect::<Result<Vec<_>, _>>()?;
            let n: usize = shape.iter().product();
            let mut bytes = vec![0u8; n * 4];
            r.read_exact(&mut bytes)?;
            let data = bytes
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            tensors.push((name, Tensor::new(shape, data)?));
        }
        Ok(Self { header, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<(), AutodiffError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, AutodiffError> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}
