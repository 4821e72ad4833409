//! Binary index format, little-endian:
//!
//! ```text
//! magic      8 bytes "GEOHNSW1"
//! version    u32
//! dim        u32
//! M, efC, efS u32 × 3, mL f64
//! seed       u64, rng word position u128
//! n          u64, entry i64 (−1 when empty)
//! elements   n × (id u64, level u32, dim × f32)
//! adjacency  n × (level + 1) × (count u32, count × u32 node index)
//! ```

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{HnswError, HnswIndex, HnswParams};

pub const MAGIC: &[u8; 8] = b"GEOHNSW1";
pub const FORMAT_VERSION: u32 = 1;

fn eof(e: io::Error) -> HnswError {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        HnswError::Truncated
    } else {
        HnswError::Io(e)
    }
}

impl HnswIndex {
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), HnswError> {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
        w.write_u32::<LittleEndian>(self.dim as u32)?;
        w.write_u32::<LittleEndian>(self.params.m as u32)?;
        w.write_u32::<LittleEndian>(self.params.ef_construction as u32)?;
        w.write_u32::<LittleEndian>(self.params.ef_search as u32)?;
        w.write_f64::<LittleEndian>(self.params.ml)?;
        w.write_u64::<LittleEndian>(self.seed)?;
        w.write_u128::<LittleEndian>(self.rng.get_word_pos())?;
        w.write_u64::<LittleEndian>(self.ids.len() as u64)?;
        w.write_i64::<LittleEndian>(self.entry.map_or(-1, i64::from))?;
        for (i, &id) in self.ids.iter().enumerate() {
            w.write_u64::<LittleEndian>(id)?;
            w.write_u32::<LittleEndian>((self.links[i].len() - 1) as u32)?;
            for &v in self.row(i as u32) {
                w.write_f32::<LittleEndian>(v)?;
            }
        }
        for layers in &self.links {
            for ns in layers {
                w.write_u32::<LittleEndian>(ns.len() as u32)?;
                for &n in ns {
                    w.write_u32::<LittleEndian>(n)?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, HnswError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(eof)?;
        if &magic != MAGIC {
            return Err(HnswError::BadMagic);
        }
        let version = r.read_u32::<LittleEndian>().map_err(eof)?;
        if version != FORMAT_VERSION {
            return Err(HnswError::Version(version));
        }
        let dim = r.read_u32::<LittleEndian>().map_err(eof)? as usize;
        let m = r.read_u32::<LittleEndian>().map_err(eof)? as usize;
        let ef_construction = r.read_u32::<LittleEndian>().map_err(eof)? as usize;
        let ef_search = r.read_u32::<LittleEndian>().map_err(eof)? as usize;
        let ml = r.read_f64::<LittleEndian>().map_err(eof)?;
        let params = HnswParams {
            m,
            ef_construction,
            ef_search,
            ml,
        };
        params
            .validate()
            .map_err(|e| HnswError::Malformed(e.to_string()))?;
        let seed = r.read_u64::<LittleEndian>().map_err(eof)?;
        let word_pos = r.read_u128::<LittleEndian>().map_err(eof)?;
        let n = r.read_u64::<LittleEndian>().map_err(eof)? as usize;
        let entry = r.read_i64::<LittleEndian>().map_err(eof)?;
        if n > u32::MAX as usize || dim > 1 << 20 {
            return Err(HnswError::Malformed(format!("{n} elements of dim {dim}")));
        }
        let mut ids = Vec::with_capacity(n.min(1 << 20));
        let mut levels = Vec::with_capacity(n.min(1 << 20));
        let mut data = Vec::with_capacity((n * dim).min(1 << 26));
        let mut row = vec![0f32; dim];
        for _ in 0..n {
            ids.push(r.read_u64::<LittleEndian>().map_err(eof)?);
            let level = r.read_u32::<LittleEndian>().map_err(eof)? as usize;
            if level > 64 {
                return Err(HnswError::Malformed(format!("level {level}")));
            }
            levels.push(level);
            r.read_f32_into::<LittleEndian>(&mut row).map_err(eof)?;
            data.extend_from_slice(&row);
        }
        let mut links = Vec::with_capacity(n);
        for &level in &levels {
            let mut layers = Vec::with_capacity(level + 1);
            for l in 0..=level {
                let count = r.read_u32::<LittleEndian>().map_err(eof)? as usize;
                if count > params.max_degree(l) {
                    return Err(HnswError::Malformed(format!("degree {count} at layer {l}")));
                }
                let mut ns = Vec::with_capacity(count);
                for _ in 0..count {
                    let nb = r.read_u32::<LittleEndian>().map_err(eof)?;
                    if nb as usize >= n {
                        return Err(HnswError::Malformed(format!("neighbor {nb} out of range")));
                    }
                    ns.push(nb);
                }
                layers.push(ns);
            }
            links.push(layers);
        }
        let entry = match entry {
            -1 if n == 0 => None,
            e if e >= 0 && (e as usize) < n => Some(e as u32),
            e => return Err(HnswError::Malformed(format!("entry point {e}"))),
        };
        let mut index_of = HashMap::with_capacity(n);
        for (i, &id) in ids.iter().enumerate() {
            if index_of.insert(id, i as u32).is_some() {
                return Err(HnswError::Malformed(format!("duplicate id {id}")));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_word_pos(word_pos);
        Ok(Self {
            params,
            dim,
            seed,
            rng,
            ids,
            data,
            links,
            entry,
            index_of,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), HnswError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, HnswError> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}
