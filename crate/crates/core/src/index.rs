//! Hash index: L tables of fixed-size slot arrays over a normalized
//! dataset, addressed by a 64-bit mix of the M-integer bucket key, with
//! versioned checksummed persistence.

use std::io::Read as _;
use std::path::Path;
use std::sync::Arc;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{NormalizationParams, NormalizedDataset};
use crate::error::{Error, Result};
use crate::family::{
    hash_point, sample_family, BucketKey, HashFamilyKind, LshFunctionVector, RawHashParams,
};
use crate::rw::{build_walk_table, walk_sub_seed, RandomWalkTable};

pub const INDEX_MAGIC: &[u8; 4] = b"MPL1";
pub const INDEX_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndexConfig {
    pub kind: HashFamilyKind,
    /// M, hash functions per table.
    pub fns: usize,
    /// W, bucket width.
    pub w: f64,
    /// L, number of hash tables.
    pub tables: usize,
    /// B, log2 of the slot count per table.
    pub slot_bits: u32,
    pub seed: u64,
    /// Default probe budget for multi-probe queries on this index.
    pub t_default: usize,
}

pub const DEFAULT_SLOT_BITS: u32 = 21;

impl IndexConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tables == 0 || self.fns == 0 {
            return Err(Error::InvalidParameter("need tables >= 1 and fns >= 1".into()));
        }
        if !(8..=30).contains(&self.slot_bits) {
            return Err(Error::InvalidParameter(format!(
                "slot_bits {} outside [8, 30]",
                self.slot_bits
            )));
        }
        if !(self.w > 0.0) {
            return Err(Error::InvalidBucketWidth(self.w as i64));
        }
        Ok(())
    }
}

fn avalanche(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Slot address of a bucket key: avalanche mix folded over the M integers,
/// truncated to the low B bits.
pub fn slot_of(key: &BucketKey, slot_bits: u32) -> usize {
    let mut h: u64 = 0x243f_6a88_85a3_08d3;
    for &v in &key.0 {
        h = avalanche(h ^ v as u64);
    }
    (h & ((1u64 << slot_bits) - 1)) as usize
}

/// One hash table in counting-sort layout: `offsets` has 2^B + 1 entries and
/// slot s owns ids[offsets[s]..offsets[s+1]].
#[derive(Debug, Clone, PartialEq)]
pub struct SlotTable {
    offsets: Vec<u32>,
    ids: Vec<u32>,
}

impl SlotTable {
    pub fn chain(&self, slot: usize) -> &[u32] {
        &self.ids[self.offsets[slot] as usize..self.offsets[slot + 1] as usize]
    }

    pub fn occupied_slots(&self) -> usize {
        self.offsets.windows(2).filter(|w| w[1] > w[0]).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildStats {
    pub occupied_slots: Vec<usize>,
    pub n: usize,
}

pub struct HashIndex {
    pub config: IndexConfig,
    pub functions: Vec<LshFunctionVector>,
    slot_tables: Vec<SlotTable>,
    pub data: NormalizedDataset,
    pub walk: Option<Arc<RandomWalkTable>>,
    pub stats: BuildStats,
}

/// Memory accounting for slot arrays, id chains and function parameters;
/// `with_walk_tables` adds the shared walk-table entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexSizes {
    pub without_walk_tables: usize,
    pub with_walk_tables: usize,
}

fn per_table_seed(seed: u64, table_idx: usize) -> u64 {
    walk_sub_seed(seed, table_idx, 0xfa7e, 1)
}

/// Builds L hash tables over the dataset; deterministic under the seed.
pub fn build_index(data: NormalizedDataset, config: IndexConfig) -> Result<HashIndex> {
    config.validate()?;
    let walk = match config.kind {
        HashFamilyKind::RandomWalk => Some(Arc::new(build_walk_table(
            &data.universe_caps,
            config.fns,
            config.tables,
            config.seed,
        )?)),
        _ => None,
    };
    let mut functions = Vec::with_capacity(config.tables);
    for t in 0..config.tables {
        functions.push(sample_family(
            config.kind,
            data.dim(),
            config.fns,
            config.w,
            per_table_seed(config.seed, t),
            walk.as_ref().map(|w| (Arc::clone(w), t)),
        )?);
    }
    let slot_count = 1usize << config.slot_bits;
    let n = data.n();
    let mut slot_tables = Vec::with_capacity(config.tables);
    for fv in &functions {
        let slots: Vec<usize> = (0..n)
            .into_par_iter()
            .map(|i| Ok(slot_of(&hash_point(fv, data.point(i))?, config.slot_bits)))
            .collect::<Result<_>>()?;
        let mut offsets = vec![0u32; slot_count + 1];
        for &s in &slots {
            offsets[s + 1] += 1;
        }
        for i in 0..slot_count {
            offsets[i + 1] += offsets[i];
        }
        let mut cursor = offsets[..slot_count].to_vec();
        let mut ids = vec![0u32; n];
        for (id, &s) in slots.iter().enumerate() {
            ids[cursor[s] as usize] = id as u32;
            cursor[s] += 1;
        }
        slot_tables.push(SlotTable { offsets, ids });
    }
    let stats = BuildStats {
        occupied_slots: slot_tables.iter().map(|t| t.occupied_slots()).collect(),
        n,
    };
    Ok(HashIndex {
        config,
        functions,
        slot_tables,
        data,
        walk,
        stats,
    })
}

/// Ids stored in the slot this key maps to; may include slot-collision
/// strangers, which the exact re-rank filters out.
pub fn probe_bucket<'a>(index: &'a HashIndex, table_idx: usize, key: &BucketKey) -> &'a [u32] {
    index.slot_tables[table_idx].chain(slot_of(key, index.config.slot_bits))
}

impl HashIndex {
    pub fn sizes(&self) -> IndexSizes {
        let mut without = 0usize;
        for (table, fv) in self.slot_tables.iter().zip(&self.functions) {
            without += table.offsets.len() * 4 + table.ids.len() * 4;
            without += fv.offsets.len() * 8;
            if let RawHashParams::Projections(eta) = &fv.raw {
                without += eta.len() * 8;
            }
        }
        let walk_bytes = self.walk.as_ref().map_or(0, |w| w.entries().len() * 2);
        IndexSizes {
            without_walk_tables: without,
            with_walk_tables: without + walk_bytes,
        }
    }
}

fn write_f64s(buf: &mut Vec<u8>, values: &[f64]) {
    for &v in values {
        buf.write_f64::<LittleEndian>(v).unwrap();
    }
}

fn read_f64s(r: &mut impl std::io::Read, count: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        out.push(r.read_f64::<LittleEndian>()?);
    }
    Ok(out)
}

/// Serializes the index (config, dataset, functions, slot layout and, for
/// the random-walk family, the walk tables) with a CRC32 trailer.
pub fn save_index(index: &HashIndex, path: &Path) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(INDEX_MAGIC);
    buf.write_u32::<LittleEndian>(INDEX_VERSION).unwrap();
    let config_json = serde_json::to_vec(&index.config)
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    buf.write_u32::<LittleEndian>(config_json.len() as u32).unwrap();
    buf.extend_from_slice(&config_json);

    let data = &index.data;
    buf.write_u64::<LittleEndian>(data.n() as u64).unwrap();
    buf.write_u64::<LittleEndian>(data.dim() as u64).unwrap();
    write_f64s(&mut buf, &data.params.shift);
    buf.write_u32::<LittleEndian>(data.params.scale).unwrap();
    for &c in data.coords() {
        buf.write_u32::<LittleEndian>(c).unwrap();
    }

    for fv in &index.functions {
        write_f64s(&mut buf, &fv.offsets);
        match &fv.raw {
            RawHashParams::Walk { .. } => {}
            RawHashParams::Projections(eta) => write_f64s(&mut buf, eta),
        }
    }

    // slot arrays stored sparsely: only occupied (slot, count) pairs
    for table in &index.slot_tables {
        let occupied: Vec<(u32, u32)> = table
            .offsets
            .windows(2)
            .enumerate()
            .filter(|(_, w)| w[1] > w[0])
            .map(|(s, w)| (s as u32, w[1] - w[0]))
            .collect();
        buf.write_u64::<LittleEndian>(occupied.len() as u64).unwrap();
        for (slot, count) in occupied {
            buf.write_u32::<LittleEndian>(slot).unwrap();
            buf.write_u32::<LittleEndian>(count).unwrap();
        }
        for &id in &table.ids {
            buf.write_u32::<LittleEndian>(id).unwrap();
        }
    }

    match &index.walk {
        None => buf.push(0),
        Some(w) => {
            buf.push(1);
            buf.write_u64::<LittleEndian>(w.seed).unwrap();
            buf.write_u64::<LittleEndian>(w.entries().len() as u64).unwrap();
            for &e in w.entries() {
                buf.write_i16::<LittleEndian>(e).unwrap();
            }
        }
    }

    let crc = crc32fast::hash(&buf);
    buf.write_u32::<LittleEndian>(crc).unwrap();
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_index(path: &Path) -> Result<HashIndex> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 12 {
        return Err(Error::Corrupted("file shorter than header".into()));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    let stored_crc = u32::from_le_bytes(trailer.try_into().unwrap());
    if crc32fast::hash(body) != stored_crc {
        return Err(Error::Corrupted("checksum mismatch".into()));
    }
    let mut r = std::io::Cursor::new(body);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != INDEX_MAGIC {
        return Err(Error::Corrupted("bad magic".into()));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != INDEX_VERSION {
        return Err(Error::VersionMismatch {
            expected: INDEX_VERSION,
            got: version,
        });
    }
    let config_len = r.read_u32::<LittleEndian>()? as usize;
    let mut config_json = vec![0u8; config_len];
    r.read_exact(&mut config_json)?;
    let config: IndexConfig = serde_json::from_slice(&config_json)
        .map_err(|e| Error::Corrupted(format!("config block: {e}")))?;
    config.validate()?;

    let n = r.read_u64::<LittleEndian>()? as usize;
    let m = r.read_u64::<LittleEndian>()? as usize;
    if n == 0 || m == 0 || n.checked_mul(m).is_none() {
        return Err(Error::Corrupted("implausible dataset shape".into()));
    }
    let shift = read_f64s(&mut r, m)?;
    let scale = r.read_u32::<LittleEndian>()?;
    let mut coords = Vec::with_capacity(n * m);
    for _ in 0..n * m {
        coords.push(r.read_u32::<LittleEndian>()?);
    }
    let data = NormalizedDataset::from_parts(coords, m, NormalizationParams { shift, scale })?;

    let mut fn_offsets = Vec::with_capacity(config.tables);
    let mut fn_projections = Vec::with_capacity(config.tables);
    for _ in 0..config.tables {
        fn_offsets.push(read_f64s(&mut r, config.fns)?);
        fn_projections.push(match config.kind {
            HashFamilyKind::RandomWalk => None,
            _ => Some(read_f64s(&mut r, config.fns * m)?),
        });
    }

    let slot_count = 1usize << config.slot_bits;
    let mut slot_tables = Vec::with_capacity(config.tables);
    for _ in 0..config.tables {
        let occupied = r.read_u64::<LittleEndian>()? as usize;
        if occupied > slot_count {
            return Err(Error::Corrupted("occupied slot count exceeds table".into()));
        }
        let mut offsets = vec![0u32; slot_count + 1];
        for _ in 0..occupied {
            let slot = r.read_u32::<LittleEndian>()? as usize;
            if slot >= slot_count {
                return Err(Error::Corrupted("slot address out of range".into()));
            }
            offsets[slot + 1] = r.read_u32::<LittleEndian>()?;
        }
        for i in 0..slot_count {
            offsets[i + 1] += offsets[i];
        }
        let total = offsets[slot_count] as usize;
        if total != n {
            return Err(Error::Corrupted("id count differs from dataset size".into()));
        }
        let mut ids = Vec::with_capacity(total);
        for _ in 0..total {
            let id = r.read_u32::<LittleEndian>()?;
            if id as usize >= n {
                return Err(Error::Corrupted("point id out of range".into()));
            }
            ids.push(id);
        }
        slot_tables.push(SlotTable { offsets, ids });
    }

    let mut walk_flag = [0u8; 1];
    r.read_exact(&mut walk_flag)?;
    let walk = match walk_flag[0] {
        0 => None,
        1 => {
            let seed = r.read_u64::<LittleEndian>()?;
            let count = r.read_u64::<LittleEndian>()? as usize;
            let mut entries = Vec::with_capacity(count);
            for _ in 0..count {
                entries.push(r.read_i16::<LittleEndian>()?);
            }
            Some(Arc::new(RandomWalkTable::from_entries(
                seed,
                config.tables,
                config.fns,
                data.universe_caps.clone(),
                entries,
            )?))
        }
        _ => return Err(Error::Corrupted("bad walk-table flag".into())),
    };
    if r.position() as usize != body.len() {
        return Err(Error::Corrupted("trailing bytes after index body".into()));
    }

    let mut functions = Vec::with_capacity(config.tables);
    for (t, (offsets, projections)) in fn_offsets.into_iter().zip(fn_projections).enumerate() {
        let raw = match (&walk, projections) {
            (Some(w), None) => RawHashParams::Walk {
                table: Arc::clone(w),
                table_idx: t,
            },
            (None, Some(eta)) => RawHashParams::Projections(eta),
            _ => return Err(Error::Corrupted("family/walk-table mismatch".into())),
        };
        functions.push(LshFunctionVector {
            kind: config.kind,
            dim: m,
            fns: config.fns,
            w: config.w,
            offsets,
            raw,
            seed: per_table_seed(config.seed, t),
        });
    }

    let stats = BuildStats {
        occupied_slots: slot_tables.iter().map(|t| t.occupied_slots()).collect(),
        n,
    };
    Ok(HashIndex {
        config,
        functions,
        slot_tables,
        data,
        walk,
        stats,
    })
}
