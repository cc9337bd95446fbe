//! Feature-store file format.
//!
//! All integers are little-endian:
//!
//! ```text
//! "OMFS"  version:u32=1  flags:u32  n:u32  h:u32  w:u32  p:u32  class_count:u32
//! per class: name_len:u16  name:[u8; name_len] (UTF-8)  record_count:u32
//!            records: record_count × record_len × f32
//! ```
//!
//! `flags` bit 0 set means records are pre-pooled n×p region matrices stored
//! column by column (`h = w = 0`); clear means raw n×h×w maps stored channel,
//! then row, then column (`p = 0`). Bit 1 set means each class's records are
//! split in halves: the first half is the support pool and the second half
//! the query pool.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::rsspp::{rsspp, FeatureMap};

pub const MAGIC: &[u8; 4] = b"OMFS";
pub const VERSION: u32 = 1;
pub const FLAG_POOLED: u32 = 1;
pub const FLAG_SPLIT_HALVES: u32 = 1 << 1;
const KNOWN_FLAGS: u32 = FLAG_POOLED | FLAG_SPLIT_HALVES;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StoreLayout {
    /// Raw n×h×w feature maps; region matrices are computed at load time.
    Raw { height: usize, width: usize },
    /// Region matrices that already went through the pyramid transform.
    Pooled { p: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoreClass {
    pub name: String,
    pub records: Vec<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore {
    channels: usize,
    layout: StoreLayout,
    split_halves: bool,
    classes: Vec<StoreClass>,
}

fn store_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Store(msg.into()))
}

impl FeatureStore {
    pub fn new(channels: usize, layout: StoreLayout, split_halves: bool, classes: Vec<StoreClass>) -> Result<Self> {
        let store = Self {
            channels,
            layout,
            split_halves,
            classes,
        };
        store.check()?;
        Ok(store)
    }

    fn check(&self) -> Result<()> {
        if self.channels == 0 {
            return store_err("channel count must be positive");
        }
        match self.layout {
            StoreLayout::Raw { height, width } if height == 0 || width == 0 => {
                return store_err("raw maps need positive height and width");
            }
            StoreLayout::Pooled { p: 0 } => return store_err("pooled matrices need p >= 1"),
            _ => {}
        }
        if self.classes.is_empty() {
            return store_err("store has no classes");
        }
        let len = self.record_len();
        for (ci, class) in self.classes.iter().enumerate() {
            if class.name.len() > u16::MAX as usize {
                return store_err(format!("class {ci} name is longer than {} bytes", u16::MAX));
            }
            if self.classes[..ci].iter().any(|c| c.name == class.name) {
                return store_err(format!("duplicate class name {:?}", class.name));
            }
            if class.records.is_empty() {
                return store_err(format!("class {:?} has no records", class.name));
            }
            for (ri, r) in class.records.iter().enumerate() {
                if r.len() != len {
                    return store_err(format!(
                        "class {:?} record {ri} has {} values, expected {len}",
                        class.name,
                        r.len()
                    ));
                }
                if let Some(i) = r.iter().position(|v| !v.is_finite()) {
                    return store_err(format!(
                        "class {:?} record {ri} value {i} is not finite",
                        class.name
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn layout(&self) -> StoreLayout {
        self.layout
    }

    pub fn split_halves(&self) -> bool {
        self.split_halves
    }

    pub fn classes(&self) -> &[StoreClass] {
        &self.classes
    }

    pub fn record_len(&self) -> usize {
        match self.layout {
            StoreLayout::Raw { height, width } => self.channels * height * width,
            StoreLayout::Pooled { p } => self.channels * p,
        }
    }

    /// Region matrix of one record; raw maps go through the pyramid transform
    /// with depth `p`, pooled records must already have `p` columns.
    pub fn region_matrix(&self, class: usize, record: usize, p: usize) -> Result<DMatrix<f64>> {
        let data = &self.classes[class].records[record];
        let values: Vec<f64> = data.iter().map(|&v| f64::from(v)).collect();
        match self.layout {
            StoreLayout::Raw { height, width } => {
                let map = FeatureMap::new(self.channels, height, width, values)?;
                rsspp(&map, p)
            }
            StoreLayout::Pooled { p: stored } => {
                if stored != p {
                    return Err(Error::InvalidConfig(format!(
                        "store holds pre-pooled matrices with p = {stored}, config asks for p = {p}"
                    )));
                }
                Ok(DMatrix::from_column_slice(self.channels, p, &values))
            }
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + self.classes.len() * (8 + self.record_len() * 4));
        out.extend_from_slice(MAGIC);
        let mut flags = 0;
        if matches!(self.layout, StoreLayout::Pooled { .. }) {
            flags |= FLAG_POOLED;
        }
        if self.split_halves {
            flags |= FLAG_SPLIT_HALVES;
        }
        let (h, w, p) = match self.layout {
            StoreLayout::Raw { height, width } => (height, width, 0),
            StoreLayout::Pooled { p } => (0, 0, p),
        };
        for v in [VERSION, flags, self.channels as u32, h as u32, w as u32, p as u32, self.classes.len() as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for class in &self.classes {
            out.extend_from_slice(&(class.name.len() as u16).to_le_bytes());
            out.extend_from_slice(class.name.as_bytes());
            out.extend_from_slice(&(class.records.len() as u32).to_le_bytes());
            for r in &class.records {
                for v in r {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return store_err("bad magic");
        }
        let version = r.u32()?;
        if version != VERSION {
            return store_err(format!("unsupported version {version}"));
        }
        let flags = r.u32()?;
        if flags & !KNOWN_FLAGS != 0 {
            return store_err(format!("unknown flag bits {:#x}", flags & !KNOWN_FLAGS));
        }
        let n = r.u32()? as usize;
        let h = r.u32()? as usize;
        let w = r.u32()? as usize;
        let p = r.u32()? as usize;
        let class_count = r.u32()? as usize;
        let layout = if flags & FLAG_POOLED != 0 {
            if h != 0 || w != 0 {
                return store_err(format!("pre-pooled store must have h = w = 0, got {h}x{w}"));
            }
            StoreLayout::Pooled { p }
        } else {
            StoreLayout::Raw { height: h, width: w }
        };
        let record_len = match layout {
            StoreLayout::Raw { height, width } => n * height * width,
            StoreLayout::Pooled { p } => n * p,
        };
        if record_len == 0 {
            return store_err(format!("dimensions n={n} h={h} w={w} p={p} give empty records"));
        }
        if class_count == 0 {
            return store_err("store has no classes");
        }
        let mut classes = Vec::with_capacity(class_count.min(1 << 16));
        for ci in 0..class_count {
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Store(format!("class {ci} name is not valid UTF-8")))?
                .to_string();
            let count = r.u32()? as usize;
            let mut records = Vec::with_capacity(count.min(1 << 16));
            for _ in 0..count {
                let raw = r.take(record_len * 4)?;
                records.push(
                    raw.chunks_exact(4)
                        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                        .collect(),
                );
            }
            classes.push(StoreClass { name, records });
        }
        if r.pos != bytes.len() {
            return store_err(format!("{} trailing bytes after last record", bytes.len() - r.pos));
        }
        Self::new(n, layout, flags & FLAG_SPLIT_HALVES != 0, classes)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(len)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Store(format!("unexpected end of file at byte {}", self.bytes.len())))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
