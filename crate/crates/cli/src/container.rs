//! Little-endian tensor container used for both checkpoints and datasets.
//!
//! Layout: `SFSE`, u32 version, u32 entry count, then entries in
//! lexicographic name order. Each entry is a u16 name length, the UTF-8 name,
//! a u8 rank, one u32 per dimension and the f32 payload.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use sfse_core::{ParamStore, Scalar, Tensor};

use crate::error::CliError;

pub const MAGIC: &[u8; 4] = b"SFSE";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    pub entries: BTreeMap<String, Tensor<f32>>,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<f32>) -> Result<(), CliError> {
        let name = name.into();
        if name.len() > u16::MAX as usize {
            return Err(CliError::Format(format!("entry name of {} bytes is too long", name.len())));
        }
        if tensor.rank() > u8::MAX as usize || tensor.shape().iter().any(|&d| d > u32::MAX as usize) {
            return Err(CliError::Format(format!("entry `{name}` has an unrepresentable shape")));
        }
        self.entries.insert(name, tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<f32>, CliError> {
        self.entries
            .get(name)
            .ok_or_else(|| CliError::Format(format!("missing entry `{name}`")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.rank() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CliError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic", None)?;
        if magic != MAGIC {
            return Err(CliError::Format(format!("bad magic {magic:02x?}, expected \"SFSE\"")));
        }
        let version = r.u32("version", None)?;
        if version != VERSION {
            return Err(CliError::Format(format!("unsupported format version {version}, expected {VERSION}")));
        }
        let count = r.u32("entry count", None)?;
        let mut entries = BTreeMap::new();
        let mut last: Option<String> = None;
        for k in 0..count {
            let len = r.u16("name length", None)? as usize;
            let raw = r.take(len, "entry name", None)?;
            let name = String::from_utf8(raw.to_vec())
                .map_err(|_| CliError::Format(format!("entry {k} has a name that is not UTF-8")))?;
            if let Some(prev) = &last {
                if *prev >= name {
                    return Err(CliError::Format(format!(
                        "entry `{name}` is out of order or duplicated (after `{prev}`)"
                    )));
                }
            }
            let rank = r.take(1, "rank", Some(&name))?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32("dimension", Some(&name))? as usize);
            }
            let numel = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .filter(|n| n.checked_mul(4).is_some())
                .ok_or_else(|| CliError::Format(format!("entry `{name}` has an overflowing shape {shape:?}")))?;
            let raw = r.take(numel * 4, "tensor data", Some(&name))?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let t = Tensor::new(shape, data).map_err(|e| CliError::Format(format!("entry `{name}`: {e}")))?;
            entries.insert(name.clone(), t);
            last = Some(name);
        }
        if r.pos != bytes.len() {
            return Err(CliError::Format(format!(
                "{} trailing bytes after the last entry at byte offset {}",
                bytes.len() - r.pos,
                r.pos
            )));
        }
        Ok(Container { entries })
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        fs::write(path, self.to_bytes()).map_err(|e| CliError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            CliError::Format(m) => CliError::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str, entry: Option<&str>) -> Result<&'a [u8], CliError> {
        if self.bytes.len() - self.pos < n {
            let inside = entry.map(|e| format!(" of entry `{e}`")).unwrap_or_default();
            return Err(CliError::Format(format!(
                "truncated at byte offset {} reading {what}{inside} ({n} bytes needed, {} left)",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str, entry: Option<&str>) -> Result<u16, CliError> {
        let b = self.take(2, what, entry)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str, entry: Option<&str>) -> Result<u32, CliError> {
        let b = self.take(4, what, entry)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Parameters as 32-bit entries.
pub fn params_to_container<T: Scalar>(store: &ParamStore<T>) -> Result<Container, CliError> {
    let mut c = Container::new();
    for (name, p) in store.iter() {
        c.insert(name, p.tensor.cast())?;
    }
    Ok(c)
}

pub fn save_checkpoint<T: Scalar>(store: &ParamStore<T>, path: &Path) -> Result<(), CliError> {
    params_to_container(store)?.save(path)
}

/// Loads a checkpoint into a store laid out like `template`; every entry must
/// be present with the template's shape and no extra entries are allowed.
pub fn load_checkpoint<T: Scalar>(path: &Path, template: &ParamStore<T>) -> Result<ParamStore<T>, CliError> {
    let c = Container::load(path)?;
    let mut store = template.clone();
    for name in c.entries.keys() {
        if !template.contains(name) {
            return Err(CliError::Format(format!("{}: unexpected entry `{name}`", path.display())));
        }
    }
    for (name, p) in template.iter() {
        let t = c
            .entries
            .get(name)
            .ok_or_else(|| CliError::Format(format!("{}: missing entry `{name}`", path.display())))?;
        if t.shape() != p.tensor.shape() {
            return Err(CliError::Format(format!(
                "{}: entry `{name}` has shape {:?}, expected {:?}",
                path.display(),
                t.shape(),
                p.tensor.shape()
            )));
        }
        if !t.all_finite() {
            return Err(CliError::Format(format!("{}: entry `{name}` holds non-finite values", path.display())));
        }
    }
    for (name, p) in store.iter_mut() {
        p.tensor = c.entries[name].cast();
    }
    Ok(store)
}
