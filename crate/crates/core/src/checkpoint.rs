//! Versioned parameter container.
//!
//! Layout (all text lines are `\n`-terminated UTF-8):
//!
//! ```text
//! ADVXCKPT 1
//! meta <n>
//! <key>=<value>            (n lines)
//! tensors <m>
//! <name> <ndim> <dims...>  (then product(dims) little-endian f64 values)
//! ...
//! ```
//!
//! Values are stored as raw IEEE-754 bits, so a write/read cycle is exact.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::array::Array;
use crate::error::{Error, Result};
use crate::params::Parameters;

const MAGIC: &str = "ADVXCKPT 1";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: Vec<(String, String)>,
    pub tensors: Vec<(String, Array)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.meta.push((key.into(), value.into()));
        self
    }

    pub fn add_params(&mut self, prefix: &str, params: &dyn Parameters) {
        for (name, array) in params.named() {
            self.tensors.push((format!("{prefix}{name}"), array.clone()));
        }
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn tensor(&self, name: &str) -> Result<&Array> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, a)| a)
            .ok_or_else(|| Error::Format(format!("checkpoint has no tensor `{name}`")))
    }

    /// Copies tensors named `prefix + name` into `params`, checking shapes.
    pub fn load_params(&self, prefix: &str, params: &mut dyn Parameters) -> Result<()> {
        let names: Vec<String> = params.named().into_iter().map(|(n, _)| n).collect();
        for (name, slot) in names.iter().zip(params.arrays_mut()) {
            let stored = self.tensor(&format!("{prefix}{name}"))?;
            if stored.shape() != slot.shape() {
                return Err(Error::Dimension(format!(
                    "checkpoint tensor `{prefix}{name}` has shape {:?}, expected {:?}",
                    stored.shape(),
                    slot.shape()
                )));
            }
            *slot = stored.clone();
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(format!("{MAGIC}\nmeta {}\n", self.meta.len()).as_bytes());
        for (k, v) in &self.meta {
            if k.contains(['=', '\n']) || v.contains('\n') {
                return Err(Error::Format(format!("unencodable metadata key `{k}`")));
            }
            out.extend_from_slice(format!("{k}={v}\n").as_bytes());
        }
        out.extend_from_slice(format!("tensors {}\n", self.tensors.len()).as_bytes());
        for (name, array) in &self.tensors {
            if name.is_empty() || name.contains(char::is_whitespace) {
                return Err(Error::Format(format!("unencodable tensor name `{name}`")));
            }
            let dims: Vec<String> = array.shape().iter().map(|d| d.to_string()).collect();
            out.extend_from_slice(
                format!("{name} {} {}\n", array.shape().len(), dims.join(" ")).as_bytes(),
            );
            for v in array.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.line()? != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let n_meta = cur.counted("meta")?;
        let mut meta = Vec::with_capacity(n_meta);
        for _ in 0..n_meta {
            let line = cur.line()?;
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("bad metadata line `{line}`")))?;
            meta.push((k.to_string(), v.to_string()));
        }
        let n_tensors = cur.counted("tensors")?;
        let mut tensors = Vec::with_capacity(n_tensors);
        for _ in 0..n_tensors {
            let line = cur.line()?;
            let mut parts = line.split(' ');
            let name = parts.next().unwrap_or_default().to_string();
            let ndim: usize = parse_num(parts.next())?;
            let shape = (0..ndim)
                .map(|_| parse_num(parts.next()))
                .collect::<Result<Vec<usize>>>()?;
            let len: usize = shape.iter().product();
            let raw = cur.take(len * 8)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.push((name, Array::new(shape, data)?));
        }
        if cur.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after last tensor".into()));
        }
        Ok(Self { meta, tensors })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes =
            fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_bytes(&bytes)
    }
}

fn parse_num(s: Option<&str>) -> Result<usize> {
    s.and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Format(format!("expected an integer, got {s:?}")))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn line(&mut self) -> Result<&'a str> {
        let rest = &self.bytes[self.pos..];
        let end = rest
            .iter()
            .position(|b| *b == b'\n')
            .ok_or_else(|| Error::Format("unexpected end of file".into()))?;
        self.pos += end + 1;
        std::str::from_utf8(&rest[..end]).map_err(|_| Error::Format("invalid UTF-8 header".into()))
    }

    fn counted(&mut self, tag: &str) -> Result<usize> {
        let line = self.line()?;
        line.strip_prefix(tag)
            .and_then(|r| r.trim().parse().ok())
            .ok_or_else(|| Error::Format(format!("expected `{tag} <count>`, got `{line}`")))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format("truncated tensor data".into()));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
}

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        fs::create_dir_all(dir)
            .map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("not a file path: {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", file_name.to_string_lossy()));
    let mut f =
        fs::File::create(&tmp).map_err(|e| Error::io(format!("creating {}", tmp.display()), e))?;
    f.write_all(bytes)
        .and_then(|_| f.sync_all())
        .map_err(|e| Error::io(format!("writing {}", tmp.display()), e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(format!("renaming to {}", path.display()), e))
}
