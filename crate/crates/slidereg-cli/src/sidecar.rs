//! Line-oriented `key=value` sidecar files (preprocessing provenance and
//! run manifests) plus atomic output writes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use slidereg::preprocess::Provenance;
use slidereg::{Error, Result};

/// Writes through a temp file in the same directory and renames into
/// place, so interrupted runs never leave torn outputs.
pub fn atomic_write<F>(path: &Path, write: F) -> Result<()>
where
    F: FnOnce(&Path) -> Result<()>,
{
    let mut tmp: PathBuf = path.to_path_buf();
    let mut name = tmp
        .file_name()
        .ok_or_else(|| Error::InvalidParameter(format!("bad output path {}", path.display())))?
        .to_os_string();
    name.push(".tmp");
    tmp.set_file_name(name);
    write(&tmp)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn atomic_write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    atomic_write(path, |tmp| Ok(std::fs::write(tmp, bytes)?))
}

/// Ordered key=value record.
#[derive(Debug, Default, Clone)]
pub struct Record {
    entries: Vec<(String, String)>,
}

impl Record {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, key: &str, value: impl std::fmt::Display) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(k);
            out.push('=');
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        atomic_write_bytes(path, self.render().as_bytes())
    }
}

pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("expected key=value, got {line:?}")))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

fn get_parsed<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<T> {
    map.get(key)
        .ok_or_else(|| Error::Parse(format!("missing key {key:?}")))?
        .parse::<T>()
        .map_err(|_| Error::Parse(format!("bad value for {key:?}")))
}

/// Provenance sidecar written next to the preprocessed images.
pub fn write_provenance(path: &Path, p: &Provenance, width: usize, height: usize) -> Result<()> {
    let mut rec = Record::new();
    rec.push("k", p.kernel_size);
    rec.push("f", p.resample_factor);
    rec.push("width", width);
    rec.push("height", height);
    rec.push("fixed_pad_left", p.fixed_offset.0);
    rec.push("fixed_pad_top", p.fixed_offset.1);
    rec.push("moving_pad_left", p.moving_offset.0);
    rec.push("moving_pad_top", p.moving_offset.1);
    rec.push("fixed_fill", p.fixed_fill);
    rec.push("moving_fill", p.moving_fill);
    rec.write(path)
}

#[derive(Debug, Clone)]
pub struct PrepInfo {
    pub provenance: Provenance,
    pub width: usize,
    pub height: usize,
}

pub fn read_provenance(path: &Path) -> Result<PrepInfo> {
    let map = parse_kv(&std::fs::read_to_string(path)?)?;
    Ok(PrepInfo {
        provenance: Provenance {
            kernel_size: get_parsed(&map, "k")?,
            resample_factor: get_parsed(&map, "f")?,
            fixed_offset: (
                get_parsed(&map, "fixed_pad_left")?,
                get_parsed(&map, "fixed_pad_top")?,
            ),
            moving_offset: (
                get_parsed(&map, "moving_pad_left")?,
                get_parsed(&map, "moving_pad_top")?,
            ),
            fixed_fill: get_parsed(&map, "fixed_fill")?,
            moving_fill: get_parsed(&map, "moving_fill")?,
        },
        width: get_parsed(&map, "width")?,
        height: get_parsed(&map, "height")?,
    })
}
