//! JSONL shards with a digest manifest.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::AssemblyError;
use crate::fsutil::write_atomic;
use crate::qa::QaItem;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardEntry {
    /// File name relative to the manifest's directory.
    pub path: String,
    pub items: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardManifest {
    pub shards: Vec<ShardEntry>,
    pub total_items: u64,
}

pub fn shard_name(index: usize) -> String {
    format!("shard-{index:05}.jsonl")
}

fn is_shard_name(name: &str) -> bool {
    name.strip_prefix("shard-")
        .and_then(|r| r.strip_suffix(".jsonl"))
        .is_some_and(|d| !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit()))
}

/// Writes items in `qa_id` order, `shard_size` per file, and `manifest.json`.
/// Shard files left over from an earlier, larger run are removed.
pub fn write_shards(items: &[QaItem], shard_size: usize, out_dir: &Path) -> Result<ShardManifest, AssemblyError> {
    if shard_size == 0 {
        return Err(AssemblyError::Config("shard_size must be at least 1".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    for entry in std::fs::read_dir(out_dir)? {
        let entry = entry?;
        if entry.file_name().to_str().is_some_and(is_shard_name) {
            std::fs::remove_file(entry.path())?;
        }
    }
    let mut sorted: Vec<&QaItem> = items.iter().collect();
    sorted.sort_by(|a, b| a.qa_id.cmp(&b.qa_id));
    let mut manifest = ShardManifest::default();
    for (i, chunk) in sorted.chunks(shard_size).enumerate() {
        let mut buf = Vec::new();
        for item in chunk {
            buf.extend_from_slice(item.to_json_line().as_bytes());
            buf.push(b'\n');
        }
        let name = shard_name(i);
        write_atomic(&out_dir.join(&name), &buf)?;
        manifest.shards.push(ShardEntry {
            path: name,
            items: chunk.len() as u64,
            sha256: hex::encode(Sha256::digest(&buf)),
        });
        manifest.total_items += chunk.len() as u64;
    }
    let mut json = serde_json::to_vec_pretty(&manifest).expect("manifest serialize");
    json.write_all(b"\n")?;
    write_atomic(&out_dir.join(MANIFEST_FILE), &json)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<ShardManifest, AssemblyError> {
    let raw = std::fs::read(dir.join(MANIFEST_FILE))?;
    serde_json::from_slice(&raw).map_err(|e| AssemblyError::Manifest(e.to_string()))
}

/// Reads every shard listed in the manifest, checking digests and counts.
pub fn read_shards(dir: &Path) -> Result<Vec<QaItem>, AssemblyError> {
    let manifest = read_manifest(dir)?;
    let mut items = Vec::with_capacity(manifest.total_items as usize);
    for shard in &manifest.shards {
        if shard.path.contains('/') || shard.path.contains('\\') || shard.path.starts_with('.') {
            return Err(AssemblyError::Manifest(format!("shard path {:?} escapes the directory", shard.path)));
        }
        let bytes = std::fs::read(dir.join(&shard.path))?;
        let digest = hex::encode(Sha256::digest(&bytes));
        if digest != shard.sha256 {
            return Err(AssemblyError::Digest {
                path: shard.path.clone(),
                expected: shard.sha256.clone(),
                actual: digest,
            });
        }
        let text = std::str::from_utf8(&bytes).map_err(|e| AssemblyError::Manifest(e.to_string()))?;
        let before = items.len();
        for (n, line) in text.lines().enumerate() {
            let item: QaItem = serde_json::from_str(line).map_err(|e| AssemblyError::Parse {
                line: n + 1,
                message: format!("{}: {e}", shard.path),
            })?;
            items.push(item);
        }
        if (items.len() - before) as u64 != shard.items {
            return Err(AssemblyError::Manifest(format!(
                "{} lists {} items but holds {}",
                shard.path,
                shard.items,
                items.len() - before
            )));
        }
    }
    Ok(items)
}
