//! Parameter checkpoint file: per entry a text header `name ndim d0 d1 ...`
//! followed by a little-endian f64 payload. Byte-stable across runs.

use std::path::Path;

use crate::engine::tensor::Tensor;
use crate::error::{Error, Result};

const MAGIC: &str = "MMCK1";

pub fn write_entries(entries: &[(String, Tensor)]) -> Result<Vec<u8>> {
    let mut out = format!("{MAGIC} {}\n", entries.len()).into_bytes();
    for (name, tensor) in entries {
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(Error::Contract(format!(
                "checkpoint entry name {name:?} must be non-empty and whitespace-free"
            )));
        }
        let mut header = format!("{name} {}", tensor.shape().len());
        for d in tensor.shape() {
            header.push_str(&format!(" {d}"));
        }
        header.push('\n');
        out.extend_from_slice(header.as_bytes());
        for v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn read_entries(bytes: &[u8], source: &Path) -> Result<Vec<(String, Tensor)>> {
    let corrupt = |reason: String| Error::Corruption {
        file: source.to_path_buf(),
        reason,
    };
    let mut at = 0usize;
    let read_line = |at: &mut usize| -> Result<String> {
        let rest = &bytes[*at..];
        let nl = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| corrupt("unterminated header line".into()))?;
        let line = std::str::from_utf8(&rest[..nl])
            .map_err(|_| corrupt("non-utf8 header".into()))?
            .to_string();
        *at += nl + 1;
        Ok(line)
    };

    let first = read_line(&mut at)?;
    let mut head = first.split_whitespace();
    if head.next() != Some(MAGIC) {
        return Err(corrupt(format!("bad magic in {first:?}")));
    }
    let count: usize = head
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| corrupt("bad entry count".into()))?;

    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let line = read_line(&mut at)?;
        let mut fields = line.split_whitespace();
        let name = fields
            .next()
            .ok_or_else(|| corrupt("empty entry header".into()))?
            .to_string();
        let ndim: usize = fields
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| corrupt(format!("bad ndim for {name}")))?;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(
                fields
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| corrupt(format!("bad shape for {name}")))?,
            );
        }
        let numel: usize = shape.iter().product();
        let need = numel * 8;
        if at + need > bytes.len() {
            return Err(corrupt(format!("truncated payload for {name}")));
        }
        let data: Vec<f64> = bytes[at..at + need]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes([b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7]]))
            .collect();
        at += need;
        entries.push((name, Tensor::new(shape, data)?));
    }
    if at != bytes.len() {
        return Err(corrupt(format!(
            "{} trailing bytes after the last entry",
            bytes.len() - at
        )));
    }
    Ok(entries)
}

pub fn save_checkpoint(entries: &[(String, Tensor)], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = write_entries(entries)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Vec<(String, Tensor)>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_entries(&bytes, path)
}
