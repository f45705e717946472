//! Parameter checkpoints: a text header listing every tensor followed by
//! the raw little-endian `f64` payload in header order.
//!
//! ```text
//! warpnorm-checkpoint 1
//! endian little
//! tensors 2
//! dec.0.weight 12 16 3 3
//! dec.0.bias 1 12 1 1
//! data
//! <binary>
//! ```

use std::fmt::Write as _;

use warpnorm_core::params::ParamSet;

use crate::error::{CliError, Result};

const MAGIC: &str = "warpnorm-checkpoint 1";

pub fn encode(params: &dyn ParamSet) -> Vec<u8> {
    let slots = params.slots();
    let mut header = String::new();
    let _ = writeln!(header, "{MAGIC}");
    let _ = writeln!(header, "endian little");
    let _ = writeln!(header, "tensors {}", slots.len());
    for s in &slots {
        let sh = s.shape;
        let _ = writeln!(header, "{} {} {} {} {}", s.name, sh.b, sh.c, sh.h, sh.w);
    }
    header.push_str("data\n");
    let mut out = header.into_bytes();
    for s in &slots {
        for v in s.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Overwrites `params` from a checkpoint with exactly its layout.
pub fn decode_into(bytes: &[u8], params: &mut dyn ParamSet) -> Result<()> {
    let bad = |m: String| CliError::Format(format!("checkpoint: {m}"));
    let mut lines = Vec::new();
    let mut pos = 0;
    loop {
        let end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("header not terminated".into()))?;
        let line = std::str::from_utf8(&bytes[pos..pos + end])
            .map_err(|_| bad("non-utf8 header".into()))?;
        pos += end + 1;
        if line == "data" {
            break;
        }
        lines.push(line);
    }
    if lines.first() != Some(&MAGIC) {
        return Err(bad("missing magic line".into()));
    }
    if lines.get(1) != Some(&"endian little") {
        return Err(bad("unsupported endianness".into()));
    }
    let n: usize = lines
        .get(2)
        .and_then(|l| l.strip_prefix("tensors "))
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| bad("missing tensor count".into()))?;
    let table = &lines[3..];
    let expected = params.slots();
    if table.len() != n || n != expected.len() {
        return Err(bad(format!(
            "{} tensors in file, model has {}",
            table.len(),
            expected.len()
        )));
    }
    for (line, slot) in table.iter().zip(&expected) {
        let sh = slot.shape;
        let want = format!("{} {} {} {} {}", slot.name, sh.b, sh.c, sh.h, sh.w);
        if *line != want {
            return Err(bad(format!(
                "layout mismatch: file has `{line}`, model expects `{want}`"
            )));
        }
    }
    let total: usize = expected.iter().map(|s| s.data.len()).sum();
    let payload = &bytes[pos..];
    if payload.len() != total * 8 {
        return Err(bad(format!(
            "payload holds {} bytes, expected {}",
            payload.len(),
            total * 8
        )));
    }
    drop(expected);
    let mut chunks = payload.chunks_exact(8);
    for dst in params.slots_mut() {
        for (d, c) in dst.iter_mut().zip(&mut chunks) {
            *d = f64::from_le_bytes(c.try_into().expect("chunks of eight bytes"));
        }
    }
    Ok(())
}
