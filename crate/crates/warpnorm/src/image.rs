//! Binary PPM (P6) and PGM (P5) images, 8 bits per sample.

use warpnorm_core::{Shape4, Tensor4};

use crate::error::{CliError, Result};

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn check_single(t: &Tensor4, channels: &[usize]) -> Result<Shape4> {
    let s = t.shape();
    if s.b != 1 || !channels.contains(&s.c) {
        return Err(CliError::Format(format!(
            "cannot encode a {s} tensor as an image"
        )));
    }
    Ok(s)
}

/// RGB image from a `(1, 3, H, W)` or `(1, 1, H, W)` tensor in `[0, 1]`;
/// grey input is replicated.
pub fn encode_ppm(t: &Tensor4) -> Result<Vec<u8>> {
    let s = check_single(t, &[1, 3])?;
    let mut out = format!("P6\n{} {}\n255\n", s.w, s.h).into_bytes();
    for y in 0..s.h {
        for x in 0..s.w {
            for c in 0..3 {
                out.push(to_u8(t.at(0, c.min(s.c - 1), y, x)));
            }
        }
    }
    Ok(out)
}

/// Greyscale image from a `(1, 1, H, W)` tensor; `[0, 1]` maps to `[0, 255]`.
pub fn encode_pgm(t: &Tensor4) -> Result<Vec<u8>> {
    let s = check_single(t, &[1])?;
    let mut out = format!("P5\n{} {}\n255\n", s.w, s.h).into_bytes();
    out.extend(t.data().iter().map(|&v| to_u8(v)));
    Ok(out)
}

/// Decodes P5 / P6 with maxval 255 into `(1, C, H, W)` with values in `[0, 1]`.
pub fn decode_pnm(bytes: &[u8]) -> Result<Tensor4> {
    let bad = |m: &str| CliError::Format(format!("pnm: {m}"));
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ascii header"))?);
    }
    let c = match fields[0] {
        "P5" => 1,
        "P6" => 3,
        m => return Err(bad(&format!("unsupported magic {m}"))),
    };
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (w, h, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if maxval != 255 {
        return Err(bad("only maxval 255 is supported"));
    }
    let data = bytes
        .get(pos + 1..)
        .ok_or_else(|| bad("missing pixel data"))?;
    if data.len() != w * h * c {
        return Err(bad("pixel data length does not match header"));
    }
    Ok(Tensor4::from_fn(Shape4::new(1, c, h, w), |_, ch, y, x| {
        f64::from(data[(y * w + x) * c + ch]) / 255.0
    }))
}

/// Panels side by side as one RGB image; grey panels are replicated.
pub fn hstack(panels: &[Tensor4]) -> Result<Tensor4> {
    let first = panels
        .first()
        .ok_or_else(|| CliError::Format("no panels".into()))?;
    let (h, w) = (first.shape().h, first.shape().w);
    for p in panels {
        let s = check_single(p, &[1, 3])?;
        if (s.h, s.w) != (h, w) {
            return Err(CliError::Format(format!(
                "panel {s} differs from {}x{}",
                h, w
            )));
        }
    }
    Ok(Tensor4::from_fn(
        Shape4::new(1, 3, h, w * panels.len()),
        |_, c, y, x| {
            let p = &panels[x / w];
            p.at(0, c.min(p.shape().c - 1), y, x % w)
        },
    ))
}

/// Flow as colour: hue from direction, brightness from magnitude relative
/// to the largest displacement. Zero flow is black.
pub fn flow_to_rgb(flow: &Tensor4) -> Result<Tensor4> {
    let s = flow.shape();
    if s.b != 1 || s.c != 2 {
        return Err(CliError::Format(format!(
            "expected a (1,2,H,W) flow, got {s}"
        )));
    }
    let mag = |y, x| f64::hypot(flow.at(0, 0, y, x), flow.at(0, 1, y, x));
    let mut max = 0.0f64;
    for y in 0..s.h {
        for x in 0..s.w {
            max = max.max(mag(y, x));
        }
    }
    Ok(Tensor4::from_fn(
        Shape4::new(1, 3, s.h, s.w),
        |_, c, y, x| {
            if max == 0.0 {
                return 0.0;
            }
            let angle = f64::atan2(flow.at(0, 0, y, x), flow.at(0, 1, y, x));
            let hue = (angle.to_degrees() + 360.0) % 360.0;
            hsv_to_rgb(hue, 1.0, mag(y, x) / max)[c]
        },
    ))
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let c = v * s;
    let hp = h / 60.0;
    let x = c * (1.0 - ((hp % 2.0) - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}
