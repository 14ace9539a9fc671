//! Plain-text model checkpoints.
//!
//! ```text
//! stepimpute-checkpoint 1
//! window <hour_radius> <weeks>
//! d_k <d_k>
//! tensors <count>
//! tensor <name> <dim>[x<dim>...]
//! <row-major values, space separated, shortest round-trip exponent form>
//! ...
//! ```
//!
//! Tensors appear in canonical order. Reading rejects unknown versions,
//! names or shapes that do not match the layout implied by the header.

use std::path::Path;

use stepimpute_core::model::AttentionModel;
use stepimpute_core::nn::ParamTensor;
use stepimpute_core::window::WindowShape;

use crate::error::{Error, Result};
use crate::fs::{atomic_write, read_to_string};

pub const MAGIC: &str = "stepimpute-checkpoint";
pub const VERSION: u32 = 1;

pub fn checkpoint_string(model: &AttentionModel) -> String {
    use std::fmt::Write;
    let shape = model.shape();
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC} {VERSION}");
    let _ = writeln!(out, "window {} {}", shape.hour_radius, shape.weeks);
    let _ = writeln!(out, "d_k {}", model.d_k());
    let _ = writeln!(out, "tensors {}", model.params().len());
    for p in model.params() {
        let dims: Vec<String> = p.shape.iter().map(usize::to_string).collect();
        let _ = writeln!(out, "tensor {} {}", p.name, dims.join("x"));
        let vals: Vec<String> = p.values.iter().map(|v| format!("{v:e}")).collect();
        let _ = writeln!(out, "{}", vals.join(" "));
    }
    out
}

pub fn parse_checkpoint(path: &Path, text: &str) -> Result<AttentionModel> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i as u64 + 1, l));
    let mut next = |what: &str| -> Result<(u64, Vec<&str>)> {
        let (n, l) = lines
            .next()
            .ok_or_else(|| Error::parse(path, 0, format!("unexpected end of file, expected {what}")))?;
        Ok((n, l.split_whitespace().collect()))
    };
    let int = |line: u64, s: &str| -> Result<usize> {
        s.parse().map_err(|_| Error::parse(path, line, format!("invalid integer `{s}`")))
    };

    let (n, head) = next("header")?;
    if head.len() != 2 || head[0] != MAGIC {
        return Err(Error::parse(path, n, "not a stepimpute checkpoint"));
    }
    if int(n, head[1])? != VERSION as usize {
        return Err(Error::parse(path, n, format!("unsupported checkpoint version {}", head[1])));
    }
    let (n, w) = next("window")?;
    if w.len() != 3 || w[0] != "window" {
        return Err(Error::parse(path, n, "expected `window <hour_radius> <weeks>`"));
    }
    let shape = WindowShape::new(int(n, w[1])?, int(n, w[2])?)?;
    let (n, d) = next("d_k")?;
    if d.len() != 2 || d[0] != "d_k" {
        return Err(Error::parse(path, n, "expected `d_k <n>`"));
    }
    let d_k = int(n, d[1])?;
    let (n, t) = next("tensors")?;
    if t.len() != 2 || t[0] != "tensors" {
        return Err(Error::parse(path, n, "expected `tensors <n>`"));
    }
    let count = int(n, t[1])?;
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let (n, h) = next("tensor")?;
        if h.len() != 3 || h[0] != "tensor" {
            return Err(Error::parse(path, n, "expected `tensor <name> <shape>`"));
        }
        let dims = h[2].split('x').map(|s| int(n, s)).collect::<Result<Vec<usize>>>()?;
        let mut p = ParamTensor::zeros(h[1], &dims);
        let (vn, vals) = next("values")?;
        if vals.len() != p.len() {
            return Err(Error::parse(path, vn, format!("expected {} values, found {}", p.len(), vals.len())));
        }
        for (slot, s) in p.values.iter_mut().zip(vals) {
            *slot = s
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| Error::parse(path, vn, format!("invalid value `{s}`")))?;
        }
        params.push(p);
    }
    let model = AttentionModel::from_params(shape, params)?;
    if model.d_k() != d_k {
        return Err(Error::parse(path, 3, "d_k does not match the tensor shapes"));
    }
    Ok(model)
}

pub fn save_checkpoint(path: &Path, model: &AttentionModel) -> Result<()> {
    atomic_write(path, checkpoint_string(model).as_bytes())
}

pub fn load_checkpoint(path: &Path) -> Result<AttentionModel> {
    parse_checkpoint(path, &read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let m = AttentionModel::new(WindowShape::default(), 4, 9).unwrap();
        let text = checkpoint_string(&m);
        let back = parse_checkpoint(Path::new("m.ckpt"), &text).unwrap();
        assert_eq!(back.flat_values(), m.flat_values());
        assert_eq!(checkpoint_string(&back), text);
    }

    #[test]
    fn rejects_truncated_and_wrong_version() {
        let m = AttentionModel::new(WindowShape::default(), 4, 9).unwrap();
        let text = checkpoint_string(&m);
        let cut: String = text.lines().take(6).collect::<Vec<_>>().join("\n");
        assert!(parse_checkpoint(Path::new("m"), &cut).is_err());
        let v2 = text.replacen("checkpoint 1", "checkpoint 2", 1);
        assert!(parse_checkpoint(Path::new("m"), &v2).is_err());
    }
}
