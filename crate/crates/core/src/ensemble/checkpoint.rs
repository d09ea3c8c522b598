//! Plain-text checkpoint format.
//!
//! ```text
//! drpets-checkpoint v1
//! obs_dim 3
//! action_dim 1
//! angle_pair 0 1            (or: angle_pair none)
//! hidden 64 64 64
//! activation swish
//! members 5
//! input_mean <f64>...
//! input_std <f64>...
//! target_mean <f64>...
//! target_std <f64>...
//! member 0
//! layer 0 4 64
//! weights <n_in*n_out f64, row-major (n_in, n_out)>
//! bias <n_out f64>
//! ...
//! end
//! ```
//!
//! Every float is written in scientific notation with 17 significant
//! digits, which round-trips `f64` exactly, so load → save reproduces the
//! file byte for byte.

use std::fmt::Write as _;

use super::mlp::{Activation, Architecture, Layer, MlpParams};
use super::{EnsembleModel, Normalization, ObsLayout};
use crate::error::{Error, Result};

pub const CHECKPOINT_HEADER: &str = "drpets-checkpoint v1";

fn push_floats(out: &mut String, key: &str, values: &[f64]) {
    out.push_str(key);
    for v in values {
        write!(out, " {v:.16e}").expect("writing to a String");
    }
    out.push('\n');
}

pub fn save_checkpoint(model: &EnsembleModel) -> String {
    let mut out = String::new();
    let arch = &model.members[0].arch;
    let l = model.layout;
    writeln!(out, "{CHECKPOINT_HEADER}").unwrap();
    writeln!(out, "obs_dim {}", l.obs_dim).unwrap();
    writeln!(out, "action_dim {}", l.action_dim).unwrap();
    match l.angle_pair {
        Some((c, s)) => writeln!(out, "angle_pair {c} {s}").unwrap(),
        None => writeln!(out, "angle_pair none").unwrap(),
    }
    let hidden: Vec<String> = arch.hidden.iter().map(|h| h.to_string()).collect();
    writeln!(out, "hidden {}", hidden.join(" ")).unwrap();
    writeln!(out, "activation {}", arch.activation.name()).unwrap();
    writeln!(out, "members {}", model.size()).unwrap();
    push_floats(&mut out, "input_mean", &model.norm.input_mean);
    push_floats(&mut out, "input_std", &model.norm.input_std);
    push_floats(&mut out, "target_mean", &model.norm.target_mean);
    push_floats(&mut out, "target_std", &model.norm.target_std);
    for (b, m) in model.members.iter().enumerate() {
        writeln!(out, "member {b}").unwrap();
        for (li, layer) in m.layers.iter().enumerate() {
            writeln!(out, "layer {li} {} {}", layer.n_in, layer.n_out).unwrap();
            push_floats(&mut out, "weights", &layer.weights);
            push_floats(&mut out, "bias", &layer.bias);
        }
    }
    out.push_str("end\n");
    out
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn next_line(&mut self, key: &str) -> Result<(usize, Vec<&'a str>)> {
        let (no, line) = self
            .inner
            .next()
            .ok_or_else(|| Error::Checkpoint(format!("unexpected end of file, expected `{key}`")))?;
        let mut parts = line.split_ascii_whitespace();
        match parts.next() {
            Some(k) if k == key => Ok((no + 1, parts.collect())),
            other => Err(Error::Checkpoint(format!(
                "line {}: expected `{key}`, found `{}`",
                no + 1,
                other.unwrap_or("")
            ))),
        }
    }

    fn usizes(&mut self, key: &str) -> Result<Vec<usize>> {
        let (no, parts) = self.next_line(key)?;
        parts
            .iter()
            .map(|p| p.parse().map_err(|_| Error::Checkpoint(format!("line {no}: bad integer `{p}`"))))
            .collect()
    }

    fn usize_one(&mut self, key: &str) -> Result<usize> {
        match self.usizes(key)?.as_slice() {
            [v] => Ok(*v),
            _ => Err(Error::Checkpoint(format!("`{key}` takes exactly one integer"))),
        }
    }

    fn floats(&mut self, key: &str, expected: usize) -> Result<Vec<f64>> {
        let (no, parts) = self.next_line(key)?;
        if parts.len() != expected {
            return Err(Error::Checkpoint(format!(
                "line {no}: `{key}` has {} values, expected {expected}",
                parts.len()
            )));
        }
        parts
            .iter()
            .map(|p| {
                p.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Checkpoint(format!("line {no}: bad float `{p}`")))
            })
            .collect()
    }
}

pub fn load_checkpoint(text: &str) -> Result<EnsembleModel> {
    let mut lines = Lines { inner: text.lines().enumerate() };
    match lines.inner.next() {
        Some((_, h)) if h == CHECKPOINT_HEADER => {}
        _ => return Err(Error::Checkpoint(format!("missing `{CHECKPOINT_HEADER}` header"))),
    }
    let obs_dim = lines.usize_one("obs_dim")?;
    let action_dim = lines.usize_one("action_dim")?;
    let (no, pair) = lines.next_line("angle_pair")?;
    let angle_pair = match pair.as_slice() {
        ["none"] => None,
        [c, s] => {
            let parse = |v: &str| {
                v.parse::<usize>()
                    .ok()
                    .filter(|&i| i < obs_dim)
                    .ok_or_else(|| Error::Checkpoint(format!("line {no}: bad angle index `{v}`")))
            };
            Some((parse(c)?, parse(s)?))
        }
        _ => return Err(Error::Checkpoint(format!("line {no}: malformed angle_pair"))),
    };
    let hidden = lines.usizes("hidden")?;
    let (no, act) = lines.next_line("activation")?;
    let activation = act
        .first()
        .and_then(|a| Activation::from_name(a))
        .ok_or_else(|| Error::Checkpoint(format!("line {no}: unknown activation")))?;
    let members = lines.usize_one("members")?;
    if obs_dim == 0 || action_dim == 0 || members == 0 || hidden.contains(&0) {
        return Err(Error::Checkpoint("dimensions and member count must be positive".into()));
    }
    let layout = ObsLayout { obs_dim, action_dim, angle_pair };
    let in_dim = layout.input_dim();
    let norm = Normalization {
        input_mean: lines.floats("input_mean", in_dim)?,
        input_std: lines.floats("input_std", in_dim)?,
        target_mean: lines.floats("target_mean", obs_dim)?,
        target_std: lines.floats("target_std", obs_dim)?,
    };
    if norm.input_std.iter().chain(&norm.target_std).any(|s| *s <= 0.0) {
        return Err(Error::Checkpoint("normalisation deviations must be positive".into()));
    }
    let arch = Architecture { input_dim: in_dim, hidden, output_dim: 2 * obs_dim, activation };
    let widths = arch.widths();
    let mut params = Vec::with_capacity(members);
    for b in 0..members {
        if lines.usize_one("member")? != b {
            return Err(Error::Checkpoint(format!("members out of order at member {b}")));
        }
        let mut layers = Vec::new();
        for (li, w) in widths.windows(2).enumerate() {
            let header = lines.usizes("layer")?;
            if header != [li, w[0], w[1]] {
                return Err(Error::Checkpoint(format!("member {b} layer {li}: shape mismatch")));
            }
            let weights = lines.floats("weights", w[0] * w[1])?;
            let bias = lines.floats("bias", w[1])?;
            layers.push(Layer { n_in: w[0], n_out: w[1], weights, bias });
        }
        params.push(MlpParams { arch: arch.clone(), layers });
    }
    lines.next_line("end")?;
    if lines.inner.any(|(_, l)| !l.trim().is_empty()) {
        return Err(Error::Checkpoint("trailing content after `end`".into()));
    }
    Ok(EnsembleModel { layout, norm, members: params })
}
