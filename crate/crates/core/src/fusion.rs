//! Spatial fusion of several equally shaped stream feature maps.
//!
//! With `S1` inputs of shape `[H, W, D]`:
//!
//! | kind      | output            | rule                                   |
//! |-----------|-------------------|----------------------------------------|
//! | `Sum`     | `[H, W, D]`       | `y[i,j,d] = sum_s x_s[i,j,d]`          |
//! | `Max`     | `[H, W, D]`       | `y[i,j,d] = max_s x_s[i,j,d]`          |
//! | `Channel` | `[H, W, S1*D]`    | `y[i, j, s*D + d] = x_s[i,j,d]`        |
//! | `Width`   | `[H, S1*W, D]`    | `y[i, s*W + j, d] = x_s[i,j,d]`        |
//! | `Height`  | `[S1*H, W, D]`    | `y[s*H + i, j, d] = x_s[i,j,d]`        |
//!
//! Streams are placed in the order given (zero-based `s` here).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{BackwardRule, Graph, SwitchState, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionKind {
    Sum,
    Max,
    Channel,
    Width,
    Height,
}

impl FusionKind {
    pub const ALL: [FusionKind; 5] = [Self::Sum, Self::Max, Self::Channel, Self::Width, Self::Height];

    pub fn name(self) -> &'static str {
        match self {
            Self::Sum => "sum",
            Self::Max => "max",
            Self::Channel => "channel",
            Self::Width => "width",
            Self::Height => "height",
        }
    }

    /// Axis of `[H, W, D]` that concatenating kinds stack along.
    pub fn concat_axis(self) -> Option<usize> {
        match self {
            Self::Height => Some(0),
            Self::Width => Some(1),
            Self::Channel => Some(2),
            Self::Sum | Self::Max => None,
        }
    }

    /// Shape of the fused map for `arity` inputs of shape `[h, w, d]`.
    pub fn output_shape(self, arity: usize, [h, w, d]: [usize; 3]) -> [usize; 3] {
        match self {
            Self::Sum | Self::Max => [h, w, d],
            Self::Channel => [h, w, arity * d],
            Self::Width => [h, arity * w, d],
            Self::Height => [arity * h, w, d],
        }
    }
}

impl fmt::Display for FusionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FusionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown fusion kind `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusedMap {
    pub y: Tensor,
    pub kind: FusionKind,
    pub arity: usize,
}

impl FusedMap {
    /// Block `s` of a concatenation, i.e. the input map of stream `s`.
    pub fn block(&self, s: usize) -> Result<Tensor> {
        let axis = self.kind.concat_axis().ok_or_else(|| {
            Error::InvalidArgument(format!("{} fusion has no blocks", self.kind))
        })?;
        if s >= self.arity {
            return Err(Error::InvalidArgument(format!(
                "block {s} of a {}-way fusion",
                self.arity
            )));
        }
        let len = self.y.shape()[axis] / self.arity;
        let mut g = Graph::new();
        let y = g.constant(self.y.clone());
        let b = g.slice(y, axis, s * len, len)?;
        Ok(g.value(b).clone())
    }
}

fn check_inputs(shapes: &[&[usize]]) -> Result<[usize; 3]> {
    if shapes.len() < 2 {
        return Err(Error::shape(
            "fuse",
            format!("fusion needs at least 2 streams, got {}", shapes.len()),
        ));
    }
    let [h, w, d] = *shapes[0] else {
        return Err(Error::shape("fuse", format!("stream 0 is not [H, W, D]: {:?}", shapes[0])));
    };
    for (s, shape) in shapes.iter().enumerate().skip(1) {
        if *shape != [h, w, d] {
            return Err(Error::shape(
                "fuse",
                format!("stream {s} has shape {shape:?}, stream 0 has [{h}, {w}, {d}]"),
            ));
        }
    }
    Ok([h, w, d])
}

/// Copies `x` into block `s` of `y` following the concatenation index map.
fn place_block(axis: usize, s: usize, [h, w, d]: [usize; 3], arity: usize, x: &[f64], y: &mut [f64]) {
    match axis {
        0 => y[s * h * w * d..(s + 1) * h * w * d].copy_from_slice(x),
        1 => {
            let (yw, row) = (arity * w, w * d);
            for i in 0..h {
                let dst = (i * yw + s * w) * d;
                y[dst..dst + row].copy_from_slice(&x[i * row..(i + 1) * row]);
            }
        }
        _ => {
            let yd = arity * d;
            for cell in 0..h * w {
                let dst = cell * yd + s * d;
                y[dst..dst + d].copy_from_slice(&x[cell * d..(cell + 1) * d]);
            }
        }
    }
}

fn take_block(axis: usize, s: usize, [h, w, d]: [usize; 3], arity: usize, y: &[f64]) -> Vec<f64> {
    let mut x = Vec::with_capacity(h * w * d);
    match axis {
        0 => x.extend_from_slice(&y[s * h * w * d..(s + 1) * h * w * d]),
        1 => {
            let (yw, row) = (arity * w, w * d);
            for i in 0..h {
                let src = (i * yw + s * w) * d;
                x.extend_from_slice(&y[src..src + row]);
            }
        }
        _ => {
            let yd = arity * d;
            for cell in 0..h * w {
                let src = cell * yd + s * d;
                x.extend_from_slice(&y[src..src + d]);
            }
        }
    }
    x
}

enum FusionRule {
    Sum,
    Max { winner: Vec<usize> },
    Concat { axis: usize, dims: [usize; 3] },
}

impl BackwardRule for FusionRule {
    fn backward(&self, g: &[f64], ops: &[&Tensor], _: &Tensor, wanted: &[bool]) -> Vec<Option<Vec<f64>>> {
        let arity = ops.len();
        match self {
            FusionRule::Sum => wanted.iter().map(|&w| w.then(|| g.to_vec())).collect(),
            FusionRule::Max { winner } => {
                let mut grads: Vec<Option<Vec<f64>>> = wanted
                    .iter()
                    .map(|&w| w.then(|| vec![0.0; g.len()]))
                    .collect();
                for (k, (&s, gv)) in winner.iter().zip(g).enumerate() {
                    if let Some(gs) = grads[s].as_mut() {
                        gs[k] = *gv;
                    }
                }
                grads
            }
            FusionRule::Concat { axis, dims } => (0..arity)
                .map(|s| wanted[s].then(|| take_block(*axis, s, *dims, arity, g)))
                .collect(),
        }
    }

    fn record_switches(&self, state: &mut SwitchState) {
        if let FusionRule::Max { winner } = self {
            state.indices(winner);
        }
    }
}

impl Graph {
    /// Fuses `maps` (all `[H, W, D]`, at least two) into one map.
    pub fn fuse(&mut self, kind: FusionKind, maps: &[Var]) -> Result<Var> {
        let shapes: Vec<&[usize]> = maps.iter().map(|&m| self.shape(m)).collect();
        let dims = check_inputs(&shapes)?;
        let arity = maps.len();
        let numel = dims.iter().product::<usize>();
        let inputs: Vec<&[f64]> = maps.iter().map(|&m| self.value(m).data()).collect();
        let (data, rule) = match kind {
            FusionKind::Sum => {
                let mut y = inputs[0].to_vec();
                for x in &inputs[1..] {
                    y.iter_mut().zip(*x).for_each(|(a, b)| *a += b);
                }
                (y, FusionRule::Sum)
            }
            FusionKind::Max => {
                let mut y = inputs[0].to_vec();
                let mut winner = vec![0usize; numel];
                for (s, x) in inputs.iter().enumerate().skip(1) {
                    for k in 0..numel {
                        if x[k] > y[k] {
                            y[k] = x[k];
                            winner[k] = s;
                        }
                    }
                }
                (y, FusionRule::Max { winner })
            }
            FusionKind::Channel | FusionKind::Width | FusionKind::Height => {
                let axis = kind.concat_axis().expect("concatenating kind");
                let mut y = vec![0.0; arity * numel];
                for (s, x) in inputs.iter().enumerate() {
                    place_block(axis, s, dims, arity, x, &mut y);
                }
                (y, FusionRule::Concat { axis, dims })
            }
        };
        let out = Tensor::new(kind.output_shape(arity, dims).to_vec(), data)?;
        Ok(self.record(maps, out, rule))
    }
}

/// Tensor-level fusion.
pub fn fuse(kind: FusionKind, maps: &[Tensor]) -> Result<FusedMap> {
    let mut g = Graph::new();
    let vars: Vec<Var> = maps.iter().map(|m| g.constant(m.clone())).collect();
    let y = g.fuse(kind, &vars)?;
    Ok(FusedMap {
        y: g.value(y).clone(),
        kind,
        arity: maps.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(shape: [usize; 3], offset: f64) -> Tensor {
        Tensor::from_fn(shape, |i| offset + i as f64).unwrap()
    }

    #[test]
    fn sum_with_zero_map_is_identity() {
        let x = ramp([2, 3, 2], 1.0);
        let z = Tensor::zeros([2, 3, 2]).unwrap();
        assert_eq!(fuse(FusionKind::Sum, &[x.clone(), z]).unwrap().y, x);
    }

    #[test]
    fn max_is_idempotent() {
        let x = ramp([2, 2, 2], -3.0);
        assert_eq!(fuse(FusionKind::Max, &[x.clone(), x.clone()]).unwrap().y, x);
    }

    #[test]
    fn width_fusion_index_map() {
        let a = Tensor::new([1, 2, 1], vec![1.0, 2.0]).unwrap();
        let b = Tensor::new([1, 2, 1], vec![3.0, 4.0]).unwrap();
        let f = fuse(FusionKind::Width, &[a, b]).unwrap();
        assert_eq!(f.y.shape(), &[1, 4, 1]);
        assert_eq!(f.y.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn channel_fusion_blocks() {
        let a = ramp([2, 2, 3], 0.0);
        let b = ramp([2, 2, 3], 100.0);
        let f = fuse(FusionKind::Channel, &[a.clone(), b.clone()]).unwrap();
        assert_eq!(f.y.shape(), &[2, 2, 6]);
        for i in 0..2 {
            for j in 0..2 {
                for d in 0..3 {
                    assert_eq!(f.y.at3(i, j, d), a.at3(i, j, d));
                    assert_eq!(f.y.at3(i, j, 3 + d), b.at3(i, j, d));
                }
            }
        }
        assert_eq!(f.block(1).unwrap(), b);
    }

    #[test]
    fn height_fusion_stacks_rows() {
        let a = ramp([1, 2, 1], 0.0);
        let b = ramp([1, 2, 1], 10.0);
        let f = fuse(FusionKind::Height, &[a, b]).unwrap();
        assert_eq!(f.y.shape(), &[2, 2, 1]);
        assert_eq!(f.y.data(), &[0.0, 1.0, 10.0, 11.0]);
    }

    #[test]
    fn rejects_bad_inputs() {
        let a = ramp([2, 2, 1], 0.0);
        let b = ramp([2, 3, 1], 0.0);
        assert!(fuse(FusionKind::Sum, &[a.clone()]).is_err());
        assert!(fuse(FusionKind::Width, &[a.clone(), b]).is_err());
        assert!(fuse(FusionKind::Max, &[]).is_err());
        let f = fuse(FusionKind::Sum, &[a.clone(), a]).unwrap();
        assert!(f.block(0).is_err());
    }

    #[test]
    fn sum_gradient_passes_through() {
        let mut g = Graph::new();
        let a = g.param(ramp([2, 2, 1], 0.0));
        let b = g.param(ramp([2, 2, 1], 5.0));
        let w = g.constant(ramp([2, 2, 1], 1.0));
        let y = g.fuse(FusionKind::Sum, &[a, b]).unwrap();
        let weighted = g.mul(y, w).unwrap();
        let loss = g.sum(weighted);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(a).unwrap().data(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(grads.get(b).unwrap().data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn parses_names() {
        for k in FusionKind::ALL {
            assert_eq!(k.name().parse::<FusionKind>().unwrap(), k);
        }
        assert!("outer".parse::<FusionKind>().is_err());
    }
}
