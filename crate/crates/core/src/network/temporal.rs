//! Recurrent layer over per-frame embeddings and temporal pooling.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemporalPool {
    Mean,
    Attentive,
}

impl TemporalPool {
    pub fn name(self) -> &'static str {
        match self {
            Self::Mean => "mean",
            Self::Attentive => "attentive",
        }
    }
}

impl fmt::Display for TemporalPool {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TemporalPool {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Self::Mean),
            "attentive" => Ok(Self::Attentive),
            _ => Err(Error::Config(format!("unknown temporal pooling `{s}`"))),
        }
    }
}

/// Trainable weights of the vanilla recurrent cell
/// `h_t = tanh(W_in x_t + W_rec h_{t-1} + b)`, `h_{-1} = 0`.
#[derive(Clone, Copy, Debug)]
pub struct RnnVars {
    pub input_weights: Var,
    pub recurrent_weights: Var,
    pub bias: Var,
}

impl Graph {
    /// Runs the cell over `inputs` (each `[in_dim]`) from a zero state and
    /// returns the stacked outputs `[T, hidden]`.
    pub fn rnn_sequence(&mut self, rnn: &RnnVars, inputs: &[Var]) -> Result<Var> {
        if inputs.is_empty() {
            return Err(Error::InvalidArgument("sequence has no frames".into()));
        }
        let mut outputs = Vec::with_capacity(inputs.len());
        let mut state: Option<Var> = None;
        for &x in inputs {
            let mut pre = self.matvec(rnn.input_weights, x)?;
            if let Some(h) = state {
                let rec = self.matvec(rnn.recurrent_weights, h)?;
                pre = self.add(pre, rec)?;
            }
            let pre = self.add(pre, rnn.bias)?;
            let h = self.tanh(pre);
            outputs.push(h);
            state = Some(h);
        }
        self.stack(&outputs)
    }

    /// Pools a probe sequence `p: [Tp, d]` and a gallery sequence
    /// `q: [Tg, d]` into one vector each.
    ///
    /// `Mean` averages each sequence on its own. `Attentive` scores every
    /// frame pair with `A = tanh(P U Qᵀ)`, softmaxes the row maxima into
    /// probe frame weights and the column maxima into gallery frame
    /// weights, and returns the weighted frame sums.
    pub fn temporal_pool(
        &mut self,
        mode: TemporalPool,
        p: Var,
        q: Var,
        attention: Option<Var>,
    ) -> Result<(Var, Var)> {
        let (dp, dq) = (self.shape(p).to_vec(), self.shape(q).to_vec());
        if dp.len() != 2 || dq.len() != 2 || dp[1] != dq[1] {
            return Err(Error::shape(
                "temporal_pool",
                format!("feature sequences {dp:?} and {dq:?} are incompatible"),
            ));
        }
        match mode {
            TemporalPool::Mean => Ok((self.mean_rows(p)?, self.mean_rows(q)?)),
            TemporalPool::Attentive => {
                let u = attention.ok_or_else(|| {
                    Error::InvalidArgument("attentive pooling needs the attention matrix".into())
                })?;
                if self.shape(u) != [dp[1], dp[1]] {
                    return Err(Error::shape(
                        "temporal_pool",
                        format!("attention matrix {:?} for features of size {}", self.shape(u), dp[1]),
                    ));
                }
                let (wp, wq) = self.attention_weights(p, q, u)?;
                Ok((self.weighted_frames(wp, p)?, self.weighted_frames(wq, q)?))
            }
        }
    }

    /// Frame weights of attentive pooling, `([Tp], [Tg])`, each summing to one.
    pub fn attention_weights(&mut self, p: Var, q: Var, u: Var) -> Result<(Var, Var)> {
        let pu = self.matmul(p, u)?;
        let qt = self.transpose(q)?;
        let scores = self.matmul(pu, qt)?;
        let scores = self.tanh(scores);
        let row_max = self.max_along(scores, 1)?;
        let col_max = self.max_along(scores, 0)?;
        Ok((self.softmax(row_max)?, self.softmax(col_max)?))
    }

    fn weighted_frames(&mut self, weights: Var, frames: Var) -> Result<Var> {
        let t = self.shape(weights)[0];
        let d = self.shape(frames)[1];
        let row = self.reshape(weights, [1, t])?;
        let v = self.matmul(row, frames)?;
        self.reshape(v, [d])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn seq(g: &mut Graph, t: usize, d: usize, f: impl FnMut(usize) -> f64) -> Var {
        g.constant(Tensor::from_fn([t, d], f).unwrap())
    }

    #[test]
    fn mean_of_identical_frames() {
        let mut g = Graph::new();
        let p = seq(&mut g, 4, 3, |i| (i % 3) as f64);
        let (vp, vq) = g.temporal_pool(TemporalPool::Mean, p, p, None).unwrap();
        assert_eq!(g.value(vp).data(), &[0.0, 1.0, 2.0]);
        assert_eq!(g.value(vp), g.value(vq));
    }

    #[test]
    fn attentive_weights_normalize() {
        let mut g = Graph::new();
        let p = seq(&mut g, 5, 3, |i| (i as f64 * 0.37).sin());
        let q = seq(&mut g, 7, 3, |i| (i as f64 * 0.91).cos());
        let u = g.constant(Tensor::from_fn([3, 3], |i| 0.1 * i as f64 - 0.3).unwrap());
        let (wp, wq) = g.attention_weights(p, q, u).unwrap();
        assert!((g.value(wp).sum() - 1.0).abs() < 1e-12);
        assert!((g.value(wq).sum() - 1.0).abs() < 1e-12);
        assert_eq!(g.shape(wp), &[5]);
        assert_eq!(g.shape(wq), &[7]);
    }

    #[test]
    fn singleton_sequences_pool_to_the_frame() {
        let mut g = Graph::new();
        let p = seq(&mut g, 1, 4, |i| i as f64 - 1.5);
        let q = seq(&mut g, 1, 4, |i| 0.25 * i as f64);
        let u = g.constant(Tensor::from_fn([4, 4], |i| (i as f64).sin()).unwrap());
        let (ap, aq) = g.temporal_pool(TemporalPool::Attentive, p, q, Some(u)).unwrap();
        let (mp, mq) = g.temporal_pool(TemporalPool::Mean, p, q, None).unwrap();
        assert_eq!(g.value(ap).data(), g.value(mp).data());
        assert_eq!(g.value(aq).data(), g.value(mq).data());
        assert_eq!(g.value(ap).data(), &[-1.5, -0.5, 0.5, 1.5]);
    }

    #[test]
    fn dimension_mismatch_and_missing_attention() {
        let mut g = Graph::new();
        let p = seq(&mut g, 2, 3, |_| 0.0);
        let q = seq(&mut g, 2, 4, |_| 0.0);
        assert!(g.temporal_pool(TemporalPool::Mean, p, q, None).is_err());
        assert!(g.temporal_pool(TemporalPool::Attentive, p, p, None).is_err());
    }

    #[test]
    fn rnn_single_step_uses_zero_state() {
        let mut g = Graph::new();
        let rnn = RnnVars {
            input_weights: g.constant(Tensor::new([2, 2], vec![1.0, 0.0, 0.0, 2.0]).unwrap()),
            recurrent_weights: g.constant(Tensor::full([2, 2], 100.0).unwrap()),
            bias: g.constant(Tensor::vector(vec![0.5, 0.0]).unwrap()),
        };
        let x = g.constant(Tensor::vector(vec![0.25, 0.125]).unwrap());
        let out = g.rnn_sequence(&rnn, &[x]).unwrap();
        assert_eq!(g.shape(out), &[1, 2]);
        let v = g.value(out).data();
        assert_eq!(v, &[0.75f64.tanh(), 0.25f64.tanh()]);
        assert!(g.rnn_sequence(&rnn, &[]).is_err());
    }
}
