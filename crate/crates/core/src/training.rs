//! Pair objective, sampling and the SGD loop.
//!
//! A step draws one pair of sequences, runs both through the same network
//! inside one graph (so shared parameters receive both branches'
//! gradients), pools them, and minimizes
//! `siamese(v_i, v_j) + identity(v_i) + identity(v_j)`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{BackwardRule, Graph, Var};
use crate::data::SequenceSample;
use crate::error::{Error, Result};
use crate::network::{BoundParams, Network, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub margin: f64,
    pub lr: f64,
    /// The rate is multiplied by `lr_decay_factor` from this epoch on.
    pub lr_decay_epoch: usize,
    pub lr_decay_factor: f64,
    pub epochs: usize,
    pub train_seq_len: usize,
    pub test_seq_len: usize,
    /// 0 gives plain gradient descent.
    pub momentum: f64,
    /// Pairs whose gradients are averaged per update.
    pub pairs_per_step: usize,
    /// Rescales the averaged gradient to at most this global L2 norm.
    pub grad_clip: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::full()
    }
}

impl TrainConfig {
    pub fn full() -> Self {
        Self {
            margin: 4.0,
            lr: 2e-3,
            lr_decay_epoch: 800,
            lr_decay_factor: 0.5,
            epochs: 1200,
            train_seq_len: 16,
            test_seq_len: 128,
            momentum: 0.0,
            pairs_per_step: 1,
            grad_clip: None,
            seed: 0,
        }
    }

    /// Shorter schedule for synthetic runs. The larger rate needs clipping
    /// or the occasional seed saturates the tanh units and never recovers.
    pub fn desk() -> Self {
        Self {
            lr: 0.03,
            grad_clip: Some(5.0),
            epochs: 300,
            lr_decay_epoch: 200,
            train_seq_len: 8,
            ..Self::full()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "full" => Ok(Self::full()),
            "desk" => Ok(Self::desk()),
            _ => Err(Error::Config(format!("unknown training preset `{name}`"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.margin > 0.0) {
            return bad("margin must be positive");
        }
        if !(self.lr > 0.0) {
            return bad("learning rate must be positive");
        }
        if !(self.lr_decay_factor > 0.0) {
            return bad("learning-rate decay factor must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if self.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return bad("gradient clip must be positive");
        }
        if self.train_seq_len == 0 || self.test_seq_len == 0 || self.pairs_per_step == 0 {
            return bad("sequence lengths and pairs per step must be positive");
        }
        Ok(())
    }

    /// Learning rate used during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch >= self.lr_decay_epoch {
            self.lr * self.lr_decay_factor
        } else {
            self.lr
        }
    }
}

fn check_same_dims(a: &[usize], b: &[usize], op: &'static str) -> Result<()> {
    if a.len() != 1 || a != b {
        return Err(Error::shape(op, format!("feature vectors {a:?} and {b:?} differ")));
    }
    Ok(())
}

/// `‖v_i − v_j‖²` for a positive pair, `max(0, m − ‖v_i − v_j‖²)` otherwise.
pub fn siamese_loss(g: &mut Graph, vi: Var, vj: Var, same: bool, margin: f64) -> Result<Var> {
    check_same_dims(g.shape(vi), g.shape(vj), "siamese_loss")?;
    let d = g.sub(vi, vj)?;
    let sq = g.mul(d, d)?;
    let dist = g.sum(sq);
    if same {
        return Ok(dist);
    }
    let neg = g.scale(dist, -1.0);
    let gap = g.add_scalar(neg, margin);
    Ok(g.relu(gap))
}

pub fn siamese_loss_value(vi: &[f64], vj: &[f64], same: bool, margin: f64) -> Result<f64> {
    check_same_dims(&[vi.len()], &[vj.len()], "siamese_loss")?;
    let dist: f64 = vi.iter().zip(vj).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(if same { dist } else { (margin - dist).max(0.0) })
}

fn log_softmax_at(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits[label] - lse
}

fn check_label(n: usize, label: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("identity loss needs at least 2 classes, got {n}")));
    }
    if label >= n {
        return Err(Error::InvalidArgument(format!("label {label} out of range for {n} classes")));
    }
    Ok(())
}

/// `-log softmax(logits)[label]`.
pub fn identity_loss_value(logits: &[f64], label: usize) -> Result<f64> {
    check_label(logits.len(), label)?;
    Ok(-log_softmax_at(logits, label))
}

struct CrossEntropyRule {
    probs: Vec<f64>,
    label: usize,
}

impl BackwardRule for CrossEntropyRule {
    fn backward(&self, g: &[f64], _: &[&Tensor], _: &Tensor, _: &[bool]) -> Vec<Option<Vec<f64>>> {
        let mut dx: Vec<f64> = self.probs.iter().map(|p| p * g[0]).collect();
        dx[self.label] -= g[0];
        vec![Some(dx)]
    }
}

pub fn identity_loss(g: &mut Graph, logits: Var, label: usize) -> Result<Var> {
    let z = g.value(logits);
    if z.ndim() != 1 {
        return Err(Error::shape("identity_loss", format!("logits must be a vector, got {:?}", z.shape())));
    }
    let loss = identity_loss_value(z.data(), label)?;
    let probs = crate::autodiff::softmax(z.data());
    Ok(g.record(&[logits], Tensor::scalar(loss), CrossEntropyRule { probs, label }))
}

#[derive(Clone, Copy, Debug)]
pub struct ObjectiveTerms {
    pub siamese: Var,
    pub identity_i: Var,
    pub identity_j: Var,
    pub total: Var,
}

/// Unweighted sum of the siamese term and both identity terms.
#[allow(clippy::too_many_arguments)]
pub fn total_objective(
    g: &mut Graph,
    vi: Var,
    vj: Var,
    same: bool,
    labels: (usize, usize),
    logits_i: Var,
    logits_j: Var,
    margin: f64,
) -> Result<ObjectiveTerms> {
    let siamese = siamese_loss(g, vi, vj, same, margin)?;
    let identity_i = identity_loss(g, logits_i, labels.0)?;
    let identity_j = identity_loss(g, logits_j, labels.1)?;
    let s = g.add(siamese, identity_i)?;
    let total = g.add(s, identity_j)?;
    Ok(ObjectiveTerms {
        siamese,
        identity_i,
        identity_j,
        total,
    })
}

/// Linear identity classifier on pooled sequence features.
#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    pub params: ParamStore,
}

impl Classifier {
    pub fn new(num_ids: usize, feature_dim: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc1a5_51f1);
        let a = (6.0 / (num_ids + feature_dim) as f64).sqrt();
        let mut params = ParamStore::new();
        params.insert(
            "classifier.weight",
            Tensor::from_fn([num_ids, feature_dim], |_| rng.random_range(-a..a))?,
        )?;
        params.insert("classifier.bias", Tensor::zeros([num_ids])?)?;
        Ok(Self { params })
    }

    pub fn logits(&self, g: &mut Graph, bound: &[Var], v: Var) -> Result<Var> {
        let z = g.matvec(bound[0], v)?;
        g.add(z, bound[1])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairSample {
    pub a: usize,
    pub b: usize,
    pub same: bool,
}

/// Sequence indices grouped by dense label, each group ordered by camera.
struct PairSampler {
    by_label: Vec<Vec<usize>>,
}

impl PairSampler {
    fn new(samples: &[SequenceSample]) -> Result<(Self, Vec<usize>)> {
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (k, s) in samples.iter().enumerate() {
            groups.entry(s.person_id).or_default().push(k);
        }
        if groups.len() < 2 {
            return Err(Error::Dataset(format!(
                "training needs at least 2 identities, got {}",
                groups.len()
            )));
        }
        for (pid, seqs) in &mut groups {
            seqs.sort_by_key(|&k| samples[k].camera_id);
            seqs.dedup_by_key(|k| samples[*k].camera_id);
            if seqs.len() < 2 {
                return Err(Error::Dataset(format!("identity {pid} is seen by fewer than 2 cameras")));
            }
        }
        let person_ids = groups.keys().copied().collect();
        Ok((
            Self {
                by_label: groups.into_values().collect(),
            },
            person_ids,
        ))
    }

    /// One epoch: every identity once as the anchor, in shuffled order,
    /// alternating positive and negative pairs.
    fn epoch(&self, rng: &mut ChaCha8Rng) -> Vec<PairSample> {
        let n = self.by_label.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        order
            .into_iter()
            .enumerate()
            .map(|(step, anchor)| {
                let seqs = &self.by_label[anchor];
                let ca = rng.random_range(0..seqs.len());
                if step % 2 == 0 {
                    let mut cb = rng.random_range(0..seqs.len() - 1);
                    if cb >= ca {
                        cb += 1;
                    }
                    PairSample {
                        a: seqs[ca],
                        b: seqs[cb],
                        same: true,
                    }
                } else {
                    let mut other = rng.random_range(0..n - 1);
                    if other >= anchor {
                        other += 1;
                    }
                    let others = &self.by_label[other];
                    // prefer a different camera, as for positives
                    let choices: Vec<usize> = (0..others.len()).filter(|&c| c != ca).collect();
                    let cb = if choices.is_empty() {
                        rng.random_range(0..others.len())
                    } else {
                        choices[rng.random_range(0..choices.len())]
                    };
                    PairSample {
                        a: seqs[ca],
                        b: others[cb],
                        same: false,
                    }
                }
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub epoch: usize,
    pub step: usize,
    pub siamese: f64,
    pub identity_i: f64,
    pub identity_j: f64,
    pub total: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossTrace {
    pub rows: Vec<TraceRow>,
}

impl LossTrace {
    pub const HEADER: &'static str = "epoch,step,siamese,identity_i,identity_j,total,lr";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.epoch, r.step, r.siamese, r.identity_i, r.identity_j, r.total, r.lr
            );
        }
        out
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.rows
            .iter()
            .all(|r| [r.siamese, r.identity_i, r.identity_j, r.total].iter().all(|v| v.is_finite()))
    }

    /// Mean total loss per epoch.
    pub fn epoch_means(&self) -> Vec<f64> {
        let mut sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
        for r in &self.rows {
            let e = sums.entry(r.epoch).or_default();
            e.0 += r.total;
            e.1 += 1;
        }
        sums.values().map(|(s, n)| s / *n as f64).collect()
    }
}

pub struct TrainOutcome {
    pub network: Network,
    pub classifier: Classifier,
    pub trace: LossTrace,
    /// Person id of each classifier label.
    pub person_ids: Vec<usize>,
}

struct StepLosses {
    siamese: f64,
    identity_i: f64,
    identity_j: f64,
    total: f64,
}

/// Loss and gradients (network params then classifier params) of one pair.
fn pair_gradients(
    net: &Network,
    classifier: &Classifier,
    a: (&[Tensor], usize),
    b: (&[Tensor], usize),
    same: bool,
    margin: f64,
) -> Result<(StepLosses, Vec<Tensor>)> {
    let mut g = Graph::new();
    let bound = net.bind(&mut g, true);
    let cls: Vec<Var> = classifier.params.tensors().iter().map(|t| g.param(t.clone())).collect();
    let fa: Vec<Var> = a.0.iter().map(|f| g.constant(f.clone())).collect();
    let fb: Vec<Var> = b.0.iter().map(|f| g.constant(f.clone())).collect();
    let terms = pair_objective(&mut g, net, &bound, (classifier, &cls), (&fa, a.1), (&fb, b.1), same, margin)?;
    let item = |g: &Graph, v: Var| g.value(v).data()[0];
    let losses = StepLosses {
        siamese: item(&g, terms.siamese),
        identity_i: item(&g, terms.identity_i),
        identity_j: item(&g, terms.identity_j),
        total: item(&g, terms.total),
    };
    let leaves: Vec<Var> = bound.vars().iter().chain(&cls).copied().collect();
    let mut grads = g.backward(terms.total)?;
    let out = leaves
        .into_iter()
        .map(|v| grads.take(v).expect("trainable leaf has a gradient"))
        .collect();
    Ok((losses, out))
}

/// Objective of one labelled pair of frame sequences, both run through
/// the same bound parameters.
#[allow(clippy::too_many_arguments)]
pub fn pair_objective(
    g: &mut Graph,
    net: &Network,
    bound: &BoundParams,
    classifier: (&Classifier, &[Var]),
    a: (&[Var], usize),
    b: (&[Var], usize),
    same: bool,
    margin: f64,
) -> Result<ObjectiveTerms> {
    let sa = net.forward_sequence(g, bound, a.0)?;
    let sb = net.forward_sequence(g, bound, b.0)?;
    let (vi, vj) = net.pool_pair(g, bound, sa, sb)?;
    let li = classifier.0.logits(g, classifier.1, vi)?;
    let lj = classifier.0.logits(g, classifier.1, vj)?;
    total_objective(g, vi, vj, same, (a.1, b.1), li, lj, margin)
}

/// Trains `net` on `samples` (every identity needs at least two cameras).
///
/// Deterministic in `(net, samples, cfg)`.
pub fn train(mut net: Network, samples: &[SequenceSample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (sampler, person_ids) = PairSampler::new(samples)?;
    let label_of: BTreeMap<usize, usize> = person_ids.iter().enumerate().map(|(l, &p)| (p, l)).collect();
    let mut classifier = Classifier::new(person_ids.len(), net.feature_dim(), cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n_net = net.params().len();
    let mut velocity: Vec<Vec<f64>> = net
        .params()
        .tensors()
        .iter()
        .chain(classifier.params.tensors())
        .map(|t| vec![0.0; t.numel()])
        .collect();
    let mut trace = LossTrace::default();
    let mut step = 0;

    let window = |s: &SequenceSample, rng: &mut ChaCha8Rng| -> usize {
        let spare = s.len().saturating_sub(cfg.train_seq_len);
        rng.random_range(0..=spare)
    };

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let pairs = sampler.epoch(&mut rng);
        for batch in pairs.chunks(cfg.pairs_per_step) {
            let mut grad_sum: Option<Vec<Tensor>> = None;
            let mut acc = StepLosses {
                siamese: 0.0,
                identity_i: 0.0,
                identity_j: 0.0,
                total: 0.0,
            };
            for pair in batch {
                let (sa, sb) = (&samples[pair.a], &samples[pair.b]);
                let (oa, ob) = (window(sa, &mut rng), window(sb, &mut rng));
                let (losses, grads) = pair_gradients(
                    &net,
                    &classifier,
                    (sa.window(oa, cfg.train_seq_len), label_of[&sa.person_id]),
                    (sb.window(ob, cfg.train_seq_len), label_of[&sb.person_id]),
                    pair.same,
                    cfg.margin,
                )?;
                acc.siamese += losses.siamese;
                acc.identity_i += losses.identity_i;
                acc.identity_j += losses.identity_j;
                acc.total += losses.total;
                match &mut grad_sum {
                    None => grad_sum = Some(grads),
                    Some(sum) => {
                        for (s, g) in sum.iter_mut().zip(&grads) {
                            s.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b);
                        }
                    }
                }
            }
            let inv = 1.0 / batch.len() as f64;
            let grads = grad_sum.expect("batches are non-empty");
            let norm = inv * grads.iter().flat_map(|g| g.data()).map(|v| v * v).sum::<f64>().sqrt();
            let factor = match cfg.grad_clip {
                Some(c) if norm > c => inv * c / norm,
                _ => inv,
            };
            let params = net
                .params_mut()
                .tensors_mut()
                .iter_mut()
                .chain(classifier.params.tensors_mut().iter_mut());
            for ((p, g), vel) in params.zip(&grads).zip(&mut velocity) {
                for ((w, &dw), v) in p.data_mut().iter_mut().zip(g.data()).zip(vel.iter_mut()) {
                    *v = cfg.momentum * *v - lr * dw * factor;
                    *w += *v;
                }
            }
            trace.rows.push(TraceRow {
                epoch,
                step,
                siamese: acc.siamese * inv,
                identity_i: acc.identity_i * inv,
                identity_j: acc.identity_j * inv,
                total: acc.total * inv,
                lr,
            });
            step += 1;
        }
    }
    debug_assert_eq!(velocity.len(), n_net + classifier.params.len());
    Ok(TrainOutcome {
        network: net,
        classifier,
        trace,
        person_ids,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{check_gradients, GRAD_CHECK_EPS, GRAD_CHECK_TOL};
    use crate::data::{synth_generate, SynthSpec};
    use crate::network::NetworkConfig;

    #[test]
    fn siamese_unit_values() {
        assert_eq!(siamese_loss_value(&[0.3, -1.0], &[0.3, -1.0], true, 4.0).unwrap(), 0.0);
        assert_eq!(siamese_loss_value(&[3.0, 0.0], &[0.0, 0.0], false, 4.0).unwrap(), 0.0);
        assert_eq!(siamese_loss_value(&[1.0, 0.0], &[0.0, 0.0], false, 4.0).unwrap(), 3.0);
        assert!(siamese_loss_value(&[1.0], &[1.0, 2.0], true, 4.0).is_err());

        let mut g = Graph::new();
        let a = g.constant(Tensor::vector(vec![1.0, 0.0]).unwrap());
        let b = g.constant(Tensor::vector(vec![0.0, 0.0]).unwrap());
        let l = siamese_loss(&mut g, a, b, false, 4.0).unwrap();
        assert_eq!(g.value(l).data(), &[3.0]);
    }

    #[test]
    fn identity_unit_values() {
        let uniform = identity_loss_value(&[0.5; 4], 1).unwrap();
        assert!((uniform - 4f64.ln()).abs() <= 1e-12);
        assert!(identity_loss_value(&[0.0, 1e6, 0.0], 1).unwrap().abs() < 1e-12);
        let v = identity_loss_value(&[1.0, 2.0, 3.0], 2).unwrap();
        assert!((v - 0.40760596).abs() <= 1e-6, "{v}");
        assert!(identity_loss_value(&[1.0, 2.0], 2).is_err());
        assert!(identity_loss_value(&[1.0], 0).is_err());
    }

    #[test]
    fn objective_is_the_sum_of_its_terms() {
        let mut g = Graph::new();
        let vi = g.constant(Tensor::vector(vec![0.2, -0.4]).unwrap());
        let vj = g.constant(Tensor::vector(vec![0.1, 0.7]).unwrap());
        let li = g.constant(Tensor::vector(vec![0.3, 1.0, -2.0]).unwrap());
        let lj = g.constant(Tensor::vector(vec![2.0, 0.0, 0.5]).unwrap());
        let t = total_objective(&mut g, vi, vj, false, (1, 0), li, lj, 4.0).unwrap();
        let expect = siamese_loss_value(&[0.2, -0.4], &[0.1, 0.7], false, 4.0).unwrap()
            + identity_loss_value(&[0.3, 1.0, -2.0], 1).unwrap()
            + identity_loss_value(&[2.0, 0.0, 0.5], 0).unwrap();
        assert!((g.value(t.total).data()[0] - expect).abs() < 1e-14);
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let inputs = [
            Tensor::vector(vec![0.4, -0.3, 0.2]).unwrap(),
            Tensor::vector(vec![-0.1, 0.5, 0.25]).unwrap(),
            Tensor::vector(vec![0.3, -1.2, 2.0, 0.1]).unwrap(),
        ];
        for same in [true, false] {
            let r = check_gradients(
                |g, v| {
                    let s = siamese_loss(g, v[0], v[1], same, 4.0)?;
                    let c = identity_loss(g, v[2], 3)?;
                    g.add(s, c)
                },
                &inputs,
                GRAD_CHECK_EPS,
            )
            .unwrap();
            assert!(r.passed(GRAD_CHECK_TOL), "{r:?}");
        }
    }

    #[test]
    fn schedule_changes_once() {
        let cfg = TrainConfig::full();
        let changes = (1..cfg.epochs).filter(|&e| cfg.lr_at(e) != cfg.lr_at(e - 1)).collect::<Vec<_>>();
        assert_eq!(changes, vec![800]);
        assert_eq!(cfg.lr_at(1199), 1e-3);
    }

    #[test]
    fn sampler_alternates_and_respects_cameras() {
        let samples = synth_generate(&SynthSpec::new(5, 2, (4, 4), 0)).unwrap();
        let (sampler, ids) = PairSampler::new(&samples).unwrap();
        assert_eq!(ids, vec![0, 1, 2, 3, 4]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let pairs = sampler.epoch(&mut rng);
            assert_eq!(pairs.len(), 5);
            for (k, p) in pairs.iter().enumerate() {
                let (a, b) = (&samples[p.a], &samples[p.b]);
                assert_eq!(p.same, k % 2 == 0);
                assert_eq!(p.same, a.person_id == b.person_id);
                assert_ne!(a.camera_id, b.camera_id);
            }
        }
        assert!(PairSampler::new(&samples[..2]).is_err());
        let one_cam: Vec<_> = samples.iter().filter(|s| s.camera_id == 0).cloned().collect();
        assert!(PairSampler::new(&one_cam).is_err());
    }

    fn small_run(seed: u64) -> TrainOutcome {
        let mut cfg = NetworkConfig::baseline().desk_scale();
        cfg.channels = [3, 3, 4, 4];
        cfg.embedding_dim = 6;
        cfg.rnn_hidden = 6;
        cfg.input_extent = (8, 8);
        let net = Network::build(cfg, seed).unwrap();
        let samples = synth_generate(&SynthSpec::new(3, 4, (8, 8), 2)).unwrap();
        let tc = TrainConfig {
            epochs: 3,
            lr_decay_epoch: 2,
            train_seq_len: 3,
            seed,
            ..TrainConfig::desk()
        };
        train(net, &samples, &tc).unwrap()
    }

    #[test]
    fn training_is_finite_and_deterministic() {
        let a = small_run(4);
        let b = small_run(4);
        assert!(a.trace.all_finite());
        assert_eq!(a.trace.rows.len(), 9);
        assert_eq!(a.trace.rows[8].lr, 0.015);
        assert_eq!(a.network.params(), b.network.params());
        assert_eq!(a.trace.to_csv(), b.trace.to_csv());
        assert!(a.trace.to_csv().starts_with(LossTrace::HEADER));
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::desk();
        c.margin = 0.0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::desk();
        c.lr = -1.0;
        assert!(c.validate().is_err());
        assert!(TrainConfig::preset("nope").is_err());
    }
}
