//! Randomized verification suites: finite-difference gradient checks,
//! brute-force oracles and the fusion algebra laws. Used by the
//! `gradcheck`/`oracle-check` commands and by the test suites.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{check_gradients, GradCheckReport, Graph, Var, GRAD_CHECK_EPS, GRAD_CHECK_TOL};
use crate::error::Result;
use crate::eval::compute_cmc;
use crate::fusion::{fuse, FusionKind};
use crate::layers::{conv2d, pool2d, ConvGeometry, Conv2dParams, PoolKind, PoolParams};
use crate::network::{BoundParams, Network, NetworkConfig, RnnVars, StreamSpec, TemporalPool, Downsampler};
use crate::tensor::Tensor;
use crate::training::{identity_loss, pair_objective, siamese_loss, Classifier};

/// Oracle agreement threshold (absolute).
pub const ORACLE_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct CaseResult {
    pub name: String,
    pub instances: usize,
    pub failures: usize,
    /// Largest relative (gradients) or absolute (oracles) error seen.
    pub max_error: f64,
    pub first_failure: Option<String>,
}

impl CaseResult {
    fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            instances: 0,
            failures: 0,
            max_error: 0.0,
            first_failure: None,
        }
    }

    fn record(&mut self, ok: bool, error: f64, detail: impl FnOnce() -> String) {
        self.instances += 1;
        self.max_error = self.max_error.max(error);
        if !ok {
            self.failures += 1;
            self.first_failure.get_or_insert_with(detail);
        }
    }

    pub fn passed(&self) -> bool {
        self.instances > 0 && self.failures == 0
    }
}

#[derive(Clone, Debug)]
pub struct SuiteReport {
    pub suite: &'static str,
    pub cases: Vec<CaseResult>,
    pub elapsed: Duration,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.cases.iter().all(CaseResult::passed)
    }

    pub fn min_instances(&self) -> usize {
        self.cases.iter().map(|c| c.instances).min().unwrap_or(0)
    }

    pub fn lines(&self) -> Vec<String> {
        self.cases
            .iter()
            .map(|c| {
                let mut line = format!(
                    "{} {:<28} instances={:<3} max_err={:.3e}",
                    if c.passed() { "ok  " } else { "FAIL" },
                    c.name,
                    c.instances,
                    c.max_error
                );
                if let Some(f) = &c.first_failure {
                    line.push_str(&format!("  first failure: {f}"));
                }
                line
            })
            .collect()
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0)).expect("valid shape")
}

/// `sum(v ⊙ R)` for a fixed pseudo-random `R`, so every output entry gets a
/// distinct upstream gradient.
fn project(g: &mut Graph, v: Var, salt: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(salt);
    let shape = g.shape(v).to_vec();
    let r = g.constant(uniform(&mut rng, &shape));
    let p = g.mul(v, r)?;
    Ok(g.sum(p))
}

fn grad_case<F>(case: &mut CaseResult, inputs: &[Tensor], build: F) -> Result<()>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let report: GradCheckReport = check_gradients(build, inputs, GRAD_CHECK_EPS)?;
    let ok = report.passed(GRAD_CHECK_TOL);
    case.record(ok, report.max_rel_err, || format!("{report:?} for shapes {:?}", shapes(inputs)));
    Ok(())
}

/// Random extents, each in `1..=max`.
fn extents(rng: &mut ChaCha8Rng, max: &[usize]) -> Vec<usize> {
    max.iter().map(|&m| rng.random_range(1..=m)).collect()
}

fn shapes(ts: &[Tensor]) -> Vec<Vec<usize>> {
    ts.iter().map(|t| t.shape().to_vec()).collect()
}

fn random_conv(rng: &mut ChaCha8Rng, max_extent: usize) -> (Tensor, Tensor, Tensor, ConvGeometry) {
    loop {
        let (h, w) = (rng.random_range(1..=max_extent), rng.random_range(1..=max_extent));
        let (cin, cout) = (rng.random_range(1..=3), rng.random_range(1..=3));
        let (kh, kw) = (rng.random_range(1..=3), rng.random_range(1..=3));
        let geo = ConvGeometry {
            stride: rng.random_range(1..=2),
            padding: rng.random_range(0..=1),
            dilation: rng.random_range(1..=2),
        };
        if geo.output_extent(h, kh).is_some() && geo.output_extent(w, kw).is_some() {
            return (
                uniform(rng, &[h, w, cin]),
                uniform(rng, &[cout, cin, kh, kw]),
                uniform(rng, &[cout]),
                geo,
            );
        }
    }
}

fn random_pool(rng: &mut ChaCha8Rng, kind: PoolKind, max_extent: usize) -> (Tensor, PoolParams) {
    loop {
        let (h, w) = (rng.random_range(1..=max_extent), rng.random_range(1..=max_extent));
        let dilation = if kind.is_dilated() { rng.random_range(2..=3) } else { 1 };
        let Ok(mut p) = PoolParams::new(kind, rng.random_range(1..=3), rng.random_range(1..=3), dilation)
        else {
            continue;
        };
        if rng.random_bool(0.5) {
            p = p.covering(h, w);
        }
        if p.validate().is_ok() && p.output_extent(h, w).is_some() {
            let c = rng.random_range(1..=3);
            return (uniform(rng, &[h, w, c]), p);
        }
    }
}

fn tiny_network_config(rng: &mut ChaCha8Rng) -> NetworkConfig {
    let mut cfg = NetworkConfig::baseline();
    let kinds = Downsampler::ALL;
    let streams = rng.random_range(1..=3);
    cfg.streams = (0..streams)
        .map(|_| StreamSpec::new(kinds[rng.random_range(0..kinds.len())]))
        .collect();
    cfg.fusion_kind = FusionKind::ALL[rng.random_range(0..5)];
    cfg.fusion_layer = rng.random_range(1..=4);
    cfg.channels = [2, 2, 2, 2];
    cfg.kernel = 3;
    cfg.embedding_dim = 3;
    cfg.rnn_hidden = 3;
    cfg.input_extent = (8, 8);
    cfg.temporal_pool = if rng.random_bool(0.5) {
        TemporalPool::Mean
    } else {
        TemporalPool::Attentive
    };
    cfg
}

/// Finite-difference checks of every differentiable primitive, the
/// recurrent layer, both temporal poolings, both loss terms and the full
/// pair objective, `instances` random cases each.
pub fn gradient_suite(instances: usize, seed: u64) -> Result<SuiteReport> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = Vec::new();

    let mut case = CaseResult::new("conv2d");
    for k in 0..instances {
        let (x, w, b, geo) = random_conv(&mut rng, 6);
        grad_case(&mut case, &[x, w, b], |g, v| {
            let y = g.conv2d(v[0], v[1], v[2], geo)?;
            project(g, y, k as u64)
        })?;
    }
    cases.push(case);

    for kind in [PoolKind::Max, PoolKind::Average, PoolKind::DilatedMax, PoolKind::DilatedAverage] {
        let mut case = CaseResult::new(format!("pool2d/{kind:?}"));
        for k in 0..instances {
            let (x, p) = random_pool(&mut rng, kind, 7);
            grad_case(&mut case, &[x], |g, v| {
                let y = g.pool2d(v[0], &p)?;
                project(g, y, k as u64)
            })?;
        }
        cases.push(case);
    }

    let mut case = CaseResult::new("upsample_zero_pad");
    for k in 0..instances {
        let shape = extents(&mut rng, &[4, 4, 3]);
        let x = uniform(&mut rng, &shape);
        let f = rng.random_range(1..=3);
        grad_case(&mut case, &[x], |g, v| {
            let y = g.upsample_zero_pad(v[0], f)?;
            project(g, y, k as u64)
        })?;
    }
    cases.push(case);

    let mut case = CaseResult::new("multiscale_branch");
    for k in 0..instances {
        // every branch stride must fit the map
        let (h, w, c) = (rng.random_range(3..=7), rng.random_range(3..=7), rng.random_range(1..=2));
        let x = uniform(&mut rng, &[h, w, c]);
        grad_case(&mut case, &[x], |g, v| {
            let ys = g.multiscale_branch(v[0], &[1, 2, 3])?;
            let mut total = project(g, ys[0], k as u64)?;
            for (s, &y) in ys.iter().enumerate().skip(1) {
                let p = project(g, y, k as u64 + 100 * s as u64)?;
                total = g.add(total, p)?;
            }
            Ok(total)
        })?;
    }
    cases.push(case);

    let mut case = CaseResult::new("global_avg_pool");
    for k in 0..instances {
        let shape = extents(&mut rng, &[5, 5, 3]);
        let x = uniform(&mut rng, &shape);
        grad_case(&mut case, &[x], |g, v| {
            let y = g.global_avg_pool(v[0])?;
            project(g, y, k as u64)
        })?;
    }
    cases.push(case);

    for kind in FusionKind::ALL {
        let mut case = CaseResult::new(format!("fuse/{kind}"));
        for k in 0..instances {
            let s = rng.random_range(2..=4);
            let shape = [rng.random_range(1..=4), rng.random_range(1..=4), rng.random_range(1..=3)];
            let maps: Vec<Tensor> = (0..s).map(|_| uniform(&mut rng, &shape)).collect();
            grad_case(&mut case, &maps, |g, v| {
                let y = g.fuse(kind, v)?;
                project(g, y, k as u64)
            })?;
        }
        cases.push(case);
    }

    let mut case = CaseResult::new("tensor ops");
    for k in 0..instances {
        let (m, n) = (rng.random_range(1..=4), rng.random_range(1..=4));
        let inputs = [uniform(&mut rng, &[m, n]), uniform(&mut rng, &[n, m]), uniform(&mut rng, &[m, n])];
        grad_case(&mut case, &inputs, |g, v| {
            let a = g.tanh(v[0]);
            let r = g.relu(v[2]);
            let ar = g.mul(a, r)?;
            let d = g.sub(ar, v[2])?;
            let p = g.matmul(d, v[1])?;
            let t = g.transpose(p)?;
            let rows = g.max_along(t, 1)?;
            let cols = g.max_along(p, 0)?;
            let sm = g.softmax(rows)?;
            let st = g.stack(&[sm, cols])?;
            let sl = g.slice(st, 0, 1, 1)?;
            let a = project(g, st, k as u64)?;
            let b = project(g, sl, k as u64 + 1)?;
            let c = g.scale(b, 0.5);
            let c = g.add_scalar(c, 1.0);
            g.add(a, c)
        })?;
    }
    cases.push(case);

    let mut case = CaseResult::new("rnn");
    for k in 0..instances {
        let (t, e, h) = (rng.random_range(1..=4), rng.random_range(1..=3), rng.random_range(1..=3));
        let mut inputs = vec![uniform(&mut rng, &[h, e]), uniform(&mut rng, &[h, h]), uniform(&mut rng, &[h])];
        inputs.extend((0..t).map(|_| uniform(&mut rng, &[e])));
        grad_case(&mut case, &inputs, |g, v| {
            let rnn = RnnVars {
                input_weights: v[0],
                recurrent_weights: v[1],
                bias: v[2],
            };
            let y = g.rnn_sequence(&rnn, &v[3..])?;
            project(g, y, k as u64)
        })?;
    }
    cases.push(case);

    for mode in [TemporalPool::Mean, TemporalPool::Attentive] {
        let mut case = CaseResult::new(format!("temporal_pool/{mode}"));
        for k in 0..instances {
            let d = rng.random_range(1..=3);
            let (tp, tq) = (rng.random_range(1..=4), rng.random_range(1..=4));
            let inputs = [uniform(&mut rng, &[tp, d]), uniform(&mut rng, &[tq, d]), uniform(&mut rng, &[d, d])];
            grad_case(&mut case, &inputs, |g, v| {
                let u = (mode == TemporalPool::Attentive).then_some(v[2]);
                let (a, b) = g.temporal_pool(mode, v[0], v[1], u)?;
                let pa = project(g, a, k as u64)?;
                let pb = project(g, b, k as u64 + 7)?;
                g.add(pa, pb)
            })?;
        }
        cases.push(case);
    }

    let mut case = CaseResult::new("siamese_loss");
    for k in 0..instances {
        let d = rng.random_range(1..=4);
        let same = k % 2 == 0;
        let scale = if same { 1.0 } else { rng.random_range(0.2..1.0) };
        let inputs = [uniform(&mut rng, &[d]).map(|v| v * scale), uniform(&mut rng, &[d]).map(|v| v * scale)];
        grad_case(&mut case, &inputs, |g, v| siamese_loss(g, v[0], v[1], same, 4.0))?;
    }
    cases.push(case);

    let mut case = CaseResult::new("identity_loss");
    for _ in 0..instances {
        let n = rng.random_range(2..=6);
        let label = rng.random_range(0..n);
        let logits = uniform(&mut rng, &[n]).map(|v| 3.0 * v);
        grad_case(&mut case, &[logits], |g, v| identity_loss(g, v[0], label))?;
    }
    cases.push(case);

    let mut case = CaseResult::new("pair objective (network)");
    for k in 0..instances {
        let cfg = tiny_network_config(&mut rng);
        let net = Network::build(cfg, k as u64)?;
        let classifier = Classifier::new(3, net.feature_dim(), k as u64)?;
        let same = k % 2 == 0;
        let labels = if same { (1, 1) } else { (0, 2) };
        let n = net.params().len();
        let mut inputs = net.params().tensors().to_vec();
        inputs.extend(classifier.params.tensors().iter().cloned());
        let frames: Vec<Tensor> = (0..4).map(|_| uniform(&mut rng, &[8, 8, 5])).collect();
        grad_case(&mut case, &inputs, |g, v| {
            let bound = BoundParams::from_vars(v[..n].to_vec());
            let fv: Vec<Var> = frames.iter().map(|f| g.constant(f.clone())).collect();
            let terms = pair_objective(
                g,
                &net,
                &bound,
                (&classifier, &v[n..]),
                (&fv[..2], labels.0),
                (&fv[2..], labels.1),
                same,
                // a margin the random features can exceed keeps the hinge active or not per instance
                0.5,
            )?;
            Ok(terms.total)
        })?;
    }
    cases.push(case);

    Ok(SuiteReport {
        suite: "gradient",
        cases,
        elapsed: start.elapsed(),
    })
}

/// Independent implementations the library is compared against.
pub mod oracles {
    use crate::layers::{ConvGeometry, PoolParams};
    use crate::tensor::Tensor;

    /// Direct seven-loop cross-correlation.
    pub fn conv2d(x: &Tensor, kernel: &Tensor, bias: &Tensor, geo: ConvGeometry) -> Tensor {
        let (h, w, cin) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (cout, kh, kw) = (kernel.shape()[0], kernel.shape()[2], kernel.shape()[3]);
        let oh = (h + 2 * geo.padding - geo.dilation * (kh - 1) - 1) / geo.stride + 1;
        let ow = (w + 2 * geo.padding - geo.dilation * (kw - 1) - 1) / geo.stride + 1;
        let k = kernel.data();
        let mut out = Vec::with_capacity(oh * ow * cout);
        for oi in 0..oh {
            for oj in 0..ow {
                for co in 0..cout {
                    let mut acc = bias.data()[co];
                    for ci in 0..cin {
                        for a in 0..kh {
                            for b in 0..kw {
                                let i = (oi * geo.stride + a * geo.dilation) as isize - geo.padding as isize;
                                let j = (oj * geo.stride + b * geo.dilation) as isize - geo.padding as isize;
                                if i < 0 || j < 0 || i >= h as isize || j >= w as isize {
                                    continue;
                                }
                                acc += x.at3(i as usize, j as usize, ci) * k[((co * cin + ci) * kh + a) * kw + b];
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
        Tensor::new([oh, ow, cout], out).expect("oracle shape")
    }

    /// Enumerates each window's real cells; the maximum keeps the first
    /// cell in row-major window order among equals.
    pub fn pool2d(x: &Tensor, p: &PoolParams) -> Tensor {
        let (h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let span = p.dilation * (p.window - 1) + 1;
        let oh = (h + p.padding[0] - span) / p.stride + 1;
        let ow = (w + p.padding[1] - span) / p.stride + 1;
        let mut out = Vec::with_capacity(oh * ow * c);
        for oi in 0..oh {
            for oj in 0..ow {
                for d in 0..c {
                    let mut cells = Vec::new();
                    for a in 0..p.window {
                        for b in 0..p.window {
                            let (i, j) = (oi * p.stride + a * p.dilation, oj * p.stride + b * p.dilation);
                            if i < h && j < w {
                                cells.push(x.at3(i, j, d));
                            }
                        }
                    }
                    let v = if p.kind.is_max() {
                        let mut best = cells[0];
                        for &v in &cells[1..] {
                            if v > best {
                                best = v;
                            }
                        }
                        best
                    } else {
                        cells.iter().sum::<f64>() / cells.len() as f64
                    };
                    out.push(v);
                }
            }
        }
        Tensor::new([oh, ow, c], out).expect("oracle shape")
    }

    /// Sorts each gallery row by `(distance, index)` and counts.
    pub fn cmc(dist: &[Vec<f64>], truth: &[usize]) -> Vec<f64> {
        let g = dist[0].len();
        let mut hits = vec![0usize; g];
        for (row, &t) in dist.iter().zip(truth) {
            let mut order: Vec<usize> = (0..g).collect();
            order.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
            let rank = order.iter().position(|&k| k == t).expect("truth in gallery");
            for h in &mut hits[rank..] {
                *h += 1;
            }
        }
        hits.into_iter().map(|h| h as f64 / dist.len() as f64).collect()
    }
}

fn max_abs(a: &Tensor, b: &Tensor) -> f64 {
    if a.shape() != b.shape() {
        return f64::INFINITY;
    }
    a.max_abs_diff(b)
}

/// Library convolution, the four pooling kinds and CMC against the
/// brute-force oracles on random instances up to 8x8 with up to 3
/// channels.
pub fn oracle_suite(instances: usize, seed: u64) -> Result<SuiteReport> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = Vec::new();

    let mut case = CaseResult::new("conv2d");
    for _ in 0..instances {
        let (x, kernel, bias, geometry) = random_conv(&mut rng, 8);
        let expect = oracles::conv2d(&x, &kernel, &bias, geometry);
        let got = conv2d(&x, &Conv2dParams { kernel, bias, geometry })?;
        let err = max_abs(&got, &expect);
        case.record(err <= ORACLE_TOL, err, || format!("{geometry:?} on {:?}", x.shape()));
    }
    cases.push(case);

    for kind in [PoolKind::Max, PoolKind::Average, PoolKind::DilatedMax, PoolKind::DilatedAverage] {
        let mut case = CaseResult::new(format!("pool2d/{kind:?}"));
        for k in 0..instances {
            let (mut x, p) = random_pool(&mut rng, kind, 8);
            if k % 3 == 0 {
                // coarse values force ties inside windows
                x = x.map(|v| (v * 2.0).round());
            }
            let err = max_abs(&pool2d(&x, &p)?, &oracles::pool2d(&x, &p));
            case.record(err <= ORACLE_TOL, err, || format!("{p:?} on {:?}", x.shape()));
        }
        cases.push(case);
    }

    let mut case = CaseResult::new("compute_cmc");
    for k in 0..instances {
        let (p, g) = (rng.random_range(1..=8), rng.random_range(1..=8));
        let rows: Vec<Vec<f64>> = (0..p)
            .map(|_| {
                (0..g)
                    .map(|_| {
                        let v: f64 = rng.random_range(0.0..1.0);
                        if k % 2 == 0 { (v * 4.0).round() } else { v }
                    })
                    .collect()
            })
            .collect();
        let truth: Vec<usize> = (0..p).map(|_| rng.random_range(0..g)).collect();
        let flat = Tensor::new([p, g], rows.concat())?;
        let got = compute_cmc(&flat, &truth)?.rates;
        let expect = oracles::cmc(&rows, &truth);
        let err = got.iter().zip(&expect).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let ok = got.len() == expect.len() && err <= ORACLE_TOL;
        case.record(ok, err, || format!("{p}x{g} truth {truth:?}"));
    }
    cases.push(case);

    Ok(SuiteReport {
        suite: "oracle",
        cases,
        elapsed: start.elapsed(),
    })
}

/// Shape laws, concatenation round trips, sum/max permutation invariance
/// and max idempotence for 2 to 4 streams.
pub fn fusion_algebra_suite(instances: usize, seed: u64) -> Result<SuiteReport> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut laws = CaseResult::new("shape laws");
    let mut round_trip = CaseResult::new("concat round trip");
    let mut index_map = CaseResult::new("concat index maps");
    let mut perm = CaseResult::new("sum/max permutation");
    let mut idem = CaseResult::new("max idempotence");

    for _ in 0..instances {
        let s = rng.random_range(2..=4);
        let (h, w, d) = (rng.random_range(1..=5), rng.random_range(1..=5), rng.random_range(1..=4));
        let maps: Vec<Tensor> = (0..s).map(|_| uniform(&mut rng, &[h, w, d])).collect();

        for kind in FusionKind::ALL {
            let expect = match kind {
                FusionKind::Sum | FusionKind::Max => [h, w, d],
                FusionKind::Channel => [h, w, s * d],
                FusionKind::Width => [h, s * w, d],
                FusionKind::Height => [s * h, w, d],
            };
            let y = fuse(kind, &maps)?;
            laws.record(y.y.shape() == expect, 0.0, || format!("{kind} of {s}x{:?}", [h, w, d]));

            if kind.concat_axis().is_some() {
                let mut err = 0.0f64;
                for (k, m) in maps.iter().enumerate() {
                    err = err.max(max_abs(&y.block(k)?, m));
                }
                round_trip.record(err == 0.0, err, || format!("{kind} with {s} streams"));

                let mut worst = 0.0f64;
                for (k, m) in maps.iter().enumerate() {
                    for i in 0..h {
                        for j in 0..w {
                            for c in 0..d {
                                let v = match kind {
                                    FusionKind::Channel => y.y.at3(i, j, k * d + c),
                                    FusionKind::Width => y.y.at3(i, k * w + j, c),
                                    _ => y.y.at3(k * h + i, j, c),
                                };
                                worst = worst.max((v - m.at3(i, j, c)).abs());
                            }
                        }
                    }
                }
                index_map.record(worst == 0.0, worst, || format!("{kind} with {s} streams"));
            }
        }

        let mut order: Vec<usize> = (0..s).collect();
        order.rotate_left(1);
        order.swap(0, s - 1);
        let permuted: Vec<Tensor> = order.iter().map(|&k| maps[k].clone()).collect();
        let sum_err = max_abs(&fuse(FusionKind::Sum, &maps)?.y, &fuse(FusionKind::Sum, &permuted)?.y);
        let max_err = max_abs(&fuse(FusionKind::Max, &maps)?.y, &fuse(FusionKind::Max, &permuted)?.y);
        perm.record(sum_err <= 1e-12 && max_err == 0.0, sum_err.max(max_err), || {
            format!("order {order:?}")
        });

        let copies = vec![maps[0].clone(); s];
        let once = fuse(FusionKind::Max, &maps)?.y;
        let twice = fuse(FusionKind::Max, &[once.clone(), maps[1].clone()])?.y;
        let err = max_abs(&fuse(FusionKind::Max, &copies)?.y, &maps[0]).max(max_abs(&twice, &once));
        idem.record(err == 0.0, err, || format!("{s} streams of {:?}", [h, w, d]));
    }

    Ok(SuiteReport {
        suite: "fusion algebra",
        cases: vec![laws, round_trip, index_map, perm, idem],
        elapsed: start.elapsed(),
    })
}
