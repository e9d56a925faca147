//! Convolution, the pooling downsamplers, zero-padding upsampling and
//! multi-scale branching. Every operation has a differentiable [`Graph`]
//! method and a plain tensor-in/tensor-out wrapper.

use serde::{Deserialize, Serialize};

use crate::autodiff::{BackwardRule, Graph, SwitchState, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Stride, zero padding (both sides) and dilation of a convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl Default for ConvGeometry {
    fn default() -> Self {
        Self {
            stride: 1,
            padding: 0,
            dilation: 1,
        }
    }
}

impl ConvGeometry {
    /// Padding that keeps the extent unchanged at stride 1 (odd kernels).
    pub fn same(kernel: usize, stride: usize) -> Self {
        Self {
            stride,
            padding: (kernel - 1) / 2,
            dilation: 1,
        }
    }

    pub fn output_extent(&self, input: usize, kernel: usize) -> Option<usize> {
        let span = self.dilation * (kernel - 1) + 1;
        let padded = input + 2 * self.padding;
        (self.stride > 0 && self.dilation > 0 && padded >= span)
            .then(|| (padded - span) / self.stride + 1)
    }
}

/// Kernel `[out_channels, in_channels, kh, kw]`, bias `[out_channels]`.
#[derive(Clone, Debug)]
pub struct Conv2dParams {
    pub kernel: Tensor,
    pub bias: Tensor,
    pub geometry: ConvGeometry,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct ConvDims {
    h: usize,
    w: usize,
    cin: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
}

impl ConvDims {
    fn patch(&self) -> usize {
        self.cin * self.kh * self.kw
    }
}

fn conv_dims(x: &[usize], kernel: &[usize], bias: &[usize], geo: ConvGeometry) -> Result<ConvDims> {
    let [h, w, cin] = *x else {
        return Err(Error::shape("conv2d", format!("input must be [H, W, D], got {x:?}")));
    };
    let [cout, kin, kh, kw] = *kernel else {
        return Err(Error::shape("conv2d", format!("kernel must be 4-d, got {kernel:?}")));
    };
    if kin != cin {
        return Err(Error::shape(
            "conv2d",
            format!("input has {cin} channels, kernel expects {kin}"),
        ));
    }
    if bias != [cout] {
        return Err(Error::shape("conv2d", format!("bias {bias:?} for {cout} filters")));
    }
    let (Some(oh), Some(ow)) = (geo.output_extent(h, kh), geo.output_extent(w, kw)) else {
        return Err(Error::shape(
            "conv2d",
            format!("{kh}x{kw} kernel with {geo:?} leaves no output on a {h}x{w} map"),
        ));
    };
    Ok(ConvDims {
        h,
        w,
        cin,
        cout,
        kh,
        kw,
        oh,
        ow,
    })
}

/// Unrolls receptive fields into rows of `cin * kh * kw`, ordered like the
/// kernel's trailing axes.
fn im2col(x: &[f64], d: &ConvDims, geo: ConvGeometry) -> Vec<f64> {
    let k = d.patch();
    let mut cols = vec![0.0; d.oh * d.ow * k];
    let pad = geo.padding as isize;
    for oi in 0..d.oh {
        for oj in 0..d.ow {
            let row = &mut cols[(oi * d.ow + oj) * k..(oi * d.ow + oj + 1) * k];
            for ki in 0..d.kh {
                let ii = (oi * geo.stride + ki * geo.dilation) as isize - pad;
                if ii < 0 || ii >= d.h as isize {
                    continue;
                }
                for kj in 0..d.kw {
                    let jj = (oj * geo.stride + kj * geo.dilation) as isize - pad;
                    if jj < 0 || jj >= d.w as isize {
                        continue;
                    }
                    let src = (ii as usize * d.w + jj as usize) * d.cin;
                    for c in 0..d.cin {
                        row[(c * d.kh + ki) * d.kw + kj] = x[src + c];
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], d: &ConvDims, geo: ConvGeometry) -> Vec<f64> {
    let k = d.patch();
    let mut x = vec![0.0; d.h * d.w * d.cin];
    let pad = geo.padding as isize;
    for oi in 0..d.oh {
        for oj in 0..d.ow {
            let row = &cols[(oi * d.ow + oj) * k..(oi * d.ow + oj + 1) * k];
            for ki in 0..d.kh {
                let ii = (oi * geo.stride + ki * geo.dilation) as isize - pad;
                if ii < 0 || ii >= d.h as isize {
                    continue;
                }
                for kj in 0..d.kw {
                    let jj = (oj * geo.stride + kj * geo.dilation) as isize - pad;
                    if jj < 0 || jj >= d.w as isize {
                        continue;
                    }
                    let dst = (ii as usize * d.w + jj as usize) * d.cin;
                    for c in 0..d.cin {
                        x[dst + c] += row[(c * d.kh + ki) * d.kw + kj];
                    }
                }
            }
        }
    }
    x
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(y, x)| *y += alpha * x);
}

struct ConvRule {
    dims: ConvDims,
    geometry: ConvGeometry,
    cols: Vec<f64>,
}

impl BackwardRule for ConvRule {
    fn backward(&self, g: &[f64], ops: &[&Tensor], _: &Tensor, wanted: &[bool]) -> Vec<Option<Vec<f64>>> {
        let d = &self.dims;
        let k = d.patch();
        let positions = d.oh * d.ow;
        let weights = ops[1].data();
        let mut gw = vec![0.0; d.cout * k];
        let mut gb = vec![0.0; d.cout];
        let mut gcols = wanted[0].then(|| vec![0.0; positions * k]);
        for p in 0..positions {
            let patch = &self.cols[p * k..(p + 1) * k];
            for o in 0..d.cout {
                let go = g[p * d.cout + o];
                if go == 0.0 {
                    continue;
                }
                gb[o] += go;
                axpy(go, patch, &mut gw[o * k..(o + 1) * k]);
                if let Some(gc) = gcols.as_mut() {
                    axpy(go, &weights[o * k..(o + 1) * k], &mut gc[p * k..(p + 1) * k]);
                }
            }
        }
        let gx = gcols.map(|gc| col2im(&gc, d, self.geometry));
        vec![gx, wanted[1].then_some(gw), wanted[2].then_some(gb)]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    Max,
    Average,
    DilatedMax,
    DilatedAverage,
}

impl PoolKind {
    pub fn is_max(self) -> bool {
        matches!(self, Self::Max | Self::DilatedMax)
    }

    pub fn is_dilated(self) -> bool {
        matches!(self, Self::DilatedMax | Self::DilatedAverage)
    }
}

/// Pooling window. `padding` adds `[rows, cols]` of virtual cells after the
/// bottom and right edges; they take part in no window statistic.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolParams {
    pub kind: PoolKind,
    pub window: usize,
    pub stride: usize,
    pub dilation: usize,
    pub padding: [usize; 2],
}

impl PoolParams {
    pub fn new(kind: PoolKind, window: usize, stride: usize, dilation: usize) -> Result<Self> {
        let p = Self {
            kind,
            window,
            stride,
            dilation,
            padding: [0, 0],
        };
        p.validate()?;
        Ok(p)
    }

    pub fn max(window: usize, stride: usize) -> Self {
        Self::new(PoolKind::Max, window, stride, 1).expect("valid max pool")
    }

    pub fn average(window: usize, stride: usize) -> Self {
        Self::new(PoolKind::Average, window, stride, 1).expect("valid average pool")
    }

    pub fn with_padding(mut self, rows: usize, cols: usize) -> Self {
        self.padding = [rows, cols];
        self
    }

    /// Pads so the output extent is `ceil(extent / stride)` on both axes.
    pub fn covering(mut self, h: usize, w: usize) -> Self {
        let need = |n: usize| {
            let out = n.div_ceil(self.stride);
            ((out - 1) * self.stride + self.span()).saturating_sub(n)
        };
        self.padding = [need(h), need(w)];
        self
    }

    /// Extent of the dilated window.
    pub fn span(&self) -> usize {
        self.dilation * (self.window - 1) + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.stride == 0 || self.dilation == 0 {
            return Err(Error::InvalidArgument(format!("degenerate pooling {self:?}")));
        }
        if self.kind.is_dilated() && self.dilation < 2 {
            return Err(Error::InvalidArgument(format!(
                "{:?} needs dilation >= 2, got {}",
                self.kind, self.dilation
            )));
        }
        if !self.kind.is_dilated() && self.dilation != 1 {
            return Err(Error::InvalidArgument(format!(
                "{:?} needs dilation 1, got {}",
                self.kind, self.dilation
            )));
        }
        if self.padding.iter().any(|&p| p >= self.span()) {
            return Err(Error::InvalidArgument(format!(
                "padding {:?} would create windows with no input cells",
                self.padding
            )));
        }
        Ok(())
    }

    pub fn output_extent(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let span = self.span();
        let out = |n: usize, pad: usize| (n + pad >= span).then(|| (n + pad - span) / self.stride + 1);
        Some((out(h, self.padding[0])?, out(w, self.padding[1])?))
    }
}

enum PoolRule {
    Max { argmax: Vec<usize> },
    Average { members: Vec<Vec<usize>> },
}

impl BackwardRule for PoolRule {
    fn backward(&self, g: &[f64], ops: &[&Tensor], _: &Tensor, _: &[bool]) -> Vec<Option<Vec<f64>>> {
        let mut gx = vec![0.0; ops[0].numel()];
        match self {
            PoolRule::Max { argmax } => {
                for (&src, g) in argmax.iter().zip(g) {
                    gx[src] += g;
                }
            }
            PoolRule::Average { members } => {
                for (cells, g) in members.iter().zip(g) {
                    let share = g / cells.len() as f64;
                    for &src in cells {
                        gx[src] += share;
                    }
                }
            }
        }
        vec![Some(gx)]
    }

    fn record_switches(&self, state: &mut SwitchState) {
        if let PoolRule::Max { argmax } = self {
            state.indices(argmax);
        }
    }
}

struct UpsampleRule {
    factor: usize,
    h: usize,
    w: usize,
    c: usize,
}

impl BackwardRule for UpsampleRule {
    fn backward(&self, g: &[f64], _: &[&Tensor], _: &Tensor, _: &[bool]) -> Vec<Option<Vec<f64>>> {
        let (f, w, c) = (self.factor, self.w, self.c);
        let mut gx = Vec::with_capacity(self.h * w * c);
        for i in 0..self.h {
            for j in 0..w {
                let src = ((f * i) * (f * w) + f * j) * c;
                gx.extend_from_slice(&g[src..src + c]);
            }
        }
        vec![Some(gx)]
    }
}

struct GlobalAvgRule {
    positions: usize,
}

impl BackwardRule for GlobalAvgRule {
    fn backward(&self, g: &[f64], _: &[&Tensor], _: &Tensor, _: &[bool]) -> Vec<Option<Vec<f64>>> {
        let inv = 1.0 / self.positions as f64;
        let mut gx = Vec::with_capacity(self.positions * g.len());
        for _ in 0..self.positions {
            gx.extend(g.iter().map(|v| v * inv));
        }
        vec![Some(gx)]
    }
}

impl Graph {
    /// Cross-correlation of `x: [H, W, Din]` with `kernel: [Dout, Din, kh, kw]`
    /// plus `bias: [Dout]`, giving `[H', W', Dout]`.
    pub fn conv2d(&mut self, x: Var, kernel: Var, bias: Var, geometry: ConvGeometry) -> Result<Var> {
        let dims = conv_dims(self.shape(x), self.shape(kernel), self.shape(bias), geometry)?;
        let cols = im2col(self.value(x).data(), &dims, geometry);
        let k = dims.patch();
        let (w, b) = (self.value(kernel).data(), self.value(bias).data());
        let mut out = Vec::with_capacity(dims.oh * dims.ow * dims.cout);
        for patch in cols.chunks_exact(k) {
            for o in 0..dims.cout {
                out.push(b[o] + dot(patch, &w[o * k..(o + 1) * k]));
            }
        }
        let out = Tensor::new([dims.oh, dims.ow, dims.cout], out)?;
        Ok(self.record(&[x, kernel, bias], out, ConvRule { dims, geometry, cols }))
    }

    /// Per-channel max or mean over each (dilated) window.
    pub fn pool2d(&mut self, x: Var, p: &PoolParams) -> Result<Var> {
        p.validate()?;
        let (h, w, c) = self.value(x).hwc()?;
        let (oh, ow) = p.output_extent(h, w).ok_or_else(|| {
            Error::shape(
                "pool2d",
                format!("window spanning {} does not fit a {h}x{w} map", p.span()),
            )
        })?;
        let data = self.value(x).data();
        let mut out = Vec::with_capacity(oh * ow * c);
        let mut argmax = Vec::new();
        let mut members = Vec::new();
        let mut cells = Vec::with_capacity(p.window * p.window);
        for oi in 0..oh {
            for oj in 0..ow {
                for ch in 0..c {
                    cells.clear();
                    for ki in 0..p.window {
                        let ii = oi * p.stride + ki * p.dilation;
                        if ii >= h {
                            break;
                        }
                        for kj in 0..p.window {
                            let jj = oj * p.stride + kj * p.dilation;
                            if jj >= w {
                                break;
                            }
                            cells.push((ii * w + jj) * c + ch);
                        }
                    }
                    if p.kind.is_max() {
                        let mut best = cells[0];
                        for &idx in &cells[1..] {
                            if data[idx] > data[best] {
                                best = idx;
                            }
                        }
                        out.push(data[best]);
                        argmax.push(best);
                    } else {
                        let mean = cells.iter().map(|&i| data[i]).sum::<f64>() / cells.len() as f64;
                        out.push(mean);
                        members.push(cells.clone());
                    }
                }
            }
        }
        let out = Tensor::new([oh, ow, c], out)?;
        let rule = if p.kind.is_max() {
            PoolRule::Max { argmax }
        } else {
            PoolRule::Average { members }
        };
        Ok(self.record(&[x], out, rule))
    }

    /// Places `x[i, j, d]` at `[factor * i, factor * j, d]`; all other
    /// entries are zero.
    pub fn upsample_zero_pad(&mut self, x: Var, factor: usize) -> Result<Var> {
        if factor == 0 {
            return Err(Error::InvalidArgument("upsampling factor must be >= 1".into()));
        }
        let (h, w, c) = self.value(x).hwc()?;
        let (fh, fw) = (factor * h, factor * w);
        let mut out = vec![0.0; fh * fw * c];
        let data = self.value(x).data();
        for i in 0..h {
            for j in 0..w {
                let dst = ((factor * i) * fw + factor * j) * c;
                out[dst..dst + c].copy_from_slice(&data[(i * w + j) * c..(i * w + j + 1) * c]);
            }
        }
        let out = Tensor::new([fh, fw, c], out)?;
        Ok(self.record(&[x], out, UpsampleRule { factor, h, w, c }))
    }

    /// One downsampled map per stride, each an average pool with
    /// `window = stride` (trailing cells averaged over what exists).
    pub fn multiscale_branch(&mut self, x: Var, strides: &[usize]) -> Result<Vec<Var>> {
        let (h, w, _) = self.value(x).hwc()?;
        strides
            .iter()
            .map(|&s| {
                if s == 0 || s > h || s > w {
                    return Err(Error::InvalidArgument(format!(
                        "stride {s} is invalid for a {h}x{w} map"
                    )));
                }
                if s == 1 {
                    return Ok(x);
                }
                let p = PoolParams::average(s, s).covering(h, w);
                self.pool2d(x, &p)
            })
            .collect()
    }

    /// Mean over all spatial positions: `[H, W, D] -> [D]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (h, w, c) = self.value(x).hwc()?;
        let positions = h * w;
        let mut out = vec![0.0; c];
        for cell in self.value(x).data().chunks_exact(c) {
            out.iter_mut().zip(cell).for_each(|(acc, v)| *acc += v);
        }
        let inv = 1.0 / positions as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        let out = Tensor::vector(out)?;
        Ok(self.record(&[x], out, GlobalAvgRule { positions }))
    }
}

fn eval1(x: &Tensor, f: impl FnOnce(&mut Graph, Var) -> Result<Var>) -> Result<Tensor> {
    let mut g = Graph::new();
    let v = g.constant(x.clone());
    let out = f(&mut g, v)?;
    Ok(g.value(out).clone())
}

pub fn conv2d(x: &Tensor, p: &Conv2dParams) -> Result<Tensor> {
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let k = g.constant(p.kernel.clone());
    let b = g.constant(p.bias.clone());
    let out = g.conv2d(xv, k, b, p.geometry)?;
    Ok(g.value(out).clone())
}

pub fn pool2d(x: &Tensor, p: &PoolParams) -> Result<Tensor> {
    eval1(x, |g, v| g.pool2d(v, p))
}

pub fn upsample_zero_pad(x: &Tensor, factor: usize) -> Result<Tensor> {
    eval1(x, |g, v| g.upsample_zero_pad(v, factor))
}

pub fn multiscale_branch(x: &Tensor, strides: &[usize]) -> Result<Vec<Tensor>> {
    let mut g = Graph::new();
    let v = g.constant(x.clone());
    let outs = g.multiscale_branch(v, strides)?;
    Ok(outs.into_iter().map(|o| g.value(o).clone()).collect())
}

/// Keeps every `factor`-th row and column starting at `offset`; the left
/// inverse of [`upsample_zero_pad`] at offset 0.
pub fn subsample(x: &Tensor, factor: usize, offset: usize) -> Result<Tensor> {
    let (h, w, c) = x.hwc()?;
    if factor == 0 || offset >= h.min(w) {
        return Err(Error::InvalidArgument(format!(
            "subsample factor {factor} offset {offset} on {h}x{w}"
        )));
    }
    let rows: Vec<usize> = (offset..h).step_by(factor).collect();
    let cols: Vec<usize> = (offset..w).step_by(factor).collect();
    let mut data = Vec::with_capacity(rows.len() * cols.len() * c);
    for &i in &rows {
        for &j in &cols {
            data.extend_from_slice(&x.data()[(i * w + j) * c..(i * w + j + 1) * c]);
        }
    }
    Tensor::new([rows.len(), cols.len(), c], data)
}
