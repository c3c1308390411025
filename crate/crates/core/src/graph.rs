//! Reverse-mode differentiation over the handful of layer types the 3D
//! U-Nets need. Activations are channel-major `[C, X, Y, Z]`; vectors are
//! stored as `C = n` with a `1 x 1 x 1` spatial extent.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::params::{ParamId, ParameterSet};
use crate::real::Real;

const GN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<R> {
    pub channels: usize,
    pub dims: [usize; 3],
    pub data: Vec<R>,
}

impl<R: Real> Tensor<R> {
    pub fn new(channels: usize, dims: [usize; 3], data: Vec<R>) -> Result<Self> {
        let n = channels * dims.iter().product::<usize>();
        if data.len() != n {
            return Err(shape_err(n, data.len()));
        }
        Ok(Self { channels, dims, data })
    }

    pub fn vector(data: Vec<R>) -> Self {
        Self { channels: data.len(), dims: [1, 1, 1], data }
    }

    #[inline]
    pub fn spatial(&self) -> usize {
        self.dims.iter().product()
    }

    fn zeros(channels: usize, dims: [usize; 3]) -> Self {
        Self { channels, dims, data: vec![R::ZERO; channels * dims.iter().product::<usize>()] }
    }
}

#[derive(Debug)]
enum Op {
    Input,
    Conv { x: NodeId, w: ParamId, b: ParamId, k: usize, stride: usize },
    GroupNorm { x: NodeId, gamma: ParamId, beta: ParamId, groups: usize, stats: Vec<(f64, f64)> },
    Silu { x: NodeId },
    Tanh { x: NodeId },
    Linear { x: NodeId, w: ParamId, b: ParamId },
    ChannelBias { x: NodeId, v: NodeId },
    ChannelMix { x: NodeId, v: NodeId },
    Add { a: NodeId, b: NodeId },
    Concat { a: NodeId, b: NodeId },
    Upsample2 { x: NodeId },
}

struct Node<R> {
    value: Tensor<R>,
    op: Op,
    label: String,
}

/// A recorded forward pass over a borrowed parameter set.
pub struct Graph<'p, R: Real> {
    params: &'p ParameterSet<R>,
    nodes: Vec<Node<R>>,
}

#[inline]
fn sigmoid<R: Real>(x: R) -> R {
    R::ONE / (R::ONE + (-x).exp())
}

#[inline]
fn out_extent(n: usize, k: usize, stride: usize) -> usize {
    let pad = k / 2;
    (n + 2 * pad - k) / stride + 1
}

/// Output indices `o` in `0..n_out` whose source `o * stride + k - pad`
/// lies inside `0..n_in`, as a half-open range.
#[inline]
fn valid_range(n_in: usize, n_out: usize, k: usize, pad: usize, stride: usize) -> (usize, usize) {
    // o * stride + k >= pad  and  o * stride + k < n_in + pad
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    let hi = if n_in + pad > k { (n_in + pad - k).div_ceil(stride).min(n_out) } else { 0 };
    (lo, hi.max(lo))
}

/// Unfold `x` into a `[C * k^3, N_out]` patch matrix (zero padding `k / 2`).
/// Only output x-slabs `xs` are unfolded; `col` is `[C * k^3, len(xs) * oy * oz]`.
fn im2col<R: Real>(x: &Tensor<R>, k: usize, stride: usize, out_dims: [usize; 3], xs: (usize, usize), col: &mut [R]) {
    let [nx, ny, nz] = x.dims;
    let [ox, oy, oz] = out_dims;
    let n_out = (xs.1 - xs.0) * oy * oz;
    let pad = k / 2;
    let spatial = x.spatial();
    let mut row = 0;
    for c in 0..x.channels {
        let src = &x.data[c * spatial..(c + 1) * spatial];
        for kx in 0..k {
            let (x0, x1) = valid_range(nx, ox, kx, pad, stride);
            for ky in 0..k {
                let (y0, y1) = valid_range(ny, oy, ky, pad, stride);
                for kz in 0..k {
                    let (z0, z1) = valid_range(nz, oz, kz, pad, stride);
                    let dst = &mut col[row * n_out..(row + 1) * n_out];
                    row += 1;
                    for (i, dst_x) in (xs.0..xs.1).zip(dst.chunks_exact_mut(oy * oz)) {
                        if i < x0 || i >= x1 {
                            dst_x.fill(R::ZERO);
                            continue;
                        }
                        let sx = i * stride + kx - pad;
                        for (j, dst_y) in dst_x.chunks_exact_mut(oz).enumerate() {
                            if j < y0 || j >= y1 {
                                dst_y.fill(R::ZERO);
                                continue;
                            }
                            let sy = j * stride + ky - pad;
                            let base = (sx * ny + sy) * nz + kz;
                            dst_y[..z0].fill(R::ZERO);
                            dst_y[z1..].fill(R::ZERO);
                            if stride == 1 {
                                dst_y[z0..z1].copy_from_slice(&src[base + z0 - pad..base + z1 - pad]);
                            } else {
                                for (l, d) in dst_y[z0..z1].iter_mut().enumerate() {
                                    *d = src[base + (z0 + l) * stride - pad];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add patch gradients back onto `dx`.
#[allow(clippy::too_many_arguments)]
fn col2im<R: Real>(
    col: &[R],
    channels: usize,
    dims: [usize; 3],
    k: usize,
    stride: usize,
    out_dims: [usize; 3],
    xs: (usize, usize),
    dx: &mut [R],
) {
    let [nx, ny, nz] = dims;
    let [ox, oy, oz] = out_dims;
    let n_out = (xs.1 - xs.0) * oy * oz;
    let pad = k / 2;
    let spatial = nx * ny * nz;
    let mut row = 0;
    for c in 0..channels {
        let dst = &mut dx[c * spatial..(c + 1) * spatial];
        for kx in 0..k {
            let (x0, x1) = valid_range(nx, ox, kx, pad, stride);
            for ky in 0..k {
                let (y0, y1) = valid_range(ny, oy, ky, pad, stride);
                for kz in 0..k {
                    let (z0, z1) = valid_range(nz, oz, kz, pad, stride);
                    let src = &col[row * n_out..(row + 1) * n_out];
                    row += 1;
                    for i in x0.max(xs.0)..x1.min(xs.1) {
                        let sx = i * stride + kx - pad;
                        let li = i - xs.0;
                        for j in y0..y1 {
                            let sy = j * stride + ky - pad;
                            let base = (sx * ny + sy) * nz + kz;
                            let s = &src[(li * oy + j) * oz..(li * oy + j + 1) * oz];
                            if stride == 1 {
                                let d = &mut dst[base + z0 - pad..base + z1 - pad];
                                for (dv, &g) in d.iter_mut().zip(&s[z0..z1]) {
                                    *dv += g;
                                }
                            } else {
                                for l in z0..z1 {
                                    dst[base + l * stride - pad] += s[l];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// A row-major matrix view: `rows x cols` with leading dimension `ld`,
/// optionally read transposed.
#[derive(Clone, Copy)]
struct Mat<'a, R> {
    data: &'a [R],
    ld: usize,
    transposed: bool,
}

impl<'a, R> Mat<'a, R> {
    fn n(data: &'a [R], ld: usize) -> Self {
        Self { data, ld, transposed: false }
    }
    fn t(data: &'a [R], ld: usize) -> Self {
        Self { data, ld, transposed: true }
    }
    fn strides(&self) -> (isize, isize) {
        if self.transposed { (1, self.ld as isize) } else { (self.ld as isize, 1) }
    }
    fn fits(&self, rows: usize, cols: usize) -> bool {
        let (r, c) = if self.transposed { (cols, rows) } else { (rows, cols) };
        r == 0 || c == 0 || (r - 1) * self.ld + c <= self.data.len()
    }
}

/// `c[m x n] (+)= a[m x k] * b[k x n]`, with `c` row-major at leading dimension `ldc`.
#[allow(clippy::too_many_arguments)]
fn matmul<R: Real>(m: usize, k: usize, n: usize, a: Mat<'_, R>, b: Mat<'_, R>, c: &mut [R], ldc: usize, accumulate: bool) {
    assert!(a.fits(m, k) && b.fits(k, n));
    assert!(m == 0 || n == 0 || (m - 1) * ldc + n <= c.len());
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    let beta = if accumulate { R::ONE } else { R::ZERO };
    // SAFETY: the asserts above keep every strided access inside the slices.
    unsafe {
        R::gemm(m, k, n, R::ONE, a.data.as_ptr(), rsa, csa, b.data.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), ldc as isize, 1);
    }
}

/// Target number of elements in one unfolded patch chunk.
const COL_CHUNK: usize = 1 << 19;

/// Output x-slab ranges so each unfolded chunk stays near [`COL_CHUNK`].
fn slab_ranges(ox: usize, slab: usize, kk: usize) -> impl Iterator<Item = (usize, usize)> {
    let per = (COL_CHUNK / (kk * slab).max(1)).max(1);
    (0..ox).step_by(per).map(move |a| (a, (a + per).min(ox)))
}

impl<'p, R: Real> Graph<'p, R> {
    pub fn new(params: &'p ParameterSet<R>) -> Self {
        Self { params, nodes: Vec::new() }
    }

    pub fn params(&self) -> &ParameterSet<R> {
        self.params
    }

    pub fn value(&self, id: NodeId) -> &Tensor<R> {
        &self.nodes[id.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<R>, op: Op, label: impl Into<String>) -> NodeId {
        self.nodes.push(Node { value, op, label: label.into() });
        NodeId(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: Tensor<R>) -> NodeId {
        self.push(value, Op::Input, "input")
    }

    /// Label of the first node holding a non-finite value, if any.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.nodes
            .iter()
            .find(|n| n.value.data.iter().any(|v| !v.is_finite()))
            .map(|n| n.label.as_str())
    }

    /// 3D convolution with cubic kernel `k` (1 or 3), zero padding `k / 2`.
    /// Weight shape `[C_out, C_in, k, k, k]`, bias `[C_out]`.
    pub fn conv3d(&mut self, x: NodeId, w: ParamId, b: ParamId, stride: usize) -> Result<NodeId> {
        let shape = self.params.shape(w);
        if shape.len() != 5 {
            return Err(shape_err("[C_out, C_in, k, k, k]", shape));
        }
        let (c_out, c_in, k) = (shape[0], shape[1], shape[2]);
        let xv = &self.nodes[x.0].value;
        if xv.channels != c_in {
            return Err(shape_err(c_in, xv.channels));
        }
        let out_dims = [0, 1, 2].map(|i| out_extent(xv.dims[i], k, stride));
        let n_out: usize = out_dims.iter().product();
        let mut out = Tensor::zeros(c_out, out_dims);
        let weights = self.params.values(w);
        let kk = c_in * k * k * k;
        if k == 1 && stride == 1 {
            matmul(c_out, c_in, n_out, Mat::n(weights, c_in), Mat::n(&xv.data, n_out), &mut out.data, n_out, false);
        } else {
            let slab = out_dims[1] * out_dims[2];
            let mut col = Vec::new();
            for xs in slab_ranges(out_dims[0], slab, kk) {
                let len = (xs.1 - xs.0) * slab;
                col.resize(kk * len, R::ZERO);
                im2col(xv, k, stride, out_dims, xs, &mut col);
                matmul(c_out, kk, len, Mat::n(weights, kk), Mat::n(&col, len), &mut out.data[xs.0 * slab..], n_out, false);
            }
        }
        for (chunk, &bias) in out.data.chunks_exact_mut(n_out).zip(self.params.values(b)) {
            for v in chunk {
                *v += bias;
            }
        }
        let label = String::from(self.params.name(w));
        Ok(self.push(out, Op::Conv { x, w, b, k, stride }, label))
    }

    pub fn group_norm(&mut self, x: NodeId, gamma: ParamId, beta: ParamId, groups: usize) -> Result<NodeId> {
        let xv = &self.nodes[x.0].value;
        let c = xv.channels;
        if groups == 0 || !c.is_multiple_of(groups) {
            return Err(Error::InvalidArgument(alloc::format!("{c} channels not divisible into {groups} groups")));
        }
        let n = xv.spatial();
        let block = (c / groups) * n;
        let gam = self.params.values(gamma);
        let bet = self.params.values(beta);
        let mut out = Tensor::zeros(c, xv.dims);
        let mut stats = Vec::with_capacity(groups);
        for g in 0..groups {
            let xs = &xv.data[g * block..(g + 1) * block];
            let mean = xs.iter().map(|v| v.to_f64()).sum::<f64>() / block as f64;
            let var = xs.iter().map(|v| (v.to_f64() - mean).powi(2)).sum::<f64>() / block as f64;
            let rstd = 1.0 / libm::sqrt(var + GN_EPS);
            stats.push((mean, rstd));
            let (m, r) = (R::from_f64(mean), R::from_f64(rstd));
            for (ci, (src, dst)) in xs.chunks_exact(n).zip(out.data[g * block..(g + 1) * block].chunks_exact_mut(n)).enumerate() {
                let ch = g * (c / groups) + ci;
                let (sc, sh) = (gam[ch] * r, bet[ch]);
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = (s - m) * sc + sh;
                }
            }
        }
        let label = String::from(self.params.name(gamma));
        Ok(self.push(out, Op::GroupNorm { x, gamma, beta, groups, stats }, label))
    }

    pub fn silu(&mut self, x: NodeId) -> NodeId {
        let xv = &self.nodes[x.0].value;
        let data = xv.data.iter().map(|&v| v * sigmoid(v)).collect();
        let out = Tensor { channels: xv.channels, dims: xv.dims, data };
        self.push(out, Op::Silu { x }, "silu")
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let xv = &self.nodes[x.0].value;
        let data = xv.data.iter().map(|&v| v.tanh()).collect();
        let out = Tensor { channels: xv.channels, dims: xv.dims, data };
        self.push(out, Op::Tanh { x }, "tanh")
    }

    /// `y = W x + b` on a vector node; weight shape `[out, in]`.
    pub fn linear(&mut self, x: NodeId, w: ParamId, b: ParamId) -> Result<NodeId> {
        let shape = self.params.shape(w);
        let (n_out, n_in) = (shape[0], shape[1]);
        let xv = &self.nodes[x.0].value;
        if xv.data.len() != n_in {
            return Err(shape_err(n_in, xv.data.len()));
        }
        let wv = self.params.values(w);
        let bv = self.params.values(b);
        let data = (0..n_out)
            .map(|o| wv[o * n_in..(o + 1) * n_in].iter().zip(&xv.data).map(|(&a, &b)| a * b).sum::<R>() + bv[o])
            .collect();
        let label = String::from(self.params.name(w));
        Ok(self.push(Tensor::vector(data), Op::Linear { x, w, b }, label))
    }

    /// Add a per-channel bias vector node to a volume node.
    pub fn channel_bias(&mut self, x: NodeId, v: NodeId) -> Result<NodeId> {
        let (xv, vv) = (&self.nodes[x.0].value, &self.nodes[v.0].value);
        if vv.data.len() != xv.channels {
            return Err(shape_err(xv.channels, vv.data.len()));
        }
        let n = xv.spatial();
        let mut out = xv.clone();
        for (chunk, &b) in out.data.chunks_exact_mut(n).zip(&vv.data) {
            for d in chunk {
                *d += b;
            }
        }
        Ok(self.push(out, Op::ChannelBias { x, v }, "time_bias"))
    }

    /// Single-channel `sum_c v[c] * x[c] + v[C]` for a `C`-channel volume
    /// and a vector node of length `C + 1`.
    pub fn channel_mix(&mut self, x: NodeId, v: NodeId) -> Result<NodeId> {
        let (xv, vv) = (&self.nodes[x.0].value, &self.nodes[v.0].value);
        if vv.data.len() != xv.channels + 1 {
            return Err(shape_err(xv.channels + 1, vv.data.len()));
        }
        let n = xv.spatial();
        let mut out = Tensor::zeros(1, xv.dims);
        out.data.fill(vv.data[xv.channels]);
        for (chunk, &w) in xv.data.chunks_exact(n).zip(&vv.data) {
            for (o, &a) in out.data.iter_mut().zip(chunk) {
                *o += w * a;
            }
        }
        Ok(self.push(out, Op::ChannelMix { x, v }, "channel_mix"))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if av.channels != bv.channels || av.dims != bv.dims {
            return Err(shape_err((av.channels, av.dims), (bv.channels, bv.dims)));
        }
        let data = av.data.iter().zip(&bv.data).map(|(&p, &q)| p + q).collect();
        let out = Tensor { channels: av.channels, dims: av.dims, data };
        Ok(self.push(out, Op::Add { a, b }, "add"))
    }

    /// Channel concatenation `[a; b]`.
    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if av.dims != bv.dims {
            return Err(shape_err(av.dims, bv.dims));
        }
        let mut data = Vec::with_capacity(av.data.len() + bv.data.len());
        data.extend_from_slice(&av.data);
        data.extend_from_slice(&bv.data);
        let out = Tensor { channels: av.channels + bv.channels, dims: av.dims, data };
        Ok(self.push(out, Op::Concat { a, b }, "concat"))
    }

    /// Nearest-neighbour 2x upsampling along every spatial axis.
    pub fn upsample2(&mut self, x: NodeId) -> NodeId {
        let xv = &self.nodes[x.0].value;
        let [nx, ny, nz] = xv.dims;
        let dims = [2 * nx, 2 * ny, 2 * nz];
        let mut out = Tensor::zeros(xv.channels, dims);
        let (n_in, n_out) = (nx * ny * nz, dims.iter().product::<usize>());
        for c in 0..xv.channels {
            let src = &xv.data[c * n_in..(c + 1) * n_in];
            let dst = &mut out.data[c * n_out..(c + 1) * n_out];
            for ox in 0..dims[0] {
                for oy in 0..dims[1] {
                    let s = &src[((ox / 2) * ny + oy / 2) * nz..((ox / 2) * ny + oy / 2 + 1) * nz];
                    let d = &mut dst[(ox * dims[1] + oy) * dims[2]..(ox * dims[1] + oy + 1) * dims[2]];
                    for (oz, v) in d.iter_mut().enumerate() {
                        *v = s[oz / 2];
                    }
                }
            }
        }
        self.push(out, Op::Upsample2 { x }, "upsample")
    }

    /// Back-propagate `grad` from `output`, returning parameter gradients
    /// and the gradient w.r.t. every input node (in creation order).
    pub fn backward(&self, output: NodeId, grad: Vec<R>) -> Result<(ParameterSet<R>, Vec<Vec<R>>)> {
        let out_len = self.nodes[output.0].value.data.len();
        if grad.len() != out_len {
            return Err(shape_err(out_len, grad.len()));
        }
        let mut pgrads = self.params.zeros_like();
        let mut grads: Vec<Option<Vec<R>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(grad);

        fn accumulate<R: Real>(slot: &mut Option<Vec<R>>, g: Vec<R>) {
            match slot {
                Some(existing) => existing.iter_mut().zip(g).for_each(|(a, b)| *a += b),
                None => *slot = Some(g),
            }
        }

        let mut input_grads = Vec::new();
        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else {
                if matches!(self.nodes[idx].op, Op::Input) {
                    input_grads.push(vec![R::ZERO; self.nodes[idx].value.data.len()]);
                }
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => input_grads.push(g),
                Op::Conv { x, w, b, k, stride } => {
                    let xv = &self.nodes[x.0].value;
                    let (k, stride) = (*k, *stride);
                    let c_out = node.value.channels;
                    let c_in = xv.channels;
                    let n_out = node.value.spatial();
                    let kk = c_in * k * k * k;
                    let gb = pgrads.values_mut(*b);
                    for (acc, chunk) in gb.iter_mut().zip(g.chunks_exact(n_out)) {
                        *acc += chunk.iter().copied().sum::<R>();
                    }
                    let weights = self.params.values(*w);
                    let mut dx = vec![R::ZERO; xv.data.len()];
                    if k == 1 && stride == 1 {
                        matmul(c_out, n_out, c_in, Mat::n(&g, n_out), Mat::t(&xv.data, n_out), pgrads.values_mut(*w), c_in, true);
                        matmul(c_in, c_out, n_out, Mat::t(weights, c_in), Mat::n(&g, n_out), &mut dx, n_out, false);
                    } else {
                        let od = node.value.dims;
                        let slab = od[1] * od[2];
                        let mut col = Vec::new();
                        for xs in slab_ranges(od[0], slab, kk) {
                            let len = (xs.1 - xs.0) * slab;
                            let g_chunk = &g[xs.0 * slab..];
                            col.resize(kk * len, R::ZERO);
                            im2col(xv, k, stride, od, xs, &mut col);
                            matmul(c_out, len, kk, Mat::n(g_chunk, n_out), Mat::t(&col, len), pgrads.values_mut(*w), kk, true);
                            matmul(kk, c_out, len, Mat::t(weights, kk), Mat::n(g_chunk, n_out), &mut col, len, false);
                            col2im(&col, c_in, xv.dims, k, stride, od, xs, &mut dx);
                        }
                    }
                    accumulate(&mut grads[x.0], dx);
                }
                Op::GroupNorm { x, gamma, beta, groups, stats } => {
                    let xv = &self.nodes[x.0].value;
                    let c = xv.channels;
                    let cpg = c / groups;
                    let n = xv.spatial();
                    let block = cpg * n;
                    let gam = self.params.values(*gamma);
                    let mut dgamma = vec![0.0f64; c];
                    let mut dbeta = vec![0.0f64; c];
                    let mut dx = vec![R::ZERO; xv.data.len()];
                    for (gi, &(mean, rstd)) in stats.iter().enumerate() {
                        let xs = &xv.data[gi * block..(gi + 1) * block];
                        let gs = &g[gi * block..(gi + 1) * block];
                        let (mut sum_d, mut sum_dx) = (0.0f64, 0.0f64);
                        for ci in 0..cpg {
                            let ch = gi * cpg + ci;
                            let gm = gam[ch].to_f64();
                            for (&xvv, &gv) in xs[ci * n..(ci + 1) * n].iter().zip(&gs[ci * n..(ci + 1) * n]) {
                                let xhat = (xvv.to_f64() - mean) * rstd;
                                let gv = gv.to_f64();
                                dgamma[ch] += gv * xhat;
                                dbeta[ch] += gv;
                                let dxh = gv * gm;
                                sum_d += dxh;
                                sum_dx += dxh * xhat;
                            }
                        }
                        let (mean_d, mean_dx) = (sum_d / block as f64, sum_dx / block as f64);
                        let out = &mut dx[gi * block..(gi + 1) * block];
                        for ci in 0..cpg {
                            let gm = gam[gi * cpg + ci].to_f64();
                            for j in ci * n..(ci + 1) * n {
                                let xhat = (xs[j].to_f64() - mean) * rstd;
                                let dxh = gs[j].to_f64() * gm;
                                out[j] = R::from_f64(rstd * (dxh - mean_d - xhat * mean_dx));
                            }
                        }
                    }
                    for (a, d) in pgrads.values_mut(*gamma).iter_mut().zip(dgamma) {
                        *a += R::from_f64(d);
                    }
                    for (a, d) in pgrads.values_mut(*beta).iter_mut().zip(dbeta) {
                        *a += R::from_f64(d);
                    }
                    accumulate(&mut grads[x.0], dx);
                }
                Op::Silu { x } => {
                    let xv = &self.nodes[x.0].value;
                    let dx = xv
                        .data
                        .iter()
                        .zip(&g)
                        .map(|(&v, &gv)| {
                            let s = sigmoid(v);
                            gv * s * (R::ONE + v * (R::ONE - s))
                        })
                        .collect();
                    accumulate(&mut grads[x.0], dx);
                }
                Op::Tanh { x } => {
                    let dx = node.value.data.iter().zip(&g).map(|(&y, &gv)| gv * (R::ONE - y * y)).collect();
                    accumulate(&mut grads[x.0], dx);
                }
                Op::Linear { x, w, b } => {
                    let xv = &self.nodes[x.0].value.data;
                    let n_in = xv.len();
                    let wv = self.params.values(*w);
                    let gw = pgrads.values_mut(*w);
                    for (o, &go) in g.iter().enumerate() {
                        for (acc, &xi) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(xv) {
                            *acc += go * xi;
                        }
                    }
                    for (acc, &go) in pgrads.values_mut(*b).iter_mut().zip(&g) {
                        *acc += go;
                    }
                    let dx = (0..n_in).map(|i| g.iter().enumerate().map(|(o, &go)| wv[o * n_in + i] * go).sum()).collect();
                    accumulate(&mut grads[x.0], dx);
                }
                Op::ChannelBias { x, v } => {
                    let n = node.value.spatial();
                    let dv = g.chunks_exact(n).map(|c| c.iter().copied().sum()).collect();
                    accumulate(&mut grads[v.0], dv);
                    accumulate(&mut grads[x.0], g);
                }
                Op::ChannelMix { x, v } => {
                    let (xv, vv) = (&self.nodes[x.0].value, &self.nodes[v.0].value);
                    let n = xv.spatial();
                    let mut dv: Vec<R> = xv.data.chunks_exact(n).map(|c| c.iter().zip(&g).map(|(&a, &b)| a * b).sum()).collect();
                    dv.push(g.iter().copied().sum());
                    let mut dx = Vec::with_capacity(xv.data.len());
                    for &w in &vv.data[..xv.channels] {
                        dx.extend(g.iter().map(|&b| w * b));
                    }
                    accumulate(&mut grads[v.0], dv);
                    accumulate(&mut grads[x.0], dx);
                }
                Op::Add { a, b } => {
                    accumulate(&mut grads[b.0], g.clone());
                    accumulate(&mut grads[a.0], g);
                }
                Op::Concat { a, b } => {
                    let split = self.nodes[a.0].value.data.len();
                    let mut ga = g;
                    let gb = ga.split_off(split);
                    accumulate(&mut grads[b.0], gb);
                    accumulate(&mut grads[a.0], ga);
                }
                Op::Upsample2 { x } => {
                    let xv = &self.nodes[x.0].value;
                    let [nx, ny, nz] = xv.dims;
                    let od = node.value.dims;
                    let (n_in, n_out) = (nx * ny * nz, od.iter().product::<usize>());
                    let mut dx = vec![R::ZERO; xv.data.len()];
                    for c in 0..xv.channels {
                        for ox in 0..od[0] {
                            for oy in 0..od[1] {
                                for oz in 0..od[2] {
                                    dx[c * n_in + ((ox / 2) * ny + oy / 2) * nz + oz / 2] +=
                                        g[c * n_out + (ox * od[1] + oy) * od[2] + oz];
                                }
                            }
                        }
                    }
                    accumulate(&mut grads[x.0], dx);
                }
            }
        }
        input_grads.reverse();
        Ok((pgrads, input_grads))
    }
}
