//! Fused CPU kernels for the head's convolution blocks, each with a
//! hand-written gradient.
//!
//! candle accumulates every gradient into a zero-initialized buffer, so each
//! node of the autograd graph costs a few passes over its activation. For
//! the large early feature maps that bookkeeping dominated training time;
//! these ops collapse pad/narrow/cat, reshape/bias/relu and the pooling
//! comparisons into one node each.

use candle_core::{bail, CpuStorage, Layout, Shape, Tensor};

/// (N, C, H, W) → (N, C·k·k, H·W). Row `(c·k + dy)·k + dx` holds the input
/// shifted by `(dy - k/2, dx - k/2)` with zeros outside, which lines up with
/// a flattened (filters, C, k, k) kernel.
pub fn im2col(x: &Tensor, k: usize) -> candle_core::Result<Tensor> {
    let (_, c, h, w) = x.dims4()?;
    x.contiguous()?.apply_op1(Im2Col(Geometry { c, h, w, k }))
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
}

impl Geometry {
    fn image_len(&self) -> usize {
        self.c * self.h * self.w
    }

    fn cols_len(&self) -> usize {
        self.c * self.k * self.k * self.h * self.w
    }

    /// Calls `f(src, dst, len)` for every contiguous run shared by the
    /// image (offset `src`) and one column row (offset `dst`).
    fn for_each_run(&self, mut f: impl FnMut(usize, usize, usize)) {
        let Geometry { c, h, w, k } = *self;
        let p = k / 2;
        for ci in 0..c {
            for dy in 0..k {
                for dx in 0..k {
                    let row = ((ci * k + dy) * k + dx) * h * w;
                    // x + dx - p must land in [0, w)
                    let x0 = p.saturating_sub(dx);
                    let x1 = (w + p).saturating_sub(dx).min(w);
                    if x0 >= x1 {
                        continue;
                    }
                    for y in 0..h {
                        let sy = y + dy;
                        if sy < p || sy - p >= h {
                            continue;
                        }
                        let src = (ci * h + sy - p) * w + x0 + dx - p;
                        f(src, row + y * w + x0, x1 - x0);
                    }
                }
            }
        }
    }
}

fn f32_input<'a>(storage: &'a CpuStorage, layout: &Layout, op: &str) -> candle_core::Result<&'a [f32]> {
    let CpuStorage::F32(data) = storage else {
        bail!("{op} supports f32 only")
    };
    match layout.contiguous_offsets() {
        Some((start, end)) => Ok(&data[start..end]),
        None => bail!("{op} needs a contiguous input"),
    }
}

struct Im2Col(Geometry);

impl candle_core::CustomOp1 for Im2Col {
    fn name(&self) -> &'static str {
        "im2col"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let g = self.0;
        let input = f32_input(storage, layout, self.name())?;
        let n = input.len() / g.image_len();
        let mut out = vec![0f32; n * g.cols_len()];
        for (img, cols) in input.chunks_exact(g.image_len()).zip(out.chunks_exact_mut(g.cols_len())) {
            g.for_each_run(|src, dst, len| cols[dst..dst + len].copy_from_slice(&img[src..src + len]));
        }
        Ok((CpuStorage::F32(out), Shape::from((n, g.c * g.k * g.k, g.h * g.w))))
    }

    fn bwd(&self, _arg: &Tensor, _res: &Tensor, grad: &Tensor) -> candle_core::Result<Option<Tensor>> {
        Ok(Some(grad.contiguous()?.apply_op1(Col2Im(self.0))?))
    }
}

struct Col2Im(Geometry);

impl candle_core::CustomOp1 for Col2Im {
    fn name(&self) -> &'static str {
        "col2im"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let g = self.0;
        let input = f32_input(storage, layout, self.name())?;
        let n = input.len() / g.cols_len();
        let mut out = vec![0f32; n * g.image_len()];
        for (cols, img) in input.chunks_exact(g.cols_len()).zip(out.chunks_exact_mut(g.image_len())) {
            g.for_each_run(|src, dst, len| {
                for (o, v) in img[src..src + len].iter_mut().zip(&cols[dst..dst + len]) {
                    *o += v;
                }
            });
        }
        Ok((CpuStorage::F32(out), Shape::from((n, g.c, g.h, g.w))))
    }

    fn bwd(&self, _arg: &Tensor, _res: &Tensor, grad: &Tensor) -> candle_core::Result<Option<Tensor>> {
        Ok(Some(grad.contiguous()?.apply_op1(Im2Col(self.0))?))
    }
}

fn f32_pair<'a>(
    a: (&'a CpuStorage, &Layout),
    b: (&'a CpuStorage, &Layout),
    op: &str,
) -> candle_core::Result<(&'a [f32], &'a [f32])> {
    Ok((f32_input(a.0, a.1, op)?, f32_input(b.0, b.1, op)?))
}

/// `relu(x + bias)` for `x` of shape (N, F, H·W) and `bias` of shape (F),
/// returned as (N, F, H, W).
pub fn bias_relu(x: &Tensor, bias: &Tensor, h: usize, w: usize) -> candle_core::Result<Tensor> {
    let (_, f, hw) = x.dims3()?;
    if hw != h * w || bias.dims() != [f] {
        bail!("bias_relu: {:?} with bias {:?} does not fit {h}×{w}", x.dims(), bias.dims());
    }
    x.contiguous()?.apply_op2(&bias.contiguous()?, BiasRelu { h, w })
}

struct BiasRelu {
    h: usize,
    w: usize,
}

impl candle_core::CustomOp2 for BiasRelu {
    fn name(&self) -> &'static str {
        "bias-relu"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let (x, bias) = f32_pair((s1, l1), (s2, l2), self.name())?;
        let hw = self.h * self.w;
        let f = bias.len();
        let mut out = Vec::with_capacity(x.len());
        for (i, plane) in x.chunks_exact(hw).enumerate() {
            let b = bias[i % f];
            out.extend(plane.iter().map(|v| (v + b).max(0.0)));
        }
        Ok((CpuStorage::F32(out), Shape::from((x.len() / (f * hw), f, self.h, self.w))))
    }

    fn bwd(&self, arg: &Tensor, _bias: &Tensor, res: &Tensor, grad: &Tensor) -> candle_core::Result<(Option<Tensor>, Option<Tensor>)> {
        let gx = res.apply_op2_no_bwd(&grad.contiguous()?, &ReluGrad)?.reshape(arg.shape())?;
        let gb = gx.apply_op1_no_bwd(&ChannelSum)?;
        Ok((Some(gx), Some(gb)))
    }
}

/// `grad` where the ReLU output is positive, else 0.
struct ReluGrad;

impl candle_core::CustomOp2 for ReluGrad {
    fn name(&self) -> &'static str {
        "relu-grad"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let (res, grad) = f32_pair((s1, l1), (s2, l2), self.name())?;
        let out = res.iter().zip(grad).map(|(r, g)| if *r > 0.0 { *g } else { 0.0 }).collect();
        Ok((CpuStorage::F32(out), l1.shape().clone()))
    }
}

/// (N, F, L) → (F): sum over the batch and the trailing axis.
struct ChannelSum;

impl candle_core::CustomOp1 for ChannelSum {
    fn name(&self) -> &'static str {
        "channel-sum"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let x = f32_input(storage, layout, self.name())?;
        let (_, f, l) = layout.shape().dims3()?;
        let mut out = vec![0f32; f];
        for (i, plane) in x.chunks_exact(l).enumerate() {
            out[i % f] += plane.iter().sum::<f32>();
        }
        Ok((CpuStorage::F32(out), Shape::from(f)))
    }
}

/// 2×2 max pooling with stride 2 over (N, C, H, W); odd trailing rows and
/// columns are dropped.
pub fn max_pool2(x: &Tensor) -> candle_core::Result<Tensor> {
    x.contiguous()?.apply_op1(MaxPool2)
}

struct MaxPool2;

fn pool_dims(layout: &Layout) -> candle_core::Result<(usize, usize, usize)> {
    let (n, c, h, w) = layout.shape().dims4()?;
    Ok((n * c, h, w))
}

impl candle_core::CustomOp1 for MaxPool2 {
    fn name(&self) -> &'static str {
        "max-pool-2"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let x = f32_input(storage, layout, self.name())?;
        let (planes, h, w) = pool_dims(layout)?;
        let (oh, ow) = (h / 2, w / 2);
        let mut out = Vec::with_capacity(planes * oh * ow);
        for plane in x.chunks_exact(h * w) {
            for y in 0..oh {
                let (r0, r1) = (&plane[2 * y * w..], &plane[(2 * y + 1) * w..]);
                out.extend((0..ow).map(|x| r0[2 * x].max(r0[2 * x + 1]).max(r1[2 * x]).max(r1[2 * x + 1])));
            }
        }
        let (n, c, _, _) = layout.shape().dims4()?;
        Ok((CpuStorage::F32(out), Shape::from((n, c, oh, ow))))
    }

    fn bwd(&self, arg: &Tensor, _res: &Tensor, grad: &Tensor) -> candle_core::Result<Option<Tensor>> {
        Ok(Some(arg.apply_op2_no_bwd(&grad.contiguous()?, &MaxPool2Grad)?))
    }
}

/// Routes each pooled gradient to the first maximal element of its window.
struct MaxPool2Grad;

impl candle_core::CustomOp2 for MaxPool2Grad {
    fn name(&self) -> &'static str {
        "max-pool-2-grad"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let (x, grad) = f32_pair((s1, l1), (s2, l2), self.name())?;
        let (planes, h, w) = pool_dims(l1)?;
        let (oh, ow) = (h / 2, w / 2);
        let mut out = vec![0f32; x.len()];
        for p in 0..planes {
            let base = p * h * w;
            for y in 0..oh {
                for xo in 0..ow {
                    let window = [0, 1, w, w + 1].map(|d| base + 2 * y * w + 2 * xo + d);
                    let best = window.into_iter().fold(window[0], |b, i| if x[i] > x[b] { i } else { b });
                    out[best] = grad[(p * oh + y) * ow + xo];
                }
            }
        }
        Ok((CpuStorage::F32(out), l1.shape().clone()))
    }
}
