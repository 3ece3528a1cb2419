//! Convolutions on channels-last `[H, W, C]` maps via im2col + GEMM, and
//! the modulated deformable sampling that feeds deformable convolution.

use super::gemm::gemm;
use super::graph::{Graph, Var};
use super::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub dilation: usize,
}

impl ConvSpec {
    /// Square kernel, stride 1, size-preserving padding.
    pub fn same(k: usize) -> ConvSpec {
        ConvSpec {
            kh: k,
            kw: k,
            stride: 1,
            pad: k / 2,
            dilation: 1,
        }
    }

    pub fn strided(k: usize, stride: usize) -> ConvSpec {
        ConvSpec {
            stride,
            ..ConvSpec::same(k)
        }
    }

    pub fn dilated(k: usize, dilation: usize) -> ConvSpec {
        ConvSpec {
            dilation,
            pad: dilation * (k / 2),
            ..ConvSpec::same(k)
        }
    }

    pub fn taps(&self) -> usize {
        self.kh * self.kw
    }

    pub fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        let eff_h = self.dilation * (self.kh - 1) + 1;
        let eff_w = self.dilation * (self.kw - 1) + 1;
        (
            (h + 2 * self.pad - eff_h) / self.stride + 1,
            (w + 2 * self.pad - eff_w) / self.stride + 1,
        )
    }
}

fn dims3(t: &Tensor) -> (usize, usize, usize) {
    let s = t.shape();
    assert_eq!(s.len(), 3, "expected [H, W, C], got {s:?}");
    (s[0], s[1], s[2])
}

/// Patch matrix `[Ho * Wo, kh * kw * C]`, column order `(ky, kx, c)`.
pub fn im2col(x: &[f64], h: usize, w: usize, c: usize, spec: ConvSpec) -> Vec<f64> {
    let (ho, wo) = spec.out_dims(h, w);
    let k = spec.taps() * c;
    let mut cols = vec![0.0; ho * wo * k];
    for oy in 0..ho {
        for ox in 0..wo {
            let row = (oy * wo + ox) * k;
            for ky in 0..spec.kh {
                let iy = (oy * spec.stride + ky * spec.dilation) as isize - spec.pad as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..spec.kw {
                    let ix = (ox * spec.stride + kx * spec.dilation) as isize - spec.pad as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let src = (iy as usize * w + ix as usize) * c;
                    let dst = row + (ky * spec.kw + kx) * c;
                    cols[dst..dst + c].copy_from_slice(&x[src..src + c]);
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], h: usize, w: usize, c: usize, spec: ConvSpec) -> Vec<f64> {
    let (ho, wo) = spec.out_dims(h, w);
    let k = spec.taps() * c;
    let mut x = vec![0.0; h * w * c];
    for oy in 0..ho {
        for ox in 0..wo {
            let row = (oy * wo + ox) * k;
            for ky in 0..spec.kh {
                let iy = (oy * spec.stride + ky * spec.dilation) as isize - spec.pad as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..spec.kw {
                    let ix = (ox * spec.stride + kx * spec.dilation) as isize - spec.pad as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let dst = (iy as usize * w + ix as usize) * c;
                    let src = row + (ky * spec.kw + kx) * c;
                    for ch in 0..c {
                        x[dst + ch] += cols[src + ch];
                    }
                }
            }
        }
    }
    x
}

/// Bilinear sample of channel-last `x` at fractional `(py, px)` with zeros
/// outside the map. Returns corner indices (or `None`) and weights.
#[derive(Clone, Copy, Debug)]
pub struct Bilinear {
    pub corners: [Option<usize>; 4],
    pub weights: [f64; 4],
    /// Fractional parts (ly, lx) for derivative computation.
    pub frac: (f64, f64),
}

impl Bilinear {
    pub fn at(py: f64, px: f64, h: usize, w: usize) -> Bilinear {
        let y0 = py.floor();
        let x0 = px.floor();
        let ly = py - y0;
        let lx = px - x0;
        let (y0, x0) = (y0 as isize, x0 as isize);
        let cell = |y: isize, x: isize| {
            (y >= 0 && y < h as isize && x >= 0 && x < w as isize)
                .then(|| y as usize * w + x as usize)
        };
        Bilinear {
            corners: [
                cell(y0, x0),
                cell(y0, x0 + 1),
                cell(y0 + 1, x0),
                cell(y0 + 1, x0 + 1),
            ],
            weights: [
                (1.0 - ly) * (1.0 - lx),
                (1.0 - ly) * lx,
                ly * (1.0 - lx),
                ly * lx,
            ],
            frac: (ly, lx),
        }
    }

    /// d weight / d py for each corner.
    fn dweights_dy(&self) -> [f64; 4] {
        let (_, lx) = self.frac;
        [-(1.0 - lx), -lx, 1.0 - lx, lx]
    }

    fn dweights_dx(&self) -> [f64; 4] {
        let (ly, _) = self.frac;
        [-(1.0 - ly), 1.0 - ly, -ly, ly]
    }

    pub fn sample(&self, x: &[f64], c: usize, ch: usize) -> f64 {
        let mut v = 0.0;
        for i in 0..4 {
            if let Some(cell) = self.corners[i] {
                v += self.weights[i] * x[cell * c + ch];
            }
        }
        v
    }
}

/// Geometry of a modulated deformable sampling op (stride 1, same size).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DeformSpec {
    pub kernel: usize,
    pub dilation: usize,
    pub groups: usize,
}

impl DeformSpec {
    pub fn taps(&self) -> usize {
        self.kernel * self.kernel
    }

    pub fn pad(&self) -> usize {
        self.dilation * (self.kernel / 2)
    }

    pub fn offset_channels(&self) -> usize {
        self.groups * self.taps() * 2
    }

    pub fn mask_channels(&self) -> usize {
        self.groups * self.taps()
    }
}

impl Graph {
    /// `x [H, W, Cin]` convolved with `w [kh * kw * Cin, Cout]`.
    pub fn conv2d(&mut self, x: Var, w: Var, spec: ConvSpec) -> Var {
        let (h, wd, c) = dims3(self.value(x));
        let ws = self.value(w);
        let k = spec.taps() * c;
        assert_eq!(ws.shape()[0], k, "conv weight rows {} != taps * Cin = {k}", ws.shape()[0]);
        let cout = ws.shape()[1];
        let (ho, wo) = spec.out_dims(h, wd);
        let m = ho * wo;
        let out = if spec.taps() == 1 && spec.stride == 1 && spec.pad == 0 {
            let mut out = vec![0.0; m * cout];
            gemm(m, k, cout, self.value(x).data(), false, ws.data(), false, &mut out, false);
            out
        } else {
            let cols = im2col(self.value(x).data(), h, wd, c, spec);
            let mut out = vec![0.0; m * cout];
            gemm(m, k, cout, &cols, false, ws.data(), false, &mut out, false);
            out
        };
        self.op(
            Tensor::new(&[ho, wo, cout], out),
            &[x, w],
            move |g, inp, _, needs| {
                let pointwise = spec.taps() == 1 && spec.stride == 1 && spec.pad == 0;
                let cols_owned;
                let cols: &[f64] = if pointwise {
                    inp[0].data()
                } else {
                    cols_owned = im2col(inp[0].data(), h, wd, c, spec);
                    &cols_owned
                };
                let gw = needs[1].then(|| {
                    let mut d = vec![0.0; k * cout];
                    gemm(k, m, cout, cols, true, g.data(), false, &mut d, false);
                    Tensor::new(&[k, cout], d)
                });
                let gx = needs[0].then(|| {
                    let mut dcols = vec![0.0; m * k];
                    gemm(m, cout, k, g.data(), false, inp[1].data(), true, &mut dcols, false);
                    if pointwise {
                        Tensor::new(&[h, wd, c], dcols)
                    } else {
                        Tensor::new(&[h, wd, c], col2im(&dcols, h, wd, c, spec))
                    }
                });
                vec![gx, gw]
            },
        )
    }

    /// Rearrange `[H, W, s * s * C]` into `[H * s, W * s, C]`; channel
    /// block `(a * s + b)` lands at output offset `(a, b)`.
    pub fn depth_to_space(&mut self, x: Var, s: usize) -> Var {
        let (h, w, cs) = dims3(self.value(x));
        assert_eq!(cs % (s * s), 0);
        let c = cs / (s * s);
        let src = self.value(x).data();
        let (ho, wo) = (h * s, w * s);
        let mut out = vec![0.0; ho * wo * c];
        let index = move |y: usize, xx: usize, a: usize, b: usize| {
            let dst = ((y * s + a) * wo + xx * s + b) * c;
            let from = (y * w + xx) * cs + (a * s + b) * c;
            (dst, from)
        };
        for y in 0..h {
            for xx in 0..w {
                for a in 0..s {
                    for b in 0..s {
                        let (dst, from) = index(y, xx, a, b);
                        out[dst..dst + c].copy_from_slice(&src[from..from + c]);
                    }
                }
            }
        }
        self.op(Tensor::new(&[ho, wo, c], out), &[x], move |g, _, _, _| {
            let mut d = vec![0.0; h * w * cs];
            for y in 0..h {
                for xx in 0..w {
                    for a in 0..s {
                        for b in 0..s {
                            let (dst, from) = index(y, xx, a, b);
                            d[from..from + c].copy_from_slice(&g.data()[dst..dst + c]);
                        }
                    }
                }
            }
            vec![Some(Tensor::new(&[h, w, cs], d))]
        })
    }

    /// Modulated deformable patch matrix `[H * W, K * C]` (column order
    /// `(tap, channel)`, matching [`im2col`]):
    /// `cols[r0, (k, c)] = m[r0, g, k] * x_c(r0 + r_k + offset[r0, g, k])`
    /// with `g = c / (C / G)`. `offsets [H, W, G * K * 2]` holds `(dy, dx)`
    /// pairs; `mask [H, W, G * K]`.
    pub fn deform_im2col(&mut self, x: Var, offsets: Var, mask: Var, spec: DeformSpec) -> Var {
        let (h, w, c) = dims3(self.value(x));
        assert_eq!(c % spec.groups, 0, "channels {c} not divisible by groups {}", spec.groups);
        assert_eq!(self.shape(offsets), &[h, w, spec.offset_channels()]);
        assert_eq!(self.shape(mask), &[h, w, spec.mask_channels()]);
        let cols = deform_cols(
            self.value(x).data(),
            self.value(offsets).data(),
            self.value(mask).data(),
            h,
            w,
            c,
            spec,
        );
        let kk = spec.taps() * c;
        self.op(
            Tensor::new(&[h * w, kk], cols),
            &[x, offsets, mask],
            move |g, inp, _, needs| {
                let (gx, goff, gmask) = deform_cols_backward(
                    g.data(),
                    inp[0].data(),
                    inp[1].data(),
                    inp[2].data(),
                    h,
                    w,
                    c,
                    spec,
                );
                vec![
                    needs[0].then(|| Tensor::new(&[h, w, c], gx)),
                    needs[1].then(|| Tensor::new(&[h, w, spec.offset_channels()], goff)),
                    needs[2].then(|| Tensor::new(&[h, w, spec.mask_channels()], gmask)),
                ]
            },
        )
    }
}

fn sample_position(spec: DeformSpec, oy: usize, ox: usize, k: usize, dy: f64, dx: f64) -> (f64, f64) {
    let ky = k / spec.kernel;
    let kx = k % spec.kernel;
    let pad = spec.pad() as f64;
    (
        oy as f64 - pad + (ky * spec.dilation) as f64 + dy,
        ox as f64 - pad + (kx * spec.dilation) as f64 + dx,
    )
}

fn deform_cols(
    x: &[f64],
    offsets: &[f64],
    mask: &[f64],
    h: usize,
    w: usize,
    c: usize,
    spec: DeformSpec,
) -> Vec<f64> {
    let taps = spec.taps();
    let cg = c / spec.groups;
    let kk = taps * c;
    let mut cols = vec![0.0; h * w * kk];
    for oy in 0..h {
        for ox in 0..w {
            let r0 = oy * w + ox;
            for g in 0..spec.groups {
                for k in 0..taps {
                    let gk = g * taps + k;
                    let dy = offsets[r0 * spec.offset_channels() + gk * 2];
                    let dx = offsets[r0 * spec.offset_channels() + gk * 2 + 1];
                    let m = mask[r0 * spec.mask_channels() + gk];
                    let (py, px) = sample_position(spec, oy, ox, k, dy, dx);
                    let bl = Bilinear::at(py, px, h, w);
                    let base = r0 * kk + k * c + g * cg;
                    for i in 0..4 {
                        let Some(cell) = bl.corners[i] else { continue };
                        let wgt = m * bl.weights[i];
                        if wgt == 0.0 {
                            continue;
                        }
                        let src = cell * c + g * cg;
                        for ch in 0..cg {
                            cols[base + ch] += wgt * x[src + ch];
                        }
                    }
                }
            }
        }
    }
    cols
}

#[allow(clippy::too_many_arguments)]
fn deform_cols_backward(
    gcols: &[f64],
    x: &[f64],
    offsets: &[f64],
    mask: &[f64],
    h: usize,
    w: usize,
    c: usize,
    spec: DeformSpec,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let taps = spec.taps();
    let cg = c / spec.groups;
    let kk = taps * c;
    let mut gx = vec![0.0; h * w * c];
    let mut goff = vec![0.0; h * w * spec.offset_channels()];
    let mut gmask = vec![0.0; h * w * spec.mask_channels()];
    for oy in 0..h {
        for ox in 0..w {
            let r0 = oy * w + ox;
            for g in 0..spec.groups {
                for k in 0..taps {
                    let gk = g * taps + k;
                    let oi = r0 * spec.offset_channels() + gk * 2;
                    let mi = r0 * spec.mask_channels() + gk;
                    let m = mask[mi];
                    let (py, px) = sample_position(spec, oy, ox, k, offsets[oi], offsets[oi + 1]);
                    let bl = Bilinear::at(py, px, h, w);
                    let dwy = bl.dweights_dy();
                    let dwx = bl.dweights_dx();
                    let base = r0 * kk + k * c + g * cg;
                    let grow = &gcols[base..base + cg];
                    let (mut dm, mut dpy, mut dpx) = (0.0, 0.0, 0.0);
                    for i in 0..4 {
                        let Some(cell) = bl.corners[i] else { continue };
                        let src = cell * c + g * cg;
                        let mut dot = 0.0;
                        for ch in 0..cg {
                            dot += grow[ch] * x[src + ch];
                            gx[src + ch] += m * bl.weights[i] * grow[ch];
                        }
                        dm += bl.weights[i] * dot;
                        dpy += dwy[i] * dot;
                        dpx += dwx[i] * dot;
                    }
                    gmask[mi] += dm;
                    goff[oi] += m * dpy;
                    goff[oi + 1] += m * dpx;
                }
            }
        }
    }
    (gx, goff, gmask)
}
