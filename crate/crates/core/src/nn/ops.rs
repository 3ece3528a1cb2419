//! Differentiable primitives recorded on a [`Graph`].

use super::gemm::gemm;
use super::graph::{Graph, Var};
use super::tensor::Tensor;

fn matmul_shape(x: &[usize], m: usize) -> Vec<usize> {
    let mut s = x.to_vec();
    *s.last_mut().expect("non-scalar") = m;
    s
}

impl Graph {
    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.op(v, &[a, b], |g, _, _, _| vec![Some(g.clone()), Some(g.clone())])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.op(v, &[a, b], |g, _, _, _| {
            vec![Some(g.clone()), Some(g.map(|x| -x))]
        })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.op(v, &[a, b], |g, inp, _, needs| {
            vec![
                needs[0].then(|| g.zip_map(inp[1], |g, y| g * y)),
                needs[1].then(|| g.zip_map(inp[0], |g, x| g * x)),
            ]
        })
    }

    /// `a * x + b` elementwise with constants.
    pub fn affine(&mut self, x: Var, a: f64, b: f64) -> Var {
        let v = self.value(x).map(|v| a * v + b);
        self.op(v, &[x], move |g, _, _, _| vec![Some(g.map(|g| a * g))])
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.affine(x, s, 0.0)
    }

    /// `x[.., c] + bias[c]`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Var {
        let c = self.value(bias).numel();
        assert_eq!(self.value(x).cols(), c, "bias length mismatch");
        let mut v = self.value(x).clone();
        let b = self.value(bias).data().to_vec();
        for row in v.data_mut().chunks_exact_mut(c) {
            for (r, bb) in row.iter_mut().zip(&b) {
                *r += bb;
            }
        }
        self.op(v, &[x, bias], move |g, inp, _, needs| {
            let gb = needs[1].then(|| {
                let mut acc = vec![0.0; c];
                for row in g.data().chunks_exact(c) {
                    for (a, r) in acc.iter_mut().zip(row) {
                        *a += r;
                    }
                }
                Tensor::new(inp[1].shape(), acc)
            });
            vec![Some(g.clone()), gb]
        })
    }

    /// `x[.., c] * s[c]`.
    pub fn mul_row(&mut self, x: Var, s: Var) -> Var {
        let c = self.value(s).numel();
        assert_eq!(self.value(x).cols(), c, "scale length mismatch");
        let mut v = self.value(x).clone();
        let sv = self.value(s).data().to_vec();
        for row in v.data_mut().chunks_exact_mut(c) {
            for (r, k) in row.iter_mut().zip(&sv) {
                *r *= k;
            }
        }
        self.op(v, &[x, s], move |g, inp, _, needs| {
            let sv = inp[1].data();
            let gx = needs[0].then(|| {
                let mut gx = g.clone();
                for row in gx.data_mut().chunks_exact_mut(c) {
                    for (r, k) in row.iter_mut().zip(sv) {
                        *r *= k;
                    }
                }
                gx
            });
            let gs = needs[1].then(|| {
                let mut acc = vec![0.0; c];
                for (grow, xrow) in g.data().chunks_exact(c).zip(inp[0].data().chunks_exact(c)) {
                    for i in 0..c {
                        acc[i] += grow[i] * xrow[i];
                    }
                }
                Tensor::new(inp[1].shape(), acc)
            });
            vec![gx, gs]
        })
    }

    /// `x[.., K] @ w[K, M]`.
    pub fn matmul(&mut self, x: Var, w: Var) -> Var {
        let (xs, ws) = (self.value(x), self.value(w));
        assert_eq!(ws.shape().len(), 2, "weight must be 2-D");
        let k = xs.cols();
        assert_eq!(ws.shape()[0], k, "matmul inner dims {:?} x {:?}", xs.shape(), ws.shape());
        let m = ws.shape()[1];
        let rows = xs.rows();
        let mut out = vec![0.0; rows * m];
        gemm(rows, k, m, xs.data(), false, ws.data(), false, &mut out, false);
        let shape = matmul_shape(xs.shape(), m);
        self.op(Tensor::new(&shape, out), &[x, w], move |g, inp, _, needs| {
            let gx = needs[0].then(|| {
                let mut d = vec![0.0; rows * k];
                gemm(rows, m, k, g.data(), false, inp[1].data(), true, &mut d, false);
                Tensor::new(inp[0].shape(), d)
            });
            let gw = needs[1].then(|| {
                let mut d = vec![0.0; k * m];
                gemm(k, rows, m, inp[0].data(), true, g.data(), false, &mut d, false);
                Tensor::new(&[k, m], d)
            });
            vec![gx, gw]
        })
    }

    /// Transpose of a 2-D tensor.
    pub fn transpose(&mut self, x: Var) -> Var {
        let xs = self.value(x);
        assert_eq!(xs.shape().len(), 2);
        let (r, c) = (xs.shape()[0], xs.shape()[1]);
        let t = transpose_data(xs.data(), r, c);
        self.op(Tensor::new(&[c, r], t), &[x], move |g, _, _, _| {
            vec![Some(Tensor::new(&[r, c], transpose_data(g.data(), c, r)))]
        })
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let orig = self.shape(x).to_vec();
        let v = self.value(x).clone().reshaped(shape);
        self.op(v, &[x], move |g, _, _, _| vec![Some(g.clone().reshaped(&orig))])
    }

    fn unary(
        &mut self,
        x: Var,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Var {
        let v = self.value(x).map(f);
        // df(input, output)
        self.op(v, &[x], move |g, inp, out, _| {
            let d: Vec<f64> = g
                .data()
                .iter()
                .zip(inp[0].data())
                .zip(out.data())
                .map(|((g, x), y)| g * df(*x, *y))
                .collect();
            vec![Some(Tensor::new(g.shape(), d))]
        })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.unary(
            x,
            move |v| if v > 0.0 { v } else { slope * v },
            move |x, _| if x > 0.0 { 1.0 } else { slope },
        )
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, |_, y| y)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let shape = self.shape(x).to_vec();
        let s = self.value(x).sum();
        self.op(Tensor::scalar(s), &[x], move |g, _, _, _| {
            vec![Some(Tensor::full(&shape, g.item()))]
        })
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel().max(1) as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Concatenate along the last axis; leading shapes must agree.
    pub fn concat_last(&mut self, xs: &[Var]) -> Var {
        assert!(!xs.is_empty());
        let rows = self.value(xs[0]).rows();
        let widths: Vec<usize> = xs.iter().map(|&x| self.value(x).cols()).collect();
        for &x in xs {
            assert_eq!(self.value(x).rows(), rows, "concat leading shape mismatch");
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; rows * total];
        let mut off = 0;
        for (&x, &w) in xs.iter().zip(&widths) {
            let d = self.value(x).data();
            for r in 0..rows {
                out[r * total + off..r * total + off + w].copy_from_slice(&d[r * w..(r + 1) * w]);
            }
            off += w;
        }
        let shape = matmul_shape(self.shape(xs[0]), total);
        self.op(Tensor::new(&shape, out), xs, move |g, inp, _, needs| {
            let mut res = Vec::with_capacity(inp.len());
            let mut off = 0;
            for (i, &w) in widths.iter().enumerate() {
                if needs[i] {
                    let mut d = vec![0.0; rows * w];
                    for r in 0..rows {
                        d[r * w..(r + 1) * w]
                            .copy_from_slice(&g.data()[r * total + off..r * total + off + w]);
                    }
                    res.push(Some(Tensor::new(inp[i].shape(), d)));
                } else {
                    res.push(None);
                }
                off += w;
            }
            res
        })
    }

    /// Columns `[start, start + len)` of the last axis.
    pub fn slice_last(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xs = self.value(x);
        let c = xs.cols();
        assert!(start + len <= c);
        let rows = xs.rows();
        let mut out = vec![0.0; rows * len];
        for r in 0..rows {
            out[r * len..(r + 1) * len].copy_from_slice(&xs.data()[r * c + start..r * c + start + len]);
        }
        let shape = matmul_shape(xs.shape(), len);
        self.op(Tensor::new(&shape, out), &[x], move |g, inp, _, _| {
            let mut d = Tensor::zeros(inp[0].shape());
            for r in 0..rows {
                d.data_mut()[r * c + start..r * c + start + len]
                    .copy_from_slice(&g.data()[r * len..(r + 1) * len]);
            }
            vec![Some(d)]
        })
    }

    /// Stack 2-D tensors with equal column counts along the row axis.
    pub fn concat_rows(&mut self, xs: &[Var]) -> Var {
        let c = self.value(xs[0]).cols();
        let counts: Vec<usize> = xs.iter().map(|&x| self.value(x).rows()).collect();
        let mut out = Vec::with_capacity(counts.iter().sum::<usize>() * c);
        for &x in xs {
            assert_eq!(self.value(x).cols(), c);
            out.extend_from_slice(self.value(x).data());
        }
        let total: usize = counts.iter().sum();
        self.op(Tensor::new(&[total, c], out), xs, move |g, inp, _, needs| {
            let mut off = 0;
            counts
                .iter()
                .enumerate()
                .map(|(i, &n)| {
                    let s = needs[i].then(|| {
                        Tensor::new(inp[i].shape(), g.data()[off * c..(off + n) * c].to_vec())
                    });
                    off += n;
                    s
                })
                .collect()
        })
    }

    /// Rows of `table [V, E]` at `idx` -> `[idx.len(), E]`.
    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Var {
        let t = self.value(table);
        let e = t.cols();
        let v = t.rows();
        let mut out = Vec::with_capacity(idx.len() * e);
        for &i in idx {
            assert!(i < v, "row {i} out of range {v}");
            out.extend_from_slice(t.row(i));
        }
        let idx = idx.to_vec();
        let n = idx.len();
        self.op(Tensor::new(&[n, e], out), &[table], move |g, inp, _, _| {
            let mut d = Tensor::zeros(inp[0].shape());
            for (r, &i) in idx.iter().enumerate() {
                for k in 0..e {
                    d.data_mut()[i * e + k] += g.data()[r * e + k];
                }
            }
            vec![Some(d)]
        })
    }

    /// Scatter rows of `x [P, C]` to distinct positions of a zero
    /// `[n_rows, C]` buffer, reshaped to `shape`.
    pub fn scatter_rows(&mut self, x: Var, positions: &[usize], shape: &[usize]) -> Var {
        let xs = self.value(x);
        let c = xs.cols();
        assert_eq!(xs.rows(), positions.len());
        let n_rows = shape.iter().product::<usize>() / c;
        let mut out = vec![0.0; n_rows * c];
        for (r, &p) in positions.iter().enumerate() {
            assert!(p < n_rows, "scatter position {p} outside {n_rows} rows");
            out[p * c..(p + 1) * c].copy_from_slice(xs.row(r));
        }
        let pos = positions.to_vec();
        self.op(Tensor::new(shape, out), &[x], move |g, inp, _, _| {
            let mut d = Vec::with_capacity(pos.len() * c);
            for &p in &pos {
                d.extend_from_slice(&g.data()[p * c..(p + 1) * c]);
            }
            vec![Some(Tensor::new(inp[0].shape(), d))]
        })
    }

    /// Per-group channel max over valid rows: `x [P * N, C]` -> `[P, C]`.
    /// Groups without a valid row produce zeros.
    pub fn segment_max(&mut self, x: Var, valid: &[bool], group: usize) -> Var {
        let xs = self.value(x);
        let c = xs.cols();
        let rows = xs.rows();
        assert_eq!(valid.len(), rows);
        assert!(group > 0 && rows % group == 0);
        let p = rows / group;
        let mut out = vec![0.0; p * c];
        let mut arg = vec![usize::MAX; p * c];
        for gi in 0..p {
            for n in 0..group {
                let r = gi * group + n;
                if !valid[r] {
                    continue;
                }
                let row = xs.row(r);
                for k in 0..c {
                    let slot = gi * c + k;
                    if arg[slot] == usize::MAX || row[k] > out[slot] {
                        out[slot] = row[k];
                        arg[slot] = r;
                    }
                }
            }
        }
        self.op(Tensor::new(&[p, c], out), &[x], move |g, inp, _, _| {
            let mut d = Tensor::zeros(inp[0].shape());
            for (slot, &r) in arg.iter().enumerate() {
                if r != usize::MAX {
                    d.data_mut()[r * c + slot % c] += g.data()[slot];
                }
            }
            vec![Some(d)]
        })
    }

    /// Channel mean over valid rows of `x [L, C]` -> `[1, C]`.
    pub fn masked_mean_rows(&mut self, x: Var, valid: &[bool]) -> Var {
        let xs = self.value(x);
        let c = xs.cols();
        assert_eq!(valid.len(), xs.rows());
        let n = valid.iter().filter(|v| **v).count().max(1) as f64;
        let mut out = vec![0.0; c];
        for (r, _) in valid.iter().enumerate().filter(|(_, v)| **v) {
            for (o, v) in out.iter_mut().zip(xs.row(r)) {
                *o += v / n;
            }
        }
        let valid = valid.to_vec();
        self.op(Tensor::new(&[1, c], out), &[x], move |g, inp, _, _| {
            let mut d = Tensor::zeros(inp[0].shape());
            for (r, _) in valid.iter().enumerate().filter(|(_, v)| **v) {
                for k in 0..c {
                    d.data_mut()[r * c + k] = g.data()[k] / n;
                }
            }
            vec![Some(d)]
        })
    }

    /// Max-relative aggregation: `out[i] = max_j (x[i] - x[nbr[i][j]])`
    /// channel-wise over the `k` neighbors of each row.
    pub fn max_relative(&mut self, x: Var, neighbors: &[usize], k: usize) -> Var {
        let xs = self.value(x);
        let c = xs.cols();
        let n = xs.rows();
        assert_eq!(neighbors.len(), n * k, "neighbor table must be rows x k");
        let mut out = vec![0.0; n * c];
        let mut arg = vec![0usize; n * c];
        for i in 0..n {
            let xi = xs.row(i);
            for ch in 0..c {
                let mut best = f64::NEG_INFINITY;
                let mut best_j = usize::MAX;
                for &j in &neighbors[i * k..(i + 1) * k] {
                    let d = xi[ch] - xs.data()[j * c + ch];
                    if d > best {
                        best = d;
                        best_j = j;
                    }
                }
                out[i * c + ch] = if k == 0 { 0.0 } else { best };
                arg[i * c + ch] = best_j;
            }
        }
        self.op(Tensor::new(xs.shape(), out), &[x], move |g, inp, _, _| {
            let mut d = Tensor::zeros(inp[0].shape());
            if k == 0 {
                return vec![Some(d)];
            }
            for (slot, &j) in arg.iter().enumerate() {
                let i = slot / c;
                let ch = slot % c;
                let gv = g.data()[slot];
                d.data_mut()[i * c + ch] += gv;
                d.data_mut()[j * c + ch] -= gv;
            }
            vec![Some(d)]
        })
    }

    /// Row softmax of `x [R, L]` over the columns where `key_valid` holds;
    /// masked columns get probability 0.
    pub fn masked_softmax_rows(&mut self, x: Var, key_valid: &[bool]) -> Var {
        let xs = self.value(x);
        let l = xs.cols();
        assert_eq!(key_valid.len(), l);
        assert!(key_valid.iter().any(|v| *v), "all keys masked");
        let r = xs.rows();
        let mut out = vec![0.0; r * l];
        for i in 0..r {
            let row = xs.row(i);
            let m = row
                .iter()
                .zip(key_valid)
                .filter(|(_, v)| **v)
                .map(|(x, _)| *x)
                .fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for j in 0..l {
                if key_valid[j] {
                    let e = (row[j] - m).exp();
                    out[i * l + j] = e;
                    z += e;
                }
            }
            for v in &mut out[i * l..(i + 1) * l] {
                *v /= z;
            }
        }
        self.op(Tensor::new(xs.shape(), out), &[x], move |g, _, y, _| {
            let mut d = vec![0.0; r * l];
            for i in 0..r {
                let yr = &y.data()[i * l..(i + 1) * l];
                let gr = &g.data()[i * l..(i + 1) * l];
                let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                for j in 0..l {
                    d[i * l + j] = yr[j] * (gr[j] - dot);
                }
            }
            vec![Some(Tensor::new(y.shape(), d))]
        })
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn transpose_data(d: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut t = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            t[j * r + i] = d[i * c + j];
        }
    }
    t
}
