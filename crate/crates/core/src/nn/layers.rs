//! Per-sample layer kernels on flat `(c, h, w)` buffers.

use crate::tensor::PadMode;

/// Input coordinate for every (output position, kernel tap) pair along one
/// axis, or `None` where a zero-padded tap falls outside the input.
pub(crate) fn tap_table(out: usize, input: usize, kernel: usize, stride: usize, lead: isize, wrap: bool) -> Vec<Option<usize>> {
    let mut t = Vec::with_capacity(out * kernel);
    for o in 0..out {
        for k in 0..kernel {
            let i = (o * stride + k) as isize - lead;
            t.push(if wrap {
                Some(i.rem_euclid(input as isize) as usize)
            } else if i >= 0 && (i as usize) < input {
                Some(i as usize)
            } else {
                None
            });
        }
    }
    t
}

#[derive(Debug, Clone)]
pub(crate) struct ConvGeom {
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_c: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub k: usize,
    rows: Vec<Option<usize>>,
    cols: Vec<Option<usize>>,
}

impl ConvGeom {
    #[allow(clippy::too_many_arguments)]
    pub fn new(in_c: usize, in_h: usize, in_w: usize, out_c: usize, out_h: usize, out_w: usize, k: usize, stride: usize, pad: PadMode) -> Self {
        // "same" padding: the centre tap of an odd kernel sits on the sample.
        let lead = ((k - 1) / 2) as isize;
        let wrap = pad == PadMode::Circular;
        Self {
            in_c,
            in_h,
            in_w,
            out_c,
            out_h,
            out_w,
            k,
            rows: tap_table(out_h, in_h, k, stride, lead, wrap),
            cols: tap_table(out_w, in_w, k, stride, lead, wrap),
        }
    }

    pub fn forward(&self, input: &[f64], weight: &[f64], bias: &[f64], out: &mut [f64]) {
        let (ic, ih, iw, k) = (self.in_c, self.in_h, self.in_w, self.k);
        for o in 0..self.out_c {
            let wo = &weight[o * ic * k * k..(o + 1) * ic * k * k];
            for oy in 0..self.out_h {
                let rows = &self.rows[oy * k..(oy + 1) * k];
                for ox in 0..self.out_w {
                    let cols = &self.cols[ox * k..(ox + 1) * k];
                    let mut acc = bias[o];
                    for c in 0..ic {
                        let plane = &input[c * ih * iw..(c + 1) * ih * iw];
                        let wc = &wo[c * k * k..(c + 1) * k * k];
                        for (ky, row) in rows.iter().enumerate() {
                            let Some(iy) = *row else { continue };
                            let line = &plane[iy * iw..(iy + 1) * iw];
                            let wk = &wc[ky * k..(ky + 1) * k];
                            for (kx, col) in cols.iter().enumerate() {
                                if let Some(ix) = *col {
                                    acc += wk[kx] * line[ix];
                                }
                            }
                        }
                    }
                    out[(o * self.out_h + oy) * self.out_w + ox] = acc;
                }
            }
        }
    }

    /// Accumulates weight/bias gradients and writes the input gradient.
    pub fn backward(&self, input: &[f64], weight: &[f64], grad_out: &[f64], grad_w: &mut [f64], grad_b: &mut [f64], grad_in: &mut [f64]) {
        let (ic, ih, iw, k) = (self.in_c, self.in_h, self.in_w, self.k);
        grad_in.iter_mut().for_each(|g| *g = 0.0);
        for o in 0..self.out_c {
            let base_w = o * ic * k * k;
            for oy in 0..self.out_h {
                let rows = &self.rows[oy * k..(oy + 1) * k];
                for ox in 0..self.out_w {
                    let g = grad_out[(o * self.out_h + oy) * self.out_w + ox];
                    if g == 0.0 {
                        continue;
                    }
                    grad_b[o] += g;
                    let cols = &self.cols[ox * k..(ox + 1) * k];
                    for c in 0..ic {
                        let plane = c * ih * iw;
                        let wc = base_w + c * k * k;
                        for (ky, row) in rows.iter().enumerate() {
                            let Some(iy) = *row else { continue };
                            for (kx, col) in cols.iter().enumerate() {
                                if let Some(ix) = *col {
                                    let ii = plane + iy * iw + ix;
                                    let wi = wc + ky * k + kx;
                                    grad_w[wi] += g * input[ii];
                                    grad_in[ii] += g * weight[wi];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Pooling windows anchored at `o*stride`, widened symmetrically when the
/// kernel exceeds the stride; out-of-range taps wrap around the plane.
#[derive(Debug, Clone)]
pub(crate) struct PoolGeom {
    pub channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub k: usize,
    rows: Vec<Option<usize>>,
    cols: Vec<Option<usize>>,
}

impl PoolGeom {
    pub fn new(channels: usize, in_h: usize, in_w: usize, out_h: usize, out_w: usize, k: usize, stride: usize) -> Self {
        let lead = (k.saturating_sub(stride) / 2) as isize;
        Self {
            channels,
            in_h,
            in_w,
            out_h,
            out_w,
            k,
            rows: tap_table(out_h, in_h, k, stride, lead, true),
            cols: tap_table(out_w, in_w, k, stride, lead, true),
        }
    }

    fn window(&self, oy: usize, ox: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        let k = self.k;
        self.rows[oy * k..(oy + 1) * k]
            .iter()
            .flat_map(move |r| self.cols[ox * k..(ox + 1) * k].iter().map(move |c| (r.unwrap(), c.unwrap())))
    }

    /// Max pooling; `argmax` receives the flat input index of the first
    /// maximal tap of each window.
    pub fn max_forward(&self, input: &[f64], out: &mut [f64], argmax: &mut [usize]) {
        for c in 0..self.channels {
            let plane = c * self.in_h * self.in_w;
            for oy in 0..self.out_h {
                for ox in 0..self.out_w {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_i = 0;
                    for (y, x) in self.window(oy, ox) {
                        let i = plane + y * self.in_w + x;
                        if input[i] > best {
                            best = input[i];
                            best_i = i;
                        }
                    }
                    let o = (c * self.out_h + oy) * self.out_w + ox;
                    out[o] = best;
                    argmax[o] = best_i;
                }
            }
        }
    }

    pub fn avg_forward(&self, input: &[f64], out: &mut [f64]) {
        let norm = 1.0 / (self.k * self.k) as f64;
        for c in 0..self.channels {
            let plane = c * self.in_h * self.in_w;
            for oy in 0..self.out_h {
                for ox in 0..self.out_w {
                    let s: f64 = self.window(oy, ox).map(|(y, x)| input[plane + y * self.in_w + x]).sum();
                    out[(c * self.out_h + oy) * self.out_w + ox] = s * norm;
                }
            }
        }
    }

    pub fn avg_backward(&self, grad_out: &[f64], grad_in: &mut [f64]) {
        grad_in.iter_mut().for_each(|g| *g = 0.0);
        let norm = 1.0 / (self.k * self.k) as f64;
        for c in 0..self.channels {
            let plane = c * self.in_h * self.in_w;
            for oy in 0..self.out_h {
                for ox in 0..self.out_w {
                    let g = grad_out[(c * self.out_h + oy) * self.out_w + ox] * norm;
                    for (y, x) in self.window(oy, ox) {
                        grad_in[plane + y * self.in_w + x] += g;
                    }
                }
            }
        }
    }
}

pub(crate) fn max_backward(argmax: &[usize], grad_out: &[f64], grad_in: &mut [f64]) {
    grad_in.iter_mut().for_each(|g| *g = 0.0);
    for (&i, &g) in argmax.iter().zip(grad_out) {
        grad_in[i] += g;
    }
}

pub(crate) fn gap_forward(input: &[f64], channels: usize, out: &mut [f64]) {
    let area = input.len() / channels;
    for (c, o) in out.iter_mut().enumerate().take(channels) {
        let s: f64 = input[c * area..(c + 1) * area].iter().sum();
        *o = s / area as f64;
    }
}

pub(crate) fn gap_backward(grad_out: &[f64], channels: usize, grad_in: &mut [f64]) {
    let area = grad_in.len() / channels;
    for c in 0..channels {
        let g = grad_out[c] / area as f64;
        grad_in[c * area..(c + 1) * area].iter_mut().for_each(|v| *v = g);
    }
}

pub(crate) fn dense_forward(input: &[f64], weight: &[f64], bias: &[f64], out: &mut [f64]) {
    let n = input.len();
    for (u, o) in out.iter_mut().enumerate() {
        let row = &weight[u * n..(u + 1) * n];
        *o = bias[u] + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>();
    }
}

pub(crate) fn dense_backward(input: &[f64], weight: &[f64], grad_out: &[f64], grad_w: &mut [f64], grad_b: &mut [f64], grad_in: &mut [f64]) {
    let n = input.len();
    grad_in.iter_mut().for_each(|g| *g = 0.0);
    for (u, &g) in grad_out.iter().enumerate() {
        grad_b[u] += g;
        let row = &weight[u * n..(u + 1) * n];
        let grow = &mut grad_w[u * n..(u + 1) * n];
        for j in 0..n {
            grow[j] += g * input[j];
            grad_in[j] += g * row[j];
        }
    }
}

pub(crate) fn softmax(input: &[f64], out: &mut [f64]) {
    let m = input.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (o, &x) in out.iter_mut().zip(input) {
        *o = (x - m).exp();
        z += *o;
    }
    out.iter_mut().for_each(|o| *o /= z);
}

pub(crate) fn softmax_backward(probs: &[f64], grad_out: &[f64], grad_in: &mut [f64]) {
    let dot: f64 = probs.iter().zip(grad_out).map(|(p, g)| p * g).sum();
    for ((gi, &p), &g) in grad_in.iter_mut().zip(probs).zip(grad_out) {
        *gi = p * (g - dot);
    }
}
