//! Convolution + max-pool kernel used by the mask encoder.
//!
//! The forward pass lowers the cross-correlation to a single GEMM over an
//! im2col buffer. Max pooling keeps only one pre-pool position per pooled
//! cell, so the backward pass only touches those argmax columns.

use super::tape::Var;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub(crate) struct ConvRecord {
    pub input: Var,
    pub kernels: Var,
    pub bias: Var,
    channels: usize,
    height: usize,
    width: usize,
    out_channels: usize,
    kh: usize,
    kw: usize,
    /// im2col rows: one row of `channels * kh * kw` per pre-pool position.
    cols: Vec<f64>,
    /// Pre-pool flat position chosen by the max for each output cell.
    argmax: Vec<usize>,
    pooled: usize,
}

fn dim_err(lhs: &[usize], rhs: &[usize]) -> Error {
    Error::Dimension {
        op: "conv2d_maxpool",
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

pub(crate) fn forward(input: &Tensor, kernels: &Tensor, bias: &Tensor, pool: usize) -> Result<(Tensor, ConvRecord)> {
    let (is, ks) = (input.shape(), kernels.shape());
    if is.len() != 3 || ks.len() != 4 || ks[1] != is[0] {
        return Err(dim_err(is, ks));
    }
    let (channels, height, width) = (is[0], is[1], is[2]);
    let (out_channels, kh, kw) = (ks[0], ks[2], ks[3]);
    if kh % 2 == 0 || kw % 2 == 0 || kh > height || kw > width {
        return Err(dim_err(is, ks));
    }
    if bias.shape() != [out_channels] {
        return Err(dim_err(ks, bias.shape()));
    }
    if pool == 0 || height / pool == 0 || width / pool == 0 {
        return Err(dim_err(is, &[pool]));
    }

    let hw = height * width;
    let row = channels * kh * kw;
    let (ph, pw) = (kh / 2, kw / 2);
    let x = input.data();
    let mut cols = vec![0.0; hw * row];
    for y in 0..height {
        for xx in 0..width {
            let dst = &mut cols[(y * width + xx) * row..][..row];
            for c in 0..channels {
                for ky in 0..kh {
                    let sy = y + ky;
                    if sy < ph || sy - ph >= height {
                        continue;
                    }
                    let src_row = &x[c * hw + (sy - ph) * width..][..width];
                    for kx in 0..kw {
                        let sx = xx + kx;
                        if sx < pw || sx - pw >= width {
                            continue;
                        }
                        dst[(c * kh + ky) * kw + kx] = src_row[sx - pw];
                    }
                }
            }
        }
    }

    // pre[k, p] = sum_r W[k, r] * cols[p, r] + b[k]
    let mut pre = vec![0.0; out_channels * hw];
    for (k, chunk) in pre.chunks_exact_mut(hw).enumerate() {
        chunk.fill(bias.data()[k]);
    }
    // SAFETY: all slices are sized exactly for the dimensions and strides
    // passed; the output buffer does not alias either input.
    unsafe {
        matrixmultiply::dgemm(
            out_channels,
            row,
            hw,
            1.0,
            kernels.data().as_ptr(),
            row as isize,
            1,
            cols.as_ptr(),
            1,
            row as isize,
            1.0,
            pre.as_mut_ptr(),
            hw as isize,
            1,
        );
    }

    let (oh, ow) = (height / pool, width / pool);
    let pooled = oh * ow;
    let mut out = vec![0.0; out_channels * pooled];
    let mut argmax = vec![0usize; out_channels * pooled];
    for k in 0..out_channels {
        let plane = &pre[k * hw..(k + 1) * hw];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = (oy * pool) * width + ox * pool;
                for dy in 0..pool {
                    for dx in 0..pool {
                        let p = (oy * pool + dy) * width + ox * pool + dx;
                        if plane[p] > plane[best] {
                            best = p;
                        }
                    }
                }
                let o = k * pooled + oy * ow + ox;
                out[o] = plane[best];
                argmax[o] = best;
            }
        }
    }

    let record = ConvRecord {
        input: Var::placeholder(),
        kernels: Var::placeholder(),
        bias: Var::placeholder(),
        channels,
        height,
        width,
        out_channels,
        kh,
        kw,
        cols,
        argmax,
        pooled,
    };
    Ok((Tensor::new(vec![out_channels, oh, ow], out)?, record))
}

impl ConvRecord {
    pub fn bind(self, input: Var, kernels: Var, bias: Var) -> Self {
        ConvRecord {
            input,
            kernels,
            bias,
            ..self
        }
    }

    fn row(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    pub fn bias_grad(&self, g: &[f64], d: &mut [f64]) {
        for (k, gk) in g.chunks_exact(self.pooled).enumerate() {
            d[k] += gk.iter().sum::<f64>();
        }
    }

    pub fn kernel_grad(&self, g: &[f64], d: &mut [f64]) {
        let row = self.row();
        for k in 0..self.out_channels {
            let dk = &mut d[k * row..(k + 1) * row];
            for o in k * self.pooled..(k + 1) * self.pooled {
                let gv = g[o];
                if gv == 0.0 {
                    continue;
                }
                let src = &self.cols[self.argmax[o] * row..][..row];
                for (a, b) in dk.iter_mut().zip(src) {
                    *a += gv * b;
                }
            }
        }
    }

    pub fn input_grad(&self, g: &[f64], kernels: &[f64], d: &mut [f64]) {
        let row = self.row();
        let (h, w, kh, kw) = (self.height, self.width, self.kh, self.kw);
        let (ph, pw) = (kh / 2, kw / 2);
        // Column gradients for the pre-pool positions the max selected.
        let mut dcols = vec![0.0; h * w * row];
        let mut touched = vec![false; h * w];
        for k in 0..self.out_channels {
            let wk = &kernels[k * row..(k + 1) * row];
            for o in k * self.pooled..(k + 1) * self.pooled {
                let gv = g[o];
                if gv == 0.0 {
                    continue;
                }
                let p = self.argmax[o];
                touched[p] = true;
                for (a, b) in dcols[p * row..(p + 1) * row].iter_mut().zip(wk) {
                    *a += gv * b;
                }
            }
        }
        for p in (0..h * w).filter(|&p| touched[p]) {
            let dcol = &dcols[p * row..(p + 1) * row];
            let (y, x) = (p / w, p % w);
            let ky0 = ph.saturating_sub(y);
            let ky1 = kh.min(h + ph - y);
            let kx0 = pw.saturating_sub(x);
            let kx1 = kw.min(w + pw - x);
            for c in 0..self.channels {
                for ky in ky0..ky1 {
                    let base = c * h * w + (y + ky - ph) * w;
                    let src = &dcol[(c * kh + ky) * kw..][..kw];
                    for kx in kx0..kx1 {
                        d[base + x + kx - pw] += src[kx];
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::tape::Tape;
    use super::*;

    /// Plain nested-loop reference, independent of the im2col path.
    fn naive(input: &Tensor, kernels: &Tensor, bias: &Tensor, pool: usize) -> Vec<f64> {
        let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
        let (k, kh, kw) = (kernels.shape()[0], kernels.shape()[2], kernels.shape()[3]);
        let at = |ci: usize, y: isize, x: isize| -> f64 {
            if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
                0.0
            } else {
                input.data()[ci * h * w + y as usize * w + x as usize]
            }
        };
        let mut out = Vec::new();
        for ko in 0..k {
            let mut pre = vec![0.0; h * w];
            for y in 0..h {
                for x in 0..w {
                    let mut s = bias.data()[ko];
                    for ci in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let wv = kernels.data()[((ko * c + ci) * kh + ky) * kw + kx];
                                s += wv
                                    * at(
                                        ci,
                                        y as isize + ky as isize - (kh / 2) as isize,
                                        x as isize + kx as isize - (kw / 2) as isize,
                                    );
                            }
                        }
                    }
                    pre[y * w + x] = s;
                }
            }
            for oy in 0..h / pool {
                for ox in 0..w / pool {
                    let mut m = f64::NEG_INFINITY;
                    for dy in 0..pool {
                        for dx in 0..pool {
                            m = m.max(pre[(oy * pool + dy) * w + ox * pool + dx]);
                        }
                    }
                    out.push(m);
                }
            }
        }
        out
    }

    #[test]
    fn max_of_four_with_identity_kernel() {
        let input = Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let kernel = Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap();
        let bias = Tensor::zeros(&[1]);
        let (out, _) = forward(&input, &kernel, &bias, 2).unwrap();
        assert_eq!(out.shape(), &[1, 1, 1]);
        assert_eq!(out.data(), &[4.0]);
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let mut rng = rand::rngs::mock::StepRng::new(3, 7);
        let input = Tensor::zeros(&[2, 6, 6]);
        let kernels = Tensor::uniform(&[3, 2, 3, 3], 1.0, &mut rng);
        let (out, _) = forward(&input, &kernels, &Tensor::zeros(&[3]), 2).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_arithmetic_and_odd_sizes() {
        let input = Tensor::filled(&[2, 8, 8], 0.5);
        let kernels = Tensor::filled(&[5, 2, 3, 3], 0.1);
        let (out, _) = forward(&input, &kernels, &Tensor::zeros(&[5]), 2).unwrap();
        assert_eq!(out.shape(), &[5, 4, 4]);
        let input = Tensor::filled(&[2, 7, 5], 0.5);
        let (out, _) = forward(&input, &kernels, &Tensor::zeros(&[5]), 2).unwrap();
        assert_eq!(out.shape(), &[5, 3, 2]);
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let input = Tensor::zeros(&[3, 4, 4]);
        let kernels = Tensor::zeros(&[2, 2, 3, 3]);
        assert!(matches!(
            forward(&input, &kernels, &Tensor::zeros(&[2]), 2),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn matches_nested_loop_reference() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for (c, h, w, k) in [(1, 4, 4, 1), (3, 8, 6, 4), (2, 5, 7, 3)] {
            let input = Tensor::uniform(&[c, h, w], 1.0, &mut rng);
            let kernels = Tensor::uniform(&[k, c, 3, 3], 1.0, &mut rng);
            let bias = Tensor::uniform(&[k], 1.0, &mut rng);
            let (out, _) = forward(&input, &kernels, &bias, 2).unwrap();
            let reference = naive(&input, &kernels, &bias, 2);
            for (a, b) in out.data().iter().zip(&reference) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let input = Tensor::uniform(&[2, 6, 6], 1.0, &mut rng);
        let kernels = Tensor::uniform(&[3, 2, 3, 3], 1.0, &mut rng);
        let bias = Tensor::uniform(&[3], 1.0, &mut rng);
        let weights = Tensor::uniform(&[27], 1.0, &mut rng);

        let loss = |i: &Tensor, k: &Tensor, b: &Tensor| -> f64 {
            let (o, _) = forward(i, k, b, 2).unwrap();
            o.data().iter().zip(weights.data()).map(|(a, w)| a * w).sum()
        };

        let mut tape = Tape::new();
        let (iv, kv, bv) = (
            tape.param(input.clone()),
            tape.param(kernels.clone()),
            tape.param(bias.clone()),
        );
        let out = tape.conv2d_maxpool(iv, kv, bv, 2).unwrap();
        let flat = tape.reshape(out, &[27]).unwrap();
        let wv = tape.constant(weights.clone());
        let prod = tape.hadamard(flat, wv).unwrap();
        let root = tape.sum(prod);
        let grads = tape.backward(root).unwrap();

        let h = 1e-6;
        for (which, var) in [(0, iv), (1, kv), (2, bv)] {
            let base = [&input, &kernels, &bias][which].clone();
            let analytic = grads.get(var).unwrap();
            for idx in 0..base.len() {
                let mut plus = [input.clone(), kernels.clone(), bias.clone()];
                let mut minus = plus.clone();
                plus[which].data_mut()[idx] += h;
                minus[which].data_mut()[idx] -= h;
                let numeric = (loss(&plus[0], &plus[1], &plus[2]) - loss(&minus[0], &minus[1], &minus[2])) / (2.0 * h);
                assert!(
                    (numeric - analytic[idx]).abs() < 1e-6,
                    "{which}/{idx}: {numeric} vs {}",
                    analytic[idx]
                );
            }
        }
    }
}
