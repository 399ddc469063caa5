//! Per-sample CHW kernels with hand-written backward passes.

use crate::scalar::Scalar;

pub const LEAKY_SLOPE: f64 = 0.1;
pub const NORM_EPS: f64 = 1e-5;

/// Pixel tile width for the convolution kernels; keeps output tiles in L1.
const TILE: usize = 128;

#[inline]
fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    // independent lanes so the loop vectorizes without reassociating a single sum
    let mut acc = [T::zero(); 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `c[i, :] += Σ_j a(i, j) · b[j, :]` where `a(i, j) = a[i * a_strides.0 + j * a_strides.1]`,
/// `b` is `k×n` and `c` is `m×n`, both row-major and contiguous.
pub fn matmul_acc<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], a_strides: (usize, usize), b: &[T], c: &mut [T]) {
    debug_assert!(b.len() >= k * n && c.len() >= m * n);
    let mut t0 = 0;
    while t0 < n {
        let t1 = (t0 + TILE).min(n);
        for i in 0..m {
            let crow = &mut c[i * n + t0..i * n + t1];
            for j in 0..k {
                axpy(a[i * a_strides.0 + j * a_strides.1], &b[j * n + t0..j * n + t1], crow);
            }
        }
        t0 = t1;
    }
}

/// `c[i * n + j] += <a[i, :], b[j, :]>` for row-major `a` (`m×len`) and `b` (`n×len`).
pub fn matmul_dot_acc<T: Scalar>(m: usize, n: usize, len: usize, a: &[T], b: &[T], c: &mut [T]) {
    for i in 0..m {
        let arow = &a[i * len..(i + 1) * len];
        for j in 0..n {
            c[i * n + j] += dot(arow, &b[j * len..(j + 1) * len]);
        }
    }
}

/// Unfolds a zero-padded 3×3 neighbourhood into a `(c·9) × (h·w)` matrix.
pub fn im2col3x3<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, col: &mut [T]) {
    let hw = h * w;
    debug_assert_eq!(x.len(), c * hw);
    debug_assert_eq!(col.len(), c * 9 * hw);
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut col[(ci * 9 + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let dst = &mut row[y * w..(y + 1) * w];
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => {
                            dst[0] = T::zero();
                            dst[1..].copy_from_slice(&src[..w - 1]);
                        }
                        1 => dst.copy_from_slice(src),
                        _ => {
                            dst[..w - 1].copy_from_slice(&src[1..]);
                            dst[w - 1] = T::zero();
                        }
                    }
                }
            }
        }
    }
}

/// Unfolded row `r` of [`im2col3x3`] for a single tap.
fn im2col_row<T: Scalar>(x: &[T], r: usize, h: usize, w: usize, row: &mut [T]) {
    let hw = h * w;
    let (ci, ky, kx) = (r / 9, (r % 9) / 3, r % 3);
    let plane = &x[ci * hw..(ci + 1) * hw];
    for y in 0..h {
        let dst = &mut row[y * w..(y + 1) * w];
        let sy = y as isize + ky as isize - 1;
        if sy < 0 || sy >= h as isize {
            dst.fill(T::zero());
            continue;
        }
        let src = &plane[sy as usize * w..(sy as usize + 1) * w];
        match kx {
            0 => {
                dst[0] = T::zero();
                dst[1..].copy_from_slice(&src[..w - 1]);
            }
            1 => dst.copy_from_slice(src),
            _ => {
                dst[..w - 1].copy_from_slice(&src[1..]);
                dst[w - 1] = T::zero();
            }
        }
    }
}

/// Scatters unfolded row `r` (channel `r / 9`, tap `r % 9`) back into `dx`.
fn col2im_row<T: Scalar>(row: &[T], r: usize, h: usize, w: usize, dx: &mut [T]) {
    let hw = h * w;
    let (ci, ky, kx) = (r / 9, (r % 9) / 3, r % 3);
    let plane = &mut dx[ci * hw..(ci + 1) * hw];
    for y in 0..h {
        let sy = y as isize + ky as isize - 1;
        if sy < 0 || sy >= h as isize {
            continue;
        }
        let src = &row[y * w..(y + 1) * w];
        let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
        match kx {
            0 => dst[..w - 1].iter_mut().zip(&src[1..]).for_each(|(d, &s)| *d += s),
            1 => dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s),
            _ => dst[1..].iter_mut().zip(&src[..w - 1]).for_each(|(d, &s)| *d += s),
        }
    }
}

/// Adjoint of [`im2col3x3`]: scatters `col` back and accumulates into `dx`.
pub fn col2im3x3<T: Scalar>(col: &[T], c: usize, h: usize, w: usize, dx: &mut [T]) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut dx[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &col[(ci * 9 + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &row[y * w..(y + 1) * w];
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => {
                            for (d, &s) in dst[..w - 1].iter_mut().zip(&src[1..]) {
                                *d += s;
                            }
                        }
                        1 => {
                            for (d, &s) in dst.iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                        _ => {
                            for (d, &s) in dst[1..].iter_mut().zip(&src[..w - 1]) {
                                *d += s;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Shape and parameter offsets of one convolution (kernel 1 or 3, stride 1, "same" padding).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub weight_offset: usize,
    pub bias_offset: Option<usize>,
}

impl ConvSpec {
    pub fn fan_in(&self) -> usize {
        self.cin * self.kernel * self.kernel
    }

    pub fn weight_len(&self) -> usize {
        self.cout * self.fan_in()
    }

    pub fn param_len(&self) -> usize {
        self.weight_len() + if self.bias_offset.is_some() { self.cout } else { 0 }
    }

    fn weight<'a, T>(&self, params: &'a [T]) -> &'a [T] {
        &params[self.weight_offset..self.weight_offset + self.weight_len()]
    }

    pub fn forward<T: Scalar>(&self, params: &[T], x: &[T], h: usize, w: usize) -> Vec<T> {
        let hw = h * w;
        let k = self.fan_in();
        let mut out = vec![T::zero(); self.cout * hw];
        let weight = self.weight(params);
        if self.kernel == 3 {
            let mut row = vec![T::zero(); hw];
            for r in 0..k {
                im2col_row(x, r, h, w, &mut row);
                for co in 0..self.cout {
                    axpy(weight[co * k + r], &row, &mut out[co * hw..(co + 1) * hw]);
                }
            }
        } else {
            matmul_acc(self.cout, k, hw, weight, (k, 1), x, &mut out);
        }
        if let Some(b) = self.bias_offset {
            for (co, plane) in out.chunks_mut(hw).enumerate() {
                let bias = params[b + co];
                plane.iter_mut().for_each(|v| *v += bias);
            }
        }
        out
    }

    /// Accumulates parameter gradients into `grads` (when given) and input
    /// gradients into `dx` (when given).
    #[allow(clippy::too_many_arguments)]
    pub fn backward<T: Scalar>(
        &self,
        params: &[T],
        x: &[T],
        dout: &[T],
        h: usize,
        w: usize,
        grads: Option<&mut [T]>,
        dx: Option<&mut [T]>,
    ) {
        let hw = h * w;
        let k = self.fan_in();
        if let Some(g) = grads {
            let gw = &mut g[self.weight_offset..self.weight_offset + self.weight_len()];
            if self.kernel == 3 {
                let mut row = vec![T::zero(); hw];
                for r in 0..k {
                    im2col_row(x, r, h, w, &mut row);
                    for co in 0..self.cout {
                        gw[co * k + r] += dot(&dout[co * hw..(co + 1) * hw], &row);
                    }
                }
            } else {
                matmul_dot_acc(self.cout, k, hw, dout, x, gw);
            }
            if let Some(b) = self.bias_offset {
                for (co, plane) in dout.chunks(hw).enumerate() {
                    g[b + co] += plane.iter().copied().sum::<T>();
                }
            }
        }
        if let Some(dx) = dx {
            let weight = self.weight(params);
            if self.kernel == 3 {
                // one unfolded row at a time keeps the scratch buffer small
                let mut row = vec![T::zero(); hw];
                for r in 0..k {
                    row.fill(T::zero());
                    for co in 0..self.cout {
                        axpy(weight[co * k + r], &dout[co * hw..(co + 1) * hw], &mut row);
                    }
                    col2im_row(&row, r, h, w, dx);
                }
            } else {
                matmul_acc(k, self.cout, hw, weight, (1, k), dout, dx);
            }
        }
    }
}

/// Output of instance normalization followed by leaky ReLU.
#[derive(Clone, Debug)]
pub struct NormAct<T> {
    /// normalized pre-activation
    pub z: Vec<T>,
    /// activation
    pub a: Vec<T>,
    pub inv_std: Vec<T>,
}

pub fn norm_act_forward<T: Scalar>(x: Vec<T>, c: usize, hw: usize) -> NormAct<T> {
    let mut z = x;
    let mut a = vec![T::zero(); c * hw];
    let mut inv_std = Vec::with_capacity(c);
    let n = T::lit(hw as f64);
    let eps = T::lit(NORM_EPS);
    let slope = T::lit(LEAKY_SLOPE);
    for ch in 0..c {
        let zs = &mut z[ch * hw..(ch + 1) * hw];
        let mean = zs.iter().copied().sum::<T>() / n;
        let var = zs.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let is = (var + eps).sqrt().recip();
        inv_std.push(is);
        for (zv, av) in zs.iter_mut().zip(&mut a[ch * hw..(ch + 1) * hw]) {
            *zv = (*zv - mean) * is;
            *av = if *zv > T::zero() { *zv } else { *zv * slope };
        }
    }
    NormAct { z, a, inv_std }
}

/// Maps the gradient w.r.t. the activation to the gradient w.r.t. the normalization input.
pub fn norm_act_backward<T: Scalar>(cache: &NormAct<T>, da: &[T], c: usize, hw: usize) -> Vec<T> {
    let n = T::lit(hw as f64);
    let slope = T::lit(LEAKY_SLOPE);
    let mut dx = vec![T::zero(); c * hw];
    for ch in 0..c {
        let z = &cache.z[ch * hw..(ch + 1) * hw];
        let da = &da[ch * hw..(ch + 1) * hw];
        let dxs = &mut dx[ch * hw..(ch + 1) * hw];
        let mut sum_dz = T::zero();
        let mut sum_dz_z = T::zero();
        for ((d, &zv), &g) in dxs.iter_mut().zip(z).zip(da) {
            let dz = if zv > T::zero() { g } else { g * slope };
            *d = dz;
            sum_dz += dz;
            sum_dz_z += dz * zv;
        }
        let scale = cache.inv_std[ch] / n;
        for (d, &zv) in dxs.iter_mut().zip(z) {
            *d = scale * (n * *d - sum_dz - zv * sum_dz_z);
        }
    }
    dx
}

/// 2×2 max pooling; returns pooled planes and the flat argmax index for each output.
pub fn maxpool2_forward<T: Scalar>(x: &[T], c: usize, h: usize, w: usize) -> (Vec<T>, Vec<u32>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut idx = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for y in 0..oh {
            for xx in 0..ow {
                let mut best = base + 2 * y * w + 2 * xx;
                for cand in [
                    base + 2 * y * w + 2 * xx + 1,
                    base + (2 * y + 1) * w + 2 * xx,
                    base + (2 * y + 1) * w + 2 * xx + 1,
                ] {
                    if x[cand] > x[best] {
                        best = cand;
                    }
                }
                out.push(x[best]);
                idx.push(best as u32);
            }
        }
    }
    (out, idx)
}

pub fn maxpool2_backward<T: Scalar>(idx: &[u32], dout: &[T], dx: &mut [T]) {
    for (&i, &g) in idx.iter().zip(dout) {
        dx[i as usize] += g;
    }
}

/// Nearest-neighbour 2× upsampling.
pub fn upsample2_forward<T: Scalar>(x: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![T::zero(); c * oh * ow];
    for ch in 0..c {
        for y in 0..oh {
            let src = &x[ch * h * w + (y / 2) * w..][..w];
            let dst = &mut out[ch * oh * ow + y * ow..][..ow];
            for (xx, d) in dst.iter_mut().enumerate() {
                *d = src[xx / 2];
            }
        }
    }
    out
}

pub fn upsample2_backward<T: Scalar>(dout: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut dx = vec![T::zero(); c * h * w];
    for ch in 0..c {
        for y in 0..oh {
            let src = &dout[ch * oh * ow + y * ow..][..ow];
            let dst = &mut dx[ch * h * w + (y / 2) * w..][..w];
            for (xx, &g) in src.iter().enumerate() {
                dst[xx / 2] += g;
            }
        }
    }
    dx
}
