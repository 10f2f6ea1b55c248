//! Network building blocks with hand-written forward/backward passes.
//!
//! All parameters live in one flat `Vec<f64>`; each layer descriptor holds
//! offsets into it. Backward passes accumulate into a gradient buffer of
//! the same layout, which keeps the optimizer, gradient clipping, and
//! finite-difference checks trivial.

use crate::rng::Prng;

/// Channel-major activation tensor: `c` planes of `h` x `w`.
#[derive(Debug, Clone, PartialEq)]
pub struct Chw {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Chw {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Chw {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    #[inline]
    pub fn plane(&self, c: usize) -> &[f64] {
        &self.data[c * self.h * self.w..(c + 1) * self.h * self.w]
    }

    #[inline]
    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.data[c * self.h * self.w..(c + 1) * self.h * self.w]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Stack the planes of `a` then `b`.
    pub fn concat(a: &Chw, b: &Chw) -> Chw {
        debug_assert!(a.h == b.h && a.w == b.w);
        let mut data = Vec::with_capacity((a.c + b.c) * a.h * a.w);
        data.extend_from_slice(&a.data);
        data.extend_from_slice(&b.data);
        Chw {
            c: a.c + b.c,
            h: a.h,
            w: a.w,
            data,
        }
    }

    /// Undo [`Chw::concat`]: split the gradient into the two operands.
    pub fn split(&self, c_first: usize) -> (Chw, Chw) {
        let hw = self.h * self.w;
        let (a, b) = self.data.split_at(c_first * hw);
        (
            Chw {
                c: c_first,
                h: self.h,
                w: self.w,
                data: a.to_vec(),
            },
            Chw {
                c: self.c - c_first,
                h: self.h,
                w: self.w,
                data: b.to_vec(),
            },
        )
    }
}

/// 3x3 convolution, zero padding, stride 1.
#[derive(Debug, Clone)]
pub struct ConvSpec {
    pub in_c: usize,
    pub out_c: usize,
    pub w_off: usize,
    pub b_off: usize,
}

impl ConvSpec {
    pub fn param_len(in_c: usize, out_c: usize) -> usize {
        out_c * in_c * 9 + out_c
    }

    /// He-normal weights; `zero_init` freezes the layer at zero output.
    pub fn init(&self, params: &mut [f64], rng: &mut Prng, zero_init: bool) {
        let std = if zero_init {
            0.0
        } else {
            (2.0 / (self.in_c as f64 * 9.0)).sqrt()
        };
        for i in 0..self.out_c * self.in_c * 9 {
            params[self.w_off + i] = std * rng.normal();
        }
        for i in 0..self.out_c {
            params[self.b_off + i] = 0.0;
        }
    }

    pub fn forward(&self, p: &[f64], x: &Chw) -> Chw {
        debug_assert_eq!(x.c, self.in_c);
        let (h, w) = (x.h, x.w);
        let mut out = Chw::zeros(self.out_c, h, w);
        let zero_row = vec![0.0; w];
        for o in 0..self.out_c {
            let bias = p[self.b_off + o];
            let out_plane = out.plane_mut(o);
            out_plane.iter_mut().for_each(|v| *v = bias);
            for i in 0..self.in_c {
                let x_plane = x.plane(i);
                let w_base = self.w_off + (o * self.in_c + i) * 9;
                let k: &[f64] = &p[w_base..w_base + 9];
                for y in 0..h {
                    let top = if y > 0 { &x_plane[(y - 1) * w..y * w] } else { &zero_row[..] };
                    let mid = &x_plane[y * w..(y + 1) * w];
                    let bot = if y + 1 < h {
                        &x_plane[(y + 1) * w..(y + 2) * w]
                    } else {
                        &zero_row[..]
                    };
                    let dst = &mut out_plane[y * w..(y + 1) * w];
                    accumulate_taps(dst, top, mid, bot, k, w);
                }
            }
        }
        out
    }

    /// Returns d(loss)/d(input); accumulates weight/bias grads into `g`.
    pub fn backward(&self, p: &[f64], x: &Chw, dy: &Chw, g: &mut [f64]) -> Chw {
        debug_assert_eq!(dy.c, self.out_c);
        let (h, w) = (x.h, x.w);
        let mut dx = Chw::zeros(self.in_c, h, w);
        let zero_row = vec![0.0; w];
        for o in 0..self.out_c {
            let dy_plane = dy.plane(o);
            g[self.b_off + o] += dy_plane.iter().sum::<f64>();
            for i in 0..self.in_c {
                let x_plane = x.plane(i);
                let dx_plane = dx.plane_mut(i);
                let w_base = self.w_off + (o * self.in_c + i) * 9;
                // d(input) is the correlation of dy with the 180-degree
                // rotated kernel.
                let kf: &[f64] = &p[w_base..w_base + 9];
                let kr = [kf[8], kf[7], kf[6], kf[5], kf[4], kf[3], kf[2], kf[1], kf[0]];
                let mut gw = [0.0f64; 9];
                for y in 0..h {
                    let dy_top = if y > 0 { &dy_plane[(y - 1) * w..y * w] } else { &zero_row[..] };
                    let dy_mid = &dy_plane[y * w..(y + 1) * w];
                    let dy_bot = if y + 1 < h {
                        &dy_plane[(y + 1) * w..(y + 2) * w]
                    } else {
                        &zero_row[..]
                    };
                    let dst = &mut dx_plane[y * w..(y + 1) * w];
                    accumulate_taps(dst, dy_top, dy_mid, dy_bot, &kr, w);

                    // Weight grads: shifted dot products of this dy row
                    // against the three input rows around it.
                    let x_top = if y > 0 { &x_plane[(y - 1) * w..y * w] } else { &zero_row[..] };
                    let x_mid = &x_plane[y * w..(y + 1) * w];
                    let x_bot = if y + 1 < h {
                        &x_plane[(y + 1) * w..(y + 2) * w]
                    } else {
                        &zero_row[..]
                    };
                    for (row_idx, xr) in [x_top, x_mid, x_bot].into_iter().enumerate() {
                        let base = row_idx * 3;
                        gw[base] += shifted_dot(dy_mid, xr, w, -1);
                        gw[base + 1] += shifted_dot(dy_mid, xr, w, 0);
                        gw[base + 2] += shifted_dot(dy_mid, xr, w, 1);
                    }
                }
                for (kk, &v) in gw.iter().enumerate() {
                    g[w_base + kk] += v;
                }
            }
        }
        dx
    }
}

/// dst[x] += sum of the nine kernel taps over (top, mid, bot) rows with
/// lateral shifts -1, 0, +1; zero padding at the row ends.
#[inline]
fn accumulate_taps(dst: &mut [f64], top: &[f64], mid: &[f64], bot: &[f64], k: &[f64], w: usize) {
    debug_assert!(k.len() >= 9);
    if w == 1 {
        dst[0] += k[1] * top[0] + k[4] * mid[0] + k[7] * bot[0];
        return;
    }
    // Interior: branch-free nine-tap accumulation.
    for x in 1..w - 1 {
        let t = k[0] * top[x - 1] + k[1] * top[x] + k[2] * top[x + 1];
        let m = k[3] * mid[x - 1] + k[4] * mid[x] + k[5] * mid[x + 1];
        let b = k[6] * bot[x - 1] + k[7] * bot[x] + k[8] * bot[x + 1];
        dst[x] += t + m + b;
    }
    dst[0] += k[1] * top[0] + k[2] * top[1] + k[4] * mid[0] + k[5] * mid[1] + k[7] * bot[0]
        + k[8] * bot[1];
    dst[w - 1] += k[0] * top[w - 2] + k[1] * top[w - 1] + k[3] * mid[w - 2] + k[4] * mid[w - 1]
        + k[6] * bot[w - 2] + k[7] * bot[w - 1];
}

/// Dot product of `a` against `b` shifted by `shift` (zero padded).
#[inline]
fn shifted_dot(a: &[f64], b: &[f64], w: usize, shift: isize) -> f64 {
    match shift {
        -1 => {
            let mut acc = 0.0;
            for x in 1..w {
                acc += a[x] * b[x - 1];
            }
            acc
        }
        1 => {
            let mut acc = 0.0;
            for x in 0..w - 1 {
                acc += a[x] * b[x + 1];
            }
            acc
        }
        _ => a.iter().zip(b).map(|(p, q)| p * q).sum(),
    }
}

/// Fully connected layer on flat vectors.
#[derive(Debug, Clone)]
pub struct LinearSpec {
    pub in_d: usize,
    pub out_d: usize,
    pub w_off: usize,
    pub b_off: usize,
}

impl LinearSpec {
    pub fn param_len(in_d: usize, out_d: usize) -> usize {
        out_d * in_d + out_d
    }

    pub fn init(&self, params: &mut [f64], rng: &mut Prng) {
        let std = (2.0 / self.in_d as f64).sqrt();
        for i in 0..self.out_d * self.in_d {
            params[self.w_off + i] = std * rng.normal();
        }
        for i in 0..self.out_d {
            params[self.b_off + i] = 0.0;
        }
    }

    pub fn forward(&self, p: &[f64], x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.in_d);
        (0..self.out_d)
            .map(|o| {
                let row = &p[self.w_off + o * self.in_d..self.w_off + (o + 1) * self.in_d];
                p[self.b_off + o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }

    pub fn backward(&self, p: &[f64], x: &[f64], dy: &[f64], g: &mut [f64]) -> Vec<f64> {
        let mut dx = vec![0.0; self.in_d];
        for o in 0..self.out_d {
            g[self.b_off + o] += dy[o];
            let w_row = self.w_off + o * self.in_d;
            for i in 0..self.in_d {
                g[w_row + i] += dy[o] * x[i];
                dx[i] += p[w_row + i] * dy[o];
            }
        }
        dx
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// SiLU x * sigmoid(x), elementwise.
pub fn silu(x: &Chw) -> Chw {
    Chw {
        c: x.c,
        h: x.h,
        w: x.w,
        data: x.data.iter().map(|&v| v * sigmoid(v)).collect(),
    }
}

pub fn silu_backward(x: &Chw, dy: &Chw) -> Chw {
    Chw {
        c: x.c,
        h: x.h,
        w: x.w,
        data: x
            .data
            .iter()
            .zip(&dy.data)
            .map(|(&v, &d)| {
                let s = sigmoid(v);
                d * s * (1.0 + v * (1.0 - s))
            })
            .collect(),
    }
}

pub fn silu_vec(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v * sigmoid(v)).collect()
}

pub fn silu_vec_backward(x: &[f64], dy: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(dy)
        .map(|(&v, &d)| {
            let s = sigmoid(v);
            d * s * (1.0 + v * (1.0 - s))
        })
        .collect()
}

/// 2x2 average pooling; height and width must be even.
pub fn avgpool2(x: &Chw) -> Chw {
    debug_assert!(x.h % 2 == 0 && x.w % 2 == 0);
    let (h2, w2) = (x.h / 2, x.w / 2);
    let mut out = Chw::zeros(x.c, h2, w2);
    for c in 0..x.c {
        let src = x.plane(c);
        let dst = out.plane_mut(c);
        for y in 0..h2 {
            for xx in 0..w2 {
                let i = 2 * y * x.w + 2 * xx;
                dst[y * w2 + xx] =
                    0.25 * (src[i] + src[i + 1] + src[i + x.w] + src[i + x.w + 1]);
            }
        }
    }
    out
}

pub fn avgpool2_backward(dy: &Chw, h: usize, w: usize) -> Chw {
    let mut dx = Chw::zeros(dy.c, h, w);
    for c in 0..dy.c {
        let src = dy.plane(c);
        let dst = dx.plane_mut(c);
        for y in 0..dy.h {
            for xx in 0..dy.w {
                let v = 0.25 * src[y * dy.w + xx];
                let i = 2 * y * w + 2 * xx;
                dst[i] = v;
                dst[i + 1] = v;
                dst[i + w] = v;
                dst[i + w + 1] = v;
            }
        }
    }
    dx
}

/// Nearest-neighbor 2x upsampling.
pub fn upsample2(x: &Chw) -> Chw {
    let (h2, w2) = (x.h * 2, x.w * 2);
    let mut out = Chw::zeros(x.c, h2, w2);
    for c in 0..x.c {
        let src = x.plane(c);
        let dst = out.plane_mut(c);
        for y in 0..h2 {
            let sy = y / 2;
            for xx in 0..w2 {
                dst[y * w2 + xx] = src[sy * x.w + xx / 2];
            }
        }
    }
    out
}

pub fn upsample2_backward(dy: &Chw) -> Chw {
    let (h, w) = (dy.h / 2, dy.w / 2);
    let mut dx = Chw::zeros(dy.c, h, w);
    for c in 0..dy.c {
        let src = dy.plane(c);
        let dst = dx.plane_mut(c);
        for y in 0..dy.h {
            for xx in 0..dy.w {
                dst[(y / 2) * w + xx / 2] += src[y * dy.w + xx];
            }
        }
    }
    dx
}

/// Per-channel affine modulation y = x * (1 + scale_c) + shift_c.
pub fn film(x: &Chw, scale_shift: &[f64]) -> Chw {
    debug_assert_eq!(scale_shift.len(), 2 * x.c);
    let mut out = x.clone();
    for c in 0..x.c {
        let s = 1.0 + scale_shift[c];
        let t = scale_shift[x.c + c];
        for v in out.plane_mut(c) {
            *v = *v * s + t;
        }
    }
    out
}

/// Returns (dx, d_scale_shift).
pub fn film_backward(x: &Chw, scale_shift: &[f64], dy: &Chw) -> (Chw, Vec<f64>) {
    let mut dx = Chw::zeros(x.c, x.h, x.w);
    let mut dss = vec![0.0; 2 * x.c];
    for c in 0..x.c {
        let s = 1.0 + scale_shift[c];
        let xp = x.plane(c);
        let dyp = dy.plane(c);
        let dxp = dx.plane_mut(c);
        let mut ds = 0.0;
        let mut dt = 0.0;
        for i in 0..xp.len() {
            dxp[i] = dyp[i] * s;
            ds += dyp[i] * xp[i];
            dt += dyp[i];
        }
        dss[c] = ds;
        dss[x.c + c] = dt;
    }
    (dx, dss)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rand_chw(rng: &mut Prng, c: usize, h: usize, w: usize) -> Chw {
        let mut x = Chw::zeros(c, h, w);
        rng.fill_normal(&mut x.data);
        x
    }

    /// Central finite-difference check for a scalar loss 0.5*||f(x)||^2
    /// against the analytic input gradient and parameter gradient.
    fn conv_fd_check(in_c: usize, out_c: usize) {
        let mut rng = Prng::seeded(42);
        let spec = ConvSpec {
            in_c,
            out_c,
            w_off: 0,
            b_off: out_c * in_c * 9,
        };
        let n_params = ConvSpec::param_len(in_c, out_c);
        let mut p = vec![0.0; n_params];
        spec.init(&mut p, &mut rng, false);
        let x = rand_chw(&mut rng, in_c, 6, 5);

        let loss = |p: &[f64], x: &Chw| -> f64 {
            let y = spec.forward(p, x);
            0.5 * y.data.iter().map(|v| v * v).sum::<f64>()
        };
        let y = spec.forward(&p, &x);
        let mut g = vec![0.0; n_params];
        let dx = spec.backward(&p, &x, &y, &mut g);

        let h = 1e-6;
        for i in 0..n_params {
            let mut pp = p.clone();
            pp[i] += h;
            let up = loss(&pp, &x);
            pp[i] -= 2.0 * h;
            let dn = loss(&pp, &x);
            let fd = (up - dn) / (2.0 * h);
            let denom: f64 = g[i].abs().max(fd.abs()).max(1e-8);
            assert!(
                ((g[i] - fd).abs() / denom) < 1e-4,
                "param {i}: analytic {} vs fd {fd}",
                g[i]
            );
        }
        for i in 0..x.data.len() {
            let mut xx = x.clone();
            xx.data[i] += h;
            let up = loss(&p, &xx);
            xx.data[i] -= 2.0 * h;
            let dn = loss(&p, &xx);
            let fd = (up - dn) / (2.0 * h);
            let denom: f64 = dx.data[i].abs().max(fd.abs()).max(1e-8);
            assert!(((dx.data[i] - fd).abs() / denom) < 1e-4, "input {i}");
        }
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        conv_fd_check(1, 2);
        conv_fd_check(3, 2);
    }

    #[test]
    fn linear_gradients_match_finite_differences() {
        let mut rng = Prng::seeded(9);
        let spec = LinearSpec {
            in_d: 5,
            out_d: 4,
            w_off: 0,
            b_off: 20,
        };
        let mut p = vec![0.0; LinearSpec::param_len(5, 4)];
        spec.init(&mut p, &mut rng);
        let x: Vec<f64> = (0..5).map(|_| rng.normal()).collect();
        let loss = |p: &[f64], x: &[f64]| -> f64 {
            let y = spec.forward(p, x);
            0.5 * y.iter().map(|v| v * v).sum::<f64>()
        };
        let y = spec.forward(&p, &x);
        let mut g = vec![0.0; p.len()];
        let dx = spec.backward(&p, &x, &y, &mut g);
        let h = 1e-6;
        for i in 0..p.len() {
            let mut pp = p.clone();
            pp[i] += h;
            let up = loss(&pp, &x);
            pp[i] -= 2.0 * h;
            let dn = loss(&pp, &x);
            let fd = (up - dn) / (2.0 * h);
            assert!((g[i] - fd).abs() / g[i].abs().max(fd.abs()).max(1e-8) < 1e-4);
        }
        for i in 0..x.len() {
            let mut xx = x.clone();
            xx[i] += h;
            let up = loss(&p, &xx);
            xx[i] -= 2.0 * h;
            let dn = loss(&p, &xx);
            let fd = (up - dn) / (2.0 * h);
            assert!((dx[i] - fd).abs() / dx[i].abs().max(fd.abs()).max(1e-8) < 1e-4);
        }
    }

    #[test]
    fn pool_and_upsample_are_exact_adjoint_like_maps() {
        let mut rng = Prng::seeded(3);
        let x = rand_chw(&mut rng, 2, 4, 6);
        let pooled = avgpool2(&x);
        assert_eq!(pooled.h, 2);
        // Forward-then-backward of a constant gradient redistributes mass.
        let dy = Chw {
            c: 2,
            h: 2,
            w: 3,
            data: vec![1.0; 12],
        };
        let dx = avgpool2_backward(&dy, 4, 6);
        assert!(dx.data.iter().all(|&v| (v - 0.25).abs() < 1e-15));

        let up = upsample2(&pooled);
        assert_eq!(up.h, 4);
        let dup = upsample2_backward(&up);
        // Each coarse cell receives 4x its upsampled value.
        for c in 0..2 {
            for i in 0..6 {
                assert!((dup.plane(c)[i] - 4.0 * pooled.plane(c)[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn silu_backward_matches_finite_differences() {
        let mut rng = Prng::seeded(4);
        let x = rand_chw(&mut rng, 1, 3, 3);
        let y = silu(&x);
        let dx = silu_backward(&x, &y);
        let h = 1e-6;
        for i in 0..x.data.len() {
            let mut xx = x.clone();
            xx.data[i] += h;
            let up: f64 = silu(&xx).data.iter().map(|v| 0.5 * v * v).sum();
            xx.data[i] -= 2.0 * h;
            let dn: f64 = silu(&xx).data.iter().map(|v| 0.5 * v * v).sum();
            let fd = (up - dn) / (2.0 * h);
            assert!((dx.data[i] - fd).abs() / dx.data[i].abs().max(fd.abs()).max(1e-8) < 1e-4);
        }
    }

    #[test]
    fn film_backward_matches_finite_differences() {
        let mut rng = Prng::seeded(5);
        let x = rand_chw(&mut rng, 3, 4, 4);
        let mut ss = vec![0.0; 6];
        rng.fill_normal(&mut ss);
        let y = film(&x, &ss);
        let (dx, dss) = film_backward(&x, &ss, &y);
        let h = 1e-6;
        let loss = |x: &Chw, ss: &[f64]| -> f64 {
            film(x, ss).data.iter().map(|v| 0.5 * v * v).sum()
        };
        for i in 0..ss.len() {
            let mut s2 = ss.clone();
            s2[i] += h;
            let up = loss(&x, &s2);
            s2[i] -= 2.0 * h;
            let dn = loss(&x, &s2);
            let fd = (up - dn) / (2.0 * h);
            assert!((dss[i] - fd).abs() / dss[i].abs().max(fd.abs()).max(1e-8) < 1e-4);
        }
        for i in 0..x.data.len() {
            let mut xx = x.clone();
            xx.data[i] += h;
            let up = loss(&xx, &ss);
            xx.data[i] -= 2.0 * h;
            let dn = loss(&xx, &ss);
            let fd = (up - dn) / (2.0 * h);
            assert!((dx.data[i] - fd).abs() / dx.data[i].abs().max(fd.abs()).max(1e-8) < 1e-4);
        }
    }

    #[test]
    fn concat_split_round_trip() {
        let mut rng = Prng::seeded(6);
        let a = rand_chw(&mut rng, 2, 3, 3);
        let b = rand_chw(&mut rng, 1, 3, 3);
        let cat = Chw::concat(&a, &b);
        let (a2, b2) = cat.split(2);
        assert_eq!(a, a2);
        assert_eq!(b, b2);
    }
}
