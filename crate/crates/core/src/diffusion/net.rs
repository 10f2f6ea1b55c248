//! Conditional convolutional encoder-decoder denoiser with EDM
//! preconditioning and explicit reverse-mode gradients.
//!
//! Layout: a stem conv, residual blocks at three resolutions (2x average
//! pooling down, nearest-neighbor up), U-style skip concatenations, and a
//! zero-initialized head so the untrained denoiser is the identity under
//! the preconditioner. The noise level enters through Fourier features of
//! c_noise = ln(sigma)/4, projected per block to a channel scale+shift.

use crate::diffusion::layers::{
    avgpool2, avgpool2_backward, film, film_backward, silu, silu_backward, silu_vec,
    silu_vec_backward, upsample2, upsample2_backward, Chw, ConvSpec, LinearSpec,
};
use crate::error::{Error, Result};
use crate::rng::Prng;
use serde::{Deserialize, Serialize};

/// Architecture knobs. Grids must be divisible by 4 (two 2x downsamplings).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub cond_channels: usize,
    pub widths: [usize; 3],
    pub emb_dim: usize,
    /// Fourier feature pairs for the noise embedding.
    pub emb_features: usize,
    pub sigma_data: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            cond_channels: 1,
            widths: [32, 64, 128],
            emb_dim: 32,
            emb_features: 8,
            sigma_data: 0.5,
        }
    }
}

/// EDM preconditioning coefficients for noise level `sigma`.
pub fn edm_coeffs(sigma: f64, sigma_data: f64) -> (f64, f64, f64, f64) {
    let s2 = sigma * sigma + sigma_data * sigma_data;
    let c_in = 1.0 / s2.sqrt();
    let c_skip = sigma_data * sigma_data / s2;
    let c_out = sigma * sigma_data / s2.sqrt();
    let c_noise = sigma.ln() / 4.0;
    (c_in, c_skip, c_out, c_noise)
}

/// Loss weighting lambda(sigma) = (sigma^2 + sigma_data^2) / (sigma sigma_data)^2.
pub fn edm_weight(sigma: f64, sigma_data: f64) -> f64 {
    (sigma * sigma + sigma_data * sigma_data) / (sigma * sigma_data).powi(2)
}

#[derive(Debug, Clone)]
struct ResBlockSpec {
    conv_a: ConvSpec,
    conv_b: ConvSpec,
    film_proj: LinearSpec,
}

struct ResBlockTape {
    x: Chw,
    h1: Chw,
    h2: Chw,
    ss: Vec<f64>,
    h3: Chw,
    h4: Chw,
}

impl ResBlockSpec {
    fn forward(&self, p: &[f64], x: &Chw, emb: &[f64]) -> (Chw, ResBlockTape) {
        let h1 = silu(x);
        let h2 = self.conv_a.forward(p, &h1);
        let ss = self.film_proj.forward(p, emb);
        let h3 = film(&h2, &ss);
        let h4 = silu(&h3);
        let h5 = self.conv_b.forward(p, &h4);
        let mut y = x.clone();
        for (a, b) in y.data.iter_mut().zip(&h5.data) {
            *a += b;
        }
        let tape = ResBlockTape {
            x: x.clone(),
            h1,
            h2,
            ss,
            h3,
            h4,
        };
        (y, tape)
    }

    /// Returns (dx, d_emb); parameter grads accumulate into `g`.
    fn backward(
        &self,
        p: &[f64],
        emb: &[f64],
        t: &ResBlockTape,
        dy: &Chw,
        g: &mut [f64],
    ) -> (Chw, Vec<f64>) {
        let dh4 = self.conv_b.backward(p, &t.h4, dy, g);
        let dh3 = silu_backward(&t.h3, &dh4);
        let (dh2, dss) = film_backward(&t.h2, &t.ss, &dh3);
        let demb = self.film_proj.backward(p, emb, &dss, g);
        let dh1 = self.conv_a.backward(p, &t.h1, &dh2, g);
        let mut dx = silu_backward(&t.x, &dh1);
        for (a, b) in dx.data.iter_mut().zip(&dy.data) {
            *a += b;
        }
        (dx, demb)
    }
}

/// Denoiser weights plus the fixed layer layout that interprets them.
#[derive(Debug, Clone)]
pub struct ScoreNet {
    pub cfg: NetConfig,
    pub params: Vec<f64>,
    stem: ConvSpec,
    res_d0: ResBlockSpec,
    down1: ConvSpec,
    res_d1: ResBlockSpec,
    down2: ConvSpec,
    res_mid: ResBlockSpec,
    up1: ConvSpec,
    merge1: ConvSpec,
    res_u1: ResBlockSpec,
    up2: ConvSpec,
    merge2: ConvSpec,
    res_u0: ResBlockSpec,
    head: ConvSpec,
    emb_lin1: LinearSpec,
    emb_lin2: LinearSpec,
}

/// Cached activations of one forward pass, consumed by `backward`.
pub struct Tape {
    inp: Chw,
    e0: Vec<f64>,
    e1_pre: Vec<f64>,
    e1: Vec<f64>,
    e2_pre: Vec<f64>,
    emb: Vec<f64>,
    t_d0: ResBlockTape,
    a1: Chw,
    p1: Chw,
    t_d1: ResBlockTape,
    a3: Chw,
    p2: Chw,
    t_mid: ResBlockTape,
    u1: Chw,
    c1: Chw,
    t_u1: ResBlockTape,
    u2: Chw,
    c2: Chw,
    t_u0: ResBlockTape,
    e2b: Chw,
    c_out: f64,
    c_skip: f64,
    c_in: f64,
}

struct LayoutBuilder {
    next: usize,
}

impl LayoutBuilder {
    fn conv(&mut self, in_c: usize, out_c: usize) -> ConvSpec {
        let w_off = self.next;
        let b_off = w_off + out_c * in_c * 9;
        self.next = b_off + out_c;
        ConvSpec {
            in_c,
            out_c,
            w_off,
            b_off,
        }
    }

    fn linear(&mut self, in_d: usize, out_d: usize) -> LinearSpec {
        let w_off = self.next;
        let b_off = w_off + out_d * in_d;
        self.next = b_off + out_d;
        LinearSpec {
            in_d,
            out_d,
            w_off,
            b_off,
        }
    }

    fn res_block(&mut self, c: usize, emb_dim: usize) -> ResBlockSpec {
        ResBlockSpec {
            conv_a: self.conv(c, c),
            conv_b: self.conv(c, c),
            film_proj: self.linear(emb_dim, 2 * c),
        }
    }
}

impl ScoreNet {
    /// Build the layer layout and initialize weights; deterministic given
    /// `seed`. The head and every residual tail conv start at zero.
    pub fn new(cfg: NetConfig, seed: u64) -> Self {
        let [w0, w1, w2] = cfg.widths;
        let mut lb = LayoutBuilder { next: 0 };
        let stem = lb.conv(1 + cfg.cond_channels, w0);
        let res_d0 = lb.res_block(w0, cfg.emb_dim);
        let down1 = lb.conv(w0, w1);
        let res_d1 = lb.res_block(w1, cfg.emb_dim);
        let down2 = lb.conv(w1, w2);
        let res_mid = lb.res_block(w2, cfg.emb_dim);
        let up1 = lb.conv(w2, w1);
        let merge1 = lb.conv(2 * w1, w1);
        let res_u1 = lb.res_block(w1, cfg.emb_dim);
        let up2 = lb.conv(w1, w0);
        let merge2 = lb.conv(2 * w0, w0);
        let res_u0 = lb.res_block(w0, cfg.emb_dim);
        let head = lb.conv(w0, 1);
        let emb_lin1 = lb.linear(2 * cfg.emb_features, cfg.emb_dim);
        let emb_lin2 = lb.linear(cfg.emb_dim, cfg.emb_dim);

        let mut params = vec![0.0; lb.next];
        let mut rng = Prng::seeded(seed);
        stem.init(&mut params, &mut rng, false);
        for rb in [&res_d0, &res_d1, &res_mid, &res_u1, &res_u0] {
            rb.conv_a.init(&mut params, &mut rng, false);
            rb.conv_b.init(&mut params, &mut rng, true);
            rb.film_proj.init(&mut params, &mut rng);
        }
        down1.init(&mut params, &mut rng, false);
        down2.init(&mut params, &mut rng, false);
        up1.init(&mut params, &mut rng, false);
        merge1.init(&mut params, &mut rng, false);
        up2.init(&mut params, &mut rng, false);
        merge2.init(&mut params, &mut rng, false);
        head.init(&mut params, &mut rng, true);
        emb_lin1.init(&mut params, &mut rng);
        emb_lin2.init(&mut params, &mut rng);

        ScoreNet {
            cfg,
            params,
            stem,
            res_d0,
            down1,
            res_d1,
            down2,
            res_mid,
            up1,
            merge1,
            res_u1,
            up2,
            merge2,
            res_u0,
            head,
            emb_lin1,
            emb_lin2,
        }
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn check_shapes(&self, x: &Chw, cond: &Chw) -> Result<()> {
        if x.c != 1 {
            return Err(Error::shape("denoiser target must have one channel"));
        }
        if cond.c != self.cfg.cond_channels {
            return Err(Error::shape(format!(
                "condition has {} channels, network expects {}",
                cond.c, self.cfg.cond_channels
            )));
        }
        if x.h != cond.h || x.w != cond.w {
            return Err(Error::shape("target and condition grids differ"));
        }
        if x.h % 4 != 0 || x.w % 4 != 0 {
            return Err(Error::shape(format!(
                "grid {}x{} is not divisible by 4",
                x.h, x.w
            )));
        }
        Ok(())
    }

    fn fourier(&self, c_noise: f64) -> Vec<f64> {
        let mut e = Vec::with_capacity(2 * self.cfg.emb_features);
        for j in 0..self.cfg.emb_features {
            let f = (2.0f64).powi(j as i32);
            e.push((f * c_noise).sin());
            e.push((f * c_noise).cos());
        }
        e
    }

    /// EDM-preconditioned denoiser
    /// D(x, sigma) = c_skip x + c_out NN(c_in x, cond, c_noise).
    pub fn denoise(&self, x_noisy: &Chw, cond: &Chw, sigma: f64) -> Result<(Chw, Tape)> {
        self.check_shapes(x_noisy, cond)?;
        if !(sigma > 0.0) {
            return Err(Error::config("sigma must be positive"));
        }
        let p = &self.params[..];
        let (c_in, c_skip, c_out, c_noise) = edm_coeffs(sigma, self.cfg.sigma_data);

        let mut x_pre = x_noisy.clone();
        for v in x_pre.data.iter_mut() {
            *v *= c_in;
        }
        let inp = Chw::concat(&x_pre, cond);

        let e0 = self.fourier(c_noise);
        let e1_pre = self.emb_lin1.forward(p, &e0);
        let e1 = silu_vec(&e1_pre);
        let e2_pre = self.emb_lin2.forward(p, &e1);
        let emb = silu_vec(&e2_pre);

        let a0 = self.stem.forward(p, &inp);
        let (a1, t_d0) = self.res_d0.forward(p, &a0, &emb);
        let p1 = avgpool2(&a1);
        let a2 = self.down1.forward(p, &p1);
        let (a3, t_d1) = self.res_d1.forward(p, &a2, &emb);
        let p2 = avgpool2(&a3);
        let a4 = self.down2.forward(p, &p2);
        let (a5, t_mid) = self.res_mid.forward(p, &a4, &emb);
        let u1 = upsample2(&a5);
        let b1 = self.up1.forward(p, &u1);
        let c1 = Chw::concat(&b1, &a3);
        let d1 = self.merge1.forward(p, &c1);
        let (e1b, t_u1) = self.res_u1.forward(p, &d1, &emb);
        let u2 = upsample2(&e1b);
        let b2 = self.up2.forward(p, &u2);
        let c2 = Chw::concat(&b2, &a1);
        let d2 = self.merge2.forward(p, &c2);
        let (e2b, t_u0) = self.res_u0.forward(p, &d2, &emb);
        let raw_out = self.head.forward(p, &e2b);

        let mut d = x_noisy.clone();
        for (dv, (rv, _)) in d
            .data
            .iter_mut()
            .zip(raw_out.data.iter().zip(x_noisy.data.iter()))
        {
            *dv = c_skip * *dv + c_out * rv;
        }
        let tape = Tape {
            inp,
            e0,
            e1_pre,
            e1,
            e2_pre,
            emb,
            t_d0,
            a1,
            p1,
            t_d1,
            a3,
            p2,
            t_mid,
            u1,
            c1,
            t_u1,
            u2,
            c2,
            t_u0,
            e2b,
            c_out,
            c_skip,
            c_in,
        };
        Ok((d, tape))
    }

    /// Backpropagate d(loss)/d(D) through the whole denoiser, accumulating
    /// parameter gradients into `g` (same layout as `params`). Returns
    /// d(loss)/d(x_noisy).
    pub fn backward(&self, tape: &Tape, d_out: &Chw, g: &mut [f64]) -> Chw {
        let p = &self.params[..];
        // d = c_skip * x + c_out * raw_out
        let mut d_raw = d_out.clone();
        for v in d_raw.data.iter_mut() {
            *v *= tape.c_out;
        }

        let d_e2b = self.head.backward(p, &tape.e2b, &d_raw, g);
        let (d_d2, demb_u0) = self
            .res_u0
            .backward(p, &tape.emb, &tape.t_u0, &d_e2b, g);
        let d_c2 = self.merge2.backward(p, &tape.c2, &d_d2, g);
        let (d_b2, mut d_a1) = d_c2.split(self.cfg.widths[0]);
        let d_u2 = self.up2.backward(p, &tape.u2, &d_b2, g);
        let d_e1b = upsample2_backward(&d_u2);
        let (d_d1, demb_u1) = self
            .res_u1
            .backward(p, &tape.emb, &tape.t_u1, &d_e1b, g);
        let d_c1 = self.merge1.backward(p, &tape.c1, &d_d1, g);
        let (d_b1, mut d_a3) = d_c1.split(self.cfg.widths[1]);
        let d_u1 = self.up1.backward(p, &tape.u1, &d_b1, g);
        let d_a5 = upsample2_backward(&d_u1);
        let (d_a4, demb_mid) = self
            .res_mid
            .backward(p, &tape.emb, &tape.t_mid, &d_a5, g);
        let d_p2 = self.down2.backward(p, &tape.p2, &d_a4, g);
        let d_a3_pool = avgpool2_backward(&d_p2, tape.a3.h, tape.a3.w);
        for (a, b) in d_a3.data.iter_mut().zip(&d_a3_pool.data) {
            *a += b;
        }
        let (d_a2, demb_d1) = self
            .res_d1
            .backward(p, &tape.emb, &tape.t_d1, &d_a3, g);
        let d_p1 = self.down1.backward(p, &tape.p1, &d_a2, g);
        let d_a1_pool = avgpool2_backward(&d_p1, tape.a1.h, tape.a1.w);
        for (a, b) in d_a1.data.iter_mut().zip(&d_a1_pool.data) {
            *a += b;
        }
        let (d_a0, demb_d0) = self
            .res_d0
            .backward(p, &tape.emb, &tape.t_d0, &d_a1, g);
        let d_inp = self.stem.backward(p, &tape.inp, &d_a0, g);

        // Embedding path: sum contributions from every block.
        let mut demb = demb_u0;
        for other in [demb_u1, demb_mid, demb_d1, demb_d0] {
            for (a, b) in demb.iter_mut().zip(&other) {
                *a += b;
            }
        }
        let d_e2_pre = silu_vec_backward(&tape.e2_pre, &demb);
        let d_e1 = self.emb_lin2.backward(p, &tape.e1, &d_e2_pre, g);
        let d_e1_pre = silu_vec_backward(&tape.e1_pre, &d_e1);
        let _d_e0 = self.emb_lin1.backward(p, &tape.e0, &d_e1_pre, g);

        // Input gradient: through the concat's first channel and the skip.
        let (d_x_pre, _d_cond) = d_inp.split(1);
        let mut dx = Chw::zeros(1, d_x_pre.h, d_x_pre.w);
        for i in 0..dx.data.len() {
            dx.data[i] = tape.c_in * d_x_pre.data[i] + tape.c_skip * d_out.data[i];
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_config() -> NetConfig {
        NetConfig {
            cond_channels: 1,
            widths: [2, 2, 3],
            emb_dim: 3,
            emb_features: 2,
            sigma_data: 0.5,
        }
    }

    #[test]
    fn tiny_network_stays_under_one_thousand_parameters() {
        let net = ScoreNet::new(tiny_config(), 0);
        assert!(
            net.param_count() <= 1000,
            "tiny net has {} parameters",
            net.param_count()
        );
    }

    #[test]
    fn zero_weight_network_is_the_skip_connection() {
        let mut net = ScoreNet::new(tiny_config(), 0);
        net.params.iter_mut().for_each(|p| *p = 0.0);
        let mut rng = Prng::seeded(1);
        let mut x = Chw::zeros(1, 8, 8);
        rng.fill_normal(&mut x.data);
        let cond = Chw::zeros(1, 8, 8);
        let sigma = 0.7;
        let (d, _) = net.denoise(&x, &cond, sigma).unwrap();
        let (_, c_skip, _, _) = edm_coeffs(sigma, 0.5);
        for (a, b) in d.data.iter().zip(&x.data) {
            assert!((a - c_skip * b).abs() < 1e-12);
        }
    }

    #[test]
    fn preconditioning_identity_at_vanishing_sigma() {
        // c_skip -> 1 and c_out -> 0 as sigma -> 0+.
        let (c_in, c_skip, c_out, _) = edm_coeffs(1e-8, 0.5);
        assert!((c_skip - 1.0).abs() < 1e-12);
        assert!(c_out < 1e-7);
        assert!((c_in - 2.0).abs() < 1e-6); // 1/sigma_data
    }

    #[test]
    fn freshly_initialized_network_is_identity_under_preconditioning() {
        // Zero-init head makes NN(...) = 0 at init.
        let net = ScoreNet::new(tiny_config(), 3);
        let mut rng = Prng::seeded(2);
        let mut x = Chw::zeros(1, 8, 8);
        rng.fill_normal(&mut x.data);
        let mut cond = Chw::zeros(1, 8, 8);
        rng.fill_normal(&mut cond.data);
        let sigma = 2.0;
        let (d, _) = net.denoise(&x, &cond, sigma).unwrap();
        let (_, c_skip, _, _) = edm_coeffs(sigma, 0.5);
        for (a, b) in d.data.iter().zip(&x.data) {
            assert!((a - c_skip * b).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_mismatches_are_rejected() {
        let net = ScoreNet::new(tiny_config(), 0);
        let x = Chw::zeros(1, 8, 8);
        assert!(net.denoise(&x, &Chw::zeros(2, 8, 8), 1.0).is_err());
        assert!(net.denoise(&x, &Chw::zeros(1, 4, 8), 1.0).is_err());
        assert!(net
            .denoise(&Chw::zeros(1, 6, 6), &Chw::zeros(1, 6, 6), 1.0)
            .is_err());
    }
}
