//! Band-limited measurement noise shaped to the source spectrum.

use crate::error::{Error, Result};
use crate::rng::Prng;
use crate::wavesim::{NoiseRealization, ShotRecord, ShotSet, Wavelet};

/// Add white Gaussian noise filtered to the wavelet's amplitude spectrum,
/// scaled so that 20 log10(|signal| / |eps|) equals `snr_db`. The
/// realization and its norm are retained on the returned set. An infinite
/// `snr_db` is the no-noise sentinel.
pub fn add_band_limited_noise(
    shots: &ShotSet,
    snr_db: f64,
    w: &Wavelet,
    seed: u64,
) -> Result<ShotSet> {
    if !shots.is_finite() {
        return Err(Error::config("shot set contains non-finite samples"));
    }
    if snr_db == f64::INFINITY {
        return Ok(shots.clone());
    }
    let signal_norm = shots.norm();
    if signal_norm == 0.0 {
        return Err(Error::config("SNR undefined for all-zero shot records"));
    }
    let nt = shots.geometry.nt;
    let nfft = nt.next_power_of_two();

    // Amplitude spectrum of the wavelet on the padded grid; zero phase so
    // the filtering adds no time shift.
    let mut wre = vec![0.0; nfft];
    let mut wim = vec![0.0; nfft];
    wre[..w.samples.len().min(nfft)]
        .copy_from_slice(&w.samples[..w.samples.len().min(nfft)]);
    fft_inplace(&mut wre, &mut wim, false);
    let amp: Vec<f64> = wre
        .iter()
        .zip(&wim)
        .map(|(re, im)| (re * re + im * im).sqrt())
        .collect();

    let mut rng = Prng::seeded(seed);
    let mut eps: Vec<ShotRecord> = Vec::with_capacity(shots.records.len());
    for rec in &shots.records {
        let mut e = ShotRecord::zeros(rec.n_receivers, nt);
        for r in 0..rec.n_receivers {
            let mut re = vec![0.0; nfft];
            let mut im = vec![0.0; nfft];
            for v in re.iter_mut().take(nt) {
                *v = rng.normal();
            }
            fft_inplace(&mut re, &mut im, false);
            for k in 0..nfft {
                re[k] *= amp[k];
                im[k] *= amp[k];
            }
            fft_inplace(&mut re, &mut im, true);
            e.trace_mut(r).copy_from_slice(&re[..nt]);
        }
        eps.push(e);
    }

    let raw_norm = eps
        .iter()
        .flat_map(|r| r.samples())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if raw_norm == 0.0 {
        return Err(Error::config("noise realization collapsed to zero"));
    }
    let scale = signal_norm / (raw_norm * 10f64.powf(snr_db / 20.0));
    let mut norm_sq = 0.0;
    for e in &mut eps {
        for v in e.samples_mut() {
            *v *= scale;
            norm_sq += *v * *v;
        }
    }
    let records = shots
        .records
        .iter()
        .zip(&eps)
        .map(|(rec, e)| {
            ShotRecord::new(
                rec.n_receivers,
                nt,
                rec.samples()
                    .iter()
                    .zip(e.samples())
                    .map(|(a, b)| a + b)
                    .collect(),
            )
        })
        .collect();
    Ok(ShotSet {
        records,
        geometry: shots.geometry.clone(),
        noise: Some(NoiseRealization {
            eps,
            norm: norm_sq.sqrt(),
        }),
    })
}

/// Iterative radix-2 FFT; `inverse` applies the 1/n scaling.
pub(crate) fn fft_inplace(re: &mut [f64], im: &mut [f64], inverse: bool) {
    let n = re.len();
    assert!(n.is_power_of_two() && n == im.len());
    // Bit-reversal permutation.
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let ang = sign * 2.0 * std::f64::consts::PI / len as f64;
        let (wr, wi) = (ang.cos(), ang.sin());
        for start in (0..n).step_by(len) {
            let mut cr = 1.0;
            let mut ci = 0.0;
            for k in 0..len / 2 {
                let a = start + k;
                let b = a + len / 2;
                let tr = re[b] * cr - im[b] * ci;
                let ti = re[b] * ci + im[b] * cr;
                re[b] = re[a] - tr;
                im[b] = im[a] - ti;
                re[a] += tr;
                im[a] += ti;
                let ncr = cr * wr - ci * wi;
                ci = cr * wi + ci * wr;
                cr = ncr;
            }
        }
        len <<= 1;
    }
    if inverse {
        let inv = 1.0 / n as f64;
        for v in re.iter_mut() {
            *v *= inv;
        }
        for v in im.iter_mut() {
            *v *= inv;
        }
    }
}
