//! One-sided real DFT, its inverse, amplitude spectra and top-K frequency
//! filtering.
//!
//! Conventions: the forward transform is unnormalized,
//! `c_j = Σ_t x_t·exp(−2πi·jt/T)` for `j = 0..=T/2`, and the inverse carries
//! the `1/T` factor. Power-of-two lengths use an iterative radix-2 FFT; other
//! lengths go through Bluestein's chirp-z transform on top of it.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// The `⌊T/2⌋+1` non-redundant coefficients of a real sequence of length `T`.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    coefficients: Vec<Complex64>,
    original_length: usize,
}

impl Spectrum {
    pub fn new(coefficients: Vec<Complex64>, original_length: usize) -> Result<Self> {
        if original_length == 0 || coefficients.len() != original_length / 2 + 1 {
            return Err(Error::contract(format!(
                "spectrum of a length-{original_length} series needs {} coefficients, got {}",
                original_length / 2 + 1,
                coefficients.len()
            )));
        }
        Ok(Self {
            coefficients,
            original_length,
        })
    }

    pub fn coefficients(&self) -> &[Complex64] {
        &self.coefficients
    }

    pub fn coefficients_mut(&mut self) -> &mut [Complex64] {
        &mut self.coefficients
    }

    pub fn original_length(&self) -> usize {
        self.original_length
    }
}

/// Number of one-sided bins for a length-`t` real series; also the largest
/// valid `k` for [`frequency_filter`].
pub fn bin_count(t: usize) -> usize {
    t / 2 + 1
}

pub fn rdft(x: &[f64]) -> Result<Spectrum> {
    let t = x.len();
    if t == 0 {
        return Err(Error::contract("rdft of an empty series"));
    }
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_any(&mut buf, false);
    buf.truncate(bin_count(t));
    buf[0].im = 0.0;
    if t.is_multiple_of(2) {
        buf[t / 2].im = 0.0;
    }
    Spectrum::new(buf, t)
}

pub fn irdft(s: &Spectrum) -> Result<Vec<f64>> {
    let t = s.original_length;
    if s.coefficients.len() != bin_count(t) {
        return Err(Error::contract(format!(
            "inconsistent spectrum: {} coefficients for length {t}",
            s.coefficients.len()
        )));
    }
    let mut full = vec![Complex64::new(0.0, 0.0); t];
    for (j, c) in s.coefficients.iter().enumerate() {
        full[j] = *c;
    }
    // DC and Nyquist bins of a real series are real
    full[0].im = 0.0;
    if t.is_multiple_of(2) {
        full[t / 2].im = 0.0;
    }
    for j in 1..t.div_ceil(2) {
        full[t - j] = s.coefficients[j].conj();
    }
    fft_any(&mut full, true);
    let scale = 1.0 / t as f64;
    Ok(full.iter().map(|c| c.re * scale).collect())
}

pub fn amplitude(s: &Spectrum) -> Vec<f64> {
    s.coefficients.iter().map(|c| c.norm()).collect()
}

/// Indices of the `k` largest amplitudes in ascending index order. Equal
/// amplitudes favour the lower index.
pub fn top_k_indices(amps: &[f64], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > amps.len() {
        return Err(Error::contract(format!(
            "top-k needs 1 <= k <= {}, got k = {k}",
            amps.len()
        )));
    }
    let mut order: Vec<usize> = (0..amps.len()).collect();
    order.sort_by(|&a, &b| amps[b].total_cmp(&amps[a]).then(a.cmp(&b)));
    order.truncate(k);
    order.sort_unstable();
    Ok(order)
}

/// Options for [`frequency_filter_with`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FilterOptions {
    /// Retain the DC bin even when it is not among the top `k`.
    pub always_keep_dc: bool,
}

/// Reconstructs `x` from only its `k` highest-amplitude one-sided bins.
pub fn frequency_filter(x: &[f64], k: usize) -> Result<Vec<f64>> {
    frequency_filter_with(x, k, FilterOptions::default())
}

pub fn frequency_filter_with(x: &[f64], k: usize, opts: FilterOptions) -> Result<Vec<f64>> {
    let mut spec = rdft(x)?;
    let keep = top_k_indices(&amplitude(&spec), k)?;
    let mut mask = vec![false; spec.coefficients.len()];
    for j in keep {
        mask[j] = true;
    }
    if opts.always_keep_dc {
        mask[0] = true;
    }
    for (c, keep) in spec.coefficients.iter_mut().zip(mask) {
        if !keep {
            *c = Complex64::new(0.0, 0.0);
        }
    }
    irdft(&spec)
}

/// In-place DFT of any length; `inverse` flips the exponent sign without
/// scaling.
fn fft_any(buf: &mut [Complex64], inverse: bool) {
    let n = buf.len();
    if n <= 1 {
        return;
    }
    if n.is_power_of_two() {
        fft_radix2(buf, inverse);
    } else {
        bluestein(buf, inverse);
    }
}

fn fft_radix2(buf: &mut [Complex64], inverse: bool) {
    let n = buf.len();
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let twiddles: Vec<Complex64> = (0..half)
            .map(|j| Complex64::from_polar(1.0, sign * 2.0 * PI * j as f64 / len as f64))
            .collect();
        for start in (0..n).step_by(len) {
            for j in 0..half {
                let u = buf[start + j];
                let v = buf[start + j + half] * twiddles[j];
                buf[start + j] = u + v;
                buf[start + j + half] = u - v;
            }
        }
        len <<= 1;
    }
}

fn bluestein(buf: &mut [Complex64], inverse: bool) {
    let n = buf.len();
    let m = (2 * n - 1).next_power_of_two();
    let sign = if inverse { 1.0 } else { -1.0 };
    // chirp w_j = exp(sign·iπ j²/n); j² is reduced mod 2n to keep the angle small
    let chirp: Vec<Complex64> = (0..n)
        .map(|j| {
            let jj = (j as u128 * j as u128 % (2 * n as u128)) as f64;
            Complex64::from_polar(1.0, sign * PI * jj / n as f64)
        })
        .collect();
    let mut a = vec![Complex64::new(0.0, 0.0); m];
    for j in 0..n {
        a[j] = buf[j] * chirp[j];
    }
    let mut b = vec![Complex64::new(0.0, 0.0); m];
    b[0] = chirp[0].conj();
    for j in 1..n {
        b[j] = chirp[j].conj();
        b[m - j] = chirp[j].conj();
    }
    fft_radix2(&mut a, false);
    fft_radix2(&mut b, false);
    for (x, y) in a.iter_mut().zip(&b) {
        *x *= y;
    }
    fft_radix2(&mut a, true);
    let scale = 1.0 / m as f64;
    for j in 0..n {
        buf[j] = a[j] * scale * chirp[j];
    }
}
