//! Complex FFT (iterative radix-2, Bluestein for other lengths) and the
//! real-input transforms built on it.
//!
//! Convention: the forward transform is unnormalized, the inverse real
//! transform applies `1/N`. Spectra of real signals keep the
//! `N/2 + 1` non-negative modes; the imaginary parts of the DC and
//! (even `N`) Nyquist modes are ignored by the inverse.

use num_complex::Complex;

use super::{ComplexTensor, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Number of non-negative modes kept for a real signal of length `n`.
pub fn mode_count(n: usize) -> usize {
    n / 2 + 1
}

struct Radix2<T> {
    n: usize,
    twiddles: Vec<Complex<T>>,
    bitrev: Vec<usize>,
}

impl<T: Scalar> Radix2<T> {
    fn new(n: usize) -> Self {
        debug_assert!(n.is_power_of_two());
        let bits = n.trailing_zeros();
        let bitrev = (0..n)
            .map(|i| if n == 1 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) })
            .collect();
        let twiddles = (0..n / 2)
            .map(|k| {
                let angle = -2.0 * std::f64::consts::PI * k as f64 / n as f64;
                Complex::new(T::lit(angle.cos()), T::lit(angle.sin()))
            })
            .collect();
        Self { n, twiddles, bitrev }
    }

    fn process(&self, buf: &mut [Complex<T>], inverse: bool) {
        let n = self.n;
        for i in 0..n {
            let j = self.bitrev[i];
            if i < j {
                buf.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= n {
            let half = len / 2;
            let stride = n / len;
            for start in (0..n).step_by(len) {
                for k in 0..half {
                    let mut w = self.twiddles[k * stride];
                    if inverse {
                        w = w.conj();
                    }
                    let a = buf[start + k];
                    let b = buf[start + k + half] * w;
                    buf[start + k] = a + b;
                    buf[start + k + half] = a - b;
                }
            }
            len <<= 1;
        }
    }
}

struct Bluestein<T> {
    n: usize,
    chirp: Vec<Complex<T>>,
    kernel_spectrum: Vec<Complex<T>>,
    inner: Radix2<T>,
}

impl<T: Scalar> Bluestein<T> {
    fn new(n: usize) -> Self {
        let m = (2 * n - 1).next_power_of_two();
        let inner = Radix2::new(m);
        // exp(-iπ k²/n), with k² reduced mod 2n to keep the angle small
        let chirp: Vec<Complex<T>> = (0..n)
            .map(|k| {
                let k2 = (k * k) % (2 * n);
                let angle = -std::f64::consts::PI * k2 as f64 / n as f64;
                Complex::new(T::lit(angle.cos()), T::lit(angle.sin()))
            })
            .collect();
        let mut kernel = vec![Complex::new(T::zero(), T::zero()); m];
        kernel[0] = chirp[0].conj();
        for k in 1..n {
            kernel[k] = chirp[k].conj();
            kernel[m - k] = chirp[k].conj();
        }
        inner.process(&mut kernel, false);
        Self {
            n,
            chirp,
            kernel_spectrum: kernel,
            inner,
        }
    }

    fn forward(&self, buf: &mut [Complex<T>]) {
        let m = self.inner.n;
        let mut work = vec![Complex::new(T::zero(), T::zero()); m];
        for k in 0..self.n {
            work[k] = buf[k] * self.chirp[k];
        }
        self.inner.process(&mut work, false);
        for (w, k) in work.iter_mut().zip(&self.kernel_spectrum) {
            *w = *w * *k;
        }
        self.inner.process(&mut work, true);
        let scale = T::one() / T::from_usize_lossy(m);
        for k in 0..self.n {
            buf[k] = work[k] * self.chirp[k] * scale;
        }
    }
}

enum Algorithm<T> {
    Radix2(Radix2<T>),
    Bluestein(Bluestein<T>),
}

/// Reusable complex FFT of a fixed length. Both directions unnormalized.
pub struct FftPlan<T> {
    n: usize,
    algorithm: Algorithm<T>,
}

impl<T: Scalar> FftPlan<T> {
    pub fn new(n: usize) -> Self {
        assert!(n > 0, "FFT length must be positive");
        let algorithm = if n.is_power_of_two() {
            Algorithm::Radix2(Radix2::new(n))
        } else {
            Algorithm::Bluestein(Bluestein::new(n))
        };
        Self { n, algorithm }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// In-place transform; `inverse` flips the exponent sign without scaling.
    pub fn process(&self, buf: &mut [Complex<T>], inverse: bool) {
        assert_eq!(buf.len(), self.n);
        match &self.algorithm {
            Algorithm::Radix2(p) => p.process(buf, inverse),
            Algorithm::Bluestein(p) => {
                if inverse {
                    buf.iter_mut().for_each(|z| *z = z.conj());
                    p.forward(buf);
                    buf.iter_mut().for_each(|z| *z = z.conj());
                } else {
                    p.forward(buf);
                }
            }
        }
    }
}

/// Row-wise real transforms of length `n`. Spectra are interleaved
/// `(re, im)` pairs, `mode_count(n)` of them per row.
pub struct RealFft<T> {
    n: usize,
    plan: FftPlan<T>,
    buf: Vec<Complex<T>>,
}

impl<T: Scalar> RealFft<T> {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            plan: FftPlan::new(n),
            buf: vec![Complex::new(T::zero(), T::zero()); n],
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn modes(&self) -> usize {
        mode_count(self.n)
    }

    /// `spectrum[2k], spectrum[2k+1] = Re, Im of Σ x_j e^{-2πijk/n}`.
    pub fn forward(&mut self, signal: &[T], spectrum: &mut [T]) {
        for (b, &x) in self.buf.iter_mut().zip(signal) {
            *b = Complex::new(x, T::zero());
        }
        self.plan.process(&mut self.buf, false);
        for k in 0..self.modes() {
            spectrum[2 * k] = self.buf[k].re;
            spectrum[2 * k + 1] = self.buf[k].im;
        }
    }

    /// Inverse of [`forward`](Self::forward), including the `1/n` factor.
    pub fn inverse(&mut self, spectrum: &[T], signal: &mut [T]) {
        let n = self.n;
        let modes = self.modes();
        let zero = Complex::new(T::zero(), T::zero());
        self.buf.iter_mut().for_each(|b| *b = zero);
        self.buf[0] = Complex::new(spectrum[0], T::zero());
        for k in 1..modes {
            let z = Complex::new(spectrum[2 * k], spectrum[2 * k + 1]);
            if 2 * k == n {
                self.buf[k] = Complex::new(z.re, T::zero());
            } else {
                self.buf[k] = z;
                self.buf[n - k] = z.conj();
            }
        }
        self.plan.process(&mut self.buf, true);
        let scale = T::one() / T::from_usize_lossy(n);
        for (s, b) in signal.iter_mut().zip(&self.buf) {
            *s = b.re * scale;
        }
    }

    /// Adjoint of `forward`: maps a spectrum cotangent to a signal cotangent.
    pub fn forward_adjoint(&mut self, grad_spectrum: &[T], grad_signal: &mut [T]) {
        let zero = Complex::new(T::zero(), T::zero());
        self.buf.iter_mut().for_each(|b| *b = zero);
        for k in 0..self.modes() {
            self.buf[k] = Complex::new(grad_spectrum[2 * k], grad_spectrum[2 * k + 1]);
        }
        self.plan.process(&mut self.buf, true);
        for (g, b) in grad_signal.iter_mut().zip(&self.buf) {
            *g = b.re;
        }
    }

    /// Adjoint of `inverse`: maps a signal cotangent to a spectrum cotangent.
    pub fn inverse_adjoint(&mut self, grad_signal: &[T], grad_spectrum: &mut [T]) {
        let n = self.n;
        self.forward(grad_signal, grad_spectrum);
        let inv_n = T::one() / T::from_usize_lossy(n);
        let two = T::lit(2.0);
        for k in 0..self.modes() {
            let edge = k == 0 || 2 * k == n;
            let c = if edge { inv_n } else { two * inv_n };
            grad_spectrum[2 * k] = grad_spectrum[2 * k] * c;
            grad_spectrum[2 * k + 1] = if edge {
                T::zero()
            } else {
                grad_spectrum[2 * k + 1] * c
            };
        }
    }
}

/// Real FFT along the last axis.
pub fn rfft<T: Scalar>(x: &Tensor<T>) -> Result<ComplexTensor<T>> {
    let n = *x.shape().last().expect("tensor has rank >= 1");
    if n < 2 {
        return Err(Error::shape("rfft", format!("signal length {n} < 2")));
    }
    let rows = x.len() / n;
    let mut fft = RealFft::new(n);
    let modes = fft.modes();
    let mut spec = vec![T::zero(); 2 * modes];
    let mut re = Vec::with_capacity(rows * modes);
    let mut im = Vec::with_capacity(rows * modes);
    for row in x.data().chunks(n) {
        fft.forward(row, &mut spec);
        for k in 0..modes {
            re.push(spec[2 * k]);
            im.push(spec[2 * k + 1]);
        }
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = modes;
    ComplexTensor::new(shape, re, im)
}

/// Inverse real FFT along the last axis, producing signals of length `n`.
pub fn irfft<T: Scalar>(x: &ComplexTensor<T>, n: usize) -> Result<Tensor<T>> {
    let modes = *x.shape().last().expect("tensor has rank >= 1");
    if n < 2 || mode_count(n) != modes {
        return Err(Error::shape(
            "irfft",
            format!("{modes} modes inconsistent with length {n}"),
        ));
    }
    let mut fft = RealFft::new(n);
    let mut spec = vec![T::zero(); 2 * modes];
    let mut out = vec![T::zero(); x.len() / modes * n];
    for (row, signal) in out.chunks_mut(n).enumerate() {
        for k in 0..modes {
            spec[2 * k] = x.re()[row * modes + k];
            spec[2 * k + 1] = x.im()[row * modes + k];
        }
        fft.inverse(&spec, signal);
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = n;
    Tensor::new(shape, out)
}
