//! SPH smoothing kernels.
//!
//! Poly6 is used for density values, Spiky for gradients.
//! Both have compact support: the value and the derivative vanish for `r >= h`.

use std::f64::consts::PI;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelKind {
    Poly6,
    Spiky,
}

/// A kernel of a given kind and support radius.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelFamily {
    pub h: f64,
    pub kind: KernelKind,
}

impl KernelFamily {
    pub fn new(h: f64, kind: KernelKind) -> Result<Self> {
        check_h(h)?;
        Ok(Self { h, kind })
    }

    pub fn value(&self, r: f64) -> f64 {
        let k = SphKernels::new_unchecked(self.h);
        match self.kind {
            KernelKind::Poly6 => k.poly6(r),
            KernelKind::Spiky => k.spiky(r),
        }
    }

    /// dW/dr.
    pub fn derivative(&self, r: f64) -> f64 {
        let k = SphKernels::new_unchecked(self.h);
        match self.kind {
            KernelKind::Poly6 => k.poly6_derivative(r),
            KernelKind::Spiky => k.spiky_derivative(r),
        }
    }
}

fn check_h(h: f64) -> Result<()> {
    if h > 0.0 && h.is_finite() {
        Ok(())
    } else {
        Err(Error::param(
            "h",
            format!("support radius must be positive, got {h}"),
        ))
    }
}

/// Poly6 kernel `315/(64 pi h^9) (h^2 - r^2)^3`.
pub fn poly6(r: f64, h: f64) -> Result<f64> {
    check_h(h)?;
    Ok(SphKernels::new_unchecked(h).poly6(r))
}

/// Derivative of the Spiky kernel, `-45/(pi h^6) (h - r)^2` on `(0, h)`.
pub fn spiky_grad_magnitude(r: f64, h: f64) -> Result<f64> {
    check_h(h)?;
    Ok(SphKernels::new_unchecked(h).spiky_derivative(r))
}

/// Precomputed normalization constants for a fixed `h`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SphKernels {
    h: f64,
    h2: f64,
    poly6_norm: f64,
    spiky_norm: f64,
}

impl SphKernels {
    pub fn new(h: f64) -> Result<Self> {
        check_h(h)?;
        Ok(Self::new_unchecked(h))
    }

    pub(crate) fn new_unchecked(h: f64) -> Self {
        // Explicit products: `powi` may be constant-folded differently at
        // different call sites, which breaks bitwise reproducibility.
        let h3 = h * h * h;
        Self {
            h,
            h2: h * h,
            poly6_norm: 315.0 / (64.0 * PI * (h3 * h3 * h3)),
            spiky_norm: 15.0 / (PI * (h3 * h3)),
        }
    }

    #[inline]
    pub fn h(&self) -> f64 {
        self.h
    }

    #[inline]
    pub fn poly6(&self, r: f64) -> f64 {
        self.poly6_r2(r * r)
    }

    /// Poly6 evaluated from a squared distance.
    #[inline]
    pub fn poly6_r2(&self, r2: f64) -> f64 {
        if r2 >= self.h2 {
            0.0
        } else {
            let d = self.h2 - r2;
            self.poly6_norm * d * d * d
        }
    }

    #[inline]
    pub fn poly6_derivative(&self, r: f64) -> f64 {
        if r >= self.h {
            0.0
        } else {
            let d = self.h2 - r * r;
            -6.0 * self.poly6_norm * r * d * d
        }
    }

    #[inline]
    pub fn spiky(&self, r: f64) -> f64 {
        if r >= self.h {
            0.0
        } else {
            let d = self.h - r;
            self.spiky_norm * d * d * d
        }
    }

    /// Zero at `r = 0` where the gradient direction is undefined.
    #[inline]
    pub fn spiky_derivative(&self, r: f64) -> f64 {
        if r <= 0.0 || r >= self.h {
            0.0
        } else {
            let d = self.h - r;
            -3.0 * self.spiky_norm * d * d
        }
    }
}
