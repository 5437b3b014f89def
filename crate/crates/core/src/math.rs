//! Scalar math used throughout the crate.
//!
//! Under `std` these forward to the platform libm; in `no_std` builds they
//! use the `libm` crate. All call sites go through this module so the core
//! never touches `std::` float methods directly.

macro_rules! fwd {
    ($(fn $name:ident($($arg:ident),+);)*) => {
        $(
            #[cfg(feature = "std")]
            #[inline(always)]
            pub fn $name($($arg: f64),+) -> f64 { fwd!(@std $name, $($arg),+) }
            #[cfg(not(feature = "std"))]
            #[inline(always)]
            pub fn $name($($arg: f64),+) -> f64 { libm::$name($($arg),+) }
        )*
    };
    (@std $name:ident, $a:ident) => { $a.$name() };
    (@std $name:ident, $a:ident, $b:ident) => { $a.$name($b) };
}

fwd! {
    fn exp(x);
    fn tanh(x);
    fn sqrt(x);
    fn floor(x);
    fn round(x);
}

#[cfg(feature = "std")]
#[inline(always)]
pub fn expm1(x: f64) -> f64 {
    x.exp_m1()
}
#[cfg(not(feature = "std"))]
#[inline(always)]
pub fn expm1(x: f64) -> f64 {
    libm::expm1(x)
}

#[cfg(feature = "std")]
#[inline(always)]
pub fn pow(x: f64, y: f64) -> f64 {
    x.powf(y)
}
#[cfg(not(feature = "std"))]
#[inline(always)]
pub fn pow(x: f64, y: f64) -> f64 {
    libm::pow(x, y)
}

#[cfg(feature = "std")]
#[inline(always)]
pub fn ln(x: f64) -> f64 {
    x.ln()
}
#[cfg(not(feature = "std"))]
#[inline(always)]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[cfg(feature = "std")]
#[inline(always)]
pub fn ln_1p(x: f64) -> f64 {
    x.ln_1p()
}
#[cfg(not(feature = "std"))]
#[inline(always)]
pub fn ln_1p(x: f64) -> f64 {
    libm::log1p(x)
}

/// `log(1 + e^x)`, overflow-safe on both tails.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + ln_1p(exp(-x))
    } else {
        ln_1p(exp(x))
    }
}

/// `1 / (1 + e^-x)`; the derivative of [`softplus`].
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}

/// Inverse of [`softplus`] on positive inputs: `ln(e^y - 1)`.
#[inline]
pub fn inv_softplus(y: f64) -> f64 {
    debug_assert!(y > 0.0);
    ln(expm1(y))
}

/// Standard normal probability density.
#[inline]
pub fn normal_pdf(x: f64) -> f64 {
    const INV_SQRT_TAU: f64 = 0.398_942_280_401_432_7;
    INV_SQRT_TAU * exp(-0.5 * x * x)
}
