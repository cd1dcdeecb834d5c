//! Exact rational scalars shared by every module.
//!
//! All physical quantities are carried as [`Q`] in base units: bits,
//! seconds and bits per second. Conversion to display units happens only
//! at the edges (reports, CSV export).

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

/// Exact rational number.
pub type Q = BigRational;

pub fn q(n: i64) -> Q {
    Q::from_integer(BigInt::from(n))
}

pub fn ratio(n: i64, d: i64) -> Q {
    Q::new(BigInt::from(n), BigInt::from(d))
}

pub fn zero() -> Q {
    Q::zero()
}

pub fn one() -> Q {
    Q::one()
}

/// Parse a decimal literal such as `14.4e6`, `-0.075` or `1250` exactly.
pub fn parse_decimal(text: &str) -> Option<Q> {
    let text = text.trim();
    if text.is_empty() {
        return None;
    }
    let (mantissa, exponent) = match text.find(['e', 'E']) {
        Some(idx) => (&text[..idx], text[idx + 1..].parse::<i32>().ok()?),
        None => (text, 0),
    };
    let (negative, mantissa) = match mantissa.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, mantissa.strip_prefix('+').unwrap_or(mantissa)),
    };
    let (int_part, frac_part) = match mantissa.split_once('.') {
        Some((i, f)) => (i, f),
        None => (mantissa, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.chars().chain(frac_part.chars()).all(|c| c.is_ascii_digit()) {
        return None;
    }
    let digits = format!("{int_part}{frac_part}");
    let numer: BigInt = if digits.is_empty() { BigInt::zero() } else { digits.parse().ok()? };
    let scale = exponent - frac_part.len() as i32;
    let ten = BigInt::from(10u32);
    let mut value = Q::from_integer(numer);
    if scale >= 0 {
        value *= Q::from_integer(num_traits::pow(ten, scale as usize));
    } else {
        value /= Q::from_integer(num_traits::pow(ten, (-scale) as usize));
    }
    Some(if negative { -value } else { value })
}

pub fn to_f64(value: &Q) -> f64 {
    value.to_f64().unwrap_or_else(|| {
        let n = value.numer().to_f64().unwrap_or(f64::NAN);
        let d = value.denom().to_f64().unwrap_or(f64::NAN);
        n / d
    })
}

/// Smallest multiple of `1/denominator` that is `>= value`.
pub fn ceil_to_grid(value: &Q, denominator: u64) -> Q {
    let den = BigInt::from(denominator);
    let scaled = value * Q::from_integer(den.clone());
    let numer = scaled.numer();
    let d = scaled.denom();
    let (quot, rem) = numer.div_mod_floor(d);
    let ceil = if rem.is_zero() { quot } else { quot + 1 };
    Q::new(ceil, den)
}

/// Nearest integer, ties away from zero.
pub fn round_to_int(value: &Q) -> BigInt {
    value.round().to_integer()
}

pub fn seconds_to_us(value: &Q) -> Q {
    value * q(1_000_000)
}

pub fn us_to_seconds(value: &Q) -> Q {
    value / q(1_000_000)
}

/// Fixed-point decimal rendering used in reports; stable across runs.
pub fn format_fixed(value: &Q, decimals: usize) -> String {
    let scale = Q::from_integer(num_traits::pow(BigInt::from(10u32), decimals));
    let scaled = (value.abs() * scale).round().to_integer();
    let digits = scaled.to_string();
    let sign = if value.is_negative() && !scaled.is_zero() { "-" } else { "" };
    if decimals == 0 {
        return format!("{sign}{digits}");
    }
    let padded = format!("{digits:0>width$}", width = decimals + 1);
    let (int_part, frac_part) = padded.split_at(padded.len() - decimals);
    format!("{sign}{int_part}.{frac_part}")
}

/// Exact decimal rendering when the denominator has only factors 2 and 5.
pub fn exact_decimal(value: &Q) -> Option<String> {
    let mut den = value.denom().clone();
    let two = BigInt::from(2u32);
    let five = BigInt::from(5u32);
    let (mut twos, mut fives) = (0usize, 0usize);
    while den.is_even() {
        den /= &two;
        twos += 1;
    }
    while (&den % &five).is_zero() {
        den /= &five;
        fives += 1;
    }
    if !den.is_one() {
        return None;
    }
    Some(format_fixed(value, twos.max(fives)))
}

pub fn min_q<'a>(a: &'a Q, b: &'a Q) -> &'a Q {
    if a <= b {
        a
    } else {
        b
    }
}

pub fn max_q<'a>(a: &'a Q, b: &'a Q) -> &'a Q {
    if a >= b {
        a
    } else {
        b
    }
}
