//! Exact textual `f64` round trip as C99-style hexadecimal literals
//! (`0x1.8p+1`, `-0x0.0000000000001p-1022`).

use crate::error::{Error, Result};

pub fn format(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    let sign = if v.is_sign_negative() { "-" } else { "" };
    if v.is_infinite() {
        return format!("{sign}inf");
    }
    let bits = v.to_bits();
    let exp = ((bits >> 52) & 0x7ff) as i64;
    let frac = bits & ((1u64 << 52) - 1);
    let (lead, e) = match (exp, frac) {
        (0, 0) => return format!("{sign}0x0p+0"),
        (0, _) => (0, -1022),
        _ => (1, exp - 1023),
    };
    let digits = format!("{frac:013x}");
    let digits = digits.trim_end_matches('0');
    if digits.is_empty() {
        format!("{sign}0x{lead}p{e:+}")
    } else {
        format!("{sign}0x{lead}.{digits}p{e:+}")
    }
}

pub fn parse(s: &str) -> Result<f64> {
    let bad = |why: &str| Error::Input(format!("bad hex float '{s}': {why}"));
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let signed = |v: f64| if neg { -v } else { v };
    match body {
        "nan" => return Ok(f64::NAN),
        "inf" => return Ok(signed(f64::INFINITY)),
        _ => {}
    }
    let body = body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")).ok_or_else(|| bad("missing 0x"))?;
    let (mant, exp) = body.split_once(['p', 'P']).ok_or_else(|| bad("missing exponent"))?;
    let exp: i64 = exp.parse().map_err(|_| bad("exponent"))?;
    let (int, frac) = mant.split_once('.').unwrap_or((mant, ""));
    let digits = format!("{int}{frac}");
    let digits = digits.trim_start_matches('0');
    if digits.len() > 16 || !digits.chars().all(|c| c.is_ascii_hexdigit()) {
        return Err(bad("mantissa"));
    }
    let m = if digits.is_empty() { 0 } else { u64::from_str_radix(digits, 16).map_err(|_| bad("mantissa"))? };
    if m == 0 {
        return Ok(signed(0.0));
    }
    // value = m · 2^e
    let e = exp - 4 * frac.len() as i64;
    let bitlen = 64 - i64::from(m.leading_zeros());
    let top = e + bitlen - 1;
    let bits = if top >= -1022 {
        if top > 1023 {
            return Err(bad("overflow"));
        }
        let shift = bitlen - 53;
        let norm = if shift > 0 {
            if m & ((1u64 << shift) - 1) != 0 {
                return Err(bad("more than 53 significant bits"));
            }
            m >> shift
        } else {
            m << -shift
        };
        (((top + 1023) as u64) << 52) | (norm & ((1u64 << 52) - 1))
    } else {
        let shift = -1074 - e;
        if shift >= 64 || (shift > 0 && m & ((1u64 << shift) - 1) != 0) {
            return Err(bad("not representable"));
        }
        if shift > 0 {
            m >> shift
        } else {
            m << -shift
        }
    };
    Ok(signed(f64::from_bits(bits)))
}
