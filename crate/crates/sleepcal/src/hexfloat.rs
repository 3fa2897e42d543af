//! C99-style hexadecimal float literals (`0x1.8p+1`), exact in both directions.
//!
//! Only the canonical form produced by [`format`] is accepted by [`parse`]:
//! a leading `1` (normal) or `0` (zero and subnormal), at most 13 fraction
//! digits and a decimal binary exponent.

const FRACTION_BITS: u32 = 52;
const EXP_BIAS: i64 = 1023;

pub fn format(x: f64) -> Option<String> {
    if !x.is_finite() {
        return None;
    }
    let bits = x.to_bits();
    let sign = if bits >> 63 == 1 { "-" } else { "" };
    let biased = ((bits >> FRACTION_BITS) & 0x7ff) as i64;
    let fraction = bits & ((1u64 << FRACTION_BITS) - 1);
    if biased == 0 && fraction == 0 {
        return Some(format!("{sign}0x0p+0"));
    }
    let (lead, exp) = if biased == 0 {
        (0, 1 - EXP_BIAS)
    } else {
        (1, biased - EXP_BIAS)
    };
    let digits = format!("{fraction:013x}");
    let digits = digits.trim_end_matches('0');
    let dot = if digits.is_empty() { "" } else { "." };
    let esign = if exp >= 0 { "+" } else { "-" };
    Some(format!("{sign}0x{lead}{dot}{digits}p{esign}{}", exp.abs()))
}

pub fn parse(s: &str) -> Option<f64> {
    let (negative, rest) = match s.strip_prefix('-') {
        Some(r) => (true, r),
        None => (false, s),
    };
    let rest = rest.strip_prefix("0x")?;
    let (mantissa, exp) = rest.split_once('p')?;
    let exp: i64 = exp.parse().ok()?;
    let (lead, digits) = match mantissa.split_once('.') {
        Some((l, d)) if !d.is_empty() => (l, d),
        Some(_) => return None,
        None => (mantissa, ""),
    };
    if digits.len() > 13 || !digits.bytes().all(|b| b.is_ascii_hexdigit()) {
        return None;
    }
    let fraction = if digits.is_empty() {
        0
    } else {
        u64::from_str_radix(digits, 16).ok()? << (4 * (13 - digits.len()))
    };
    let bits = match lead {
        "1" => {
            let biased = exp + EXP_BIAS;
            if !(1..=2046).contains(&biased) {
                return None;
            }
            ((biased as u64) << FRACTION_BITS) | fraction
        }
        "0" => {
            if fraction == 0 {
                if exp != 0 {
                    return None;
                }
                0
            } else if exp == 1 - EXP_BIAS {
                fraction
            } else {
                return None;
            }
        }
        _ => return None,
    };
    let sign = if negative { 1u64 << 63 } else { 0 };
    Some(f64::from_bits(sign | bits))
}
