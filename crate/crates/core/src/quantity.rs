//! Kubernetes resource quantities.
//!
//! CPU quantities are canonicalized to millicores, memory quantities to
//! bytes. Fractional results are rounded up, so `"1m"` of memory is one byte
//! and `"0.0001"` CPU is one millicore.

use std::fmt;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResourceKind {
    Cpu,
    Memory,
}

impl ResourceKind {
    /// Base units per whole unit of the quantity grammar.
    fn unit(self) -> u128 {
        match self {
            ResourceKind::Cpu => 1000,
            ResourceKind::Memory => 1,
        }
    }
}

impl fmt::Display for ResourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ResourceKind::Cpu => f.write_str("cpu"),
            ResourceKind::Memory => f.write_str("memory"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("bad quantity {0:?}")]
pub struct BadQuantity(pub String);

/// A parsed quantity. Equality and hashing look only at the kind and the
/// canonical value, so `"1024Mi"` and `"1Gi"` compare equal.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Quantity {
    kind: ResourceKind,
    value: u64,
    original: String,
}

impl Quantity {
    pub fn parse(text: &str, kind: ResourceKind) -> Result<Self, BadQuantity> {
        let value = canonical_value(text, kind).ok_or_else(|| BadQuantity(text.to_string()))?;
        Ok(Quantity {
            kind,
            value,
            original: text.to_string(),
        })
    }

    pub fn kind(&self) -> ResourceKind {
        self.kind
    }

    /// Millicores for CPU, bytes for memory.
    pub fn value(&self) -> u64 {
        self.value
    }

    pub fn original(&self) -> &str {
        &self.original
    }
}

impl PartialEq for Quantity {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind && self.value == other.value
    }
}

impl Eq for Quantity {}

impl Hash for Quantity {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.kind.hash(state);
        self.value.hash(state);
    }
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.original)
    }
}

pub fn parse_quantity(text: &str, kind: ResourceKind) -> Result<Quantity, BadQuantity> {
    Quantity::parse(text, kind)
}

// Scale factor of a suffix as numerator / denominator.
fn suffix_scale(suffix: &str) -> Option<(u128, u128)> {
    let binary = |power: u32| Some((1u128 << (10 * power), 1));
    let decimal = |power: u32| Some((10u128.pow(3 * power), 1));
    match suffix {
        "" => Some((1, 1)),
        "m" => Some((1, 1000)),
        "k" => decimal(1),
        "M" => decimal(2),
        "G" => decimal(3),
        "T" => decimal(4),
        "P" => decimal(5),
        "E" => decimal(6),
        "Ki" => binary(1),
        "Mi" => binary(2),
        "Gi" => binary(3),
        "Ti" => binary(4),
        "Pi" => binary(5),
        "Ei" => binary(6),
        _ => exponent_scale(suffix),
    }
}

fn exponent_scale(suffix: &str) -> Option<(u128, u128)> {
    let rest = suffix.strip_prefix(['e', 'E'])?;
    let (negative, digits) = match rest.as_bytes().first()? {
        b'+' => (false, &rest[1..]),
        b'-' => (true, &rest[1..]),
        _ => (false, rest),
    };
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) || digits.len() > 2 {
        return None;
    }
    let exp: u32 = digits.parse().ok()?;
    // A saturated factor still yields the right answer: the result either
    // overflows u64 or rounds up to 1.
    let factor = 10u128.checked_pow(exp).unwrap_or(u128::MAX);
    Some(if negative { (1, factor) } else { (factor, 1) })
}

fn canonical_value(text: &str, kind: ResourceKind) -> Option<u64> {
    let bytes = text.as_bytes();
    let mut pos = 0;
    let negative = match bytes.first()? {
        b'+' => {
            pos = 1;
            false
        }
        b'-' => {
            pos = 1;
            true
        }
        _ => false,
    };

    let mut mantissa: u128 = 0;
    let mut frac_digits: u32 = 0;
    let mut int_digits = 0usize;
    while pos < bytes.len() && bytes[pos].is_ascii_digit() {
        mantissa = mantissa.checked_mul(10)?.checked_add(u128::from(bytes[pos] - b'0'))?;
        pos += 1;
        int_digits += 1;
    }
    let mut fraction_len = 0usize;
    if pos < bytes.len() && bytes[pos] == b'.' {
        pos += 1;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            mantissa = mantissa.checked_mul(10)?.checked_add(u128::from(bytes[pos] - b'0'))?;
            pos += 1;
            fraction_len += 1;
        }
        frac_digits = u32::try_from(fraction_len).ok()?;
    }
    if int_digits + fraction_len == 0 {
        return None;
    }

    let (num, den) = suffix_scale(&text[pos..])?;
    if negative && mantissa != 0 {
        return None;
    }

    if mantissa == 0 {
        return Some(0);
    }
    while frac_digits > 0 && mantissa.is_multiple_of(10) {
        mantissa /= 10;
        frac_digits -= 1;
    }
    let numerator = mantissa.checked_mul(num)?.checked_mul(kind.unit())?;
    let denominator = 10u128.saturating_pow(frac_digits).saturating_mul(den);
    u64::try_from(numerator.div_ceil(denominator)).ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cpu(text: &str) -> u64 {
        parse_quantity(text, ResourceKind::Cpu).unwrap().value()
    }

    fn mem(text: &str) -> u64 {
        parse_quantity(text, ResourceKind::Memory).unwrap().value()
    }

    #[test]
    fn cpu_quantities() {
        assert_eq!(cpu("1"), 1000);
        assert_eq!(cpu("0"), 0);
        assert_eq!(cpu("500m"), 500);
        assert_eq!(cpu("1.5"), 1500);
        assert_eq!(cpu("0.0001"), 1);
        assert_eq!(cpu(".5"), 500);
        assert_eq!(cpu("2."), 2000);
        assert_eq!(cpu("1e3"), 1_000_000);
    }

    #[test]
    fn memory_quantities() {
        assert_eq!(mem("2Gi"), 2 * (1 << 30));
        assert_eq!(mem("8000m"), 8);
        assert_eq!(mem("1m"), 1);
        assert_eq!(mem("0m"), 0);
        assert_eq!(mem("2G"), 2_000_000_000);
        assert_eq!(mem("128974848"), 128_974_848);
        assert_eq!(mem("129e6"), 129_000_000);
        assert_eq!(mem("123Mi"), 123 * (1 << 20));
        assert_eq!(mem("1.5Ki"), 1536);
    }

    #[test]
    fn original_text_is_kept() {
        let q = parse_quantity("1024Mi", ResourceKind::Memory).unwrap();
        assert_eq!(q.original(), "1024Mi");
        assert_eq!(q, parse_quantity("1Gi", ResourceKind::Memory).unwrap());
        assert_ne!(
            parse_quantity("1", ResourceKind::Cpu).unwrap(),
            parse_quantity("1000", ResourceKind::Memory).unwrap()
        );
    }

    #[test]
    fn rejects_garbage() {
        for text in ["", "abc", "1Xi", "-1", "1.2.3", "m", ".", "1e", "1e999", "99999999999999999999999Ei", "1 Gi", "2g"] {
            assert!(parse_quantity(text, ResourceKind::Memory).is_err(), "{text:?}");
        }
        assert_eq!(cpu("-0"), 0);
    }
}
