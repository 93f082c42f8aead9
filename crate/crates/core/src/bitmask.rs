//! Bit-level tolerance masks for `tolerant`-qualified objects.
//!
//! A mask splits the bits of one primitive element into the bits that must
//! keep their true value (`keep`) and the bits whose corruption can be
//! absorbed by clearing them (`coerce`). For unsigned integers bounded by
//! `MAXIMUS` the unused high bits are coercible; for IEEE 754 values the low
//! mantissa bits below the requested precision are coercible while sign and
//! exponent are never touched.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ElementKind {
    U32,
    I32,
    F32,
    F64,
    /// 64-bit pointer. Never tolerant-qualifiable; present so profile records
    /// can name robust pointer variables.
    Ptr,
}

impl ElementKind {
    pub fn bits(self) -> u32 {
        match self {
            ElementKind::U32 | ElementKind::I32 | ElementKind::F32 => 32,
            ElementKind::F64 | ElementKind::Ptr => 64,
        }
    }

    pub fn bytes(self) -> u64 {
        u64::from(self.bits() / 8)
    }

    pub fn is_float(self) -> bool {
        matches!(self, ElementKind::F32 | ElementKind::F64)
    }

    pub fn mantissa_bits(self) -> u32 {
        match self {
            ElementKind::F32 => 23,
            ElementKind::F64 => 52,
            _ => 0,
        }
    }

    pub fn all_ones(self) -> u64 {
        if self.bits() == 64 {
            u64::MAX
        } else {
            (1u64 << self.bits()) - 1
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ElementKind::U32 => "U32",
            ElementKind::I32 => "I32",
            ElementKind::F32 => "F32",
            ElementKind::F64 => "F64",
            ElementKind::Ptr => "PTR",
        }
    }

    pub fn parse(s: &str) -> Option<ElementKind> {
        Some(match s {
            "U32" => ElementKind::U32,
            "I32" => ElementKind::I32,
            "F32" => ElementKind::F32,
            "F64" => ElementKind::F64,
            "PTR" => ElementKind::Ptr,
            _ => return None,
        })
    }
}

impl fmt::Display for ElementKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A tolerance limit attached to a `tolerant` qualifier or tolerant allocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ToleranceLimit {
    /// Minimum preserved significant decimal digits of a floating point value.
    Precision(u64),
    /// Largest value an unsigned integer can legitimately attain.
    Maximus(u64),
    /// Number of high mantissa bits kept, stated directly. Produced when a
    /// mask is read back from a profile file or built programmatically.
    MantissaBits(u32),
}

/// How a `rolex_precision` argument is interpreted for a given element kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrecisionInterpretation {
    MaxValue,
    DecimalDigits,
}

/// The raw `rolex_precision` value passed to a tolerant allocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RolexPrecision {
    pub value: u64,
    pub interpretation: PrecisionInterpretation,
}

impl RolexPrecision {
    /// Integer kinds read the value as a maximum, float kinds as decimal digits.
    pub fn for_kind(kind: ElementKind, value: u64) -> Result<Self, MaskError> {
        if value == 0 {
            return Err(MaskError::InvalidLimit("precision value must be positive".into()));
        }
        let interpretation = match kind {
            ElementKind::U32 | ElementKind::I32 => PrecisionInterpretation::MaxValue,
            ElementKind::F32 | ElementKind::F64 => PrecisionInterpretation::DecimalDigits,
            ElementKind::Ptr => {
                return Err(MaskError::InvalidLimit("pointers cannot be tolerant".into()))
            }
        };
        Ok(RolexPrecision { value, interpretation })
    }

    pub fn limit(self) -> ToleranceLimit {
        match self.interpretation {
            PrecisionInterpretation::MaxValue => ToleranceLimit::Maximus(self.value),
            PrecisionInterpretation::DecimalDigits => ToleranceLimit::Precision(self.value),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MaskError {
    #[error("invalid tolerance limit: {0}")]
    InvalidLimit(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ToleranceMask {
    pub kind: ElementKind,
    pub keep: u64,
    pub coerce: u64,
    /// `None` means full elision: any error on the object is accepted as is.
    pub limit: Option<ToleranceLimit>,
}

/// Smallest `k` with `2^k > 10^digits`, i.e. `ceil(digits * log2(10))`.
pub fn mantissa_bits_for_digits(digits: u64) -> Option<u32> {
    if digits > 38 {
        return None;
    }
    let target = 10u128.pow(digits as u32);
    Some((0..128u32).find(|&k| (1u128 << k) > target).unwrap_or(128))
}

/// Number of low bits needed to represent every value up to `max`.
fn width_for_max(max: u64) -> u32 {
    64 - max.leading_zeros()
}

pub fn derive_mask(kind: ElementKind, limit: Option<ToleranceLimit>) -> Result<ToleranceMask, MaskError> {
    let all = kind.all_ones();
    if kind == ElementKind::Ptr {
        return Err(MaskError::InvalidLimit("pointers are never tolerant-qualifiable".into()));
    }
    let Some(lim) = limit else {
        return Ok(ToleranceMask { kind, keep: 0, coerce: all, limit: None });
    };
    let keep = match (kind, lim) {
        (ElementKind::U32, ToleranceLimit::Maximus(m)) => {
            if m == 0 || m > u64::from(u32::MAX) {
                return Err(MaskError::InvalidLimit(format!("maximus {m} outside 1..=4294967295")));
            }
            low_bits(width_for_max(m))
        }
        (ElementKind::I32, ToleranceLimit::Maximus(m)) => {
            if m == 0 || m > i32::MAX as u64 {
                return Err(MaskError::InvalidLimit(format!("maximus {m} outside 1..=2147483647")));
            }
            low_bits(width_for_max(m)) | (1 << 31)
        }
        (ElementKind::F32 | ElementKind::F64, ToleranceLimit::Precision(d)) => {
            if d == 0 {
                return Err(MaskError::InvalidLimit("precision must be positive".into()));
            }
            let kept = mantissa_bits_for_digits(d)
                .filter(|&k| k <= kind.mantissa_bits())
                .ok_or_else(|| {
                    MaskError::InvalidLimit(format!("precision {d} exceeds the {kind} mantissa"))
                })?;
            float_keep(kind, kept)
        }
        (ElementKind::F32 | ElementKind::F64, ToleranceLimit::MantissaBits(k)) => {
            if k > kind.mantissa_bits() {
                return Err(MaskError::InvalidLimit(format!("{k} mantissa bits exceed the {kind} mantissa")));
            }
            float_keep(kind, k)
        }
        (k, ToleranceLimit::Maximus(_)) => {
            return Err(MaskError::InvalidLimit(format!("MAXIMUS does not apply to {k}")))
        }
        (k, _) => return Err(MaskError::InvalidLimit(format!("PRECISION does not apply to {k}"))),
    };
    Ok(ToleranceMask { kind, keep, coerce: all & !keep, limit: Some(lim) })
}

fn low_bits(n: u32) -> u64 {
    if n >= 64 {
        u64::MAX
    } else {
        (1u64 << n) - 1
    }
}

fn float_keep(kind: ElementKind, kept_mantissa: u32) -> u64 {
    let cleared = kind.mantissa_bits() - kept_mantissa;
    kind.all_ones() & !low_bits(cleared)
}

impl ToleranceMask {
    /// Build a float mask that keeps `kept` high mantissa bits.
    pub fn float_with_mantissa(kind: ElementKind, kept: u32) -> Result<Self, MaskError> {
        derive_mask(kind, Some(ToleranceLimit::MantissaBits(kept)))
    }

    /// Rebuild a mask from its serialized keep pattern.
    pub fn from_keep(kind: ElementKind, keep: u64) -> Result<Self, MaskError> {
        let all = kind.all_ones();
        if keep & !all != 0 {
            return Err(MaskError::InvalidLimit(format!("mask {keep:#x} wider than {kind}")));
        }
        let limit = match kind {
            ElementKind::U32 => ToleranceLimit::Maximus(keep),
            ElementKind::I32 => ToleranceLimit::Maximus(keep & !(1 << 31)),
            ElementKind::F32 | ElementKind::F64 => {
                let cleared = (!keep & all).count_ones();
                ToleranceLimit::MantissaBits(kind.mantissa_bits().saturating_sub(cleared))
            }
            ElementKind::Ptr => return Err(MaskError::InvalidLimit("pointer mask".into())),
        };
        let mask = derive_mask(kind, Some(limit))?;
        if mask.keep != keep {
            return Err(MaskError::InvalidLimit(format!("{keep:#x} is not a derivable {kind} mask")));
        }
        Ok(mask)
    }

    pub fn is_full_elision(&self) -> bool {
        self.limit.is_none()
    }

    /// Clear the coercible bits of a stored element. Full-elision masks
    /// accept the value unchanged.
    pub fn apply_coercion(&self, raw: u64) -> u64 {
        if self.is_full_elision() {
            raw & self.kind.all_ones()
        } else {
            raw & self.keep
        }
    }

    pub fn is_error_elidable(&self, bit: u32) -> bool {
        bit < self.kind.bits() && self.coerce & (1u64 << bit) != 0
    }

    /// Number of cleared mantissa bits for float masks.
    pub fn cleared_bits(&self) -> u32 {
        self.coerce.count_ones()
    }

    /// Keep pattern as fixed-width lowercase hex (8 or 16 digits).
    pub fn hex(&self) -> String {
        match self.kind.bits() {
            32 => format!("{:08x}", self.keep),
            _ => format!("{:016x}", self.keep),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn maximus_1023_keeps_ten_bits() {
        let m = derive_mask(ElementKind::U32, Some(ToleranceLimit::Maximus(1023))).unwrap();
        assert_eq!(m.keep, 0x0000_03FF);
        assert_eq!(m.coerce, 0xFFFF_FC00);
        assert_eq!(m.hex(), "000003ff");
    }

    #[test]
    fn maximus_2_pow_24_keeps_25_bits() {
        let m = derive_mask(ElementKind::U32, Some(ToleranceLimit::Maximus(16_777_216))).unwrap();
        assert_eq!(m.keep, 0x01FF_FFFF);
    }

    #[test]
    fn f64_low_26_mask() {
        let m = ToleranceMask::float_with_mantissa(ElementKind::F64, 26).unwrap();
        assert_eq!(m.coerce, (1u64 << 26) - 1);
        assert_eq!(m.hex(), "fffffffffc000000");
    }

    #[test]
    fn precision_six_on_f32_keeps_twenty_bits() {
        let m = derive_mask(ElementKind::F32, Some(ToleranceLimit::Precision(6))).unwrap();
        assert_eq!(m.cleared_bits(), 3);
        assert_eq!(m.keep, 0xFFFF_FFF8);
    }

    #[test]
    fn digits_to_bits() {
        assert_eq!(mantissa_bits_for_digits(6), Some(20));
        assert_eq!(mantissa_bits_for_digits(8), Some(27));
        assert_eq!(mantissa_bits_for_digits(15), Some(50));
    }

    #[test]
    fn mismatched_limits_are_rejected() {
        assert!(derive_mask(ElementKind::F32, Some(ToleranceLimit::Maximus(5))).is_err());
        assert!(derive_mask(ElementKind::U32, Some(ToleranceLimit::Precision(5))).is_err());
        assert!(derive_mask(ElementKind::U32, Some(ToleranceLimit::Maximus(5_000_000_000))).is_err());
        assert!(derive_mask(ElementKind::F32, Some(ToleranceLimit::Precision(7))).is_err());
        assert!(derive_mask(ElementKind::Ptr, None).is_err());
    }

    #[test]
    fn coercion_examples() {
        let m = derive_mask(ElementKind::U32, Some(ToleranceLimit::Maximus(1023))).unwrap();
        assert_eq!(m.apply_coercion(0x8000_0201), 0x0000_0201);

        let f = ToleranceMask::float_with_mantissa(ElementKind::F64, 26).unwrap();
        let corrupted = 1.0f64.to_bits() ^ (1 << 3);
        assert_eq!(f.apply_coercion(corrupted), 1.0f64.to_bits());
    }

    #[test]
    fn elidable_bits() {
        let m = derive_mask(ElementKind::U32, Some(ToleranceLimit::Maximus(1023))).unwrap();
        assert!(m.is_error_elidable(20));
        assert!(!m.is_error_elidable(3));
        let f = ToleranceMask::float_with_mantissa(ElementKind::F64, 26).unwrap();
        assert!(!f.is_error_elidable(63));
        assert!(!f.is_error_elidable(55));
        assert!(f.is_error_elidable(25));
        assert!(!f.is_error_elidable(26));
        let full = derive_mask(ElementKind::U32, None).unwrap();
        assert!(full.is_error_elidable(31));
        assert_eq!(full.apply_coercion(0xdead_beef), 0xdead_beef);
    }

    #[test]
    fn signed_maximus_keeps_sign() {
        let m = derive_mask(ElementKind::I32, Some(ToleranceLimit::Maximus(100))).unwrap();
        assert_eq!(m.keep, 0x8000_007F);
        assert!(!m.is_error_elidable(31));
    }

    #[test]
    fn keep_round_trip() {
        for lim in [ToleranceLimit::Maximus(1023), ToleranceLimit::Maximus(1)] {
            let m = derive_mask(ElementKind::U32, Some(lim)).unwrap();
            assert_eq!(ToleranceMask::from_keep(ElementKind::U32, m.keep).unwrap().keep, m.keep);
        }
        let f = derive_mask(ElementKind::F64, Some(ToleranceLimit::Precision(8))).unwrap();
        assert_eq!(ToleranceMask::from_keep(ElementKind::F64, f.keep).unwrap().keep, f.keep);
        assert!(ToleranceMask::from_keep(ElementKind::U32, 0x0000_0F0F).is_err());
    }

    fn any_mask() -> impl Strategy<Value = ToleranceMask> {
        prop_oneof![
            (1u64..=u64::from(u32::MAX))
                .prop_map(|m| derive_mask(ElementKind::U32, Some(ToleranceLimit::Maximus(m))).unwrap()),
            (1u64..=i32::MAX as u64)
                .prop_map(|m| derive_mask(ElementKind::I32, Some(ToleranceLimit::Maximus(m))).unwrap()),
            (0u32..=23).prop_map(|k| ToleranceMask::float_with_mantissa(ElementKind::F32, k).unwrap()),
            (0u32..=52).prop_map(|k| ToleranceMask::float_with_mantissa(ElementKind::F64, k).unwrap()),
            Just(derive_mask(ElementKind::F64, None).unwrap()),
        ]
    }

    proptest! {
        #[test]
        fn partition_and_idempotency(m in any_mask(), raw in any::<u64>()) {
            let raw = raw & m.kind.all_ones();
            prop_assert_eq!(m.keep & m.coerce, 0);
            prop_assert_eq!(m.keep ^ m.coerce, m.kind.all_ones());
            let once = m.apply_coercion(raw);
            prop_assert_eq!(m.apply_coercion(once), once);
        }

        #[test]
        fn float_masks_never_coerce_sign_or_exponent(m in any_mask()) {
            if m.kind.is_float() && !m.is_full_elision() {
                let mant = m.kind.mantissa_bits();
                for bit in mant..m.kind.bits() {
                    prop_assert!(!m.is_error_elidable(bit));
                }
            }
        }
    }
}
