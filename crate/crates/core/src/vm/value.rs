//! Scalar machine values and their arithmetic.

use std::fmt;

use crate::bitmask::ElementKind;
use crate::frontend::ast::{BinaryOp, Type};

/// Scalar storage type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sty {
    I32,
    U32,
    F32,
    F64,
    Ptr,
}

impl Sty {
    pub fn size(self) -> u64 {
        match self {
            Sty::I32 | Sty::U32 | Sty::F32 => 4,
            Sty::F64 | Sty::Ptr => 8,
        }
    }

    pub fn of(ty: &Type) -> Option<Sty> {
        Some(match ty {
            Type::Int => Sty::I32,
            Type::UInt => Sty::U32,
            Type::Float => Sty::F32,
            Type::Double => Sty::F64,
            Type::Ptr(_) => Sty::Ptr,
            _ => return None,
        })
    }

    pub fn is_float(self) -> bool {
        matches!(self, Sty::F32 | Sty::F64)
    }

    pub fn is_int(self) -> bool {
        matches!(self, Sty::I32 | Sty::U32)
    }

    fn rank(self) -> u8 {
        match self {
            Sty::I32 => 0,
            Sty::U32 => 1,
            Sty::F32 => 2,
            Sty::F64 => 3,
            Sty::Ptr => 4,
        }
    }

    /// Common type of an arithmetic binary operation.
    pub fn common(a: Sty, b: Sty) -> Sty {
        if a.rank() >= b.rank() {
            a
        } else {
            b
        }
    }
}

impl From<ElementKind> for Sty {
    fn from(k: ElementKind) -> Sty {
        match k {
            ElementKind::I32 => Sty::I32,
            ElementKind::U32 => Sty::U32,
            ElementKind::F32 => Sty::F32,
            ElementKind::F64 => Sty::F64,
            ElementKind::Ptr => Sty::Ptr,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Val {
    I32(i32),
    U32(u32),
    F32(f32),
    F64(f64),
    Ptr(u64),
}

/// Arithmetic that has no defined result.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArithFault {
    DivByZero,
    NanPredicate,
}

impl Val {
    /// A program input literal: an `int` when it parses as one, else a `double`.
    pub fn parse_input(s: &str) -> Option<Val> {
        s.parse::<i32>().ok().map(Val::I32).or_else(|| s.parse::<f64>().ok().map(Val::F64))
    }

    pub fn ty(self) -> Sty {
        match self {
            Val::I32(_) => Sty::I32,
            Val::U32(_) => Sty::U32,
            Val::F32(_) => Sty::F32,
            Val::F64(_) => Sty::F64,
            Val::Ptr(_) => Sty::Ptr,
        }
    }

    pub fn bits(self) -> u64 {
        match self {
            Val::I32(v) => v as u32 as u64,
            Val::U32(v) => v as u64,
            Val::F32(v) => v.to_bits() as u64,
            Val::F64(v) => v.to_bits(),
            Val::Ptr(v) => v,
        }
    }

    pub fn from_bits(ty: Sty, raw: u64) -> Val {
        match ty {
            Sty::I32 => Val::I32(raw as u32 as i32),
            Sty::U32 => Val::U32(raw as u32),
            Sty::F32 => Val::F32(f32::from_bits(raw as u32)),
            Sty::F64 => Val::F64(f64::from_bits(raw)),
            Sty::Ptr => Val::Ptr(raw),
        }
    }

    pub fn zero(ty: Sty) -> Val {
        Val::from_bits(ty, 0)
    }

    pub fn as_i64(self) -> i64 {
        match self {
            Val::I32(v) => v as i64,
            Val::U32(v) => v as i64,
            Val::F32(v) => v as i64,
            Val::F64(v) => v as i64,
            Val::Ptr(v) => v as i64,
        }
    }

    pub fn as_f64(self) -> f64 {
        match self {
            Val::I32(v) => v as f64,
            Val::U32(v) => v as f64,
            Val::F32(v) => v as f64,
            Val::F64(v) => v,
            Val::Ptr(v) => v as f64,
        }
    }

    /// C conversion to another scalar type.
    pub fn convert(self, to: Sty) -> Val {
        if self.ty() == to {
            return self;
        }
        match to {
            Sty::I32 => Val::I32(match self {
                Val::F32(v) => v as i32,
                Val::F64(v) => v as i32,
                other => other.bits() as u32 as i32,
            }),
            Sty::U32 => Val::U32(match self {
                Val::F32(v) => v as i64 as u32,
                Val::F64(v) => v as i64 as u32,
                other => other.bits() as u32,
            }),
            Sty::F32 => Val::F32(match self {
                Val::I32(v) => v as f32,
                Val::U32(v) => v as f32,
                Val::F64(v) => v as f32,
                other => other.as_f64() as f32,
            }),
            Sty::F64 => Val::F64(self.as_f64()),
            Sty::Ptr => Val::Ptr(match self {
                Val::I32(v) => v as i64 as u64,
                other => other.as_i64() as u64,
            }),
        }
    }

    pub fn is_zero_int(self) -> bool {
        matches!(self, Val::I32(0) | Val::U32(0) | Val::Ptr(0))
    }

    pub fn truthy(self) -> Result<bool, ArithFault> {
        match self {
            Val::F32(v) if v.is_nan() => Err(ArithFault::NanPredicate),
            Val::F64(v) if v.is_nan() => Err(ArithFault::NanPredicate),
            Val::F32(v) => Ok(v != 0.0),
            Val::F64(v) => Ok(v != 0.0),
            other => Ok(other.bits() != 0),
        }
    }

    pub fn neg(self) -> Val {
        match self {
            Val::I32(v) => Val::I32(v.wrapping_neg()),
            Val::U32(v) => Val::U32(v.wrapping_neg()),
            Val::F32(v) => Val::F32(-v),
            Val::F64(v) => Val::F64(-v),
            Val::Ptr(v) => Val::Ptr(v.wrapping_neg()),
        }
    }

    pub fn bit_not(self) -> Val {
        match self {
            Val::I32(v) => Val::I32(!v),
            Val::U32(v) => Val::U32(!v),
            other => other,
        }
    }

    /// Binary operation on two operands already converted to a common type.
    /// Comparisons yield `I32` 0/1; shifts take the right operand as a count.
    pub fn binary(op: BinaryOp, a: Val, b: Val) -> Result<Val, ArithFault> {
        use BinaryOp::*;
        if op.is_comparison() {
            let ord = match (a, b) {
                (Val::F32(x), Val::F32(y)) => x.partial_cmp(&y),
                (Val::F64(x), Val::F64(y)) => x.partial_cmp(&y),
                (Val::I32(x), Val::I32(y)) => Some(x.cmp(&y)),
                (x, y) => Some(x.bits().cmp(&y.bits())),
            };
            let ord = ord.ok_or(ArithFault::NanPredicate)?;
            let r = match op {
                Eq => ord.is_eq(),
                Ne => ord.is_ne(),
                Lt => ord.is_lt(),
                Le => ord.is_le(),
                Gt => ord.is_gt(),
                _ => ord.is_ge(),
            };
            return Ok(Val::I32(r as i32));
        }
        Ok(match (a, b) {
            (Val::I32(x), Val::I32(y)) => Val::I32(match op {
                Add => x.wrapping_add(y),
                Sub => x.wrapping_sub(y),
                Mul => x.wrapping_mul(y),
                Div | Rem if y == 0 => return Err(ArithFault::DivByZero),
                Div => x.wrapping_div(y),
                Rem => x.wrapping_rem(y),
                BitAnd => x & y,
                BitOr => x | y,
                BitXor => x ^ y,
                _ => unreachable!("operator {op:?} on int"),
            }),
            (Val::U32(x), Val::U32(y)) => Val::U32(match op {
                Add => x.wrapping_add(y),
                Sub => x.wrapping_sub(y),
                Mul => x.wrapping_mul(y),
                Div | Rem if y == 0 => return Err(ArithFault::DivByZero),
                Div => x / y,
                Rem => x % y,
                BitAnd => x & y,
                BitOr => x | y,
                BitXor => x ^ y,
                _ => unreachable!("operator {op:?} on unsigned"),
            }),
            (Val::F32(x), Val::F32(y)) => Val::F32(match op {
                Add => x + y,
                Sub => x - y,
                Mul => x * y,
                Div if y == 0.0 => return Err(ArithFault::DivByZero),
                Div => x / y,
                _ => unreachable!("operator {op:?} on float"),
            }),
            (Val::F64(x), Val::F64(y)) => Val::F64(match op {
                Add => x + y,
                Sub => x - y,
                Mul => x * y,
                Div if y == 0.0 => return Err(ArithFault::DivByZero),
                Div => x / y,
                _ => unreachable!("operator {op:?} on double"),
            }),
            (x, y) => unreachable!("mismatched operands {x:?} {op:?} {y:?}"),
        })
    }

    pub fn shift(op: BinaryOp, a: Val, count: u32) -> Val {
        let c = count & 31;
        match (op, a) {
            (BinaryOp::Shl, Val::I32(x)) => Val::I32(x.wrapping_shl(c)),
            (BinaryOp::Shl, Val::U32(x)) => Val::U32(x.wrapping_shl(c)),
            (_, Val::I32(x)) => Val::I32(x.wrapping_shr(c)),
            (_, Val::U32(x)) => Val::U32(x.wrapping_shr(c)),
            (_, other) => other,
        }
    }
}

impl fmt::Display for Val {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Val::I32(v) => write!(f, "{v}"),
            Val::U32(v) => write!(f, "{v}"),
            Val::F32(v) => write!(f, "{v}"),
            Val::F64(v) => write!(f, "{v}"),
            Val::Ptr(v) => write!(f, "{v:#x}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integer_arithmetic_wraps() {
        assert_eq!(Val::binary(BinaryOp::Add, Val::I32(i32::MAX), Val::I32(1)), Ok(Val::I32(i32::MIN)));
        assert_eq!(Val::binary(BinaryOp::Sub, Val::U32(0), Val::U32(1)), Ok(Val::U32(u32::MAX)));
        assert_eq!(Val::binary(BinaryOp::Div, Val::I32(i32::MIN), Val::I32(-1)), Ok(Val::I32(i32::MIN)));
        assert_eq!(Val::binary(BinaryOp::Rem, Val::I32(-7), Val::I32(2)), Ok(Val::I32(-1)));
    }

    #[test]
    fn faults() {
        assert_eq!(Val::binary(BinaryOp::Div, Val::I32(1), Val::I32(0)), Err(ArithFault::DivByZero));
        assert_eq!(Val::binary(BinaryOp::Div, Val::F64(1.0), Val::F64(0.0)), Err(ArithFault::DivByZero));
        assert_eq!(Val::binary(BinaryOp::Lt, Val::F64(f64::NAN), Val::F64(0.0)), Err(ArithFault::NanPredicate));
        assert_eq!(Val::F32(f32::NAN).truthy(), Err(ArithFault::NanPredicate));
    }

    #[test]
    fn conversions_follow_c() {
        assert_eq!(Val::I32(-1).convert(Sty::U32), Val::U32(u32::MAX));
        assert_eq!(Val::U32(u32::MAX).convert(Sty::I32), Val::I32(-1));
        assert_eq!(Val::F64(-2.7).convert(Sty::I32), Val::I32(-2));
        assert_eq!(Val::I32(3).convert(Sty::F32), Val::F32(3.0));
        assert_eq!(Val::binary(BinaryOp::Lt, Val::U32(1), Val::U32(u32::MAX)), Ok(Val::I32(1)));
    }

    #[test]
    fn bits_roundtrip() {
        for v in [Val::I32(-5), Val::U32(7), Val::F32(1.5), Val::F64(-0.25), Val::Ptr(0x1000)] {
            assert_eq!(Val::from_bits(v.ty(), v.bits()), v);
        }
    }
}
