//! Scalar abstraction for the symbolic expansion and the elimination
//! template, so both can run in plain `f64` or in double-double precision.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

use twofloat::TwoFloat;

pub trait Real:
    Copy
    + Debug
    + PartialEq
    + PartialOrd
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + Send
    + Sync
    + 'static
{
    /// Unit roundoff of the representation.
    const EPSILON: f64;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn abs(self) -> Self;
    fn to_extended(self) -> Extended;

    fn zero() -> Self {
        Self::from_f64(0.0)
    }

    fn one() -> Self {
        Self::from_f64(1.0)
    }

    fn is_zero(self) -> bool {
        self.to_f64() == 0.0
    }
}

impl Real for f64 {
    const EPSILON: f64 = f64::EPSILON;

    fn from_f64(v: f64) -> Self {
        v
    }

    fn to_f64(self) -> f64 {
        self
    }

    fn abs(self) -> Self {
        f64::abs(self)
    }

    fn to_extended(self) -> Extended {
        Extended::from_f64(self)
    }
}

/// Double-double scalar (about 32 significant digits).
///
/// Wraps [`TwoFloat`] for addition and multiplication but divides by long
/// division on the high words: `TwoFloat / TwoFloat` in twofloat 0.8 forms
/// `1 - b_hi * (1 / b_hi)` without a fused multiply-add, so its quotients
/// are only accurate to `f64` precision.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct Extended(TwoFloat);

impl Extended {
    pub fn hi(self) -> f64 {
        self.0.hi()
    }

    pub fn lo(self) -> f64 {
        self.0.lo()
    }
}

impl Add for Extended {
    type Output = Extended;
    fn add(self, rhs: Extended) -> Extended {
        Extended(self.0 + rhs.0)
    }
}

impl Sub for Extended {
    type Output = Extended;
    fn sub(self, rhs: Extended) -> Extended {
        Extended(self.0 - rhs.0)
    }
}

impl Mul for Extended {
    type Output = Extended;
    fn mul(self, rhs: Extended) -> Extended {
        Extended(self.0 * rhs.0)
    }
}

impl Div for Extended {
    type Output = Extended;
    fn div(self, rhs: Extended) -> Extended {
        let b = rhs.0;
        let q1 = self.0.hi() / b.hi();
        let r = self.0 - b * q1;
        let q2 = r.hi() / b.hi();
        let r = r - b * q2;
        let q3 = r.hi() / b.hi();
        Extended(TwoFloat::new_add(q1, q2) + q3)
    }
}

impl Neg for Extended {
    type Output = Extended;
    fn neg(self) -> Extended {
        Extended(-self.0)
    }
}

impl AddAssign for Extended {
    fn add_assign(&mut self, rhs: Extended) {
        *self = *self + rhs;
    }
}

impl SubAssign for Extended {
    fn sub_assign(&mut self, rhs: Extended) {
        *self = *self - rhs;
    }
}

impl Real for Extended {
    const EPSILON: f64 = f64::EPSILON * f64::EPSILON / 2.0;

    fn from_f64(v: f64) -> Self {
        Extended(TwoFloat::from(v))
    }

    fn to_f64(self) -> f64 {
        f64::from(self.0)
    }

    fn abs(self) -> Self {
        Extended(self.0.abs())
    }

    fn to_extended(self) -> Extended {
        self
    }

    fn is_zero(self) -> bool {
        self.hi() == 0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn extended_keeps_low_order_bits() {
        let x = Extended::from_f64(1.0) + Extended::from_f64(1e-20);
        let y = x - Extended::one();
        assert!((y.to_f64() - 1e-20).abs() < 1e-35);
        // The same computation in f64 loses the small term.
        assert_eq!((1.0f64 + 1e-20) - 1.0, 0.0);
    }

    #[test]
    fn third_times_three_is_one() {
        let three = Extended::from_f64(3.0);
        let r = Extended::one() / three * three - Extended::one();
        assert!(r.to_f64().abs() < 1e-31);
        // f64 quotient, then exact product: the residual is the f64 error.
        let q = Extended::from_f64(1.0 / 3.0);
        assert!((q * three - Extended::one()).to_f64().abs() > 1e-17);
    }

    proptest! {
        #[test]
        fn quotient_times_divisor_recovers_dividend(
            ah in -1e3f64..1e3, al in -1e-14f64..1e-14,
            bh in 0.01f64..1e3, bl in -1e-14f64..1e-14, neg in any::<bool>(),
        ) {
            let a = Extended::from_f64(ah) + Extended::from_f64(al * ah.abs());
            let mut b = Extended::from_f64(bh) + Extended::from_f64(bl * bh);
            if neg {
                b = -b;
            }
            let r = (a / b) * b - a;
            prop_assert!(r.to_f64().abs() <= 1e-30 * ah.abs().max(1e-300));
        }
    }
}
