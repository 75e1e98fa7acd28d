use std::cmp::Ordering;
use std::fmt;

/// Exact rational with `i64` parts, always reduced and with a positive denominator.
///
/// Arithmetic is checked; callers fall back to floating point when an
/// operation returns `None`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Rational {
    num: i64,
    den: i64,
}

fn gcd(mut a: i64, mut b: i64) -> i64 {
    a = a.abs();
    b = b.abs();
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

impl Rational {
    pub const ZERO: Rational = Rational { num: 0, den: 1 };
    pub const ONE: Rational = Rational { num: 1, den: 1 };

    pub fn new(num: i64, den: i64) -> Option<Self> {
        if den == 0 || num == i64::MIN || den == i64::MIN {
            return None;
        }
        let g = gcd(num, den).max(1);
        let (mut n, mut d) = (num / g, den / g);
        if d < 0 {
            n = -n;
            d = -d;
        }
        Some(Rational { num: n, den: d })
    }

    pub fn integer(n: i64) -> Self {
        Rational { num: n, den: 1 }
    }

    pub fn numer(&self) -> i64 {
        self.num
    }

    pub fn denom(&self) -> i64 {
        self.den
    }

    pub fn is_zero(&self) -> bool {
        self.num == 0
    }

    pub fn is_one(&self) -> bool {
        self.num == 1 && self.den == 1
    }

    pub fn is_integer(&self) -> bool {
        self.den == 1
    }

    pub fn to_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    pub fn checked_add(self, o: Rational) -> Option<Rational> {
        let g = gcd(self.den, o.den);
        let l = (self.den / g).checked_mul(o.den)?;
        let a = self.num.checked_mul(l / self.den)?;
        let b = o.num.checked_mul(l / o.den)?;
        Rational::new(a.checked_add(b)?, l)
    }

    pub fn checked_neg(self) -> Option<Rational> {
        Some(Rational { num: self.num.checked_neg()?, den: self.den })
    }

    pub fn checked_sub(self, o: Rational) -> Option<Rational> {
        self.checked_add(o.checked_neg()?)
    }

    pub fn checked_mul(self, o: Rational) -> Option<Rational> {
        let g1 = gcd(self.num, o.den).max(1);
        let g2 = gcd(o.num, self.den).max(1);
        let n = (self.num / g1).checked_mul(o.num / g2)?;
        let d = (self.den / g2).checked_mul(o.den / g1)?;
        Rational::new(n, d)
    }

    pub fn checked_recip(self) -> Option<Rational> {
        Rational::new(self.den, self.num)
    }

    pub fn checked_div(self, o: Rational) -> Option<Rational> {
        self.checked_mul(o.checked_recip()?)
    }

    /// Integer power; negative exponents invert.
    pub fn checked_powi(self, e: i64) -> Option<Rational> {
        if e < 0 {
            return self.checked_recip()?.checked_powi(e.checked_neg()?);
        }
        let mut acc = Rational::ONE;
        for _ in 0..e {
            acc = acc.checked_mul(self)?;
        }
        Some(acc)
    }

    /// Exact decimal expansion when the denominator is of the form 2^a·5^b.
    pub fn to_decimal_string(&self) -> Option<String> {
        let mut d = self.den;
        let (mut twos, mut fives) = (0u32, 0u32);
        while d % 2 == 0 {
            d /= 2;
            twos += 1;
        }
        while d % 5 == 0 {
            d /= 5;
            fives += 1;
        }
        if d != 1 {
            return None;
        }
        let digits = twos.max(fives);
        if digits == 0 {
            return Some(self.num.to_string());
        }
        // num/den == num * (10^digits/den) / 10^digits
        let scale = 10i128.pow(digits) / self.den as i128;
        let scaled = self.num as i128 * scale;
        let neg = scaled < 0;
        let mag = scaled.unsigned_abs().to_string();
        let width = digits as usize + 1;
        let padded = format!("{mag:0>width$}");
        let (int, frac) = padded.split_at(padded.len() - digits as usize);
        Some(format!("{}{}.{}", if neg { "-" } else { "" }, int, frac))
    }
}

impl PartialOrd for Rational {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Rational {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.num as i128 * other.den as i128).cmp(&(other.num as i128 * self.den as i128))
    }
}

impl fmt::Display for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reduces_and_normalizes_sign() {
        let r = Rational::new(6, -4).unwrap();
        assert_eq!((r.numer(), r.denom()), (-3, 2));
        assert!(Rational::new(1, 0).is_none());
    }

    #[test]
    fn arithmetic_is_exact() {
        let a = Rational::new(1, 3).unwrap();
        let b = Rational::new(1, 6).unwrap();
        assert_eq!(a.checked_add(b), Rational::new(1, 2));
        assert_eq!(a.checked_mul(b), Rational::new(1, 18));
        assert_eq!(a.checked_div(b), Some(Rational::integer(2)));
        assert_eq!(Rational::new(2, 3).unwrap().checked_powi(-2), Rational::new(9, 4));
    }

    #[test]
    fn overflow_is_reported() {
        let big = Rational::integer(i64::MAX / 2);
        assert!(big.checked_mul(Rational::integer(4)).is_none());
    }

    #[test]
    fn decimal_strings() {
        assert_eq!(Rational::new(1, 2).unwrap().to_decimal_string().unwrap(), "0.5");
        assert_eq!(Rational::new(-3, 40).unwrap().to_decimal_string().unwrap(), "-0.075");
        assert_eq!(Rational::integer(12).to_decimal_string().unwrap(), "12");
        assert!(Rational::new(1, 3).unwrap().to_decimal_string().is_none());
    }
}
