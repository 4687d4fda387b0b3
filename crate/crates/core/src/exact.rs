//! Exact rational arithmetic for certified incidence and mass comparisons.

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};

/// Parses `"p/q"`, an integer, or a finite decimal (`"0.25"`, `"-1.5e-3"`)
/// into an exact rational.
pub fn parse_rational(s: &str) -> Result<BigRational> {
    let s = s.trim();
    if let Some((p, q)) = s.split_once('/') {
        let p: BigInt = p.trim().parse().map_err(|_| Error::Parse(format!("bad numerator in {s:?}")))?;
        let q: BigInt = q.trim().parse().map_err(|_| Error::Parse(format!("bad denominator in {s:?}")))?;
        if q.is_zero() {
            return Err(Error::Parse(format!("zero denominator in {s:?}")));
        }
        return Ok(BigRational::new(p, q));
    }
    parse_decimal(s)
}

fn parse_decimal(s: &str) -> Result<BigRational> {
    let bad = || Error::Parse(format!("not a number: {s:?}"));
    let (mantissa, exponent) = match s.find(['e', 'E']) {
        Some(i) => (&s[..i], s[i + 1..].parse::<i32>().map_err(|_| bad())?),
        None => (s, 0),
    };
    let (negative, digits) = match mantissa.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, mantissa.strip_prefix('+').unwrap_or(mantissa)),
    };
    let (int_part, frac_part) = digits.split_once('.').unwrap_or((digits, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(bad());
    }
    if !int_part.chars().chain(frac_part.chars()).all(|c| c.is_ascii_digit()) {
        return Err(bad());
    }
    let all: BigInt = format!("{int_part}{frac_part}").parse().unwrap_or_else(|_| BigInt::zero());
    let scale = exponent - frac_part.len() as i32;
    let ten = BigInt::from(10);
    let mut r = if scale >= 0 {
        BigRational::from_integer(all * num_traits::pow(ten, scale as usize))
    } else {
        BigRational::new(all, num_traits::pow(ten, (-scale) as usize))
    };
    if negative {
        r = -r;
    }
    Ok(r)
}

pub fn to_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

/// Clears denominators and common factors; the first nonzero entry is made
/// positive. Returns `None` for the zero vector.
pub fn primitive_integer_vector(v: &[BigRational]) -> Option<Vec<BigInt>> {
    let lcm = v.iter().fold(BigInt::one(), |acc, x| acc.lcm(x.denom()));
    let mut ints: Vec<BigInt> = v.iter().map(|x| x.numer() * (&lcm / x.denom())).collect();
    let gcd = ints.iter().fold(BigInt::zero(), |acc, x| acc.gcd(x));
    if gcd.is_zero() {
        return None;
    }
    let first_negative = ints.iter().find(|x| !x.is_zero()).is_some_and(|x| x.is_negative());
    for x in &mut ints {
        *x = &*x / &gcd;
        if first_negative {
            *x = -&*x;
        }
    }
    Some(ints)
}

/// Rank of the integer matrix whose rows are `rows`, by fraction-free
/// (Bareiss) elimination.
pub fn rank(rows: &[Vec<BigInt>]) -> usize {
    if rows.is_empty() {
        return 0;
    }
    let ncols = rows[0].len();
    let mut a: Vec<Vec<BigInt>> = rows.to_vec();
    let mut prev = BigInt::one();
    let mut r = 0;
    for c in 0..ncols {
        if r == a.len() {
            break;
        }
        let Some(p) = (r..a.len()).find(|&i| !a[i][c].is_zero()) else {
            continue;
        };
        a.swap(r, p);
        for i in (r + 1)..a.len() {
            for j in (c + 1)..ncols {
                let v = (&a[r][c] * &a[i][j] - &a[i][c] * &a[r][j]) / &prev;
                a[i][j] = v;
            }
            a[i][c] = BigInt::zero();
        }
        prev = a[r][c].clone();
        r += 1;
    }
    r
}

/// Coordinates `c` with `x = sum_j c_j basis_j`, for linearly independent
/// integer `basis` vectors and `x` in their span. `None` when `x` is outside.
pub fn solve_in_span(basis: &[Vec<BigInt>], x: &[BigInt]) -> Option<Vec<BigRational>> {
    let d = basis.len();
    let n = x.len();
    // Augmented n x (d+1) system over the rationals.
    let mut a: Vec<Vec<BigRational>> = (0..n)
        .map(|i| {
            let mut row: Vec<BigRational> = basis.iter().map(|b| BigRational::from_integer(b[i].clone())).collect();
            row.push(BigRational::from_integer(x[i].clone()));
            row
        })
        .collect();
    let mut r = 0;
    for c in 0..d {
        let p = (r..n).find(|&i| !a[i][c].is_zero())?;
        a.swap(r, p);
        let inv = a[r][c].recip();
        for v in a[r].iter_mut() {
            *v = &*v * &inv;
        }
        for i in 0..n {
            if i != r && !a[i][c].is_zero() {
                let f = a[i][c].clone();
                let pivot_row = a[r].clone();
                for (x, y) in a[i].iter_mut().zip(&pivot_row) {
                    *x = &*x - y * &f;
                }
            }
        }
        r += 1;
    }
    if a[r..].iter().any(|row| !row[d].is_zero()) {
        return None;
    }
    Some((0..d).map(|i| a[i][d].clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(p: i64, d: i64) -> BigRational {
        BigRational::new(p.into(), d.into())
    }

    fn ints(v: &[i64]) -> Vec<BigInt> {
        v.iter().map(|&x| BigInt::from(x)).collect()
    }

    #[test]
    fn parses_fractions_and_decimals() {
        assert_eq!(parse_rational("1/3").unwrap(), q(1, 3));
        assert_eq!(parse_rational(" -2/4 ").unwrap(), q(-1, 2));
        assert_eq!(parse_rational("0.25").unwrap(), q(1, 4));
        assert_eq!(parse_rational("1e-2").unwrap(), q(1, 100));
        assert_eq!(parse_rational("-1.5E1").unwrap(), q(-15, 1));
        assert_eq!(parse_rational("7").unwrap(), q(7, 1));
        assert!(parse_rational("1/0").is_err());
        assert!(parse_rational("abc").is_err());
        assert!(parse_rational("").is_err());
    }

    #[test]
    fn primitive_vectors() {
        let v = primitive_integer_vector(&[q(-1, 2), q(1, 3), q(0, 1)]).unwrap();
        assert_eq!(v, ints(&[3, -2, 0]));
        assert!(primitive_integer_vector(&[q(0, 1), q(0, 1)]).is_none());
    }

    #[test]
    fn bareiss_rank() {
        assert_eq!(rank(&[ints(&[1, 2, 3]), ints(&[2, 4, 6])]), 1);
        assert_eq!(rank(&[ints(&[1, 0, 0]), ints(&[0, 1, 0]), ints(&[1, 1, 0])]), 2);
        assert_eq!(rank(&[ints(&[1, 1, 1]), ints(&[0, 1, 1]), ints(&[0, 0, 1])]), 3);
        assert_eq!(rank(&[ints(&[0, 0, 0])]), 0);
        assert_eq!(rank(&[ints(&[0, 3]), ints(&[0, 5]), ints(&[2, 1])]), 2);
    }

    #[test]
    fn solves_in_span() {
        let basis = vec![ints(&[1, 0, 1]), ints(&[0, 1, 1])];
        let c = solve_in_span(&basis, &ints(&[2, 3, 5])).unwrap();
        assert_eq!(c, vec![q(2, 1), q(3, 1)]);
        assert!(solve_in_span(&basis, &ints(&[1, 0, 0])).is_none());
    }
}
