//! Finite saturating arithmetic.
//!
//! Two families of number sets are supported: saturating integers `{-a..a}`
//! and decimal fixed point with a symmetric payload range. Values carry a
//! signed payload; for fixed point the payload is scaled by `10^d`.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ArithError {
    #[error("values from different arithmetic specs ({0} vs {1})")]
    SpecMismatch(ArithmeticSpec, ArithmeticSpec),
    #[error("division by zero")]
    DivisionByZero,
    #[error("invalid arithmetic spec `{0}`: {1}")]
    InvalidSpec(String, &'static str),
    #[error("malformed number literal `{0}`")]
    BadLiteral(String),
    #[error("literal `{0}` is not representable in {1}")]
    OutOfRange(String, ArithmeticSpec),
    #[error("unknown activation `{0}`")]
    UnknownActivation(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ArithKind {
    SatInt { range: i64 },
    FixedPoint { total_bits: u32, frac_decimals: u32 },
}

/// A finite number set together with its operations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ArithmeticSpec {
    kind: ArithKind,
    max: i64,
    scale: i64,
}

impl ArithmeticSpec {
    pub fn sat_int(range: i64) -> Result<Self, ArithError> {
        if range < 1 {
            return Err(ArithError::InvalidSpec(format!("satint:{range}"), "range must be at least 1"));
        }
        Ok(ArithmeticSpec { kind: ArithKind::SatInt { range }, max: range, scale: 1 })
    }

    pub fn fixed_point(total_bits: u32, frac_decimals: u32) -> Result<Self, ArithError> {
        let text = format!("fixed:{total_bits}:{frac_decimals}");
        if !(2..=63).contains(&total_bits) {
            return Err(ArithError::InvalidSpec(text, "total bits must lie in 2..=63"));
        }
        let max = (1i64 << (total_bits - 1)) - 1;
        let scale = 10i64
            .checked_pow(frac_decimals)
            .filter(|s| *s <= max)
            .ok_or(ArithError::InvalidSpec(text, "payload range cannot represent 1"))?;
        Ok(ArithmeticSpec { kind: ArithKind::FixedPoint { total_bits, frac_decimals }, max, scale })
    }

    pub fn kind(&self) -> ArithKind {
        self.kind
    }

    /// Largest payload; the smallest is its negation.
    pub fn max_payload(&self) -> i64 {
        self.max
    }

    /// Payload of the number 1.
    pub fn scale(&self) -> i64 {
        self.scale
    }

    /// Number of elements in the value set.
    pub fn cardinality(&self) -> u64 {
        2 * self.max as u64 + 1
    }

    /// Minimal number of bits of a signed encoding of the payload range.
    pub fn bit_width(&self) -> u32 {
        match self.kind {
            ArithKind::FixedPoint { total_bits, .. } => total_bits,
            ArithKind::SatInt { range } => 64 - (range as u64).leading_zeros() + 1,
        }
    }

    pub fn frac_decimals(&self) -> u32 {
        match self.kind {
            ArithKind::SatInt { .. } => 0,
            ArithKind::FixedPoint { frac_decimals, .. } => frac_decimals,
        }
    }

    pub fn contains(&self, payload: i64) -> bool {
        (-self.max..=self.max).contains(&payload)
    }

    pub fn clamp(&self, exact: i128) -> i64 {
        exact.clamp(-self.max as i128, self.max as i128) as i64
    }

    pub fn value(&self, payload: i64) -> Option<Value> {
        self.contains(payload).then_some(Value { payload, spec: *self })
    }

    pub fn zero(&self) -> Value {
        Value { payload: 0, spec: *self }
    }

    pub fn one(&self) -> Value {
        Value { payload: self.scale, spec: *self }
    }

    pub fn minus_one(&self) -> Value {
        Value { payload: -self.scale, spec: *self }
    }

    /// Integer `n` as a value, saturating.
    pub fn from_int(&self, n: i64) -> Value {
        Value { payload: self.clamp(n as i128 * self.scale as i128), spec: *self }
    }

    /// All values in ascending order.
    pub fn values(&self) -> impl DoubleEndedIterator<Item = Value> + '_ {
        let spec = *self;
        (-self.max..=self.max).map(move |payload| Value { payload, spec })
    }

    // Payload-level operations. These are what the solver runs on.

    pub fn add_p(&self, a: i64, b: i64) -> i64 {
        self.clamp(a as i128 + b as i128)
    }

    pub fn mul_p(&self, c: i64, v: i64) -> i64 {
        self.clamp(round_div(c as i128 * v as i128, self.scale as i128))
    }

    pub fn div_p(&self, a: i64, m: u64) -> i64 {
        self.clamp(round_div(a as i128, m as i128))
    }

    pub fn act_p(&self, act: Activation, v: i64) -> i64 {
        match act {
            Activation::Relu => v.max(0),
            Activation::TruncRelu => v.clamp(0, self.scale),
            Activation::Id => v,
        }
    }

    /// Partners `k2` with `add(k1, k2) = k`, as an inclusive interval.
    pub fn add_partner_range(&self, k1: i64, k: i64) -> Option<(i64, i64)> {
        let m = self.max;
        let (lo, hi) = if k == m {
            (m - k1, m)
        } else if k == -m {
            (-m, -m - k1)
        } else {
            (k - k1, k - k1)
        };
        let (lo, hi) = (lo.max(-m), hi.min(m));
        (lo <= hi).then_some((lo, hi))
    }

    /// Preimage of `k` under `v -> mul(c, v)`, as an inclusive interval.
    pub fn mul_inverse_range(&self, c: i64, k: i64) -> Option<(i64, i64)> {
        match c.cmp(&0) {
            Ordering::Equal => (k == 0).then_some((-self.max, self.max)),
            Ordering::Greater => self.monotone_preimage(|v| self.mul_p(c, v), k),
            Ordering::Less => self.monotone_preimage(|v| -self.mul_p(c, v), -k),
        }
    }

    /// Preimage of `k` under an activation, as an inclusive interval.
    pub fn act_inverse_range(&self, act: Activation, k: i64) -> Option<(i64, i64)> {
        let m = self.max;
        let r = match act {
            Activation::Id => (k, k),
            Activation::Relu if k > 0 => (k, k),
            Activation::Relu if k == 0 => (-m, 0),
            Activation::TruncRelu if k == 0 => (-m, 0),
            Activation::TruncRelu if k == self.scale => (self.scale, m),
            Activation::TruncRelu if k > 0 && k < self.scale => (k, k),
            _ => return None,
        };
        (self.contains(k)).then_some(r)
    }

    /// `{v : f(v) = k}` for non-decreasing `f`, located by binary search.
    fn monotone_preimage(&self, f: impl Fn(i64) -> i64, k: i64) -> Option<(i64, i64)> {
        let first_at_least = |target: i64| -> i64 {
            let (mut lo, mut hi) = (-self.max, self.max + 1);
            while lo < hi {
                let mid = lo + (hi - lo) / 2;
                if f(mid) >= target {
                    hi = mid;
                } else {
                    lo = mid + 1;
                }
            }
            lo
        };
        let lo = first_at_least(k);
        if lo > self.max || f(lo) != k {
            return None;
        }
        let hi = if k == i64::MAX { self.max } else { first_at_least(k + 1) - 1 };
        Some((lo, hi))
    }

    /// Parses a decimal literal into a value of this spec.
    pub fn parse_value(&self, text: &str) -> Result<Value, ArithError> {
        let bad = || ArithError::BadLiteral(text.to_string());
        let t = text.trim();
        let (neg, digits) = match t.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, t.strip_prefix('+').unwrap_or(t)),
        };
        let (int_part, frac_part) = digits.split_once('.').unwrap_or((digits, ""));
        if int_part.is_empty() && frac_part.is_empty()
            || !int_part.bytes().all(|b| b.is_ascii_digit())
            || !frac_part.bytes().all(|b| b.is_ascii_digit())
        {
            return Err(bad());
        }
        let d = self.frac_decimals() as usize;
        let frac_trimmed = frac_part.trim_end_matches('0');
        if frac_trimmed.len() > d {
            return Err(ArithError::OutOfRange(text.to_string(), *self));
        }
        let mut scaled = String::from(int_part);
        scaled.push_str(frac_trimmed);
        scaled.extend(std::iter::repeat_n('0', d - frac_trimmed.len()));
        let scaled = scaled.trim_start_matches('0');
        let magnitude: i128 = if scaled.is_empty() {
            0
        } else if scaled.len() > 30 {
            return Err(ArithError::OutOfRange(text.to_string(), *self));
        } else {
            scaled.parse().map_err(|_| bad())?
        };
        let payload = if neg { -magnitude } else { magnitude };
        if payload.abs() > self.max as i128 {
            return Err(ArithError::OutOfRange(text.to_string(), *self));
        }
        Ok(Value { payload: payload as i64, spec: *self })
    }

    /// Canonical decimal rendering of a payload.
    pub fn format_payload(&self, payload: i64) -> String {
        let d = self.frac_decimals() as usize;
        if d == 0 {
            return payload.to_string();
        }
        let sign = if payload < 0 { "-" } else { "" };
        let mag = payload.unsigned_abs();
        let scale = self.scale as u64;
        format!("{sign}{}.{:0d$}", mag / scale, mag % scale)
    }
}

impl fmt::Display for ArithmeticSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            ArithKind::SatInt { range } => write!(f, "satint:{range}"),
            ArithKind::FixedPoint { total_bits, frac_decimals } => {
                write!(f, "fixed:{total_bits}:{frac_decimals}")
            }
        }
    }
}

impl FromStr for ArithmeticSpec {
    type Err = ArithError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let invalid = |why| ArithError::InvalidSpec(s.to_string(), why);
        let parts: Vec<&str> = s.trim().split(':').collect();
        match parts.as_slice() {
            ["satint", a] => Self::sat_int(a.parse().map_err(|_| invalid("range is not an integer"))?),
            ["fixed", b, d] => Self::fixed_point(
                b.parse().map_err(|_| invalid("bit count is not an integer"))?,
                d.parse().map_err(|_| invalid("decimal count is not an integer"))?,
            ),
            _ => Err(invalid("expected satint:<a> or fixed:<bits>:<decimals>")),
        }
    }
}

/// Exact quotient rounded to nearest, ties away from zero.
fn round_div(n: i128, d: i128) -> i128 {
    debug_assert!(d > 0);
    let q = (2 * n.abs() + d) / (2 * d);
    if n < 0 {
        -q
    } else {
        q
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Activation {
    Relu,
    TruncRelu,
    Id,
}

impl Activation {
    pub fn name(&self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::TruncRelu => "truncrelu",
            Activation::Id => "id",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = ArithError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "relu" | "ReLU" => Ok(Activation::Relu),
            "truncrelu" => Ok(Activation::TruncRelu),
            "id" | "Id" => Ok(Activation::Id),
            other => Err(ArithError::UnknownActivation(other.to_string())),
        }
    }
}

/// An element of a finite number set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Value {
    payload: i64,
    spec: ArithmeticSpec,
}

impl Value {
    pub fn payload(&self) -> i64 {
        self.payload
    }

    pub fn spec(&self) -> ArithmeticSpec {
        self.spec
    }

    fn same_spec(&self, other: &Value) -> Result<ArithmeticSpec, ArithError> {
        if self.spec == other.spec {
            Ok(self.spec)
        } else {
            Err(ArithError::SpecMismatch(self.spec, other.spec))
        }
    }

    fn with(&self, payload: i64) -> Value {
        Value { payload, spec: self.spec }
    }

    pub fn add(&self, other: &Value) -> Result<Value, ArithError> {
        let s = self.same_spec(other)?;
        Ok(self.with(s.add_p(self.payload, other.payload)))
    }

    pub fn mul(&self, other: &Value) -> Result<Value, ArithError> {
        let s = self.same_spec(other)?;
        Ok(self.with(s.mul_p(self.payload, other.payload)))
    }

    pub fn div(&self, m: u64) -> Result<Value, ArithError> {
        if m == 0 {
            return Err(ArithError::DivisionByZero);
        }
        Ok(self.with(self.spec.div_p(self.payload, m)))
    }

    pub fn compare(&self, other: &Value) -> Result<Ordering, ArithError> {
        self.same_spec(other)?;
        Ok(self.payload.cmp(&other.payload))
    }

    pub fn neg(&self) -> Value {
        self.with(-self.payload)
    }

    pub fn activate(&self, act: Activation) -> Value {
        self.with(self.spec.act_p(act, self.payload))
    }

    /// Pairs `(k1, k2)` with `k1 + k2 = self`, ordered by `k1` then `k2`.
    pub fn add_inverses(&self) -> impl Iterator<Item = (Value, Value)> + '_ {
        let spec = self.spec;
        let k = self.payload;
        (-spec.max..=spec.max).flat_map(move |k1| {
            let range = spec.add_partner_range(k1, k);
            let k1 = Value { payload: k1, spec };
            range
                .into_iter()
                .flat_map(|(lo, hi)| lo..=hi)
                .map(move |k2| (k1, Value { payload: k2, spec }))
        })
    }

    /// Values `v` with `c * v = self`, ascending.
    pub fn mul_inverses(&self, c: &Value) -> Result<impl Iterator<Item = Value>, ArithError> {
        let spec = self.same_spec(c)?;
        let range = spec.mul_inverse_range(c.payload, self.payload);
        Ok(interval_values(spec, range))
    }

    /// Values `v` with `act(v) = self`, ascending.
    pub fn act_inverses(&self, act: Activation) -> impl Iterator<Item = Value> {
        interval_values(self.spec, self.spec.act_inverse_range(act, self.payload))
    }

    /// Values `>= self`, ascending from `self`.
    pub fn values_geq(&self) -> impl Iterator<Item = Value> {
        interval_values(self.spec, Some((self.payload, self.spec.max)))
    }

    /// Values `< self`, descending from the predecessor of `self`.
    pub fn values_lt(&self) -> impl Iterator<Item = Value> {
        let spec = self.spec;
        (-spec.max..self.payload).rev().map(move |payload| Value { payload, spec })
    }
}

fn interval_values(spec: ArithmeticSpec, range: Option<(i64, i64)>) -> impl Iterator<Item = Value> {
    range
        .into_iter()
        .flat_map(|(lo, hi)| lo..=hi)
        .map(move |payload| Value { payload, spec })
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.spec.format_payload(self.payload))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn sat(a: i64) -> ArithmeticSpec {
        ArithmeticSpec::sat_int(a).unwrap()
    }

    fn fx(b: u32, d: u32) -> ArithmeticSpec {
        ArithmeticSpec::fixed_point(b, d).unwrap()
    }

    fn v(spec: ArithmeticSpec, text: &str) -> Value {
        spec.parse_value(text).unwrap()
    }

    #[test]
    fn spec_strings_round_trip() {
        for s in ["satint:7", "fixed:32:4", "fixed:16:1"] {
            assert_eq!(s.parse::<ArithmeticSpec>().unwrap().to_string(), s);
        }
        assert!("fixed:4:2".parse::<ArithmeticSpec>().is_err());
        assert!("satint:0".parse::<ArithmeticSpec>().is_err());
        assert!("float:32".parse::<ArithmeticSpec>().is_err());
    }

    #[test]
    fn bit_widths() {
        assert_eq!(sat(7).bit_width(), 4);
        assert_eq!(sat(8).bit_width(), 5);
        assert_eq!(sat(1).bit_width(), 2);
        assert_eq!(fx(32, 4).bit_width(), 32);
    }

    #[test]
    fn saturating_add_examples() {
        let s = sat(10);
        assert_eq!(v(s, "7").add(&v(s, "5")).unwrap(), v(s, "10"));
        let f = fx(32, 4);
        assert_eq!(v(f, "0.8").add(&v(f, "-0.8")).unwrap(), f.zero());
        for k in s.values() {
            assert_eq!(s.zero().add(&k).unwrap(), k);
        }
    }

    #[test]
    fn mul_examples() {
        let f = fx(32, 4);
        assert_eq!(v(f, "0.0080").mul(&v(f, "100")).unwrap(), v(f, "0.8"));
        let s = sat(10);
        assert_eq!(v(s, "3").mul(&v(s, "4")).unwrap(), v(s, "10"));
        for k in s.values() {
            assert_eq!(s.one().mul(&k).unwrap(), k);
        }
        // 0.25 * 0.5 = 0.125 -> ties away from zero at one decimal
        let g = fx(16, 2);
        assert_eq!(v(g, "0.25").mul(&v(g, "0.5")).unwrap(), v(g, "0.13"));
        assert_eq!(v(g, "-0.25").mul(&v(g, "0.5")).unwrap(), v(g, "-0.13"));
    }

    #[test]
    fn div_examples() {
        let s = sat(10);
        assert_eq!(v(s, "7").div(2).unwrap(), v(s, "4"));
        assert_eq!(v(s, "-7").div(2).unwrap(), v(s, "-4"));
        assert_eq!(v(s, "7").div(0), Err(ArithError::DivisionByZero));
        let f = fx(32, 4);
        assert_eq!(f.one().div(4).unwrap(), v(f, "0.25"));
        for k in s.values() {
            assert_eq!(k.div(1).unwrap(), k);
        }
    }

    #[test]
    fn compare_examples() {
        let f = fx(32, 4);
        assert_eq!(v(f, "0.8").compare(&v(f, "0.9")).unwrap(), Ordering::Less);
        assert_eq!(v(f, "0.8").compare(&v(f, "0.8")).unwrap(), Ordering::Equal);
        let s = sat(2);
        assert_eq!(v(s, "-2").compare(&v(s, "2")).unwrap(), Ordering::Less);
        assert!(matches!(v(s, "1").compare(&sat(3).one()), Err(ArithError::SpecMismatch(..))));
    }

    #[test]
    fn activation_examples() {
        let f = fx(32, 4);
        assert_eq!(v(f, "-0.5").activate(Activation::Relu), f.zero());
        assert_eq!(v(f, "0.8").activate(Activation::Relu), v(f, "0.8"));
        let s = sat(5);
        assert_eq!(v(s, "3").activate(Activation::TruncRelu), s.one());
        assert_eq!(v(s, "-3").activate(Activation::Id), v(s, "-3"));
        assert!("sigmoid".parse::<Activation>().is_err());
    }

    #[test]
    fn literal_parsing_and_printing() {
        let f = fx(32, 4);
        assert_eq!(v(f, "250").payload(), 2_500_000);
        assert_eq!(v(f, "1000").payload(), 10_000_000);
        assert_eq!(v(f, "0.008").payload(), 80);
        assert_eq!(f.zero().to_string(), "0.0000");
        assert_eq!(v(f, "-0.05").to_string(), "-0.0500");
        assert!(matches!(f.parse_value("0.00001"), Err(ArithError::OutOfRange(..))));
        assert!(matches!(sat(7).parse_value("8"), Err(ArithError::OutOfRange(..))));
        assert!(matches!(sat(7).parse_value("1.5"), Err(ArithError::OutOfRange(..))));
        assert_eq!(sat(7).parse_value("3.0").unwrap().payload(), 3);
        assert!(matches!(sat(7).parse_value("1x"), Err(ArithError::BadLiteral(..))));
        assert!(matches!(sat(7).parse_value("-"), Err(ArithError::BadLiteral(..))));
    }

    #[test]
    fn add_inverse_examples() {
        let s = sat(2);
        let zero: Vec<_> = s.zero().add_inverses().map(|(a, b)| (a.payload(), b.payload())).collect();
        assert_eq!(zero, vec![(-2, 2), (-1, 1), (0, 0), (1, -1), (2, -2)]);
        let two: BTreeSet<_> = v(s, "2").add_inverses().map(|(a, b)| (a.payload(), b.payload())).collect();
        for pair in [(0, 2), (1, 1), (1, 2), (2, 2)] {
            assert!(two.contains(&pair));
        }
        let f = fx(16, 1);
        let k = v(f, "3.3");
        assert!(k.add_inverses().any(|(a, b)| a == f.zero() && b == k));
    }

    #[test]
    fn other_inverse_examples() {
        let s = sat(2);
        let relu0: Vec<_> = s.zero().act_inverses(Activation::Relu).map(|x| x.payload()).collect();
        assert_eq!(relu0, vec![-2, -1, 0]);
        let f = fx(32, 4);
        let inv: Vec<_> = v(f, "-0.8").mul_inverses(&f.minus_one()).unwrap().collect();
        assert_eq!(inv, vec![v(f, "0.8")]);
        let mut geq = v(f, "100").values_geq();
        assert_eq!(geq.next(), Some(v(f, "100")));
        assert_eq!(geq.next(), Some(v(f, "100.0001")));
        let mut lt = v(f, "0.9").values_lt();
        assert_eq!(lt.next(), Some(v(f, "0.8999")));
    }

    fn all_specs_small() -> Vec<ArithmeticSpec> {
        (1..=4).map(sat).chain([fx(4, 0), fx(5, 1)]).collect()
    }

    #[test]
    fn closure_and_clamp_law_exhaustive() {
        for s in all_specs_small() {
            for a in s.values() {
                for b in s.values() {
                    let sum = a.add(&b).unwrap();
                    let exact = a.payload() + b.payload();
                    assert_eq!(sum.payload(), exact.clamp(-s.max_payload(), s.max_payload()));
                    assert!(s.contains(a.mul(&b).unwrap().payload()));
                    assert_eq!(sum, b.add(&a).unwrap());
                }
                for m in 1..=5 {
                    assert!(s.contains(a.div(m).unwrap().payload()));
                }
            }
        }
    }

    #[test]
    fn add_is_monotone_exhaustive() {
        for s in all_specs_small() {
            for a in s.values() {
                for b in s.values().filter(|b| b.payload() >= a.payload()) {
                    for c in s.values() {
                        assert!(a.add(&c).unwrap().payload() <= b.add(&c).unwrap().payload());
                    }
                }
            }
        }
    }

    #[test]
    fn inverse_completeness_exhaustive() {
        for s in (1..=3).map(sat).chain([fx(5, 1)]) {
            for k in s.values() {
                let expected: BTreeSet<_> = s
                    .values()
                    .flat_map(|a| s.values().map(move |b| (a, b)))
                    .filter(|(a, b)| a.add(b).unwrap() == k)
                    .map(|(a, b)| (a.payload(), b.payload()))
                    .collect();
                let got: Vec<_> = k.add_inverses().map(|(a, b)| (a.payload(), b.payload())).collect();
                assert_eq!(got.len(), expected.len());
                assert_eq!(got.iter().copied().collect::<BTreeSet<_>>(), expected);
                for c in s.values() {
                    let want: Vec<_> = s.values().filter(|x| c.mul(x).unwrap() == k).collect();
                    assert_eq!(k.mul_inverses(&c).unwrap().collect::<Vec<_>>(), want);
                }
                for act in [Activation::Relu, Activation::TruncRelu, Activation::Id] {
                    let want: Vec<_> = s.values().filter(|x| x.activate(act) == k).collect();
                    assert_eq!(k.act_inverses(act).collect::<Vec<_>>(), want);
                }
                let geq: Vec<_> = s.values().filter(|x| x.payload() >= k.payload()).collect();
                assert_eq!(k.values_geq().collect::<Vec<_>>(), geq);
                let lt: Vec<_> = s.values().rev().filter(|x| x.payload() < k.payload()).collect();
                assert_eq!(k.values_lt().collect::<Vec<_>>(), lt);
            }
        }
    }

    fn trunc_via_relu(x: Value) -> Value {
        let s = x.spec();
        let r = |v: Value| v.activate(Activation::Relu);
        let shifted = r(x.add(&s.minus_one()).unwrap());
        r(r(x).add(&s.minus_one().mul(&shifted).unwrap()).unwrap())
    }

    #[test]
    fn truncrelu_identity_exhaustive() {
        for s in [sat(8), fx(16, 1)] {
            for x in s.values() {
                assert_eq!(x.activate(Activation::TruncRelu), trunc_via_relu(x), "at {x}");
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn fixed_spec() -> impl Strategy<Value = ArithmeticSpec> {
            (8u32..=40, 0u32..=3).prop_filter_map("representable one", |(b, d)| ArithmeticSpec::fixed_point(b, d).ok())
        }

        proptest! {
            #[test]
            fn fixed_point_closure(spec in fixed_spec(), a in any::<i64>(), b in any::<i64>(), m in 1u64..1000) {
                let a = spec.value(a.rem_euclid(spec.cardinality() as i64) - spec.max_payload()).unwrap();
                let b = spec.value(b.rem_euclid(spec.cardinality() as i64) - spec.max_payload()).unwrap();
                prop_assert!(spec.contains(a.add(&b).unwrap().payload()));
                prop_assert!(spec.contains(a.mul(&b).unwrap().payload()));
                prop_assert!(spec.contains(a.div(m).unwrap().payload()));
                let exact = a.payload() as i128 + b.payload() as i128;
                prop_assert_eq!(a.add(&b).unwrap().payload(), spec.clamp(exact));
            }

            #[test]
            fn mul_inverse_range_is_exact(spec in fixed_spec(), c in any::<i64>(), x in any::<i64>()) {
                let card = spec.cardinality() as i64;
                let c = c.rem_euclid(card) - spec.max_payload();
                let x = x.rem_euclid(card) - spec.max_payload();
                let k = spec.mul_p(c, x);
                let (lo, hi) = spec.mul_inverse_range(c, k).unwrap();
                prop_assert!(lo <= x && x <= hi);
                prop_assert_eq!(spec.mul_p(c, lo), k);
                prop_assert_eq!(spec.mul_p(c, hi), k);
                if lo > -spec.max_payload() { prop_assert_ne!(spec.mul_p(c, lo - 1), k); }
                if hi < spec.max_payload() { prop_assert_ne!(spec.mul_p(c, hi + 1), k); }
            }
        }
    }
}
