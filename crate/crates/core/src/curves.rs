//! Exact min-plus piecewise-linear curves.
//!
//! A [`PwlCurve`] is a continuous function on `[0, ∞)` given by a list of
//! breakpoints `(x, y)` (x in seconds, y in bits) joined by straight
//! segments, followed by an unbounded ray of slope `tail_slope`. Every
//! arrival and service curve used by the analysis is of this form.
//!
//! All operations are exact over [`Q`] and return normalized curves
//! (no collinear interior breakpoints).

use std::fmt;

use num_traits::{Signed, Zero};
use thiserror::Error;

use crate::rational::{zero, Q};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CurveError {
    #[error("curve parameter `{0}` must be non-negative")]
    Negative(&'static str),
    #[error("service rate must be positive")]
    NonPositiveRate,
    #[error("curve needs at least one breakpoint starting at x = 0")]
    BadOrigin,
    #[error("breakpoint abscissae must be strictly increasing")]
    NotIncreasing,
    #[error("curve must be non-negative and non-decreasing")]
    NotMonotone,
}

/// Result of a horizontal or vertical deviation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Deviation {
    Finite(Q),
    Unbounded,
}

impl Deviation {
    pub fn finite(&self) -> Option<&Q> {
        match self {
            Deviation::Finite(v) => Some(v),
            Deviation::Unbounded => None,
        }
    }

    pub fn is_unbounded(&self) -> bool {
        matches!(self, Deviation::Unbounded)
    }
}

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct PwlCurve {
    points: Vec<(Q, Q)>,
    tail_slope: Q,
}

impl fmt::Debug for PwlCurve {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PwlCurve[")?;
        for (x, y) in &self.points {
            write!(f, "({x}, {y}) ")?;
        }
        write!(f, "tail {}]", self.tail_slope)
    }
}

impl PwlCurve {
    /// Build a curve from breakpoints, checking every invariant.
    pub fn new(points: Vec<(Q, Q)>, tail_slope: Q) -> Result<Self, CurveError> {
        check_shape(&points)?;
        let curve = Raw { points, tail: tail_slope };
        if !curve.is_monotone_non_negative() {
            return Err(CurveError::NotMonotone);
        }
        Ok(curve.into_curve())
    }

    pub fn zero() -> Self {
        PwlCurve { points: vec![(zero(), zero())], tail_slope: zero() }
    }

    /// `t ↦ r·t + b`.
    pub fn leaky_bucket(rate: Q, burst: Q) -> Result<Self, CurveError> {
        if rate.is_negative() {
            return Err(CurveError::Negative("rate"));
        }
        if burst.is_negative() {
            return Err(CurveError::Negative("burst"));
        }
        Ok(PwlCurve { points: vec![(zero(), burst)], tail_slope: rate })
    }

    /// `t ↦ R·[t − T]⁺`.
    pub fn rate_latency(rate: Q, latency: Q) -> Result<Self, CurveError> {
        if !rate.is_positive() {
            return Err(CurveError::NonPositiveRate);
        }
        if latency.is_negative() {
            return Err(CurveError::Negative("latency"));
        }
        if latency.is_zero() {
            return Ok(PwlCurve { points: vec![(zero(), zero())], tail_slope: rate });
        }
        Ok(PwlCurve { points: vec![(zero(), zero()), (latency, zero())], tail_slope: rate })
    }

    pub fn points(&self) -> &[(Q, Q)] {
        &self.points
    }

    pub fn tail_slope(&self) -> &Q {
        &self.tail_slope
    }

    /// Long-run slope of the curve.
    pub fn long_run_rate(&self) -> &Q {
        &self.tail_slope
    }

    pub fn value_at_zero(&self) -> &Q {
        &self.points[0].1
    }

    pub fn eval(&self, t: &Q) -> Q {
        self.as_raw().eval(t)
    }

    /// Slope of the segment starting at each breakpoint, then the tail.
    pub fn segment_slopes(&self) -> Vec<Q> {
        let raw = self.as_raw();
        (0..self.points.len()).map(|i| raw.slope_after(i)).collect()
    }

    pub fn is_zero(&self) -> bool {
        self.points.len() == 1 && self.points[0].1.is_zero() && self.tail_slope.is_zero()
    }

    /// Pointwise sum of a non-empty list.
    pub fn sum(curves: &[PwlCurve]) -> PwlCurve {
        let mut iter = curves.iter();
        let first = match iter.next() {
            Some(c) => c.clone(),
            None => return PwlCurve::zero(),
        };
        iter.fold(first, |acc, c| acc.add(c))
    }

    pub fn add(&self, other: &PwlCurve) -> PwlCurve {
        self.as_raw().add(&other.as_raw()).into_curve()
    }

    pub fn min_of(&self, other: &PwlCurve) -> PwlCurve {
        self.as_raw().min(&other.as_raw()).into_curve()
    }

    /// `t ↦ f(t + d)` for `d >= 0`.
    pub fn shift_left(&self, d: &Q) -> PwlCurve {
        assert!(!d.is_negative(), "shift must be non-negative");
        self.as_raw().shift_left(d).into_curve()
    }

    /// `t ↦ f(t − d)` for `t >= d`, `f(0)` before: a pure delay.
    pub fn shift_right(&self, d: &Q) -> PwlCurve {
        assert!(!d.is_negative(), "shift must be non-negative");
        if d.is_zero() {
            return self.clone();
        }
        let mut points = vec![(zero(), self.points[0].1.clone())];
        points.extend(self.points.iter().map(|(x, y)| (x + d, y.clone())));
        Raw { points, tail: self.tail_slope.clone() }.into_curve()
    }

    /// `(beta − Σ alphas − c)↑`, the non-decreasing non-negative closure.
    pub fn subtract_and_close(beta: &PwlCurve, alphas: &[PwlCurve], c: &Q) -> PwlCurve {
        let mut raw = beta.as_raw();
        for alpha in alphas {
            raw = raw.add(&alpha.as_raw().negate());
        }
        raw = raw.offset(&-c.clone());
        raw.closure().into_curve()
    }

    /// Horizontal deviation: worst-case delay of `alpha` through `beta`.
    pub fn h_dev(alpha: &PwlCurve, beta: &PwlCurve) -> Deviation {
        let a_tail = &alpha.tail_slope;
        let b_tail = &beta.tail_slope;
        if a_tail > b_tail {
            return Deviation::Unbounded;
        }
        let araw = alpha.as_raw();
        let mut candidates: Vec<Q> = alpha.points.iter().map(|(x, _)| x.clone()).collect();
        for (_, level) in &beta.points {
            candidates.extend(araw.solve(level));
        }
        let mut best: Option<Q> = None;
        for t in candidates {
            let value = araw.eval(&t);
            let reach = match beta.upper_inverse(&value) {
                Some(s) => s,
                None => return Deviation::Unbounded,
            };
            let h = reach - &t;
            if best.as_ref().is_none_or(|b| &h > b) {
                best = Some(h);
            }
        }
        // Beyond every candidate both maps are affine and tail(α) <= tail(β),
        // so the gap is non-increasing there.
        let best = best.unwrap_or_else(zero);
        Deviation::Finite(if best.is_negative() { zero() } else { best })
    }

    /// Vertical deviation: worst-case backlog of `alpha` through `beta`.
    pub fn v_dev(alpha: &PwlCurve, beta: &PwlCurve) -> Deviation {
        if alpha.tail_slope > beta.tail_slope {
            return Deviation::Unbounded;
        }
        let araw = alpha.as_raw();
        let braw = beta.as_raw();
        let xs = merge_xs(&araw, &braw);
        let best = xs
            .iter()
            .map(|x| araw.eval(x) - braw.eval(x))
            .max()
            .unwrap_or_else(zero);
        Deviation::Finite(if best.is_negative() { zero() } else { best })
    }

    /// `sup { s : self(s) <= y }`, or `None` if the curve never exceeds `y`.
    pub fn upper_inverse(&self, y: &Q) -> Option<Q> {
        let raw = self.as_raw();
        let (x_last, y_last) = self.points.last().expect("non-empty");
        if y >= y_last {
            if self.tail_slope.is_positive() {
                return Some(x_last + (y - y_last) / &self.tail_slope);
            }
            return None;
        }
        if y < &self.points[0].1 {
            return Some(zero());
        }
        // Last breakpoint with value <= y; the next one is strictly above.
        let idx = self.points.iter().rposition(|(_, v)| v <= y).expect("y >= f(0)");
        let (x0, y0) = &self.points[idx];
        let slope = raw.slope_after(idx);
        Some(x0 + (y - y0) / slope)
    }

    /// Breakpoints as CSV lines `t,y` (seconds, bits), tail slope last.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t_s,y_bits\n");
        for (x, y) in &self.points {
            out.push_str(&format!("{},{}\n", crate::rational::to_f64(x), crate::rational::to_f64(y)));
        }
        out.push_str(&format!("# tail_slope_bps,{}\n", crate::rational::to_f64(&self.tail_slope)));
        out
    }

    fn as_raw(&self) -> Raw {
        Raw { points: self.points.clone(), tail: self.tail_slope.clone() }
    }
}

fn check_shape(points: &[(Q, Q)]) -> Result<(), CurveError> {
    match points.first() {
        Some((x, _)) if x.is_zero() => {}
        _ => return Err(CurveError::BadOrigin),
    }
    if points.windows(2).any(|w| w[0].0 >= w[1].0) {
        return Err(CurveError::NotIncreasing);
    }
    Ok(())
}

/// Unconstrained piecewise-linear function used for intermediate results.
#[derive(Clone, Debug)]
struct Raw {
    points: Vec<(Q, Q)>,
    tail: Q,
}

impl Raw {
    fn slope_after(&self, i: usize) -> Q {
        if i + 1 < self.points.len() {
            let (x0, y0) = &self.points[i];
            let (x1, y1) = &self.points[i + 1];
            (y1 - y0) / (x1 - x0)
        } else {
            self.tail.clone()
        }
    }

    fn eval(&self, t: &Q) -> Q {
        let idx = match self.points.binary_search_by(|(x, _)| x.cmp(t)) {
            Ok(i) => return self.points[i].1.clone(),
            Err(0) => 0,
            Err(i) => i - 1,
        };
        let (x0, y0) = &self.points[idx];
        y0 + self.slope_after(idx) * (t - x0)
    }

    fn is_monotone_non_negative(&self) -> bool {
        if self.points[0].1.is_negative() || self.tail.is_negative() {
            return false;
        }
        self.points.windows(2).all(|w| w[1].1 >= w[0].1)
    }

    fn negate(&self) -> Raw {
        Raw {
            points: self.points.iter().map(|(x, y)| (x.clone(), -y.clone())).collect(),
            tail: -self.tail.clone(),
        }
    }

    fn offset(&self, c: &Q) -> Raw {
        Raw {
            points: self.points.iter().map(|(x, y)| (x.clone(), y + c)).collect(),
            tail: self.tail.clone(),
        }
    }

    fn add(&self, other: &Raw) -> Raw {
        let xs = merge_xs(self, other);
        let points = xs.into_iter().map(|x| {
            let y = self.eval(&x) + other.eval(&x);
            (x, y)
        });
        Raw { points: points.collect(), tail: &self.tail + &other.tail }.normalized()
    }

    fn min(&self, other: &Raw) -> Raw {
        let mut xs = merge_xs(self, other);
        let mut crossings = Vec::new();
        for w in xs.windows(2) {
            let d0 = self.eval(&w[0]) - other.eval(&w[0]);
            let d1 = self.eval(&w[1]) - other.eval(&w[1]);
            if (d0.is_positive() && d1.is_negative()) || (d0.is_negative() && d1.is_positive()) {
                // linear on [w0, w1]: root of d
                let t = &w[0] + (&w[1] - &w[0]) * (&d0 / (&d0 - &d1));
                crossings.push(t);
            }
        }
        let last = xs.last().expect("non-empty").clone();
        let d_last = self.eval(&last) - other.eval(&last);
        let dslope = &self.tail - &other.tail;
        if (d_last.is_positive() && dslope.is_negative()) || (d_last.is_negative() && dslope.is_positive()) {
            crossings.push(&last + (-&d_last) / &dslope);
        }
        xs.extend(crossings);
        xs.sort();
        xs.dedup();
        let last = xs.last().expect("non-empty").clone();
        let a_last = self.eval(&last);
        let b_last = other.eval(&last);
        let tail = if a_last < b_last {
            self.tail.clone()
        } else if a_last > b_last {
            other.tail.clone()
        } else {
            std::cmp::min(self.tail.clone(), other.tail.clone())
        };
        let points = xs.into_iter().map(|x| {
            let y = std::cmp::min(self.eval(&x), other.eval(&x));
            (x, y)
        });
        Raw { points: points.collect(), tail }.normalized()
    }

    fn shift_left(&self, d: &Q) -> Raw {
        if d.is_zero() {
            return self.clone();
        }
        let mut points = vec![(zero(), self.eval(d))];
        points.extend(self.points.iter().filter(|(x, _)| x > d).map(|(x, y)| (x - d, y.clone())));
        Raw { points, tail: self.tail.clone() }.normalized()
    }

    /// Values of `t` where this (non-decreasing) function equals `level`,
    /// restricted to strictly increasing pieces.
    fn solve(&self, level: &Q) -> Vec<Q> {
        let mut out = Vec::new();
        for i in 0..self.points.len() {
            let slope = self.slope_after(i);
            if !slope.is_positive() {
                continue;
            }
            let (x0, y0) = &self.points[i];
            if level < y0 {
                continue;
            }
            let t = x0 + (level - y0) / &slope;
            let in_piece = i + 1 >= self.points.len() || t <= self.points[i + 1].0;
            if in_piece {
                out.push(t);
            }
        }
        out
    }

    /// `max{0, sup_{s<=t} g(s)}`.
    fn closure(&self) -> Raw {
        let mut running = std::cmp::max(zero(), self.points[0].1.clone());
        let mut out = vec![(zero(), running.clone())];
        for i in 0..self.points.len() - 1 {
            let (x0, y0) = &self.points[i];
            let (x1, y1) = &self.points[i + 1];
            if y1 > &running {
                if y0 < &running {
                    let slope = (y1 - y0) / (x1 - x0);
                    let xc = x0 + (&running - y0) / slope;
                    out.push((xc, running.clone()));
                }
                out.push((x1.clone(), y1.clone()));
                running = y1.clone();
            } else {
                out.push((x1.clone(), running.clone()));
            }
        }
        let (x_last, y_last) = self.points.last().expect("non-empty");
        let tail = if self.tail.is_positive() {
            if y_last < &running {
                let xc = x_last + (&running - y_last) / &self.tail;
                out.push((xc, running.clone()));
            }
            self.tail.clone()
        } else {
            zero()
        };
        dedup_x(&mut out);
        Raw { points: out, tail }.normalized()
    }

    fn normalized(mut self) -> Raw {
        dedup_x(&mut self.points);
        let mut slopes: Vec<Q> = (0..self.points.len()).map(|i| self.slope_after(i)).collect();
        let mut i = 1;
        while i < self.points.len() {
            if slopes[i] == slopes[i - 1] {
                self.points.remove(i);
                slopes.remove(i);
            } else {
                i += 1;
            }
        }
        self
    }

    fn into_curve(self) -> PwlCurve {
        let raw = self.normalized();
        PwlCurve { points: raw.points, tail_slope: raw.tail }
    }
}

fn dedup_x(points: &mut Vec<(Q, Q)>) {
    points.dedup_by(|b, a| a.0 == b.0);
}

fn merge_xs(a: &Raw, b: &Raw) -> Vec<Q> {
    let mut xs: Vec<Q> = a.points.iter().chain(b.points.iter()).map(|(x, _)| x.clone()).collect();
    xs.sort();
    xs.dedup();
    xs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::{q, ratio};

    fn lb(r: i64, b: i64) -> PwlCurve {
        PwlCurve::leaky_bucket(q(r), q(b)).unwrap()
    }

    #[test]
    fn leaky_bucket_values() {
        let c = PwlCurve::leaky_bucket(q(14_400_000), q(14_400)).unwrap();
        assert_eq!(c.eval(&zero()), q(14_400));
        assert_eq!(c.eval(&ratio(1, 1000)), q(28_800));
        let c = PwlCurve::leaky_bucket(q(1_000_000), q(1000)).unwrap();
        assert_eq!(c.eval(&ratio(2, 1000)), q(3000));
        assert!(PwlCurve::leaky_bucket(zero(), zero()).unwrap().is_zero());
        assert!(PwlCurve::leaky_bucket(q(-1), zero()).is_err());
        assert!(PwlCurve::leaky_bucket(q(1), q(-1)).is_err());
    }

    #[test]
    fn rate_latency_values() {
        let full = PwlCurve::rate_latency(q(100_000_000), zero()).unwrap();
        assert_eq!(full.eval(&ratio(1, 1_000_000)), q(100));
        let c = PwlCurve::rate_latency(q(10_000_000), ratio(1, 10_000)).unwrap();
        assert_eq!(c.eval(&ratio(1, 10_000)), zero());
        assert_eq!(c.eval(&ratio(2, 10_000)), q(1000));
        assert!(PwlCurve::rate_latency(zero(), zero()).is_err());
    }

    #[test]
    fn sum_of_buckets_is_bucket() {
        let s = PwlCurve::sum(&[lb(3, 5), lb(4, 7)]);
        assert_eq!(s, lb(7, 12));
    }

    #[test]
    fn min_breaks_at_crossing() {
        // C·t vs r·t + b crosses at b/(C − r)
        let line = lb(10, 0);
        let bucket = lb(2, 16);
        let m = line.min_of(&bucket);
        assert_eq!(m.points(), &[(zero(), zero()), (q(2), q(20))]);
        assert_eq!(m.tail_slope(), &q(2));
        assert_eq!(bucket.min_of(&bucket), bucket);
    }

    #[test]
    fn subtract_and_close_single_bucket() {
        // (C t − (r t + b) − L)↑ = (C − r)[t − (b + L)/(C − r)]⁺
        let beta = lb(100, 0);
        let res = PwlCurve::subtract_and_close(&beta, &[lb(20, 300)], &q(100));
        assert_eq!(res, PwlCurve::rate_latency(q(80), ratio(400, 80)).unwrap());
        let same = PwlCurve::subtract_and_close(&beta, &[], &zero());
        assert_eq!(same, beta);
        let starved = PwlCurve::subtract_and_close(&beta, &[lb(100, 5)], &zero());
        assert!(starved.is_zero());
    }

    #[test]
    fn closure_of_dip_is_flat() {
        // g rises to 10 at t=1, falls to 4 at t=2, rises with slope 3 after.
        let raw = Raw {
            points: vec![(zero(), zero()), (q(1), q(10)), (q(2), q(4))],
            tail: q(3),
        };
        let c = raw.closure().into_curve();
        assert_eq!(c.points(), &[(zero(), zero()), (q(1), q(10)), (q(4), q(10))]);
        assert_eq!(c.tail_slope(), &q(3));
    }

    #[test]
    fn deviations_closed_form() {
        let alpha = lb(3, 12);
        let beta = PwlCurve::rate_latency(q(6), q(2)).unwrap();
        assert_eq!(PwlCurve::h_dev(&alpha, &beta), Deviation::Finite(q(4)));
        assert_eq!(PwlCurve::v_dev(&alpha, &beta), Deviation::Finite(q(18)));
        let fast = lb(7, 1);
        assert_eq!(PwlCurve::h_dev(&fast, &beta), Deviation::Unbounded);
        assert_eq!(PwlCurve::v_dev(&fast, &beta), Deviation::Unbounded);
        assert_eq!(PwlCurve::v_dev(&alpha, &alpha), Deviation::Finite(zero()));
    }

    #[test]
    fn h_dev_of_shift_is_shift() {
        let f = lb(5, 0).min_of(&lb(1, 8));
        let g = f.shift_right(&ratio(3, 2));
        assert_eq!(PwlCurve::h_dev(&f, &g), Deviation::Finite(ratio(3, 2)));
    }

    #[test]
    fn h_dev_against_zero_service_is_unbounded() {
        let alpha = lb(0, 3);
        assert_eq!(PwlCurve::h_dev(&alpha, &PwlCurve::zero()), Deviation::Unbounded);
    }

    #[test]
    fn new_rejects_bad_shapes() {
        assert_eq!(PwlCurve::new(vec![], zero()), Err(CurveError::BadOrigin));
        assert_eq!(
            PwlCurve::new(vec![(zero(), zero()), (zero(), q(1))], zero()),
            Err(CurveError::NotIncreasing)
        );
        assert_eq!(
            PwlCurve::new(vec![(zero(), q(2)), (q(1), q(1))], zero()),
            Err(CurveError::NotMonotone)
        );
    }

    #[test]
    fn shift_left_matches_pointwise() {
        let f = lb(10, 0).min_of(&lb(2, 16));
        let g = f.shift_left(&q(1));
        for t in [zero(), ratio(1, 2), q(1), q(3), q(9)] {
            assert_eq!(g.eval(&t), f.eval(&(&t + q(1))));
        }
    }
}
