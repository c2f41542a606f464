//! Sizing functions controlling triangle diameters by distance to the
//! boundary set: continuous, strictly increasing, with value 0 at 0.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SizingError {
    #[error("power law needs c > 0 and p >= 1, got c={c}, p={p}")]
    BadPowerLaw { c: f64, p: f64 },
    #[error("table must start at (0,0)")]
    TableOrigin,
    #[error("table must be strictly increasing in both coordinates at row {0}")]
    TableNotIncreasing(usize),
    #[error("table needs at least two knots")]
    TableTooShort,
    #[error("cannot parse sizing spec {0:?}")]
    Parse(String),
}

/// `eta(t) = c * t^p` or a strictly increasing piecewise-linear table through
/// the origin (extended linearly past the last knot).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum SizingFn {
    Power { c: f64, p: f64 },
    Table { knots: Vec<[f64; 2]> },
}

impl SizingFn {
    pub fn power(c: f64, p: f64) -> Result<Self, SizingError> {
        if !(c > 0.0) || !(p >= 1.0) {
            return Err(SizingError::BadPowerLaw { c, p });
        }
        Ok(SizingFn::Power { c, p })
    }

    pub fn table(knots: Vec<[f64; 2]>) -> Result<Self, SizingError> {
        if knots.len() < 2 {
            return Err(SizingError::TableTooShort);
        }
        if knots[0] != [0.0, 0.0] {
            return Err(SizingError::TableOrigin);
        }
        for i in 1..knots.len() {
            if !(knots[i][0] > knots[i - 1][0]) || !(knots[i][1] > knots[i - 1][1]) {
                return Err(SizingError::TableNotIncreasing(i));
            }
        }
        Ok(SizingFn::Table { knots })
    }

    pub fn eval(&self, t: f64) -> f64 {
        debug_assert!(t >= 0.0);
        match self {
            SizingFn::Power { c, p } => c * t.powf(*p),
            SizingFn::Table { knots } => {
                let last = knots.len() - 1;
                let seg = match knots.iter().position(|k| k[0] >= t) {
                    Some(0) => 1,
                    Some(i) => i,
                    None => last,
                };
                let (a, b) = (knots[seg - 1], knots[seg]);
                a[1] + (t - a[0]) * (b[1] - a[1]) / (b[0] - a[0])
            }
        }
    }

    /// Largest `t` with `eval(t) <= s`, by bisection (both forms are strictly
    /// increasing).
    pub fn inverse(&self, s: f64) -> f64 {
        debug_assert!(s >= 0.0);
        match self {
            SizingFn::Power { c, p } => (s / c).powf(1.0 / p),
            SizingFn::Table { .. } => {
                let mut hi = 1.0f64;
                while self.eval(hi) < s {
                    hi *= 2.0;
                }
                let mut lo = 0.0f64;
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if self.eval(mid) <= s {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                lo
            }
        }
    }

    /// Parse `pow:c=0.125,p=1` or `table:[[0,0],[1,0.5],...]`.
    pub fn parse(spec: &str) -> Result<Self, SizingError> {
        if let Some(rest) = spec.strip_prefix("pow:") {
            let mut c = None;
            let mut p = None;
            for part in rest.split(',') {
                let (k, v) = part
                    .split_once('=')
                    .ok_or_else(|| SizingError::Parse(spec.into()))?;
                let val: f64 = v.trim().parse().map_err(|_| SizingError::Parse(spec.into()))?;
                match k.trim() {
                    "c" => c = Some(val),
                    "p" => p = Some(val),
                    _ => return Err(SizingError::Parse(spec.into())),
                }
            }
            match (c, p) {
                (Some(c), Some(p)) => Self::power(c, p),
                _ => Err(SizingError::Parse(spec.into())),
            }
        } else if let Some(rest) = spec.strip_prefix("table:") {
            let knots: Vec<[f64; 2]> =
                serde_json::from_str(rest).map_err(|_| SizingError::Parse(spec.into()))?;
            Self::table(knots)
        } else {
            Err(SizingError::Parse(spec.into()))
        }
    }

    pub fn to_spec_string(&self) -> String {
        match self {
            SizingFn::Power { c, p } => format!("pow:c={c},p={p}"),
            SizingFn::Table { knots } => {
                format!("table:{}", serde_json::to_string(knots).unwrap())
            }
        }
    }
}
