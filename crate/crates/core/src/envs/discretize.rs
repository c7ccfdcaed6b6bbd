use serde::{Deserialize, Serialize};

use super::FeatureVector;
use crate::error::{Error, Result};

/// Discretized state identifier shared by the Q-table and every
/// confidence table.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateKey(pub Vec<u16>);

impl StateKey {
    pub fn bins(&self) -> &[u16] {
        &self.0
    }
}

impl std::fmt::Display for StateKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (i, b) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{b}")?;
        }
        Ok(())
    }
}

impl std::str::FromStr for StateKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.split_whitespace()
            .map(|t| {
                t.parse::<u16>()
                    .map_err(|e| Error::Invalid(format!("bad state key component `{t}`: {e}")))
            })
            .collect::<Result<Vec<_>>>()
            .map(StateKey)
    }
}

/// Uniform binning of one feature over a clipped range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DimSpec {
    pub lo: f64,
    pub hi: f64,
    pub bins: u16,
}

impl DimSpec {
    pub const fn new(lo: f64, hi: f64, bins: u16) -> Self {
        DimSpec { lo, hi, bins }
    }

    /// Unit-width bins for an integer-valued feature in `[min, max]`.
    pub fn integer(min: i32, max: i32) -> Self {
        DimSpec::new(f64::from(min) - 1.0, f64::from(max), (max - min + 1) as u16)
    }

    /// Bin `k` covers `(lo + k w, lo + (k+1) w]`, with the first bin also
    /// holding `lo` itself. Values outside `[lo, hi]` are clipped first, so
    /// a value sitting on an interior edge falls in the lower bin.
    pub fn bin(&self, v: f64) -> u16 {
        let clipped = v.clamp(self.lo, self.hi);
        let t = (clipped - self.lo) / (self.hi - self.lo) * f64::from(self.bins);
        let k = t.ceil() as i64 - 1;
        k.clamp(0, i64::from(self.bins) - 1) as u16
    }

    /// Closed-open bounds `(lower, upper]` of bin `k` in feature units.
    pub fn edges(&self, k: u16) -> (f64, f64) {
        let w = (self.hi - self.lo) / f64::from(self.bins);
        (self.lo + w * f64::from(k), self.lo + w * f64::from(k + 1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscretizerSpec {
    pub dims: Vec<DimSpec>,
}

impl DiscretizerSpec {
    pub fn new(dims: Vec<DimSpec>) -> Result<Self> {
        for (i, d) in dims.iter().enumerate() {
            if !(d.lo.is_finite() && d.hi.is_finite() && d.hi > d.lo) || d.bins == 0 {
                return Err(Error::Config(format!("dimension {i} has an invalid range or bin count")));
            }
        }
        Ok(DiscretizerSpec { dims })
    }

    /// x in [-2.4, 2.4], x_dot in [-3, 3], theta in [-12 deg, 12 deg],
    /// theta_dot in [-3.5, 3.5]; 8/8/10/8 bins.
    pub fn cartpole() -> Self {
        let theta = 12.0_f64.to_radians();
        DiscretizerSpec {
            dims: vec![
                DimSpec::new(-2.4, 2.4, 8),
                DimSpec::new(-3.0, 3.0, 8),
                DimSpec::new(-theta, theta, 10),
                DimSpec::new(-3.5, 3.5, 8),
            ],
        }
    }

    /// Four-column x buckets, unit y rows, unit velocities, binary
    /// occupancy, coarse enemy offsets.
    pub fn gridmario() -> Self {
        let mut dims = vec![
            DimSpec::new(-1.0, 255.0, 64),
            DimSpec::integer(0, 15),
            DimSpec::integer(-2, 2),
            DimSpec::integer(0, 1),
        ];
        dims.extend(std::iter::repeat_n(DimSpec::integer(0, 1), 20));
        dims.push(DimSpec::new(-8.0, 8.0, 4));
        dims.push(DimSpec::new(-8.0, 8.0, 4));
        dims.push(DimSpec::integer(0, 1));
        DiscretizerSpec { dims }
    }

    pub fn dim_count(&self) -> usize {
        self.dims.len()
    }

    pub fn discretize(&self, features: &FeatureVector) -> Result<StateKey> {
        self.discretize_slice(features.as_slice())
    }

    pub fn discretize_slice(&self, features: &[f64]) -> Result<StateKey> {
        if features.len() != self.dims.len() {
            return Err(Error::Invalid(format!(
                "discretizer expects {} features, got {}",
                self.dims.len(),
                features.len()
            )));
        }
        let mut bins = Vec::with_capacity(features.len());
        for (i, (v, d)) in features.iter().zip(&self.dims).enumerate() {
            if v.is_nan() {
                return Err(Error::Invalid(format!("feature {i} is NaN")));
            }
            bins.push(d.bin(*v));
        }
        Ok(StateKey(bins))
    }
}
