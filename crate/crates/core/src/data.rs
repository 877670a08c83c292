//! Observed time series.

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Tolerance on timestamp spacing and on timestamps being multiples of `dt`.
pub const TIME_TOL: f64 = 1e-9;

/// One observed trajectory `{(t_j, x̃_j)}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub t: Vec<f64>,
    pub x: Vec<DVector<f64>>,
}

impl Series {
    pub fn new(t: Vec<f64>, x: Vec<DVector<f64>>) -> Result<Self> {
        if t.len() != x.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} timestamps for {} observations",
                t.len(),
                x.len()
            )));
        }
        if t.is_empty() {
            return Err(Error::InvalidArgument("empty series".into()));
        }
        Ok(Self { t, x })
    }

    /// Builds a series sampled at `t_j = j·dt`.
    pub fn uniform(dt: f64, x: Vec<DVector<f64>>) -> Self {
        let t = (0..x.len()).map(|j| j as f64 * dt).collect();
        Self { t, x }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Number of steps after the initial observation.
    pub fn steps(&self) -> usize {
        self.x.len().saturating_sub(1)
    }

    pub fn initial(&self) -> &DVector<f64> {
        &self.x[0]
    }

    /// Observations `1..=horizon` (all when `None`) paired with their step
    /// index `(t_j - t_0)/dt`.
    pub fn targets(&self, dt: f64, horizon: Option<usize>, series_index: usize) -> Result<Vec<(usize, &DVector<f64>)>> {
        let last = horizon.map_or(self.steps(), |h| h.min(self.steps()));
        let t0 = self.t[0];
        let mut out = Vec::with_capacity(last);
        for j in 1..=last {
            let ratio = (self.t[j] - t0) / dt;
            let k = ratio.round();
            if (ratio - k).abs() * dt > TIME_TOL || k < 1.0 {
                return Err(Error::TimestampMismatch {
                    series: series_index,
                    t: self.t[j],
                    dt,
                });
            }
            out.push((k as usize, &self.x[j]));
        }
        Ok(out)
    }
}

/// A collection of series sharing `dt` and `l`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub series: Vec<Series>,
    pub dt: f64,
    pub l: usize,
    /// Free-form `key value` metadata (generator, seed, ...).
    pub provenance: Vec<(String, String)>,
}

impl Dataset {
    pub fn new(series: Vec<Series>, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
        }
        let l = series
            .first()
            .map(|s| s.x[0].len())
            .ok_or_else(|| Error::InvalidArgument("dataset without series".into()))?;
        for (i, s) in series.iter().enumerate() {
            if s.x.iter().any(|x| x.len() != l) {
                return Err(Error::DimensionMismatch(format!("series {i} is not {l}-dimensional")));
            }
            for w in s.t.windows(2) {
                let step = w[1] - w[0];
                if (step - dt).abs() > TIME_TOL {
                    return Err(Error::InconsistentDt {
                        header: dt,
                        observed: step,
                    });
                }
            }
        }
        Ok(Self {
            series,
            dt,
            l,
            provenance: Vec::new(),
        })
    }

    pub fn with_provenance(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.provenance.push((key.into(), value.to_string()));
        self
    }

    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    /// Dataset made of the series at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            series: indices.iter().map(|&i| self.series[i].clone()).collect(),
            dt: self.dt,
            l: self.l,
            provenance: self.provenance.clone(),
        }
    }

    pub fn provenance_value(&self, key: &str) -> Option<&str> {
        self.provenance
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}
