//! Force fields named in config files and recorded in model files.

use std::sync::Arc;

use latent_rom::experiments::ellipse_points;
use latent_rom::forces::{BendingRing, ForceField, LinearForce, RingTopology, SpringRing, SumForce};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ForceSpec {
    /// `f(x) = -x`; the dimension comes from the data when omitted.
    Identity {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dim: Option<usize>,
    },
    /// `f(x) = -diag(k) x`.
    Diagonal { stiffness: Vec<f64> },
    SpringRing {
        n_points: usize,
        k_s: f64,
        #[serde(default)]
        rest_length: f64,
    },
    BendingRing {
        n_points: usize,
        sigma_b: f64,
        /// Semi-axes `[a, b]` of the ellipse whose angles are the rest angles.
        reference: [f64; 2],
    },
    Sum { parts: Vec<ForceSpec> },
}

impl Default for ForceSpec {
    fn default() -> Self {
        ForceSpec::Identity { dim: None }
    }
}

/// A built force plus its stiffness when it is linear.
pub struct Force {
    pub field: Arc<dyn ForceField>,
    pub stiffness: Option<DMatrix<f64>>,
}

impl ForceSpec {
    pub fn build(&self, dim: usize) -> CliResult<Force> {
        let force = self.build_inner(dim)?;
        if force.field.dim() != dim {
            return Err(CliError::Config(format!(
                "force `{}` acts on dimension {} but the data has l = {dim}",
                self.name(),
                force.field.dim()
            )));
        }
        Ok(force)
    }

    fn build_inner(&self, dim: usize) -> CliResult<Force> {
        let linear = |t: DMatrix<f64>| -> CliResult<Force> {
            Ok(Force {
                field: Arc::new(LinearForce::new(t.clone())?),
                stiffness: Some(t),
            })
        };
        match self {
            ForceSpec::Identity { dim: d } => linear(DMatrix::identity(d.unwrap_or(dim), d.unwrap_or(dim))),
            ForceSpec::Diagonal { stiffness } => linear(DMatrix::from_diagonal(&DVector::from_column_slice(stiffness))),
            ForceSpec::SpringRing {
                n_points,
                k_s,
                rest_length,
            } => {
                let ring = SpringRing::new(RingTopology::new(*n_points)?, *k_s, *rest_length)?;
                // Zero rest length is exactly linear; keep the matrix for diagnostics.
                let stiffness = (*rest_length == 0.0).then(|| ring.zero_rest_stiffness());
                Ok(Force {
                    field: Arc::new(ring),
                    stiffness,
                })
            }
            ForceSpec::BendingRing {
                n_points,
                sigma_b,
                reference: [a, b],
            } => {
                let x_ref = ellipse_points(*n_points, *a, *b);
                let ring = BendingRing::from_reference(RingTopology::new(*n_points)?, *sigma_b, &x_ref)?;
                Ok(Force {
                    field: Arc::new(ring),
                    stiffness: None,
                })
            }
            ForceSpec::Sum { parts } => {
                let built = parts.iter().map(|p| p.build_inner(dim)).collect::<CliResult<Vec<_>>>()?;
                let stiffness = built
                    .iter()
                    .map(|f| f.stiffness.clone())
                    .collect::<Option<Vec<_>>>()
                    .and_then(|ts| ts.into_iter().reduce(|a, b| a + b));
                let field = Arc::new(SumForce::new(built.into_iter().map(|f| f.field).collect())?);
                Ok(Force { field, stiffness })
            }
        }
    }

    /// Dimension fixed by the spec itself, if any.
    pub fn natural_dim(&self) -> Option<usize> {
        match self {
            ForceSpec::Identity { dim } => *dim,
            ForceSpec::Diagonal { stiffness } => Some(stiffness.len()),
            ForceSpec::SpringRing { n_points, .. } | ForceSpec::BendingRing { n_points, .. } => Some(2 * n_points),
            ForceSpec::Sum { parts } => parts.iter().find_map(ForceSpec::natural_dim),
        }
    }

    /// Ring forces act on point coordinates that must stay apart.
    pub fn ring_points(&self) -> Option<usize> {
        match self {
            ForceSpec::SpringRing { n_points, .. } | ForceSpec::BendingRing { n_points, .. } => Some(*n_points),
            ForceSpec::Sum { parts } => parts.iter().find_map(ForceSpec::ring_points),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ForceSpec::Identity { .. } => "identity",
            ForceSpec::Diagonal { .. } => "diagonal",
            ForceSpec::SpringRing { .. } => "spring-ring",
            ForceSpec::BendingRing { .. } => "bending-ring",
            ForceSpec::Sum { .. } => "sum",
        }
    }

    /// One-line form stored in file headers.
    pub fn to_meta(&self) -> String {
        toml::Value::try_from(self).map(|v| v.to_string()).unwrap_or_default()
    }

    pub fn from_meta(s: &str) -> CliResult<Self> {
        let table: toml::Table = format!("force = {s}")
            .parse()
            .map_err(|e| CliError::Config(format!("force entry `{s}`: {e}")))?;
        table["force"]
            .clone()
            .try_into()
            .map_err(|e| CliError::Config(format!("force entry `{s}`: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn meta_form_round_trips_on_one_line() {
        let specs = [
            ForceSpec::Identity { dim: None },
            ForceSpec::Identity { dim: Some(3) },
            ForceSpec::SpringRing {
                n_points: 32,
                k_s: 2.5e4,
                rest_length: 0.1,
            },
            ForceSpec::Sum {
                parts: vec![
                    ForceSpec::Diagonal { stiffness: vec![1.0, 0.5] },
                    ForceSpec::BendingRing {
                        n_points: 4,
                        sigma_b: 0.1,
                        reference: [2.0, 1.0],
                    },
                ],
            },
        ];
        for s in specs {
            let line = s.to_meta();
            assert!(!line.contains('\n'), "{line}");
            assert_eq!(ForceSpec::from_meta(&line).unwrap(), s);
        }
    }

    #[test]
    fn linear_forces_expose_their_stiffness() {
        let f = ForceSpec::SpringRing {
            n_points: 4,
            k_s: 1.0,
            rest_length: 0.0,
        }
        .build(8)
        .unwrap();
        assert!(f.stiffness.is_some());
        let f = ForceSpec::SpringRing {
            n_points: 4,
            k_s: 1.0,
            rest_length: 0.5,
        }
        .build(8)
        .unwrap();
        assert!(f.stiffness.is_none());
        assert!(ForceSpec::Identity { dim: Some(2) }.build(3).is_err());
    }
}
