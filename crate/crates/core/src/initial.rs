//! Initial data.

use serde::{Deserialize, Serialize};

use crate::diagnostics::{norm_sq, Sobolev};
use crate::error::{LlbError, Result};
use crate::field::{Grid, VectorField};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialCondition {
    Zero,
    Constant {
        value: [f64; 3],
    },
    /// `c·d·exp(−|x−x0|²/(2w²))` with `c` chosen so that `‖u0‖²_{H1}` equals
    /// `h1_sq`.
    Bump {
        #[serde(default = "unit_x")]
        direction: [f64; 3],
        width: f64,
        #[serde(default)]
        center: [f64; 2],
        h1_sq: f64,
    },
    /// `a·cos(k·x)` along one component, `k = π(mx, my)/L`.
    Mode {
        mx: i64,
        my: i64,
        amplitude: f64,
        #[serde(default)]
        component: usize,
    },
}

fn unit_x() -> [f64; 3] {
    [1.0, 0.0, 0.0]
}

impl Default for InitialCondition {
    fn default() -> Self {
        InitialCondition::Bump {
            direction: unit_x(),
            width: 1.0,
            center: [0.0, 0.0],
            h1_sq: 4.0,
        }
    }
}

impl InitialCondition {
    pub fn bump(width: f64, h1_sq: f64) -> Self {
        InitialCondition::Bump {
            direction: unit_x(),
            width,
            center: [0.0, 0.0],
            h1_sq,
        }
    }

    pub fn build<T: Scalar>(&self, grid: &Grid<T>) -> Result<VectorField<T>> {
        match *self {
            InitialCondition::Zero => Ok(VectorField::zeros(grid)),
            InitialCondition::Constant { value } => {
                if !value.iter().all(|v| v.is_finite()) {
                    return Err(LlbError::Parameter("constant initial value must be finite".into()));
                }
                Ok(VectorField::constant(grid, value.map(T::of)))
            }
            InitialCondition::Bump {
                direction,
                width,
                center,
                h1_sq,
            } => {
                let norm = direction.iter().map(|d| d * d).sum::<f64>().sqrt();
                if !(norm > 0.0 && norm.is_finite()) {
                    return Err(LlbError::Parameter("bump direction must be a nonzero vector".into()));
                }
                if !(width > 0.0 && width.is_finite()) {
                    return Err(LlbError::Parameter(format!("bump width must be > 0, got {width}")));
                }
                if !(h1_sq >= 0.0 && h1_sq.is_finite()) {
                    return Err(LlbError::Parameter(format!("target H1 norm must be >= 0, got {h1_sq}")));
                }
                let l = grid.half_width().to_f64_lossy();
                if center[0].abs().max(center[1].abs()) + 6.0 * width > l {
                    return Err(LlbError::Domain(format!(
                        "bump of width {width} at ({}, {}) does not fit inside the box",
                        center[0], center[1]
                    )));
                }
                let d = direction.map(|c| c / norm);
                let inv = 1.0 / (2.0 * width * width);
                let shape = VectorField::from_fn(grid, |x, y| {
                    let (rx, ry) = (x.to_f64_lossy() - center[0], y.to_f64_lossy() - center[1]);
                    let s = (-(rx * rx + ry * ry) * inv).exp();
                    [T::of(d[0] * s), T::of(d[1] * s), T::of(d[2] * s)]
                });
                let base = norm_sq(&shape, Sobolev::H1)?.to_f64_lossy();
                Ok(shape.scale(T::of((h1_sq / base).sqrt())))
            }
            InitialCondition::Mode {
                mx,
                my,
                amplitude,
                component,
            } => {
                let n = grid.n() as i64;
                if component > 2 {
                    return Err(LlbError::Parameter(format!("component must be 0, 1 or 2, got {component}")));
                }
                if 2 * mx.abs() >= n || 2 * my.abs() >= n {
                    return Err(LlbError::Resolution(format!("mode ({mx}, {my}) is not resolved on N = {n}")));
                }
                let base = std::f64::consts::PI / grid.half_width().to_f64_lossy();
                let (kx, ky) = (base * mx as f64, base * my as f64);
                Ok(VectorField::from_fn(grid, |x, y| {
                    let mut v = [T::zero(); 3];
                    v[component] = T::of(amplitude * (kx * x.to_f64_lossy() + ky * y.to_f64_lossy()).cos());
                    v
                }))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bump_hits_h1_target() {
        let g = Grid::<f64>::new(64, 16.0).unwrap();
        let u = InitialCondition::bump(1.5, 25.0).build(&g).unwrap();
        assert!((norm_sq(&u, Sobolev::H1).unwrap() - 25.0).abs() < 1e-10);
    }

    #[test]
    fn bump_outside_box_rejected() {
        let g = Grid::<f64>::new(32, 4.0).unwrap();
        let ic = InitialCondition::bump(1.0, 1.0);
        assert!(matches!(ic.build(&g), Err(LlbError::Domain(_))));
    }

    #[test]
    fn toml_round_trip() {
        let ic = InitialCondition::Mode {
            mx: 1,
            my: -2,
            amplitude: 0.5,
            component: 2,
        };
        let text = toml::to_string(&ic).unwrap();
        assert_eq!(toml::from_str::<InitialCondition>(&text).unwrap(), ic);
    }
}
