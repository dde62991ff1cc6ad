//! Closed-form vector fields used as data: initial velocity, noise
//! coefficient, boundary datum and forcing.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use crate::mesh::Point;
use crate::rheology::Mat2;

pub trait VectorField: Send + Sync + fmt::Debug {
    fn eval(&self, x: Point) -> [f64; 2];

    /// Analytic gradient `(∇f)_{ij} = ∂_i f_j`, when known.
    fn gradient(&self, _x: Point) -> Option<Mat2> {
        None
    }

    /// Lets assembly skip work for fields that vanish identically.
    fn is_zero(&self) -> bool {
        false
    }
}

pub type FieldExpr = Arc<dyn VectorField>;

#[derive(Debug, Clone, Copy)]
pub struct ZeroField;

impl VectorField for ZeroField {
    fn eval(&self, _x: Point) -> [f64; 2] {
        [0.0, 0.0]
    }
    fn gradient(&self, _x: Point) -> Option<Mat2> {
        Some(Mat2::ZERO)
    }
    fn is_zero(&self) -> bool {
        true
    }
}

fn bump(t: f64) -> f64 {
    t * t * (1.0 - t) * (1.0 - t)
}

fn bump_d1(t: f64) -> f64 {
    2.0 * t * (1.0 - t) * (1.0 - 2.0 * t)
}

fn bump_d2(t: f64) -> f64 {
    2.0 - 12.0 * t + 12.0 * t * t
}

/// `scale * (f(x) f'(y), -f(y) f'(x))` with `f(t) = t²(1-t)²`: the rotated
/// gradient of `scale * f(x) f(y)`, hence exactly solenoidal and zero on the
/// boundary. With `scale = 10³` this is the vortex used as initial velocity
/// and noise coefficient of the forced experiment.
#[derive(Debug, Clone, Copy)]
pub struct BumpVortex {
    pub scale: f64,
}

impl BumpVortex {
    pub fn stream_function(&self, x: Point) -> f64 {
        self.scale * bump(x[0]) * bump(x[1])
    }
}

impl VectorField for BumpVortex {
    fn eval(&self, x: Point) -> [f64; 2] {
        let (px, py) = (x[0], x[1]);
        // literal printed form: x²(1-x)²(2-6y+4y²)y
        [
            self.scale * px * px * (1.0 - px) * (1.0 - px) * (2.0 - 6.0 * py + 4.0 * py * py) * py,
            -self.scale * py * py * (1.0 - py) * (1.0 - py) * (2.0 - 6.0 * px + 4.0 * px * px) * px,
        ]
    }

    fn gradient(&self, x: Point) -> Option<Mat2> {
        let (px, py) = (x[0], x[1]);
        let s = self.scale;
        // u = s f(x) f'(y), w = -s f(y) f'(x)
        Some(Mat2::new(
            s * bump_d1(px) * bump_d1(py),
            -s * bump(py) * bump_d2(px),
            s * bump(px) * bump_d2(py),
            -s * bump_d1(py) * bump_d1(px),
        ))
    }
}

/// `scale * (sin(2πx) sin(4πy), -sin(4πx) sin(2πy))`.
#[derive(Debug, Clone, Copy)]
pub struct SineForcing {
    pub scale: f64,
}

impl VectorField for SineForcing {
    fn eval(&self, x: Point) -> [f64; 2] {
        let (px, py) = (x[0], x[1]);
        [
            self.scale * (2.0 * PI * px).sin() * (4.0 * PI * py).sin(),
            -self.scale * (4.0 * PI * px).sin() * (2.0 * PI * py).sin(),
        ]
    }
}

/// `(speed, 0) * 1_{y=1}`: the sliding lid of the cavity.
#[derive(Debug, Clone, Copy)]
pub struct LidIndicator {
    pub speed: f64,
}

impl VectorField for LidIndicator {
    fn eval(&self, x: Point) -> [f64; 2] {
        if (x[1] - 1.0).abs() < 1e-12 {
            [self.speed, 0.0]
        } else {
            [0.0, 0.0]
        }
    }
}

/// Adapter for ad-hoc closures (tests, custom data).
pub struct FnField<F>(pub F);

impl<F> fmt::Debug for FnField<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("FnField")
    }
}

impl<F> VectorField for FnField<F>
where
    F: Fn(Point) -> [f64; 2] + Send + Sync,
{
    fn eval(&self, x: Point) -> [f64; 2] {
        (self.0)(x)
    }
}

pub fn zero() -> FieldExpr {
    Arc::new(ZeroField)
}
