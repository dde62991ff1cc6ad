//! Symmetric quadrature on triangles.

/// Quadrature rule on the reference triangle in barycentric form.
/// Weights sum to one, so a physical integral is `area * Σ w f(x_q)`.
#[derive(Clone, Debug)]
pub struct TriangleRule {
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    pub degree: usize,
}

impl TriangleRule {
    /// Seven-point rule exact for polynomials of total degree five.
    pub fn radon7() -> Self {
        let s15 = 15f64.sqrt();
        let a = (6.0 - s15) / 21.0;
        let b = (6.0 + s15) / 21.0;
        let wa = (155.0 - s15) / 1200.0;
        let wb = (155.0 + s15) / 1200.0;
        let points = vec![
            [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
            [1.0 - 2.0 * a, a, a],
            [a, 1.0 - 2.0 * a, a],
            [a, a, 1.0 - 2.0 * a],
            [1.0 - 2.0 * b, b, b],
            [b, 1.0 - 2.0 * b, b],
            [b, b, 1.0 - 2.0 * b],
        ];
        let weights = vec![9.0 / 40.0, wa, wa, wa, wb, wb, wb];
        Self { points, weights, degree: 5 }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Integrates `f` over the triangle with vertices `v`.
    pub fn integrate(&self, v: [[f64; 2]; 3], f: impl Fn([f64; 2]) -> f64) -> f64 {
        let area = 0.5 * ((v[1][0] - v[0][0]) * (v[2][1] - v[0][1]) - (v[2][0] - v[0][0]) * (v[1][1] - v[0][1])).abs();
        let mut sum = 0.0;
        for (l, w) in self.points.iter().zip(&self.weights) {
            let x =
                [l[0] * v[0][0] + l[1] * v[1][0] + l[2] * v[2][0], l[0] * v[0][1] + l[1] * v[1][1] + l[2] * v[2][1]];
            sum += w * f(x);
        }
        area * sum
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    /// Polynomial in barycentric coordinates: exponents -> coefficient.
    type BaryPoly = BTreeMap<[u32; 3], f64>;

    fn mul(a: &BaryPoly, b: &BaryPoly) -> BaryPoly {
        let mut out = BaryPoly::new();
        for (ea, ca) in a {
            for (eb, cb) in b {
                let e = [ea[0] + eb[0], ea[1] + eb[1], ea[2] + eb[2]];
                *out.entry(e).or_insert(0.0) += ca * cb;
            }
        }
        out
    }

    fn factorial(n: u32) -> f64 {
        (1..=n).map(f64::from).product()
    }

    /// Exact integral over a triangle of area `area`: ∫ λ^a = 2|T| a! b! c! / (a+b+c+2)!.
    fn exact(poly: &BaryPoly, area: f64) -> f64 {
        poly.iter()
            .map(|(e, c)| {
                c * 2.0 * area * factorial(e[0]) * factorial(e[1]) * factorial(e[2]) / factorial(e[0] + e[1] + e[2] + 2)
            })
            .sum()
    }

    #[test]
    fn weights_sum_to_one() {
        let r = TriangleRule::radon7();
        assert!((r.weights.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for p in &r.points {
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn exact_for_random_degree_four_polynomials() {
        let rule = TriangleRule::radon7();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..50 {
            let v: [[f64; 2]; 3] = std::array::from_fn(|_| [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]);
            let area =
                0.5 * ((v[1][0] - v[0][0]) * (v[2][1] - v[0][1]) - (v[2][0] - v[0][0]) * (v[1][1] - v[0][1])).abs();
            // x and y as barycentric polynomials
            let coord = |c: usize| -> BaryPoly {
                let mut p = BaryPoly::new();
                p.insert([1, 0, 0], v[0][c]);
                p.insert([0, 1, 0], v[1][c]);
                p.insert([0, 0, 1], v[2][c]);
                p
            };
            let (px, py) = (coord(0), coord(1));
            let mut coeffs = Vec::new();
            let mut exact_value = 0.0;
            for i in 0..=4u32 {
                for j in 0..=(4 - i) {
                    let c: f64 = rng.random_range(-1.0..1.0);
                    coeffs.push((i, j, c));
                    let mut mono: BaryPoly = BaryPoly::from([([0, 0, 0], 1.0)]);
                    for _ in 0..i {
                        mono = mul(&mono, &px);
                    }
                    for _ in 0..j {
                        mono = mul(&mono, &py);
                    }
                    exact_value += c * exact(&mono, area);
                }
            }
            let quad = rule
                .integrate(v, |x| coeffs.iter().map(|&(i, j, c)| c * x[0].powi(i as i32) * x[1].powi(j as i32)).sum());
            assert!((quad - exact_value).abs() < 1e-12 * (1.0 + exact_value.abs()), "{quad} vs {exact_value}");
        }
    }

    #[test]
    fn not_exact_for_degree_six() {
        let rule = TriangleRule::radon7();
        let v = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        // ∫ x^6 over the unit simplex = 6! 0! / 8! = 1/56
        let q = rule.integrate(v, |x| x[0].powi(6));
        assert!((q - 1.0 / 56.0).abs() > 1e-8);
    }
}
