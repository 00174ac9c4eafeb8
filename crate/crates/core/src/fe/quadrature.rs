//! Symmetric quadrature rules on the reference triangle and tetrahedron.
//!
//! Points are stored in reference coordinates `xi` (the barycentric
//! coordinates are `1 - sum(xi)` followed by `xi`). Weights sum to the
//! reference measure, 1/2 for the triangle and 1/6 for the tetrahedron.

use super::FeError;

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub dim: usize,
    pub degree: usize,
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Integral of `f` over the reference cell.
    pub fn integrate(&self, f: impl Fn([f64; 3]) -> f64) -> f64 {
        self.points.iter().zip(&self.weights).map(|(p, w)| w * f(*p)).sum()
    }
}

/// Smallest tabulated rule exact for polynomials of total degree `degree`.
/// The returned rule may be of higher degree than requested.
pub fn quadrature(dim: usize, degree: usize) -> Result<QuadratureRule, FeError> {
    match (dim, degree) {
        (2, 0..=1) => Ok(build(2, 1, &[(1.0 / 2.0, Orbit::Centroid)])),
        (2, 2) => Ok(build(2, 2, &[(1.0 / 6.0, Orbit::S21(1.0 / 6.0))])),
        (2, 3..=6) => Ok(build(2, 6, TRI6)),
        (3, 0..=1) => Ok(build(3, 1, &[(1.0 / 6.0, Orbit::Centroid)])),
        (3, 2) => Ok(build(3, 2, &[(1.0 / 24.0, Orbit::S31(0.138_196_601_125_010_5))])),
        (3, 3..=6) => Ok(build(3, 6, TET6)),
        _ => Err(FeError::UnsupportedQuadrature { dim, degree }),
    }
}

/// Barycentric orbit generator. Parameters are the repeated coordinates.
#[derive(Clone, Copy)]
enum Orbit {
    Centroid,
    /// Triangle `(a, a, 1-2a)`.
    S21(f64),
    /// Triangle `(a, b, 1-a-b)`, six permutations.
    S111(f64, f64),
    /// Tetrahedron `(a, a, a, 1-3a)`.
    S31(f64),
    /// Tetrahedron `(a, a, b, 1-2a-b)`, twelve permutations.
    S211(f64, f64),
}

// Degree-6 rule, 12 points (Dunavant).
const TRI6: &[(f64, Orbit)] = &[
    (0.116_786_275_726_418_5 / 2.0, Orbit::S21(0.249_286_745_170_887_9)),
    (0.050_844_906_370_213_59 / 2.0, Orbit::S21(0.063_089_014_491_507_1)),
    (0.082_851_075_618_350_62 / 2.0, Orbit::S111(0.053_145_049_844_800_33, 0.310_352_451_033_801_66)),
];

// Degree-6 rule, 24 points (Keast).
const TET6: &[(f64, Orbit)] = &[
    (0.006_653_791_709_694_645, Orbit::S31(0.214_602_871_259_151_67)),
    (0.001_679_535_175_886_776_3, Orbit::S31(0.040_673_958_534_611_34)),
    (0.009_226_196_923_942_399, Orbit::S31(0.322_337_890_142_275_65)),
    (0.008_035_714_285_714_283, Orbit::S211(0.063_661_001_875_017_53, 0.269_672_331_458_315_9)),
];

fn build(dim: usize, degree: usize, orbits: &[(f64, Orbit)]) -> QuadratureRule {
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for &(w, orbit) in orbits {
        let bary: Vec<Vec<f64>> = match orbit {
            Orbit::Centroid => vec![vec![1.0 / (dim + 1) as f64; dim + 1]],
            Orbit::S21(a) => distinct_permutations(&[a, a, 1.0 - 2.0 * a]),
            Orbit::S111(a, b) => distinct_permutations(&[a, b, 1.0 - a - b]),
            Orbit::S31(a) => distinct_permutations(&[a, a, a, 1.0 - 3.0 * a]),
            Orbit::S211(a, b) => distinct_permutations(&[a, a, b, 1.0 - 2.0 * a - b]),
        };
        for l in bary {
            let mut xi = [0.0; 3];
            xi[..dim].copy_from_slice(&l[1..=dim]);
            points.push(xi);
            weights.push(w);
        }
    }
    QuadratureRule { dim, degree, points, weights }
}

fn distinct_permutations(values: &[f64]) -> Vec<Vec<f64>> {
    let n = values.len();
    let mut out: Vec<Vec<f64>> = Vec::new();
    let mut idx: Vec<usize> = (0..n).collect();
    permute(&mut idx, 0, &mut |perm| {
        let p: Vec<f64> = perm.iter().map(|&i| values[i]).collect();
        if !out.iter().any(|q| q == &p) {
            out.push(p);
        }
    });
    out
}

fn permute(idx: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == idx.len() {
        visit(idx);
        return;
    }
    for i in k..idx.len() {
        idx.swap(k, i);
        permute(idx, k + 1, visit);
        idx.swap(k, i);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn factorial(n: u32) -> f64 {
        (1..=n).map(f64::from).product()
    }

    fn monomial_exact(exps: &[u32]) -> f64 {
        let num: f64 = exps.iter().map(|&e| factorial(e)).product();
        num / factorial(exps.iter().sum::<u32>() + exps.len() as u32)
    }

    #[test]
    fn reference_measures() {
        let t = quadrature(2, 6).unwrap();
        assert_eq!(t.len(), 12);
        assert!((t.integrate(|_| 1.0) - 0.5).abs() < 1e-14);
        let k = quadrature(3, 6).unwrap();
        assert_eq!(k.len(), 24);
        assert!((k.integrate(|_| 1.0) - 1.0 / 6.0).abs() < 1e-14);
    }

    #[test]
    fn triangle_x4y2() {
        let t = quadrature(2, 6).unwrap();
        let v = t.integrate(|p| p[0].powi(4) * p[1].powi(2));
        assert!((v - 1.0 / 840.0).abs() < 1e-15);
    }

    #[test]
    fn exact_on_all_monomials_through_declared_degree() {
        for degree in 1..=6 {
            let t = quadrature(2, degree).unwrap();
            for a in 0..=t.degree as u32 {
                for b in 0..=(t.degree as u32 - a) {
                    let v = t.integrate(|p| p[0].powi(a as i32) * p[1].powi(b as i32));
                    let e = monomial_exact(&[a, b]);
                    assert!((v - e).abs() <= 1e-14 * e.max(1e-3), "tri deg {degree}: x^{a} y^{b}");
                }
            }
            let k = quadrature(3, degree).unwrap();
            for a in 0..=k.degree as u32 {
                for b in 0..=(k.degree as u32 - a) {
                    for c in 0..=(k.degree as u32 - a - b) {
                        let v = k.integrate(|p| {
                            p[0].powi(a as i32) * p[1].powi(b as i32) * p[2].powi(c as i32)
                        });
                        let e = monomial_exact(&[a, b, c]);
                        assert!((v - e).abs() <= 1e-14 * e.max(1e-3), "tet deg {degree}: {a} {b} {c}");
                    }
                }
            }
        }
    }

    #[test]
    fn degree_six_weights_positive_and_points_inside() {
        for dim in [2, 3] {
            let q = quadrature(dim, 6).unwrap();
            for (p, w) in q.points.iter().zip(&q.weights) {
                assert!(*w > 0.0);
                let s: f64 = p[..dim].iter().sum();
                assert!(p[..dim].iter().all(|&x| x > 0.0) && s < 1.0);
            }
        }
    }

    #[test]
    fn unsupported_combinations() {
        assert!(quadrature(1, 2).is_err());
        assert!(quadrature(2, 7).is_err());
        assert!(quadrature(3, 9).is_err());
    }
}
