//! Full-step Newton driver on sparse systems.

use thiserror::Error;

use super::sparse::{CsrMatrix, DirectSolver, SolveError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NewtonError {
    #[error("Newton diverged after {iterations} iterations (residual {residual:e}, initial {initial:e})")]
    Divergence { iterations: usize, residual: f64, initial: f64 },
    #[error("non-finite residual at Newton iteration {iteration}: {reason}")]
    NonFiniteResidual { iteration: usize, reason: String },
    #[error("linear solve failed at Newton iteration {iteration}: {source}")]
    LinearSolve { iteration: usize, source: SolveError },
}

/// A square nonlinear system `r(x) = 0` with a sparse Jacobian.
pub trait NonlinearProblem {
    fn size(&self) -> usize;

    /// Fills `r` and, when provided, the Jacobian values. An `Err` signals a
    /// state outside the admissible set (for instance a non-positive
    /// Jacobian determinant).
    fn assemble(&mut self, x: &[f64], r: &mut [f64], jac: Option<&mut CsrMatrix>) -> Result<(), String>;

    /// Storage for the Jacobian with its final sparsity pattern.
    fn jacobian_pattern(&self) -> CsrMatrix;
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NewtonOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions { abs_tol: 1e-10, rel_tol: 1e-12, max_iter: 25 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonReport {
    pub iterations: usize,
    pub residual_norms: Vec<f64>,
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Reusable Newton solver. Keeps the Jacobian storage and the symbolic
/// factorization alive across solves of the same problem.
pub struct Newton {
    pub options: NewtonOptions,
    jac: Option<CsrMatrix>,
    linear: DirectSolver,
}

impl Newton {
    pub fn new(options: NewtonOptions) -> Self {
        Newton { options, jac: None, linear: DirectSolver::new() }
    }

    pub fn solve<P: NonlinearProblem>(&mut self, problem: &mut P, x: &mut [f64]) -> Result<NewtonReport, NewtonError> {
        let n = problem.size();
        assert_eq!(x.len(), n, "state length must match the problem size");
        assert!(self.options.max_iter >= 1, "max_iter must be at least 1");
        if self.jac.as_ref().is_none_or(|j| j.dim() != n) {
            self.jac = Some(problem.jacobian_pattern());
        }
        let jac = self.jac.as_mut().expect("jacobian storage");
        let mut r = vec![0.0; n];
        let nonfinite = |iteration: usize, reason: String| NewtonError::NonFiniteResidual { iteration, reason };

        problem.assemble(x, &mut r, Some(jac)).map_err(|e| nonfinite(0, e))?;
        let r0 = norm2(&r);
        if !r0.is_finite() {
            return Err(nonfinite(0, "residual contains NaN or infinity".into()));
        }
        let target = self.options.abs_tol.max(self.options.rel_tol * r0);
        let mut norms = vec![r0];
        if r0 <= target {
            return Ok(NewtonReport { iterations: 0, residual_norms: norms });
        }
        let mut growth = 0;
        for it in 1..=self.options.max_iter {
            let rhs: Vec<f64> = r.iter().map(|v| -v).collect();
            let dx = self.linear.solve(jac, &rhs).map_err(|source| NewtonError::LinearSolve { iteration: it, source })?;
            for (xi, d) in x.iter_mut().zip(&dx) {
                *xi += d;
            }
            problem.assemble(x, &mut r, Some(jac)).map_err(|e| nonfinite(it, e))?;
            let rn = norm2(&r);
            if !rn.is_finite() {
                return Err(nonfinite(it, "residual contains NaN or infinity".into()));
            }
            let prev = *norms.last().expect("non-empty history");
            norms.push(rn);
            if rn <= target {
                return Ok(NewtonReport { iterations: it, residual_norms: norms });
            }
            growth = if rn > prev { growth + 1 } else { 0 };
            if growth >= 3 {
                return Err(NewtonError::Divergence { iterations: it, residual: rn, initial: r0 });
            }
        }
        Err(NewtonError::Divergence {
            iterations: self.options.max_iter,
            residual: *norms.last().expect("non-empty history"),
            initial: r0,
        })
    }
}

/// One-shot Newton solve from `x0`.
pub fn newton_solve<P: NonlinearProblem>(
    problem: &mut P,
    x0: &[f64],
    options: NewtonOptions,
) -> Result<(Vec<f64>, NewtonReport), NewtonError> {
    let mut x = x0.to_vec();
    let report = Newton::new(options).solve(problem, &mut x)?;
    Ok((x, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Scalar1<F: Fn(f64) -> (f64, f64)>(F);

    impl<F: Fn(f64) -> (f64, f64)> NonlinearProblem for Scalar1<F> {
        fn size(&self) -> usize {
            1
        }
        fn assemble(&mut self, x: &[f64], r: &mut [f64], jac: Option<&mut CsrMatrix>) -> Result<(), String> {
            let (f, df) = (self.0)(x[0]);
            r[0] = f;
            if let Some(j) = jac {
                j.zero_values();
                j.add(0, 0, df);
            }
            Ok(())
        }
        fn jacobian_pattern(&self) -> CsrMatrix {
            CsrMatrix::from_pattern(&[vec![0]])
        }
    }

    struct Linear {
        a: Vec<Vec<f64>>,
        b: Vec<f64>,
    }

    impl NonlinearProblem for Linear {
        fn size(&self) -> usize {
            self.b.len()
        }
        fn assemble(&mut self, x: &[f64], r: &mut [f64], jac: Option<&mut CsrMatrix>) -> Result<(), String> {
            for i in 0..self.b.len() {
                r[i] = self.a[i].iter().zip(x).map(|(a, x)| a * x).sum::<f64>() - self.b[i];
            }
            if let Some(j) = jac {
                *j = CsrMatrix::from_dense(&self.a);
            }
            Ok(())
        }
        fn jacobian_pattern(&self) -> CsrMatrix {
            CsrMatrix::from_dense(&self.a)
        }
    }

    #[test]
    fn square_root_of_four() {
        let mut p = Scalar1(|x| (x * x - 4.0, 2.0 * x));
        let opts = NewtonOptions { abs_tol: 1e-12, rel_tol: 0.0, max_iter: 6 };
        let (x, rep) = newton_solve(&mut p, &[3.0], opts).unwrap();
        assert!((x[0] - 2.0).abs() < 1e-12);
        assert!(rep.iterations <= 6);
    }

    #[test]
    fn linear_system_in_one_iteration() {
        let mut p = Linear { a: vec![vec![3.0, 1.0, 0.0], vec![1.0, 4.0, 1.0], vec![0.0, 2.0, 5.0]], b: vec![1.0, -2.0, 7.0] };
        let (_, rep) = newton_solve(&mut p, &[10.0, -3.0, 2.0], NewtonOptions::default()).unwrap();
        assert_eq!(rep.iterations, 1);
    }

    #[test]
    fn arctan_from_two_diverges() {
        let mut p = Scalar1(|x| (x.atan(), 1.0 / (1.0 + x * x)));
        let err = newton_solve(&mut p, &[2.0], NewtonOptions::default()).unwrap_err();
        assert!(matches!(err, NewtonError::Divergence { .. }), "{err:?}");
    }

    #[test]
    fn inadmissible_state_reported() {
        struct Bad;
        impl NonlinearProblem for Bad {
            fn size(&self) -> usize {
                1
            }
            fn assemble(&mut self, x: &[f64], r: &mut [f64], jac: Option<&mut CsrMatrix>) -> Result<(), String> {
                if x[0] <= 0.0 {
                    return Err("J <= 0".into());
                }
                r[0] = x[0].ln() + 5.0;
                if let Some(j) = jac {
                    j.zero_values();
                    j.add(0, 0, 1.0 / x[0]);
                }
                Ok(())
            }
            fn jacobian_pattern(&self) -> CsrMatrix {
                CsrMatrix::from_pattern(&[vec![0]])
            }
        }
        let err = newton_solve(&mut Bad, &[1.0], NewtonOptions::default()).unwrap_err();
        assert!(matches!(err, NewtonError::NonFiniteResidual { iteration: 1, .. }), "{err:?}");
    }

    #[test]
    fn superlinear_tail() {
        let mut p = Scalar1(|x| (x.exp() - 3.0 + 0.1 * x * x * x, x.exp() + 0.3 * x * x));
        let opts = NewtonOptions { abs_tol: 1e-14, rel_tol: 0.0, max_iter: 30 };
        let (_, rep) = newton_solve(&mut p, &[2.0], opts).unwrap();
        let r = &rep.residual_norms;
        let k = r.len();
        assert!(k >= 4);
        let (a, b, c) = (r[k - 4], r[k - 3], r[k - 2]);
        // quadratic-rate constant stays bounded on the tail
        assert!(b <= 10.0 * a.powf(1.5) && c <= 10.0 * b.powf(1.5), "{r:?}");
    }
}
