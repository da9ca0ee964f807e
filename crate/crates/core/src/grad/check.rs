//! Central-difference gradient checking. The numeric side re-evaluates the
//! forward function at perturbed parameters and never touches the backward
//! pass, so it stays an independent oracle for it.

use super::matrix::Matrix;
use super::tape::{NodeId, ParamId, Tape};
use super::{GradError, Scalar};

/// Builds the forward graph from a parameter slice. The closure must register
/// the parameters on the tape as `ParamId(0) .. ParamId(params.len())` in
/// slice order and return a scalar root.
pub trait ForwardFn<T: Scalar>: Fn(&mut Tape<T>, &[Matrix<T>]) -> Result<NodeId, GradError> {}
impl<T: Scalar, F: Fn(&mut Tape<T>, &[Matrix<T>]) -> Result<NodeId, GradError>> ForwardFn<T> for F {}

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub param: usize,
    pub max_rel_error: f64,
    /// (row, col, analytic, numeric) at the worst entry.
    pub worst: (usize, usize, f64, f64),
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub per_param: Vec<ParamCheck>,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&ParamCheck> {
        self.per_param
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

fn eval_forward<T: Scalar>(
    forward: &impl ForwardFn<T>,
    params: &[Matrix<T>],
) -> Result<T, GradError> {
    let mut tape = Tape::new();
    let root = forward(&mut tape, params)?;
    tape.scalar(root)
}

/// Central finite differences `(f(p+e) - f(p-e)) / 2e`, one entry at a time.
pub fn fd_gradients<T: Scalar>(
    forward: impl ForwardFn<T>,
    params: &[Matrix<T>],
    epsilon: T,
) -> Result<Vec<Matrix<T>>, GradError> {
    let mut grads = Vec::with_capacity(params.len());
    let mut work: Vec<Matrix<T>> = params.to_vec();
    for pi in 0..params.len() {
        let mut g = Matrix::zeros(params[pi].rows(), params[pi].cols());
        for idx in 0..params[pi].len() {
            let orig = work[pi].data()[idx];
            work[pi].data_mut()[idx] = orig + epsilon;
            let plus = eval_forward(&forward, &work)?;
            work[pi].data_mut()[idx] = orig - epsilon;
            let minus = eval_forward(&forward, &work)?;
            work[pi].data_mut()[idx] = orig;
            g.data_mut()[idx] = (plus - minus) / (epsilon + epsilon);
        }
        grads.push(g);
    }
    Ok(grads)
}

/// Analytic (tape backward) gradients in the same layout as the parameters.
pub fn analytic_gradients<T: Scalar>(
    forward: impl ForwardFn<T>,
    params: &[Matrix<T>],
) -> Result<Vec<Matrix<T>>, GradError> {
    let mut tape = Tape::new();
    let root = forward(&mut tape, params)?;
    let map = tape.backward(root)?;
    let mut out = Vec::with_capacity(params.len());
    for (pi, p) in params.iter().enumerate() {
        let g = map
            .get(ParamId(pi))
            .ok_or(GradError::MissingGradient(pi))?
            .clone();
        if g.shape() != p.shape() {
            return Err(GradError::ShapeMismatch {
                op: "analytic_gradients",
                lhs_rows: g.rows(),
                lhs_cols: g.cols(),
                rhs_rows: p.rows(),
                rhs_cols: p.cols(),
            });
        }
        out.push(g);
    }
    Ok(out)
}

/// Relative error `|a-n| / max(|a|, |n|, floor)` computed in f64.
fn rel_error(a: f64, n: f64) -> f64 {
    const FLOOR: f64 = 1e-6;
    (a - n).abs() / a.abs().max(n.abs()).max(FLOOR)
}

/// Compare two gradient sets; exposed separately so corrupted gradients can
/// be fed through the same reporting path (negative controls).
pub fn compare_gradients<T: Scalar>(
    analytic: &[Matrix<T>],
    numeric: &[Matrix<T>],
    tolerance: f64,
) -> GradCheckReport {
    assert_eq!(analytic.len(), numeric.len());
    let mut per_param = Vec::with_capacity(analytic.len());
    let mut overall: f64 = 0.0;
    for (pi, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        assert_eq!(a.shape(), n.shape());
        let mut worst = (0usize, 0usize, 0.0f64, 0.0f64);
        let mut max_rel: f64 = 0.0;
        for i in 0..a.rows() {
            for j in 0..a.cols() {
                let av = a.get(i, j).to_f64();
                let nv = n.get(i, j).to_f64();
                let rel = rel_error(av, nv);
                if rel > max_rel {
                    max_rel = rel;
                    worst = (i, j, av, nv);
                }
            }
        }
        overall = overall.max(max_rel);
        per_param.push(ParamCheck {
            param: pi,
            max_rel_error: max_rel,
            worst,
        });
    }
    GradCheckReport {
        per_param,
        max_rel_error: overall,
        tolerance,
        passed: overall < tolerance,
    }
}

/// Analytic vs. central-difference gradients of a deterministic scalar-valued
/// forward function.
pub fn grad_check<T: Scalar>(
    forward: impl ForwardFn<T>,
    params: &[Matrix<T>],
    epsilon: T,
    tolerance: f64,
) -> Result<GradCheckReport, GradError> {
    let analytic = analytic_gradients(&forward, params)?;
    let numeric = fd_gradients(&forward, params, epsilon)?;
    Ok(compare_gradients(&analytic, &numeric, tolerance))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_checks_to_machine_precision() {
        // f(w) = c . w  — FD of a linear map is exact up to rounding.
        let w = Matrix::from_vec(3, 1, vec![0.5, -1.0, 2.0]).unwrap();
        let c = Matrix::from_rows(&[&[2.0f64, -3.0, 0.25]]);
        let report = grad_check(
            |tape: &mut Tape<f64>, ps: &[Matrix<f64>]| {
                let wp = tape.param(ParamId(0), &ps[0]);
                let ci = tape.input(c.clone());
                tape.matmul(ci, wp)
            },
            &[w],
            1e-5,
            1e-8,
        )
        .unwrap();
        assert!(report.passed, "max rel error {}", report.max_rel_error);
        assert!(report.max_rel_error < 1e-8);
    }

    #[test]
    fn composite_of_all_primitives_matches_fd() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for trial in 0..100 {
            let w: Matrix<f64> = {
                let data = (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect();
                Matrix::from_vec(3, 3, data).unwrap()
            };
            let b: Matrix<f64> = {
                let data = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
                Matrix::from_vec(3, 1, data).unwrap()
            };
            let z: Matrix<f64> = {
                let data = (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect();
                Matrix::from_vec(3, 3, data).unwrap()
            };
            let onehot = {
                let mut v = vec![0.0; 3];
                v[trial % 3] = 1.0;
                v
            };
            let report = grad_check(
                move |tape: &mut Tape<f64>, ps: &[Matrix<f64>]| {
                    let wp = tape.param(ParamId(0), &ps[0]);
                    let bp = tape.param(ParamId(1), &ps[1]);
                    let zi = tape.input(z.clone());
                    let h = tape.matmul(wp, zi)?;
                    let ht = tape.transpose(h);
                    let logits = tape.matmul(ht, h)?;
                    let s = tape.row_softmax(logits);
                    let m = tape.matmul(s, bp)?;
                    let t = tape.tanh(m);
                    let r = tape.relu(t);
                    let sc = tape.scale(r, 1.5);
                    let flat = tape.flatten_cols(sc);
                    let top = tape.slice(flat, 0..3, 0..1)?;
                    let ce = tape.cross_entropy(top, &onehot)?;
                    let first = tape.slice(flat, 0..1, 0..1)?;
                    let sq = tape.mse(first, 0.3)?;
                    tape.add(ce, sq)
                },
                &[w, b],
                1e-5,
                1e-4,
            )
            .unwrap();
            assert!(
                report.passed,
                "trial {}: max rel error {:.3e}",
                trial, report.max_rel_error
            );
        }
    }

    #[test]
    fn corrupted_gradient_is_reported_as_failure() {
        let w = Matrix::from_vec(2, 1, vec![0.7, -0.4]).unwrap();
        let forward = |tape: &mut Tape<f64>, ps: &[Matrix<f64>]| {
            let wp = tape.param(ParamId(0), &ps[0]);
            let wt = tape.transpose(wp);
            let sq = tape.matmul(wt, wp)?;
            tape.mse(sq, 0.0)
        };
        let mut analytic = analytic_gradients(forward, std::slice::from_ref(&w))
            .map(|v| v)
            .unwrap();
        let numeric = fd_gradients(forward, std::slice::from_ref(&w), 1e-5).unwrap();
        // sanity: uncorrupted passes
        assert!(compare_gradients(&analytic, &numeric, 1e-6).passed);
        // corrupt one entry
        analytic[0].data_mut()[1] += 0.5;
        let report = compare_gradients(&analytic, &numeric, 1e-6);
        assert!(!report.passed);
        assert!(report.max_rel_error > 1e-2);
        assert_eq!(report.worst().unwrap().param, 0);
    }
}
