//! Finite-difference gradient checking harness.
//!
//! `check_gradients` takes a graph-building closure and a parameter set,
//! computes analytic gradients by reverse accumulation, recomputes them by
//! central finite differences of the forward value, and reports the max
//! relative error per parameter. Used heavily in tests; kept in the library
//! so the model crates can gradient-check their own composites.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::tensor::{Tape, TensorId};

/// Per-parameter outcome of a gradient check.
#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
}

/// Report over all parameters, with the tolerance it was run at.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tol: f64,
}

impl GradCheckReport {
    /// Largest relative error across all parameters.
    pub fn worst(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn is_ok(&self) -> bool {
        self.worst() <= self.tol
    }
}

fn eval<F>(build: &F, params: &ParamSet) -> Result<f64>
where
    F: Fn(&mut Tape, &HashMap<String, TensorId>) -> Result<TensorId>,
{
    let mut tape = Tape::new();
    let ids = params.stage(&mut tape)?;
    let loss = build(&mut tape, &ids)?;
    if tape.tensor(loss).numel() != 1 {
        return Err(Error::Shape("gradient check expects a scalar function".into()));
    }
    Ok(tape.value_scalar(loss))
}

/// Compare reverse-mode gradients of `build`'s scalar output against central
/// finite differences with step `h`. Relative error per element is
/// |analytic − numeric| / max(1, |numeric|); the report carries the max per
/// parameter. The function is evaluated twice up front; if the two values
/// differ bitwise the closure is not deterministic and no comparison is
/// meaningful.
pub fn check_gradients<F>(build: F, params: &ParamSet, h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &HashMap<String, TensorId>) -> Result<TensorId>,
{
    if h <= 0.0 {
        return Err(Error::Config(format!("finite-difference step {h} must be positive")));
    }
    let first = eval(&build, params)?;
    let second = eval(&build, params)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::Determinism(format!(
            "scalar function returned {first} then {second} on identical inputs"
        )));
    }

    // Analytic pass.
    let mut tape = Tape::new();
    let ids = params.stage(&mut tape)?;
    let loss = build(&mut tape, &ids)?;
    tape.backward(loss)?;

    let mut report = GradCheckReport { params: Vec::new(), tol };
    for p in params.iter() {
        let analytic = tape
            .grad(ids[&p.name])
            .expect("backward populates all gradients")
            .to_vec();
        let mut max_rel = 0.0f64;
        for i in 0..p.values.len() {
            let mut plus = params.clone();
            plus.get_mut(&p.name)?.values[i] += h;
            let mut minus = params.clone();
            minus.get_mut(&p.name)?.values[i] -= h;
            let numeric = (eval(&build, &plus)? - eval(&build, &minus)?) / (2.0 * h);
            let rel = (analytic[i] - numeric).abs() / numeric.abs().max(1.0);
            max_rel = max_rel.max(rel);
        }
        report.params.push(ParamCheck {
            name: p.name.clone(),
            max_rel_error: max_rel,
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RunRng;

    #[test]
    fn quadratic_form_is_nearly_exact() {
        // f(x) = xᵀAx is quadratic, so central differences are exact up to
        // floating-point rounding.
        let mut rng = RunRng::new(3);
        let a_vals: Vec<f64> = (0..9).map(|_| rng.normal()).collect();
        let mut params = ParamSet::new();
        let x_vals: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
        params.register("x", &[1, 3], x_vals).unwrap();

        let report = check_gradients(
            move |tape, ids| {
                let a = tape.leaf(a_vals.clone(), vec![3, 3])?;
                let xa = tape.matmul(ids["x"], a)?;
                let xt = tape.transpose(ids["x"])?;
                let q = tape.matmul(xa, xt)?;
                tape.sum(q)
            },
            &params,
            1e-5,
            1e-8,
        )
        .unwrap();
        assert!(report.is_ok(), "worst {}", report.worst());
    }

    #[test]
    fn softmax_cross_entropy_head_within_tolerance() {
        let mut rng = RunRng::new(5);
        let mut params = ParamSet::new();
        params
            .register_normal("w", &[4, 3], 0.5, &mut rng)
            .unwrap();
        params
            .register_normal("x", &[2, 4], 0.5, &mut rng)
            .unwrap();
        let report = check_gradients(
            |tape, ids| {
                let logits = tape.matmul(ids["x"], ids["w"])?;
                tape.cross_entropy(logits, &[2, 0], &[1.0, 1.0])
            },
            &params,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.is_ok(), "worst {}", report.worst());
    }

    #[test]
    fn constant_function_has_zero_error() {
        let mut params = ParamSet::new();
        params.register("x", &[2], vec![1.0, -1.0]).unwrap();
        let report = check_gradients(
            |tape, _ids| tape.scalar(7.5),
            &params,
            1e-5,
            0.0,
        )
        .unwrap();
        assert_eq!(report.worst(), 0.0);
    }

    #[test]
    fn nondeterministic_function_is_rejected() {
        use std::cell::Cell;
        let counter = Cell::new(0.0f64);
        let mut params = ParamSet::new();
        params.register("x", &[1], vec![0.0]).unwrap();
        let err = check_gradients(
            move |tape, _ids| {
                counter.set(counter.get() + 1.0);
                tape.scalar(counter.get())
            },
            &params,
            1e-5,
            1e-4,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Determinism(_)));
    }

    /// Every differentiable primitive, gradient-checked on 20+ random shapes.
    #[test]
    fn primitives_match_finite_differences_on_random_shapes() {
        let primitives = [
            "add", "add_bias", "mul", "scale", "matmul", "transpose", "embedding", "conv1d",
            "max_rows", "relu", "gelu", "layer_norm", "softmax", "log_softmax", "cross_entropy",
            "row_gather", "mean", "concat_cols", "slice_rows", "slice_cols", "reshape",
        ];
        for (pi, prim) in primitives.iter().enumerate() {
            for trial in 0..20u64 {
                let mut rng = RunRng::new(1000 + pi as u64 * 100 + trial);
                let rows = 1 + rng.below(4);
                let cols = 2 + rng.below(4);
                let mut params = ParamSet::new();
                params
                    .register_normal("a", &[rows, cols], 0.8, &mut rng)
                    .unwrap();
                params
                    .register_normal("b", &[rows, cols], 0.8, &mut rng)
                    .unwrap();
                params.register_normal("bias", &[cols], 0.5, &mut rng).unwrap();
                let target = rng.below(cols);
                let gathers: Vec<usize> = (0..rows).map(|_| rng.below(cols)).collect();
                let valid = 1 + rng.below(rows);
                let prim = *prim;

                let report = check_gradients(
                    move |tape, ids| {
                        let a = ids["a"];
                        let b = ids["b"];
                        let out = match prim {
                            "add" => tape.add(a, b)?,
                            "add_bias" => tape.add(a, ids["bias"])?,
                            "mul" => tape.mul(a, b)?,
                            "scale" => tape.scale(a, -1.7)?,
                            "matmul" => {
                                let bt = tape.transpose(b)?;
                                tape.matmul(a, bt)?
                            }
                            "transpose" => tape.transpose(a)?,
                            "embedding" => {
                                // Rows of `a` act as the table.
                                let ids_seq: Vec<usize> = (0..3).map(|i| i % rows).collect();
                                tape.embedding(a, &ids_seq)?
                            }
                            "conv1d" => {
                                // width 1 keeps every shape valid.
                                let w = tape.transpose(b)?; // [cols, rows]
                                let bias0 = tape.leaf(vec![0.1; rows], vec![rows])?;
                                tape.conv1d(a, w, bias0, 1)?
                            }
                            "max_rows" => tape.max_rows(a, valid)?,
                            "relu" => tape.relu(a)?,
                            "gelu" => tape.gelu(a)?,
                            "layer_norm" => {
                                let g = tape.leaf(vec![1.1; cols], vec![cols])?;
                                let be = tape.leaf(vec![-0.2; cols], vec![cols])?;
                                tape.layer_norm(a, g, be, 1e-5)?
                            }
                            "softmax" => tape.softmax(a)?,
                            "log_softmax" => tape.log_softmax(a)?,
                            "cross_entropy" => {
                                let t: Vec<usize> = (0..rows).map(|_| target).collect();
                                tape.cross_entropy(a, &t, &vec![1.0; rows])?
                            }
                            "row_gather" => tape.row_gather(a, &gathers)?,
                            "mean" => tape.mean(a)?,
                            "concat_cols" => tape.concat_cols(&[a, b])?,
                            "slice_rows" => tape.slice_rows(a, 0, rows.max(1))?,
                            "slice_cols" => tape.slice_cols(a, 1, cols)?,
                            "reshape" => tape.reshape(a, &[rows * cols])?,
                            other => unreachable!("{other}"),
                        };
                        // Reduce to a scalar through a curvature-adding square
                        // so upstream grads are non-trivial.
                        let sq = tape.mul(out, out)?;
                        tape.sum(sq)
                    },
                    &params,
                    1e-5,
                    1e-4,
                )
                .unwrap();
                assert!(
                    report.is_ok(),
                    "{prim} trial {trial}: worst rel error {}",
                    report.worst()
                );
            }
        }
    }
}
