//! Central-difference verification of analytic gradients.

use crate::{Elem, ParamStore, Tape, Tensor, TensorError, Var};

fn check_step(step: f64) -> Result<(), TensorError> {
    if !(1e-4..=1e-2).contains(&step) {
        return Err(TensorError::invalid(
            "grad_check",
            format!("step {step} outside [1e-4, 1e-2]"),
        ));
    }
    Ok(())
}

fn scalar_output<T: Elem>(tape: &Tape<T>, out: Var) -> Result<f64, TensorError> {
    let value = tape.value(out);
    if value.numel() != 1 {
        return Err(TensorError::invalid(
            "grad_check",
            format!("function must be scalar-valued, got shape {:?}", value.shape()),
        ));
    }
    let v = value.item().widen();
    if !v.is_finite() {
        return Err(TensorError::NonFinite {
            op: tape.first_non_finite().unwrap_or(tape.op_name(out)),
        });
    }
    Ok(v)
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1.0)
}

/// Maximum over all input elements of
/// `|analytic − central difference| / max(1, |analytic|)`.
pub fn grad_check<T, F>(f: F, inputs: &[Tensor<T>], step: f64) -> Result<f64, TensorError>
where
    T: Elem,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var, TensorError>,
{
    check_step(step)?;
    let eval = |inputs: &[Tensor<T>]| -> Result<f64, TensorError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        scalar_output(&tape, out)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| tape.leaf(t.clone().with_requires_grad()))
        .collect();
    let out = f(&mut tape, &vars)?;
    scalar_output(&tape, out)?;
    let grads = tape.backward(out)?;

    let mut worst = 0f64;
    let mut probe: Vec<Tensor<T>> = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var);
        for e in 0..inputs[i].numel() {
            let a = analytic.map_or(0.0, |g| g[e].widen());
            if !a.is_finite() {
                return Err(TensorError::NonFinite {
                    op: tape.first_non_finite().unwrap_or("backward"),
                });
            }
            let original = inputs[i].data()[e];
            probe[i].data_mut()[e] = T::of(original.widen() + step);
            let plus = eval(&probe)?;
            probe[i].data_mut()[e] = T::of(original.widen() - step);
            let minus = eval(&probe)?;
            probe[i].data_mut()[e] = original;
            let numeric = (plus - minus) / (2.0 * step);
            worst = worst.max(relative_error(a, numeric));
        }
    }
    Ok(worst)
}

/// Like [`grad_check`], perturbing every trainable element of a parameter
/// store instead of explicit inputs. Frozen rows are skipped.
pub fn grad_check_params<T, F>(f: F, store: &ParamStore<T>, step: f64) -> Result<f64, TensorError>
where
    T: Elem,
    F: Fn(&mut Tape<T>, &ParamStore<T>) -> Result<Var, TensorError>,
{
    check_step(step)?;
    let mut tape = Tape::new();
    let out = f(&mut tape, store)?;
    scalar_output(&tape, out)?;
    let grads = tape.backward(out)?;
    let mut analytic = store.clone();
    analytic.zero_grads();
    analytic.accumulate(&tape, &grads);

    let eval = |s: &ParamStore<T>| -> Result<f64, TensorError> {
        let mut tape = Tape::inference();
        let out = f(&mut tape, s)?;
        scalar_output(&tape, out)
    };

    let mut probe = store.clone();
    let mut worst = 0f64;
    for id in store.ids() {
        let param = store.param(id);
        let grad = analytic.get(id).grad();
        for e in 0..param.value.numel() {
            if !param.is_trainable(e) {
                continue;
            }
            let a = grad.map_or(0.0, |g| g[e].widen());
            if !a.is_finite() {
                return Err(TensorError::NonFinite { op: "backward" });
            }
            let original = param.value.data()[e];
            probe.get_mut(id).data_mut()[e] = T::of(original.widen() + step);
            let plus = eval(&probe)?;
            probe.get_mut(id).data_mut()[e] = T::of(original.widen() - step);
            let minus = eval(&probe)?;
            probe.get_mut(id).data_mut()[e] = original;
            worst = worst.max(relative_error(a, (plus - minus) / (2.0 * step)));
        }
    }
    Ok(worst)
}

/// Differentiable function under test.
pub type CaseFn = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var, TensorError> + Send + Sync>;

/// One named gradient-check scenario with its inputs.
pub struct GradCase {
    pub name: &'static str,
    pub inputs: Vec<Tensor<f64>>,
    pub f: CaseFn,
}

impl GradCase {
    pub fn run(&self, step: f64) -> Result<f64, TensorError> {
        grad_check(&self.f, &self.inputs, step)
    }
}

/// Reduce any tensor to a scalar through a fixed random linear form, so
/// that every output element carries a distinct weight.
fn contract(tape: &mut Tape<f64>, x: Var, weights: &Tensor<f64>) -> Result<Var, TensorError> {
    let n = tape.value(x).numel();
    let flat = tape.reshape(x, vec![1, n])?;
    let w = tape.constant(weights.clone().reshape(vec![n, 1])?);
    let y = tape.matmul(flat, w)?;
    Ok(tape.sum(y))
}

/// One case per differentiable tensor operation, with input dimensions
/// drawn from 3..=5 by a generator seeded with `seed`.
pub fn op_cases(seed: u64) -> Vec<GradCase> {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use crate::init::uniform;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dim = || rng.random_range(3..=5usize);
    let (m, k, n) = (dim(), dim(), dim());
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0xD1B5);
    let mut rand_t = |shape: Vec<usize>| -> Tensor<f64> { uniform(shape, -1.0, 1.0, &mut rng) };

    let w_mn = rand_t(vec![m * n]);
    let w_mk = rand_t(vec![m * k]);
    let w_nm = rand_t(vec![n * m]);
    let w_mm = rand_t(vec![m * m]);
    let w_mkn = rand_t(vec![m * (k + n)]);

    let mut cases: Vec<GradCase> = Vec::new();

    let w = w_mn.clone();
    cases.push(GradCase {
        name: "matmul",
        inputs: vec![rand_t(vec![m, k]), rand_t(vec![k, n])],
        f: Box::new(move |t, v| {
            let y = t.matmul(v[0], v[1])?;
            contract(t, y, &w)
        }),
    });

    let w = w_nm.clone();
    cases.push(GradCase {
        name: "transpose",
        inputs: vec![rand_t(vec![m, n])],
        f: Box::new(move |t, v| {
            let y = t.transpose(v[0])?;
            contract(t, y, &w)
        }),
    });

    let w = w_mn.clone();
    cases.push(GradCase {
        name: "add",
        inputs: vec![rand_t(vec![m, n]), rand_t(vec![m, n])],
        f: Box::new(move |t, v| {
            let y = t.add(v[0], v[1])?;
            contract(t, y, &w)
        }),
    });

    let w = w_mn.clone();
    cases.push(GradCase {
        name: "add_row",
        inputs: vec![rand_t(vec![m, n]), rand_t(vec![n])],
        f: Box::new(move |t, v| {
            let y = t.add_row(v[0], v[1])?;
            contract(t, y, &w)
        }),
    });

    let w = w_mn.clone();
    cases.push(GradCase {
        name: "scale",
        inputs: vec![rand_t(vec![m, n])],
        f: Box::new(move |t, v| {
            let y = t.scale(v[0], -1.7);
            contract(t, y, &w)
        }),
    });

    let w = w_mn.clone();
    cases.push(GradCase {
        name: "reshape",
        inputs: vec![rand_t(vec![m, n])],
        f: Box::new(move |t, v| {
            let y = t.reshape(v[0], vec![n, m])?;
            contract(t, y, &w)
        }),
    });

    cases.push(GradCase {
        name: "sum",
        inputs: vec![rand_t(vec![m, n, k])],
        f: Box::new(|t, v| Ok(t.sum(v[0]))),
    });

    let w = w_mn.clone();
    cases.push(GradCase {
        name: "softmax_lastdim",
        inputs: vec![rand_t(vec![m, n])],
        f: Box::new(move |t, v| {
            let y = t.softmax_lastdim(v[0])?;
            contract(t, y, &w)
        }),
    });

    let w = w_mn.clone();
    cases.push(GradCase {
        name: "layer_norm",
        inputs: vec![rand_t(vec![m, n]), rand_t(vec![n]), rand_t(vec![n])],
        f: Box::new(move |t, v| {
            let y = t.layer_norm(v[0], v[1], v[2])?;
            contract(t, y, &w)
        }),
    });

    // Keep inputs away from the kink at zero.
    let mut x = rand_t(vec![m, n]);
    for v in x.data_mut() {
        *v = v.signum() * (0.05 + v.abs());
    }
    let w = w_mn.clone();
    cases.push(GradCase {
        name: "leaky_relu",
        inputs: vec![x],
        f: Box::new(move |t, v| {
            let y = t.leaky_relu(v[0], 0.1);
            contract(t, y, &w)
        }),
    });

    let w = w_mn.clone();
    cases.push(GradCase {
        name: "gelu",
        inputs: vec![rand_t(vec![m, n])],
        f: Box::new(move |t, v| {
            let y = t.gelu(v[0]);
            contract(t, y, &w)
        }),
    });

    let w = w_mn.clone();
    cases.push(GradCase {
        name: "dropout",
        inputs: vec![rand_t(vec![m, n])],
        f: Box::new(move |t, v| {
            let y = t.dropout(v[0], 0.33, true, seed)?;
            contract(t, y, &w)
        }),
    });

    let gold: Vec<usize> = (0..m).map(|r| (r * 7 + seed as usize) % n).collect();
    cases.push(GradCase {
        name: "cross_entropy_logits",
        inputs: vec![rand_t(vec![m, n])],
        f: Box::new(move |t, v| {
            let mut g = gold.clone();
            // First row is unsupervised.
            g[0] = usize::MAX;
            t.cross_entropy_logits(v[0], &g, Some(usize::MAX))
        }),
    });

    let w = w_mk.clone();
    cases.push(GradCase {
        name: "slice_cols",
        inputs: vec![rand_t(vec![m, k + 2])],
        f: Box::new(move |t, v| {
            let y = t.slice_cols(v[0], 1, k)?;
            contract(t, y, &w)
        }),
    });

    let w = w_mkn.clone();
    cases.push(GradCase {
        name: "concat_cols",
        inputs: vec![rand_t(vec![m, k]), rand_t(vec![m, n])],
        f: Box::new(move |t, v| {
            let y = t.concat_cols(&[v[0], v[1]])?;
            contract(t, y, &w)
        }),
    });

    let ids: Vec<usize> = (0..m).map(|r| (r * 3 + 1) % k).collect();
    let w = w_mn.clone();
    cases.push(GradCase {
        name: "gather_rows",
        inputs: vec![rand_t(vec![k, n])],
        f: Box::new(move |t, v| {
            let y = t.gather_rows(v[0], &ids)?;
            contract(t, y, &w)
        }),
    });

    let rel: std::sync::Arc<[u16]> = (0..m * m).map(|ij| ((ij * 5 + seed as usize) % k) as u16).collect();
    let rel2 = rel.clone();
    let w = w_mm.clone();
    cases.push(GradCase {
        name: "rel_gather",
        inputs: vec![rand_t(vec![m, k])],
        f: Box::new(move |t, v| {
            let y = t.rel_gather(v[0], rel.clone())?;
            contract(t, y, &w)
        }),
    });

    let w = w_mk.clone();
    cases.push(GradCase {
        name: "rel_scatter",
        inputs: vec![rand_t(vec![m, m])],
        f: Box::new(move |t, v| {
            let y = t.rel_scatter(v[0], rel2.clone(), k)?;
            contract(t, y, &w)
        }),
    });

    let w = w_mk.clone();
    cases.push(GradCase {
        name: "row_dot",
        inputs: vec![rand_t(vec![m, k * n]), rand_t(vec![m, n])],
        f: Box::new(move |t, v| {
            let y = t.row_dot(v[0], v[1])?;
            contract(t, y, &w)
        }),
    });

    cases
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_function_has_zero_error() {
        let x = Tensor::<f64>::from_rows(&[[1.0, 2.0]]);
        let err = grad_check(
            |tape, _| Ok(tape.constant(Tensor::scalar(4.0))),
            &[x],
            1e-3,
        )
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn rejects_step_out_of_range() {
        let x = Tensor::<f64>::scalar(1.0);
        let err = grad_check(|_, v| Ok(v[0]), &[x], 0.5).unwrap_err();
        assert!(matches!(err, TensorError::Invalid { op: "grad_check", .. }));
    }

    #[test]
    fn non_finite_output_names_operation() {
        let x = Tensor::<f64>::from_rows(&[[0.0, 1.0]]);
        let err = grad_check(
            |tape, v| {
                let inf = tape.constant(Tensor::from_rows(&[[f64::INFINITY, f64::NEG_INFINITY]]));
                let s = tape.add(v[0], inf)?;
                Ok(tape.sum(s))
            },
            &[x],
            1e-3,
        )
        .unwrap_err();
        assert_eq!(err, TensorError::NonFinite { op: "sum" });
    }

    #[test]
    fn broken_backward_rule_is_detected() {
        let x = Tensor::<f64>::from_rows(&[[0.3, -1.2, 2.0]]);
        let err = grad_check(
            |tape, v| {
                let value = tape.value(v[0]).clone();
                let data = value.data().iter().map(|x| x * x).collect();
                let out = Tensor::new(value.shape().to_vec(), data)?;
                // Wrong on purpose: d(x²)/dx is 2x, not x.
                let sq = tape.custom(
                    "square",
                    &[v[0]],
                    out,
                    Box::new(|inputs, _, dout| {
                        vec![inputs[0].data().iter().zip(dout).map(|(x, d)| x * d).collect()]
                    }),
                );
                Ok(tape.sum(sq))
            },
            &[x],
            1e-3,
        )
        .unwrap();
        assert!(err > 0.1);
    }
}
