use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Largest relative discrepancy between the tape gradient of `f` at `x` and
/// a central difference with step `h`, measured as
/// `|analytic - numeric| / max(1, |numeric|)`.
pub fn finite_diff_check<T, F>(f: F, x: &Tensor<T>, h: T) -> Result<T>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    let errs = finite_diff_check_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), h)?;
    Ok(errs[0])
}

/// Per-input maximum relative error of the tape gradient against central
/// differences. Every input is registered as a differentiable leaf.
pub fn finite_diff_check_many<T, F>(f: F, xs: &[Tensor<T>], h: T) -> Result<Vec<T>>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let eval = |inputs: &[Tensor<T>]| -> Result<T> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|x| tape.param(x.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let v = tape.value(out).item()?;
        if !v.is_finite() {
            return Err(Error::Numerics(format!("non-finite function value {v}")));
        }
        Ok(v)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = xs.iter().map(|x| tape.param(x.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let base = tape.value(out).item()?;
    if !base.is_finite() {
        return Err(Error::Numerics(format!("non-finite function value {base}")));
    }
    let grads = tape.backward(out)?;

    let two_h = h + h;
    let mut work: Vec<Tensor<T>> = xs.to_vec();
    let mut errors = Vec::with_capacity(xs.len());
    for (i, &v) in vars.iter().enumerate() {
        let analytic = grads.wrt(v);
        if !analytic.is_finite() {
            return Err(Error::Numerics(format!("non-finite analytic gradient for input {i}")));
        }
        let mut worst = T::zero();
        for c in 0..xs[i].len() {
            let orig = xs[i].data()[c];
            work[i].data_mut()[c] = orig + h;
            let plus = eval(&work)?;
            work[i].data_mut()[c] = orig - h;
            let minus = eval(&work)?;
            work[i].data_mut()[c] = orig;
            let numeric = (plus - minus) / two_h;
            let err = (analytic.data()[c] - numeric).abs() / T::one().max(numeric.abs());
            worst = worst.max(err);
        }
        errors.push(worst);
    }
    Ok(errors)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::autodiff::{CustomOp, NeighborIndex};

    fn t(rows: &[Vec<f64>]) -> Tensor<f64> {
        Tensor::from_f64_rows(rows).unwrap()
    }

    #[test]
    fn quadratic_is_exact() {
        let x = t(&[vec![1.0, 2.0]]);
        let err = finite_diff_check(
            |tape, v| {
                let sq = tape.mul(v, v)?;
                Ok(tape.sum(sq))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-9, "{err}");
    }

    #[test]
    fn relu_matmul_composite() {
        let w = t(&[vec![0.3, -0.7, 1.1], vec![0.8, 0.25, -0.4]]);
        let x = t(&[vec![1.0, 0.5], vec![-0.6, 2.0]]);
        let err = finite_diff_check(
            |tape, wv| {
                let xv = tape.constant(x.clone());
                let y = tape.matmul(xv, wv)?;
                let r = tape.relu(y);
                let e = tape.exp(r);
                Ok(tape.sum(e))
            },
            &w,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-6, "{err}");
    }

    #[derive(Debug)]
    struct WrongSquare;

    impl CustomOp<f64> for WrongSquare {
        fn name(&self) -> &str {
            "wrong_square"
        }
        fn forward(&self, inputs: &[&Tensor<f64>]) -> Result<Tensor<f64>> {
            Ok(inputs[0].map(|x| x * x))
        }
        fn backward(&self, inputs: &[&Tensor<f64>], _: &Tensor<f64>, g: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
            // should be 2x
            Ok(vec![inputs[0].hadamard(g)?])
        }
    }

    #[test]
    fn wrong_adjoint_is_detected() {
        let x = t(&[vec![1.5, -2.0, 3.0]]);
        let err = finite_diff_check(
            |tape, v| {
                let y = tape.custom(Box::new(WrongSquare), &[v])?;
                Ok(tape.sum(y))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err > 1e-2, "{err}");
    }

    #[test]
    fn every_primitive_adjoint() {
        // smooth point, relu inputs kept away from the kink
        let a = t(&[vec![0.4, -1.3, 0.9], vec![1.7, 0.6, -0.8]]);
        let b = t(&[vec![0.5, 0.2, 1.1], vec![-0.7, 0.9, 0.3]]);
        let bias = t(&[vec![0.1, -0.2, 0.3]]);
        let w = t(&[vec![0.2, -0.5], vec![0.7, 0.1], vec![-0.3, 0.4]]);
        let idx = Arc::new(NeighborIndex::from_lists(&[vec![0usize, 1], vec![1], vec![]]));
        let errs = finite_diff_check_many(
            |tape, v| {
                let (a, b, bias, w) = (v[0], v[1], v[2], v[3]);
                let s = tape.add(a, b)?;
                let d = tape.sub(s, b)?;
                let m = tape.mul(d, b)?;
                let mb = tape.add_row_bias(m, bias)?;
                let r = tape.relu(mb);
                let mm = tape.matmul(r, w)?;
                let sc = tape.scale(mm, 0.7);
                let sr = tape.scale_rows(sc, vec![2.0, -1.0])?;
                let cr = tape.concat_rows(&[sr, mm])?;
                let cc = tape.concat_cols(&[cr, cr])?;
                let g = tape.gather_sum(cc, idx.clone())?;
                let n = tape.normalize_rows(a);
                let nsum = tape.sum_rows(n);
                let e = tape.exp(g);
                let l = tape.log(e);
                let ex = tape.exp(nsum);
                let lg = tape.log(ex);
                let s1 = tape.sum(l);
                let s2 = tape.mean(lg);
                let sq = tape.mul(s1, s1)?;
                tape.add(sq, s2)
            },
            &[a, b, bias, w],
            1e-5,
        )
        .unwrap();
        for (i, e) in errs.iter().enumerate() {
            assert!(*e <= 1e-6, "input {i}: {e}");
        }
    }

    #[test]
    fn non_finite_values_are_reported() {
        let x = t(&[vec![-1.0]]);
        let r = finite_diff_check(|tape, v| Ok(tape.log(v)), &x, 1e-5);
        assert!(matches!(r, Err(Error::Numerics(_))));
    }
}
