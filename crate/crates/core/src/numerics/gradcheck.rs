use super::{Element, NumericsError, Tape, Tensor, Var};

/// Compares reverse-mode gradients of a scalar function against central
/// finite differences and returns the worst relative error
/// `|analytic − numeric| / (|analytic| + |numeric| + 1e-12)`.
///
/// `f` receives a fresh tape and the input recorded as a parameter; it must
/// be deterministic across calls.
pub fn finite_diff_check<T, F>(f: F, x: &Tensor<T>, h: f64) -> Result<f64, NumericsError>
where
    T: Element,
    F: for<'t> Fn(&'t Tape<T>, Var<'t, T>) -> Result<Var<'t, T>, NumericsError>,
{
    if h <= 0.0 {
        return Err(NumericsError::Param(format!("step {h} must be positive")));
    }
    let analytic = {
        let tape = Tape::new();
        let input = tape.param(x.clone());
        let loss = f(&tape, input)?;
        tape.backward(loss)?.get_or_zeros(input)
    };
    let eval = |probe: Tensor<T>| -> Result<f64, NumericsError> {
        let tape = Tape::new();
        let input = tape.constant(probe);
        Ok(f(&tape, input)?.value().data()[0].as_f64())
    };
    let mut worst = 0.0f64;
    for i in 0..x.numel() {
        let mut plus = x.clone();
        let mut minus = x.clone();
        let step = T::from_f64_lossy(h);
        plus.data_mut()[i] = plus.data()[i] + step;
        minus.data_mut()[i] = minus.data()[i] - step;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * h);
        let a = analytic.data()[i].as_f64();
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs() + 1e-12);
        worst = worst.max(rel);
    }
    Ok(worst)
}
