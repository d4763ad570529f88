use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Compares analytic gradients against central finite differences.
///
/// `forward` receives a fresh graph plus one trainable leaf per entry of
/// `params` (same order) and must return a scalar loss. Returns the worst
/// relative error `|a − n| / max(|a|, |n|, 1e-8)` over every parameter element.
/// `params` are restored to their original values before returning.
pub fn check_gradients<F>(params: &mut [Tensor], eps: f64, mut forward: F) -> Result<f64>
where
    F: FnMut(&mut Graph, &[Var]) -> Result<Var>,
{
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::Parameter(format!("eps must be positive, got {eps}")));
    }

    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let loss = forward(&mut g, &vars)?;
    let base = g.value(loss).item();
    g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(params.iter())
        .map(|(&v, p)| g.grad(v).map_or_else(|| vec![0.0; p.numel()], <[f64]>::to_vec))
        .collect();

    let again = eval(params, &mut forward)?;
    if again.to_bits() != base.to_bits() {
        return Err(Error::Usage(format!(
            "forward is not deterministic ({base} then {again}); disable dropout for gradient checks"
        )));
    }

    let mut worst = 0.0f64;
    for (p, grads) in analytic.iter().enumerate() {
        for (j, &a) in grads.iter().enumerate() {
            let orig = params[p].data()[j];
            params[p].data_mut()[j] = orig + eps;
            let plus = eval(params, &mut forward);
            params[p].data_mut()[j] = orig - eps;
            let minus = eval(params, &mut forward);
            params[p].data_mut()[j] = orig;
            let numeric = (plus? - minus?) / (2.0 * eps);
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}

fn eval<F>(params: &[Tensor], forward: &mut F) -> Result<f64>
where
    F: FnMut(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.input(p.clone())).collect();
    let loss = forward(&mut g, &vars)?;
    Ok(g.value(loss).item())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic() {
        let mut params = vec![Tensor::scalar(3.0)];
        let err = check_gradients(&mut params, 1e-5, |g, v| {
            let sq = g.mul(v[0], v[0])?;
            g.sum(sq)
        })
        .unwrap();
        assert!(err < 1e-9, "{err}");
        assert_eq!(params[0].item(), 3.0);
    }

    #[test]
    fn detects_nondeterminism() {
        let mut params = vec![Tensor::scalar(1.0)];
        let mut calls = 0.0;
        let res = check_gradients(&mut params, 1e-5, |g, v| {
            calls += 1.0;
            let s = g.scale(v[0], calls)?;
            g.sum(s)
        });
        assert!(matches!(res, Err(Error::Usage(_))));
    }
}
