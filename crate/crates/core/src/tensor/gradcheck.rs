use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Outcome of comparing analytic gradients with central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Worst relative error over every parameter entry.
    pub max_rel_error: f64,
    /// Worst relative error per parameter tensor, in input order.
    pub per_param: Vec<f64>,
    /// (parameter, entry) of the worst error.
    pub worst: Option<(usize, usize)>,
}

fn evaluate<F>(f: &F, params: &[Tensor], track: bool) -> Result<(Graph, Vec<Var>, Var)>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut graph = Graph::new();
    let vars: Vec<Var> = params
        .iter()
        .map(|p| {
            let mut t = p.clone();
            t.set_requires_grad(track);
            graph.leaf(t)
        })
        .collect();
    let out = f(&mut graph, &vars)?;
    if graph.shape(out) != [1, 1] {
        return Err(Error::contract("grad_check needs a scalar function"));
    }
    Ok((graph, vars, out))
}

/// Compares reverse-mode gradients of the scalar function `f` against
/// `(f(θ+ε) − f(θ−ε)) / 2ε` for every entry of every parameter.
///
/// The relative error of one entry is `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check<F>(f: F, params: &[Tensor], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::contract(format!("grad_check needs eps > 0, got {eps}")));
    }
    let (mut graph, vars, out) = evaluate(&f, params, true)?;
    let base = graph.scalar(out);
    graph.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(params)
        .map(|(v, p)| graph.grad(*v).map_or_else(|| vec![0.0; p.len()], <[f64]>::to_vec))
        .collect();

    let (again_graph, _, again) = evaluate(&f, params, false)?;
    if again_graph.scalar(again).to_bits() != base.to_bits() {
        return Err(Error::GradCheck(format!(
            "function is not deterministic: {base} then {}",
            again_graph.scalar(again)
        )));
    }

    let mut work: Vec<Tensor> = params.to_vec();
    let mut per_param = vec![0.0f64; params.len()];
    let mut worst = None;
    let mut max_rel = 0.0f64;
    for p in 0..params.len() {
        for (j, &a) in analytic[p].iter().enumerate() {
            let orig = work[p].data()[j];
            work[p].data_mut()[j] = orig + eps;
            let (gp, _, op) = evaluate(&f, &work, false)?;
            work[p].data_mut()[j] = orig - eps;
            let (gm, _, om) = evaluate(&f, &work, false)?;
            work[p].data_mut()[j] = orig;
            let numeric = (gp.scalar(op) - gm.scalar(om)) / (2.0 * eps);
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            let rel = (a - numeric).abs() / denom;
            if rel > per_param[p] {
                per_param[p] = rel;
            }
            if rel > max_rel || worst.is_none() {
                max_rel = max_rel.max(rel);
                worst = Some((p, j));
            }
        }
    }
    Ok(GradCheckReport {
        max_rel_error: max_rel,
        per_param,
        worst,
    })
}
