use super::graph::{Graph, NodeId};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Max over entries of `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
    pub max_rel_error: f64,
    /// `(parameter index, entry index)` where the max was attained.
    pub worst: Option<(usize, usize)>,
    pub entries_checked: usize,
}

fn evaluate<F>(build: &F, params: &[Tensor]) -> Result<(Graph, Vec<NodeId>, CheckNodes)>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<CheckNodes>,
{
    let mut graph = Graph::new();
    let ids: Vec<NodeId> = params.iter().map(|p| graph.parameter(p.clone())).collect();
    let nodes = build(&mut graph, &ids)?;
    for &id in std::iter::once(&nodes.backprop).chain(&nodes.targets) {
        let value = graph.value(id);
        if !value.is_scalar() {
            return Err(Error::shape("grad_check", "loss must be scalar"));
        }
        if !value.data()[0].is_finite() {
            return Err(Error::NonFinite("grad_check loss".into()));
        }
    }
    Ok((graph, ids, nodes))
}

/// Nodes recorded by a routed gradient check.
#[derive(Clone, Debug)]
pub struct CheckNodes {
    /// Scalar whose reverse-mode gradient is checked.
    pub backprop: NodeId,
    /// Scalars whose finite differences serve as reference; parameter `i`
    /// is compared against `targets[target_of(i)]`.
    pub targets: Vec<NodeId>,
}

/// Compares reverse-mode gradients of the scalar built by `build` against
/// central finite differences with the given `step`.
///
/// `build` receives a fresh graph and the node ids of `params` (registered as
/// parameters, in order) and returns the loss node. It must be deterministic.
pub fn grad_check<F>(build: F, params: &[Tensor], step: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    grad_check_routed(
        |g, ids| {
            let loss = build(g, ids)?;
            Ok(CheckNodes {
                backprop: loss,
                targets: vec![loss],
            })
        },
        params,
        step,
        |_| 0,
    )
}

/// Gradient check for graphs with gradient reversal, where different
/// parameters descend different objectives: the backward sweep runs from
/// `backprop`, and parameter `i` is compared against finite differences of
/// `targets[target_of(i)]`.
pub fn grad_check_routed<F, S>(build: F, params: &[Tensor], step: f64, target_of: S) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<CheckNodes>,
    S: Fn(usize) -> usize,
{
    if !(1e-7..=1e-4).contains(&step) {
        return Err(Error::invalid(format!("grad_check step {step} outside [1e-7, 1e-4]")));
    }
    let (graph, ids, nodes) = evaluate(&build, params)?;
    let analytic = graph.backward(nodes.backprop)?.collect(&ids);

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        entries_checked: 0,
    };
    let mut work: Vec<Tensor> = params.to_vec();
    for (pi, grad) in analytic.iter().enumerate() {
        let target = target_of(pi);
        if target >= nodes.targets.len() {
            return Err(Error::invalid(format!("parameter {pi} routed to missing target {target}")));
        }
        for ei in 0..grad.len() {
            let orig = work[pi].data()[ei];
            work[pi].data_mut()[ei] = orig + step;
            let (gp, _, np) = evaluate(&build, &work)?;
            work[pi].data_mut()[ei] = orig - step;
            let (gm, _, nm) = evaluate(&build, &work)?;
            work[pi].data_mut()[ei] = orig;

            let fp = gp.value(np.targets[target]).data()[0];
            let fm = gm.value(nm.targets[target]).data()[0];
            let numeric = (fp - fm) / (2.0 * step);
            let a = grad.data()[ei];
            let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((pi, ei));
            }
            report.entries_checked += 1;
        }
    }
    Ok(report)
}
