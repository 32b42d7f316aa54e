use super::{Graph, Matrix, ParamStore, TensorError, Var};

/// Outcome of comparing backprop gradients with central differences.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat component index of the worst mismatch.
    pub worst: Option<(String, usize)>,
    pub components: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

/// Denominator floor so that gradients which are zero up to finite-difference
/// noise are judged by absolute error.
const REL_FLOOR: f64 = 1e-6;

/// Checks every component of every parameter in `store` against a central
/// difference with step `h`. `build` must construct a scalar root from the
/// current store values; it is called `2·(components) + 1` times.
pub fn grad_check<F>(
    store: &mut ParamStore,
    h: f64,
    tol: f64,
    build: F,
) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var, TensorError>,
{
    let mut graph = Graph::new();
    let root = build(&mut graph, store)?;
    let grads = graph.backward(root);
    store.zero_grad();
    store.accumulate(&graph, &grads);
    let analytic: Vec<Matrix> = store
        .ids()
        .map(|id| {
            store
                .grad(id)
                .cloned()
                .unwrap_or_else(|| Matrix::zeros(store.value(id).rows(), store.value(id).cols()))
        })
        .collect();
    store.zero_grad();

    let eval = |store: &ParamStore| -> Result<f64, TensorError> {
        let mut g = Graph::new();
        let r = build(&mut g, store)?;
        Ok(g.scalar(r))
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        components: 0,
        tolerance: tol,
    };
    let ids: Vec<_> = store.ids().collect();
    for (k, id) in ids.into_iter().enumerate() {
        for i in 0..store.value(id).len() {
            let orig = store.value(id).as_slice()[i];
            store.value_mut(id).as_mut_slice()[i] = orig + h;
            let plus = eval(store)?;
            store.value_mut(id).as_mut_slice()[i] = orig - h;
            let minus = eval(store)?;
            store.value_mut(id).as_mut_slice()[i] = orig;

            let numeric = (plus - minus) / (2.0 * h);
            let exact = analytic[k].as_slice()[i];
            let denom = exact.abs().max(numeric.abs()).max(REL_FLOOR);
            let rel = (exact - numeric).abs() / denom;
            report.components += 1;
            if rel > report.max_rel_error || rel.is_nan() {
                report.max_rel_error = if rel.is_nan() { f64::INFINITY } else { rel };
                report.worst = Some((store.name(id).to_string(), i));
            }
        }
    }
    Ok(report)
}
