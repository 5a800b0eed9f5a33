//! Central finite-difference oracle for tape gradients.

use super::graph::{Graph, Var};
use super::params::ParamStore;
use super::DiffError;

#[derive(Clone, Debug)]
pub struct GradCheck {
    /// `||g_tape - g_fd|| / max(||g_tape||, ||g_fd||)` over every scalar checked.
    pub relative_error: f64,
    pub checked: usize,
    pub tape_norm: f64,
}

/// Compares tape gradients of `loss` against central differences with step `h`.
/// At most `max_per_param` entries of each parameter are perturbed (evenly strided).
pub fn check<F>(store: &ParamStore<f64>, h: f64, max_per_param: usize, loss: F) -> Result<GradCheck, DiffError>
where
    F: Fn(&mut Graph<'_, f64>) -> Result<Var, DiffError>,
{
    let grads = {
        let mut g = Graph::new(store);
        let l = loss(&mut g)?;
        g.backward(l)?
    };
    let eval = |s: &ParamStore<f64>| -> Result<f64, DiffError> {
        let mut g = Graph::inference(s);
        let l = loss(&mut g)?;
        Ok(g.value(l).item())
    };
    let mut probe = store.clone();
    let (mut diff2, mut tape2, mut fd2, mut checked) = (0.0, 0.0, 0.0, 0usize);
    for id in store.ids() {
        if !store.is_trainable(id) {
            continue;
        }
        let tape = grads.param(id);
        let n = store.get(id).len();
        let stride = n.div_ceil(max_per_param.max(1)).max(1);
        for i in (0..n).step_by(stride) {
            let x0 = store.get(id).data()[i];
            probe.get_mut(id).data_mut()[i] = x0 + h;
            let up = eval(&probe)?;
            probe.get_mut(id).data_mut()[i] = x0 - h;
            let down = eval(&probe)?;
            probe.get_mut(id).data_mut()[i] = x0;
            let fd = (up - down) / (2.0 * h);
            let t = tape.data()[i];
            diff2 += (t - fd) * (t - fd);
            tape2 += t * t;
            fd2 += fd * fd;
            checked += 1;
        }
    }
    let denom = tape2.sqrt().max(fd2.sqrt()).max(1e-300);
    let relative_error = if tape2 == 0.0 && fd2 == 0.0 { 0.0 } else { diff2.sqrt() / denom };
    Ok(GradCheck { relative_error, checked, tape_norm: tape2.sqrt() })
}
