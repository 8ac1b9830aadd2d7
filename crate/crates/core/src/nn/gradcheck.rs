use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Graph, ParameterRegistry, Var};
use crate::error::Result;

/// Magnitude below which gradients are compared absolutely rather than
/// relatively.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// Step refinements tried on a coordinate whose estimate disagrees.
const KINK_REFINEMENTS: u32 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coordinates_checked: usize,
    /// `(parameter, flat index, analytic, numeric)` of the worst coordinate.
    pub worst: Option<(String, usize, f64, f64)>,
    /// Coordinates where a ReLU or max switched inside the step and a
    /// smaller step was used.
    pub kinks: usize,
}

/// Compare the backward pass of `f` against central differences.
///
/// Up to `samples_per_param` coordinates of every parameter are checked
/// (all of them when the parameter is smaller), chosen by `seed`.
///
/// A disagreeing coordinate is re-estimated with a step ten times smaller,
/// at most twice, as long as the estimate keeps moving by more than 1e-4
/// relative plus rounding noise. That only happens when the loss is not
/// differentiable inside the step; on a smooth stretch the estimate is
/// stable and the error stands.
pub fn grad_check<F>(
    registry: &ParameterRegistry,
    f: F,
    epsilon: f64,
    samples_per_param: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    let analytic = {
        let mut g = Graph::new(registry);
        let loss = f(&mut g)?;
        g.backward(loss)?
    };
    let eval = |reg: &ParameterRegistry| -> Result<f64> {
        let mut g = Graph::new(reg);
        let loss = f(&mut g)?;
        Ok(g.value(loss).data[0])
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = registry.clone();
    let mut report = GradCheckReport { max_rel_error: 0.0, coordinates_checked: 0, worst: None, kinks: 0 };
    let rel_err = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(GRAD_CHECK_FLOOR);
    for (id, p) in registry.iter() {
        let n = p.value.len();
        let coords: Vec<usize> = if n <= samples_per_param {
            (0..n).collect()
        } else {
            (0..samples_per_param).map(|_| rng.gen_range(0..n)).collect()
        };
        for k in coords {
            let orig = p.value.data[k];
            // estimate and its rounding noise
            let mut central = |step: f64| -> Result<(f64, f64)> {
                probe.param_mut(id).value.data[k] = orig + step;
                let up = eval(&probe)?;
                probe.param_mut(id).value.data[k] = orig - step;
                let down = eval(&probe)?;
                probe.param_mut(id).value.data[k] = orig;
                let noise = 8.0 * f64::EPSILON * (1.0 + up.abs().max(down.abs())) / step;
                Ok(((up - down) / (2.0 * step), noise))
            };

            let a = analytic.get(id).map_or(0.0, |g| g[k]);
            let mut step = epsilon;
            let (mut numeric, _) = central(step)?;
            let mut kinked = false;
            for _ in 0..KINK_REFINEMENTS {
                if rel_err(a, numeric) <= GRAD_CHECK_FLOOR {
                    break;
                }
                step /= 10.0;
                let (finer, noise) = central(step)?;
                if (numeric - finer).abs() <= 1e-4 * numeric.abs().max(finer.abs()) + noise {
                    break;
                }
                numeric = finer;
                kinked = true;
            }
            report.kinks += kinked as usize;
            let rel = rel_err(a, numeric);
            report.coordinates_checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                if rel >= report.max_rel_error {
                    report.worst = Some((p.name.clone(), k, a, numeric));
                }
            }
        }
    }
    Ok(report)
}
