//! Central finite-difference gradient checks.
//!
//! Relative error of an entry is `|a − n| / max(|a|, |n|, floor)` where the
//! floor is 1% of the largest magnitude in the same parameter group. Entries
//! that are tiny compared to the rest of their group are therefore compared
//! against the group scale instead of their own (noise-dominated) value.

use crate::nn::{GradientBundle, MlpNetwork};

/// Default central-difference step.
pub const DEFAULT_STEP: f64 = 1e-5;

const GROUP_FLOOR_FRACTION: f64 = 1e-2;
const ABS_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct GroupError {
    pub name: String,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FiniteDiffReport {
    pub groups: Vec<GroupError>,
}

impl FiniteDiffReport {
    pub fn max_rel_error(&self) -> f64 {
        self.groups
            .iter()
            .map(|g| g.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn within(&self, tolerance: f64) -> bool {
        self.max_rel_error() < tolerance
    }

    pub fn merge(&mut self, other: FiniteDiffReport) {
        self.groups.extend(other.groups);
    }
}

/// Worst elementwise relative error between an analytic and a numeric gradient.
pub fn group_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (GROUP_FLOOR_FRACTION * scale).max(ABS_FLOOR);
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Central-difference gradient of `f` at `x`. `x` is restored on return.
pub fn numeric_gradient<F>(x: &mut [f64], step: f64, mut f: F) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + step;
            let plus = f(x);
            x[i] = orig - step;
            let minus = f(x);
            x[i] = orig;
            (plus - minus) / (2.0 * step)
        })
        .collect()
}

/// Compares `analytic` against central differences of `f` around `x`.
pub fn check_vector<F>(name: &str, x: &[f64], analytic: &[f64], step: f64, f: F) -> GroupError
where
    F: FnMut(&[f64]) -> f64,
{
    let mut point = x.to_vec();
    let numeric = numeric_gradient(&mut point, step, f);
    GroupError {
        name: name.to_owned(),
        max_rel_error: group_relative_error(analytic, &numeric),
    }
}

/// Checks analytic network-parameter gradients against central differences of
/// `loss` for every weight and bias, one report entry per parameter group.
pub fn finite_diff_check<F>(
    net: &MlpNetwork,
    mut loss: F,
    analytic: &GradientBundle,
    step: f64,
) -> FiniteDiffReport
where
    F: FnMut(&MlpNetwork) -> f64,
{
    let mut probe = net.clone();
    let analytic_groups = analytic.groups();
    let n_groups = analytic_groups.len();
    let mut groups = Vec::with_capacity(n_groups);
    for g in 0..n_groups {
        let len = analytic_groups[g].len();
        let mut numeric = Vec::with_capacity(len);
        for i in 0..len {
            let orig = probe.param_groups()[g][i];
            probe.param_groups_mut()[g][i] = orig + step;
            let plus = loss(&probe);
            probe.param_groups_mut()[g][i] = orig - step;
            let minus = loss(&probe);
            probe.param_groups_mut()[g][i] = orig;
            numeric.push((plus - minus) / (2.0 * step));
        }
        let kind = if g % 2 == 0 { "weight" } else { "bias" };
        groups.push(GroupError {
            name: format!("layer{}.{kind}", g / 2),
            max_rel_error: group_relative_error(analytic_groups[g], &numeric),
        });
    }
    FiniteDiffReport { groups }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::DenseMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn quadratic(net: &MlpNetwork) -> f64 {
        net.param_groups()
            .iter()
            .flat_map(|g| g.iter())
            .map(|w| 0.5 * w * w)
            .sum()
    }

    fn params_as_bundle(net: &MlpNetwork) -> GradientBundle {
        GradientBundle {
            weights: net.layers().iter().map(|l| l.weights.clone()).collect(),
            biases: net.layers().iter().map(|l| l.bias.clone()).collect(),
            input: DenseMatrix::zeros(1, net.input_dim()),
        }
    }

    #[test]
    fn quadratic_loss_gradient_is_the_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut net = MlpNetwork::new([4, 3, 3, 2], &mut rng).unwrap();
        for l in net.layers_mut() {
            for b in &mut l.bias {
                *b = 0.3;
            }
        }
        let analytic = params_as_bundle(&net);
        let report = finite_diff_check(&net, quadratic, &analytic, DEFAULT_STEP);
        assert_eq!(report.groups.len(), 6);
        assert!(report.max_rel_error() < 1e-8, "{report:?}");
    }

    #[test]
    fn constant_loss_has_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = MlpNetwork::new([4, 3, 3, 2], &mut rng).unwrap();
        let zeros = MlpNetwork::zeros([4, 3, 3, 2]).unwrap();
        let analytic = params_as_bundle(&zeros);
        let report = finite_diff_check(&net, |_| 42.0, &analytic, DEFAULT_STEP);
        assert_eq!(report.max_rel_error(), 0.0);
    }

    #[test]
    fn wrong_gradient_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let net = MlpNetwork::new([4, 3, 3, 2], &mut rng).unwrap();
        let mut analytic = params_as_bundle(&net);
        analytic.biases[1][0] += 1.0;
        let report = finite_diff_check(&net, quadratic, &analytic, DEFAULT_STEP);
        assert!(!report.within(1e-4));
        let bad = report
            .groups
            .iter()
            .find(|g| g.max_rel_error > 1e-4)
            .unwrap();
        assert_eq!(bad.name, "layer1.bias");
    }

    #[test]
    fn numeric_gradient_restores_point() {
        let mut x = vec![1.0, -2.0, 0.5];
        let g = numeric_gradient(&mut x, 1e-5, |v| v[0] * v[1] + v[2] * v[2]);
        assert_eq!(x, vec![1.0, -2.0, 0.5]);
        assert!((g[0] + 2.0).abs() < 1e-9);
        assert!((g[1] - 1.0).abs() < 1e-9);
        assert!((g[2] - 1.0).abs() < 1e-9);
    }
}
