//! Reverse-mode gradients, a central-difference oracle and AdamW.

mod adamw;
mod tape;

pub use adamw::{AdamW, AdamWConfig};
pub use tape::{Real, Tape, Var};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GroupKind {
    /// Center, Euler rotation and radii per texel.
    Poses,
    Payloads,
    Mlp,
    Latent,
    Decoder,
}

impl GroupKind {
    pub fn name(self) -> &'static str {
        match self {
            GroupKind::Poses => "gaussian_poses",
            GroupKind::Payloads => "payloads",
            GroupKind::Mlp => "mlp",
            GroupKind::Latent => "latent",
            GroupKind::Decoder => "decoder",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamGroup {
    pub kind: GroupKind,
    pub offset: usize,
    pub len: usize,
    pub lr: f64,
}

/// Flat vector of optimizable scalars partitioned into named groups.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    pub values: Vec<f64>,
    pub groups: Vec<ParamGroup>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push_group(&mut self, kind: GroupKind, values: &[f64], lr: f64) -> Result<()> {
        if self.groups.iter().any(|g| g.kind == kind) {
            return Err(Error::invalid(format!("duplicate parameter group {}", kind.name())));
        }
        if !(lr >= 0.0) {
            return Err(Error::invalid(format!("learning rate for {} must be >= 0", kind.name())));
        }
        self.groups.push(ParamGroup {
            kind,
            offset: self.values.len(),
            len: values.len(),
            lr,
        });
        self.values.extend_from_slice(values);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn group_info(&self, kind: GroupKind) -> Option<&ParamGroup> {
        self.groups.iter().find(|g| g.kind == kind)
    }

    pub fn group(&self, kind: GroupKind) -> Option<&[f64]> {
        self.group_info(kind).map(|g| &self.values[g.offset..g.offset + g.len])
    }

    pub fn group_mut(&mut self, kind: GroupKind) -> Option<&mut [f64]> {
        let g = self.group_info(kind)?.clone();
        Some(&mut self.values[g.offset..g.offset + g.len])
    }

    /// Same layout with different values.
    pub fn with_values(&self, values: Vec<f64>) -> ParamSet {
        assert_eq!(values.len(), self.values.len());
        ParamSet {
            values,
            groups: self.groups.clone(),
        }
    }

    /// Group owning flat index `i`.
    pub fn kind_of(&self, i: usize) -> Option<GroupKind> {
        self.groups
            .iter()
            .find(|g| i >= g.offset && i < g.offset + g.len)
            .map(|g| g.kind)
    }
}

/// Loss value plus a hash of every discrete branch taken while computing
/// it. Equal signatures mean the two points share one smooth piece.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub signature: u64,
}

pub trait Objective {
    fn evaluate(&self, params: &ParamSet) -> Result<Evaluation>;
    fn loss_and_gradient(&self, params: &ParamSet) -> Result<(Evaluation, Vec<f64>)>;
}

/// Objective defined by a closure over tape variables.
pub struct TapeObjective<F> {
    f: F,
}

impl<F> TapeObjective<F>
where
    F: for<'t> Fn(&[Var<'t>]) -> Var<'t>,
{
    pub fn new(f: F) -> Self {
        TapeObjective { f }
    }

    fn run(&self, params: &ParamSet, grad: bool) -> Result<(Evaluation, Vec<f64>)> {
        let tape = Tape::new();
        let xs = tape.vars(&params.values);
        let out = (self.f)(&xs);
        if !out.value().is_finite() {
            return Err(Error::numeric(
                tape.first_non_finite().unwrap_or("output"),
                format!("loss is {}", out.value()),
            ));
        }
        let eval = Evaluation {
            loss: out.value(),
            signature: tape.signature(),
        };
        let g = if grad {
            let adj = tape.gradient(out);
            xs.iter().map(|x| adj[x.index()]).collect()
        } else {
            Vec::new()
        };
        Ok((eval, g))
    }
}

impl<F> Objective for TapeObjective<F>
where
    F: for<'t> Fn(&[Var<'t>]) -> Var<'t>,
{
    fn evaluate(&self, params: &ParamSet) -> Result<Evaluation> {
        Ok(self.run(params, false)?.0)
    }

    fn loss_and_gradient(&self, params: &ParamSet) -> Result<(Evaluation, Vec<f64>)> {
        self.run(params, true)
    }
}

/// Analytic gradient laid out like `params`.
pub fn gradients(objective: &dyn Objective, params: &ParamSet) -> Result<ParamSet> {
    let (_, g) = objective.loss_and_gradient(params)?;
    Ok(params.with_values(g))
}

/// Central-difference estimate for one scalar.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdEntry {
    pub index: usize,
    pub value: f64,
    /// The stencil crosses a kink (branch signature changed within `2h`).
    pub excluded: bool,
}

/// Step actually used for scalar `theta`.
pub fn fd_step(h: f64, theta: f64) -> f64 {
    h * theta.abs().max(1.0)
}

/// `(L(θ+h) − L(θ−h)) / 2h` for each index, with `h` scaled by
/// `max(1, |θ|)`. A scalar is excluded when the loss takes a different
/// branch anywhere in `[θ−2h, θ+2h]`.
pub fn finite_diff(
    objective: &dyn Objective,
    params: &ParamSet,
    h: f64,
    indices: &[usize],
) -> Result<Vec<FdEntry>> {
    if !(h > 0.0) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let base = objective.evaluate(params)?;
    let mut p = params.clone();
    let mut out = Vec::with_capacity(indices.len());
    for &i in indices {
        let theta = params.values[i];
        let step = fd_step(h, theta);
        let mut at = |v: f64| -> Result<Evaluation> {
            p.values[i] = v;
            objective.evaluate(&p)
        };
        let plus = at(theta + step)?;
        let minus = at(theta - step)?;
        let plus2 = at(theta + 2.0 * step)?;
        let minus2 = at(theta - 2.0 * step)?;
        p.values[i] = theta;
        let excluded = [plus, minus, plus2, minus2]
            .iter()
            .any(|e| e.signature != base.signature);
        out.push(FdEntry {
            index: i,
            value: (plus.loss - minus.loss) / (2.0 * step),
            excluded,
        });
    }
    Ok(out)
}

/// `|a − b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupReport {
    pub kind: GroupKind,
    pub checked: usize,
    pub excluded: usize,
    pub max_rel_error: f64,
    pub worst_index: Option<usize>,
    /// Largest analytic gradient magnitude among checked scalars.
    pub max_abs_gradient: f64,
}

/// Compares analytic gradients with [`finite_diff`] at `indices`.
pub fn check_gradients(
    objective: &dyn Objective,
    params: &ParamSet,
    h: f64,
    indices: &[usize],
    floor: f64,
) -> Result<Vec<GroupReport>> {
    let (_, analytic) = objective.loss_and_gradient(params)?;
    let fd = finite_diff(objective, params, h, indices)?;
    let mut reports: Vec<GroupReport> = params
        .groups
        .iter()
        .map(|g| GroupReport {
            kind: g.kind,
            checked: 0,
            excluded: 0,
            max_rel_error: 0.0,
            worst_index: None,
            max_abs_gradient: 0.0,
        })
        .collect();
    for e in fd {
        let Some(kind) = params.kind_of(e.index) else {
            continue;
        };
        let r = reports.iter_mut().find(|r| r.kind == kind).expect("group exists");
        if e.excluded {
            r.excluded += 1;
            continue;
        }
        r.checked += 1;
        r.max_abs_gradient = r.max_abs_gradient.max(analytic[e.index].abs());
        let err = relative_error(analytic[e.index], e.value, floor);
        if err > r.max_rel_error || r.worst_index.is_none() {
            r.max_rel_error = r.max_rel_error.max(err);
            r.worst_index = Some(e.index);
        }
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn set(vals: &[f64]) -> ParamSet {
        let mut p = ParamSet::new();
        p.push_group(GroupKind::Poses, vals, 0.1).unwrap();
        p
    }

    #[test]
    fn quadratic_gradient_is_exact() {
        let obj = TapeObjective::new(|x: &[Var]| {
            let sq: Vec<_> = x.iter().map(|v| v.square()).collect();
            Real::sum(&sq)
        });
        let p = set(&[0.5, -1.25, 3.0]);
        let g = gradients(&obj, &p).unwrap();
        assert_eq!(g.values, vec![1.0, -2.5, 6.0]);
    }

    #[test]
    fn untouched_group_has_zero_gradient() {
        let mut p = set(&[1.0, 2.0]);
        p.push_group(GroupKind::Payloads, &[7.0, 8.0], 0.1).unwrap();
        let obj = TapeObjective::new(|x: &[Var]| x[0] * x[1]);
        let g = gradients(&obj, &p).unwrap();
        assert_eq!(g.group(GroupKind::Payloads).unwrap(), &[0.0, 0.0]);
        assert_eq!(g.group(GroupKind::Poses).unwrap(), &[2.0, 1.0]);
    }

    #[test]
    fn non_finite_loss_reports_op() {
        let obj = TapeObjective::new(|x: &[Var]| x[0] / x[1]);
        let err = gradients(&obj, &set(&[1.0, 0.0])).unwrap_err();
        assert!(matches!(err, Error::NumericFailure { ref op, .. } if op == "div"), "{err}");
    }

    #[test]
    fn linear_finite_difference() {
        let obj = TapeObjective::new(|x: &[Var]| x[0] * 3.0);
        let fd = finite_diff(&obj, &set(&[0.7]), 1e-5, &[0]).unwrap();
        assert_abs_diff_eq!(fd[0].value, 3.0, epsilon = 1e-9);
        assert!(!fd[0].excluded);
    }

    #[test]
    fn cubic_finite_difference_carries_taylor_term() {
        let obj = TapeObjective::new(|x: &[Var]| x[0] * x[0] * x[0]);
        let fd = finite_diff(&obj, &set(&[1.0]), 1e-4, &[0]).unwrap();
        assert_abs_diff_eq!(fd[0].value, 3.0 + 1e-8, epsilon = 1e-9);
    }

    #[test]
    fn kink_adjacent_scalar_is_excluded() {
        let obj = TapeObjective::new(|x: &[Var]| x[0].abs() + x[1].abs());
        let fd = finite_diff(&obj, &set(&[1e-6, 0.5]), 1e-5, &[0, 1]).unwrap();
        assert!(fd[0].excluded);
        assert!(!fd[1].excluded);
    }

    #[test]
    fn gradient_of_sum_is_sum_of_gradients() {
        let p = set(&[0.3, -0.8, 1.7]);
        let a = TapeObjective::new(|x: &[Var]| x[0] * x[1] + x[2].exp());
        let b = TapeObjective::new(|x: &[Var]| x[1].square() / x[2]);
        let ab = TapeObjective::new(|x: &[Var]| x[0] * x[1] + x[2].exp() + x[1].square() / x[2]);
        let ga = gradients(&a, &p).unwrap().values;
        let gb = gradients(&b, &p).unwrap().values;
        let gab = gradients(&ab, &p).unwrap().values;
        for i in 0..3 {
            assert_abs_diff_eq!(gab[i], ga[i] + gb[i], epsilon = 1e-14);
        }
    }

    #[test]
    fn check_reports_per_group() {
        let mut p = set(&[0.4, 0.9]);
        p.push_group(GroupKind::Mlp, &[-0.3], 0.1).unwrap();
        let obj = TapeObjective::new(|x: &[Var]| (x[0] * x[1] + x[2]).exp());
        let r = check_gradients(&obj, &p, 1e-5, &[0, 1, 2], 1e-6).unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!(r[0].checked, 2);
        assert_eq!(r[1].checked, 1);
        assert!(r.iter().all(|g| g.max_rel_error < 1e-8));
    }

    #[test]
    fn duplicate_group_rejected() {
        let mut p = set(&[1.0]);
        assert!(p.push_group(GroupKind::Poses, &[2.0], 0.1).is_err());
    }
}
