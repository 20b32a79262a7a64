use super::{Fault, Tape, Tensor, Var};
use crate::error::{HlgtError, Result};

/// Denominator floor of the relative error, so that near-zero gradients
/// are compared on an absolute scale.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub h: f64,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_error() <= self.tol
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params.iter().filter(|p| p.max_rel_error > self.tol)
    }
}

fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(GRAD_CHECK_FLOOR)
}

fn evaluate<L>(
    loss: &L,
    params: &[(String, Tensor<f64>)],
    fault: Option<Fault>,
) -> Result<(Tape<f64>, Vec<Var>, Var)>
where
    L: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    tape.set_fault(fault);
    let vars = params
        .iter()
        .map(|(_, t)| tape.param(t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let out = loss(&mut tape, &vars)?;
    Ok((tape, vars, out))
}

/// Compares tape gradients of the scalar built by `loss` against central
/// finite differences `(f(θ+h) − f(θ−h)) / 2h` for every entry of every
/// named parameter, in double precision.
pub fn grad_check<L>(
    loss: L,
    params: &[(String, Tensor<f64>)],
    h: f64,
    tol: f64,
    fault: Option<Fault>,
) -> Result<GradCheckReport>
where
    L: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    if h <= 0.0 {
        return Err(HlgtError::InvalidArgument(format!(
            "step h must be positive, got {h}"
        )));
    }
    let (mut tape, vars, out) = evaluate(&loss, params, fault)?;
    let base = tape.scalar(out);
    tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars.iter().map(|&v| tape.grad_or_zeros(v)).collect();

    let again = evaluate(&loss, params, fault)?;
    let repeat = again.0.scalar(again.2);
    if repeat.to_bits() != base.to_bits() {
        return Err(HlgtError::GradCheck(format!(
            "function is not deterministic: {base} then {repeat}"
        )));
    }

    let mut work: Vec<(String, Tensor<f64>)> = params.to_vec();
    let mut checks = Vec::with_capacity(params.len());
    for (p, grads) in analytic.iter().enumerate() {
        let mut worst = ParamCheck {
            name: params[p].0.clone(),
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for (i, &analytic) in grads.iter().enumerate() {
            let orig = params[p].1.data()[i];
            work[p].1.data_mut()[i] = orig + h;
            let plus = {
                let (t, _, o) = evaluate(&loss, &work, None)?;
                t.scalar(o)
            };
            work[p].1.data_mut()[i] = orig - h;
            let minus = {
                let (t, _, o) = evaluate(&loss, &work, None)?;
                t.scalar(o)
            };
            work[p].1.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let err = rel_error(analytic, numeric);
            if err > worst.max_rel_error || i == 0 {
                worst.max_rel_error = err.max(worst.max_rel_error);
                worst.worst_index = i;
                worst.analytic = analytic;
                worst.numeric = numeric;
            }
        }
        checks.push(worst);
    }
    Ok(GradCheckReport {
        params: checks,
        h,
        tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::OpKind;

    #[test]
    fn quadratic_is_exact() {
        let params = vec![("x".to_string(), Tensor::scalar(3.0))];
        let report = grad_check(|tape, v| tape.square(v[0]), &params, 1e-4, 1e-9, None).unwrap();
        assert!(report.max_error() < 1e-9, "{report:?}");
        assert!(report.passed());
    }

    #[test]
    fn wrong_rule_is_named() {
        let params = vec![
            ("ok".to_string(), Tensor::scalar(0.5)),
            ("broken".to_string(), Tensor::scalar(0.7)),
        ];
        let fault = Some(Fault {
            kind: OpKind::Tanh,
            factor: 1.5,
        });
        let report = grad_check(
            |tape, v| {
                let a = tape.square(v[0])?;
                let b = tape.tanh(v[1])?;
                tape.add(a, b)
            },
            &params,
            1e-5,
            1e-4,
            fault,
        )
        .unwrap();
        assert!(!report.passed());
        let failed: Vec<_> = report.failures().map(|p| p.name.as_str()).collect();
        assert_eq!(failed, vec!["broken"]);
    }

    #[test]
    fn rejects_bad_step() {
        let params = vec![("x".to_string(), Tensor::scalar(1.0))];
        assert!(grad_check(|t, v| t.square(v[0]), &params, 0.0, 1e-4, None).is_err());
    }
}
