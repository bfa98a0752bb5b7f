//! Finite-difference checks of every tape operation in isolation.

use rand::Rng;

use super::fd::{finite_diff_check, FdOptions, FdReport};
use crate::autodiff::{Fault, Tape, Var};
use crate::error::Result;
use crate::rng;
use crate::tensor::Tensor;

type Build = fn(&mut Tape, &[Var]) -> Result<Var>;

struct OpCase {
    name: &'static str,
    shapes: &'static [&'static [usize]],
    positive: bool,
    build: Build,
}

const CASES: &[OpCase] = &[
    OpCase { name: "matmul", shapes: &[&[3, 4], &[4, 2]], positive: false, build: |t, v| t.matmul(v[0], v[1]) },
    OpCase { name: "matmul_nt", shapes: &[&[3, 4], &[5, 4]], positive: false, build: |t, v| t.matmul_nt(v[0], v[1]) },
    OpCase { name: "add", shapes: &[&[2, 3], &[2, 3]], positive: false, build: |t, v| t.add(v[0], v[1]) },
    OpCase { name: "sub", shapes: &[&[2, 3], &[2, 3]], positive: false, build: |t, v| t.sub(v[0], v[1]) },
    OpCase { name: "mul", shapes: &[&[2, 3], &[2, 3]], positive: false, build: |t, v| t.mul(v[0], v[1]) },
    OpCase { name: "scale", shapes: &[&[4]], positive: false, build: |t, v| Ok(t.scale(v[0], -1.7)) },
    OpCase { name: "neg", shapes: &[&[4]], positive: false, build: |t, v| Ok(t.neg(v[0])) },
    OpCase { name: "sigmoid", shapes: &[&[2, 3]], positive: false, build: |t, v| Ok(t.sigmoid(v[0])) },
    OpCase { name: "tanh", shapes: &[&[2, 3]], positive: false, build: |t, v| Ok(t.tanh(v[0])) },
    OpCase { name: "exp", shapes: &[&[5]], positive: false, build: |t, v| Ok(t.exp(v[0])) },
    OpCase { name: "log", shapes: &[&[5]], positive: true, build: |t, v| t.log(v[0]) },
    OpCase { name: "concat", shapes: &[&[2, 3], &[2, 2]], positive: false, build: |t, v| t.concat(v[0], v[1]) },
    OpCase { name: "softmax", shapes: &[&[3, 4]], positive: false, build: |t, v| t.softmax(v[0]) },
    OpCase { name: "log_softmax", shapes: &[&[3, 4]], positive: false, build: |t, v| t.log_softmax(v[0]) },
    OpCase { name: "gather", shapes: &[&[3, 4]], positive: false, build: |t, v| t.gather(v[0], &[2, 0, 3]) },
    OpCase {
        name: "select_rows",
        shapes: &[&[3, 2], &[3, 2], &[3, 2]],
        positive: false,
        build: |t, v| t.select_rows(v, &[1, 2, 1]),
    },
    OpCase { name: "add_bias", shapes: &[&[3, 4], &[4]], positive: false, build: |t, v| t.add_bias(v[0], v[1]) },
    OpCase { name: "narrow", shapes: &[&[3, 6]], positive: false, build: |t, v| t.narrow(v[0], 2, 3) },
    OpCase { name: "row_scale", shapes: &[&[3, 4], &[3]], positive: false, build: |t, v| t.row_scale(v[0], v[1]) },
    OpCase { name: "sum", shapes: &[&[2, 3]], positive: false, build: |t, v| Ok(t.sum(v[0])) },
    OpCase { name: "mean", shapes: &[&[2, 3]], positive: false, build: |t, v| Ok(t.mean(v[0])) },
];

/// Names of the operations covered by [`op_checks`].
pub fn op_names() -> Vec<&'static str> {
    CASES.iter().map(|c| c.name).collect()
}

fn projected(tape: &mut Tape, case: &OpCase, inputs: &[Tensor], projection: &mut Option<Tensor>, seed: u64) -> Result<(Var, Vec<Var>)> {
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let out = (case.build)(tape, &vars)?;
    let shape = tape.value(out).shape.clone();
    let proj = projection.get_or_insert_with(|| {
        let mut r = rng::stream(seed, &format!("ops.{}.projection", case.name));
        let n = shape.iter().product();
        Tensor {
            shape: shape.clone(),
            data: (0..n).map(|_| r.gen_range(-1.0..1.0)).collect(),
        }
    });
    let w = tape.constant(proj.clone());
    let weighted = tape.mul(out, w)?;
    Ok((tape.sum(weighted), vars))
}

/// Checks each operation's backward rule on random inputs through a fixed
/// random projection of its output. Returns one report per operation.
pub fn op_checks(seed: u64, fault: Option<Fault>) -> Result<Vec<(&'static str, FdReport)>> {
    let opts = FdOptions { seed, ..FdOptions::default() };
    CASES
        .iter()
        .map(|case| {
            let mut r = rng::stream(seed, &format!("ops.{}", case.name));
            let inputs: Vec<Tensor> = case
                .shapes
                .iter()
                .map(|s| {
                    let n = s.iter().product();
                    let data = (0..n)
                        .map(|_| if case.positive { r.gen_range(0.5..2.0) } else { r.gen_range(-2.0..2.0) })
                        .collect();
                    Tensor { shape: s.to_vec(), data }
                })
                .collect();
            let mut projection = None;
            let mut tape = Tape::new();
            if let Some(f) = fault {
                tape.inject_fault(f);
            }
            let (loss, vars) = projected(&mut tape, case, &inputs, &mut projection, seed)?;
            tape.backward(loss)?;
            let analytic: Vec<Tensor> = vars.iter().map(|v| tape.grad_or_zeros(*v)).collect();
            let names: Vec<String> = (0..inputs.len()).map(|i| format!("{}[{i}]", case.name)).collect();
            let report = finite_diff_check(
                &names,
                &inputs,
                &analytic,
                |xs| {
                    let mut t = Tape::new();
                    let (l, _) = projected(&mut t, case, xs, &mut projection, seed)?;
                    Ok(t.value(l).item())
                },
                &opts,
            )?;
            Ok((case.name, report))
        })
        .collect()
}
