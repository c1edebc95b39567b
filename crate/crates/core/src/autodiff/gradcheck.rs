//! Randomised agreement checks between reverse-mode derivatives and
//! finite-difference oracles. Backs the `gradcheck` command and the test suites.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{finite_diff_jacobian, AutodiffError, Graph, Tensor, Var};

type Builder = fn(&mut Graph<f64>, &[Var]) -> Result<Var, AutodiffError>;

/// A scalar test function over a list of parameter tensors.
#[derive(Clone, Copy)]
pub struct Family {
    pub name: &'static str,
    pub shapes: &'static [&'static [usize]],
    pub smooth: bool,
    pub build: Builder,
}

fn tanh_mlp(g: &mut Graph<f64>, p: &[Var]) -> Result<Var, AutodiffError> {
    let x = g.constant(Tensor::from_f64(vec![3, 3], &[0.5, -1.0, 0.3, 1.2, 0.1, -0.7, -0.4, 0.9, 0.2])?);
    let h = g.linear(x, p[0], p[1])?;
    let h = g.tanh(h)?;
    let o = g.linear(h, p[2], p[3])?;
    let ls = g.log_softmax(o)?;
    let oh = g.one_hot(&[0, 1, 0], 2)?;
    let picked = g.mul(ls, oh)?;
    g.mean(picked)
}

fn sigmoid_norm(g: &mut Graph<f64>, p: &[Var]) -> Result<Var, AutodiffError> {
    let h = g.matmul(p[0], p[1])?;
    let s = g.sigmoid(h)?;
    let n = g.squared_norm(s)?;
    let t = g.sum_rows(s)?;
    let u = g.squared_norm(t)?;
    let v = g.scale(u, 0.3)?;
    g.add(n, v)
}

fn leaky_logsig(g: &mut Graph<f64>, p: &[Var]) -> Result<Var, AutodiffError> {
    let x = g.constant(Tensor::from_f64(vec![2, 3], &[1.0, -0.5, 0.25, -1.5, 0.75, 0.4])?);
    let h = g.linear(x, p[0], p[1])?;
    let h = g.leaky_relu(h, 0.2)?;
    let r = g.relu(h)?;
    let h = g.add(h, r)?;
    let o = g.matmul(h, p[2])?;
    let l = g.log_sigmoid(o)?;
    g.sum(l)
}

fn exp_log_sqrt(g: &mut Graph<f64>, p: &[Var]) -> Result<Var, AutodiffError> {
    let e = g.exp(p[0])?;
    let e1 = g.add_scalar(e, 1.0)?;
    let l = g.log(e1)?;
    let s = g.sum(l)?;
    let n = g.squared_norm(p[1])?;
    let n1 = g.add_scalar(n, 1.0)?;
    let r = g.sqrt(n1)?;
    let q = g.recip(n1)?;
    let a = g.add(s, r)?;
    g.add(a, q)
}

fn concat_gather_softmax(g: &mut Graph<f64>, p: &[Var]) -> Result<Var, AutodiffError> {
    let rows = g.gather_rows(p[0], &[2, 0, 1, 2])?;
    let z = g.constant(Tensor::from_f64(vec![4, 1], &[0.3, -0.2, 0.8, -1.1])?);
    let c = g.concat_cols(&[rows, z])?;
    let h = g.matmul(c, p[1])?;
    let sm = g.softmax(h)?;
    let cs = g.sum_cols(sm)?;
    let b = g.broadcast_cols(cs, 3)?;
    let w = g.mul(sm, h)?;
    let wb = g.mul(w, b)?;
    let t = g.transpose(wb)?;
    let sl = g.slice_cols(t, 1, 2)?;
    g.sum(sl)
}

fn reshape_mean_bcast(g: &mut Graph<f64>, p: &[Var]) -> Result<Var, AutodiffError> {
    let r = g.reshape(p[0], vec![2, 3])?;
    let t = g.tanh(r)?;
    let m = g.mean(t)?;
    let b = g.broadcast_scalar(m, vec![3])?;
    let br = g.broadcast_rows(b, 2)?;
    let prod = g.mul(br, r)?;
    let d = g.sub(prod, r)?;
    let e = g.mul(d, d)?;
    let s = g.sum(e)?;
    let k = g.dot(p[1], p[1])?;
    let kk = g.mul(k, s)?;
    g.add(s, kk)
}

/// Scalar functions exercising every primitive.
pub const FAMILIES: &[Family] = &[
    Family { name: "tanh_mlp_xent", shapes: &[&[3, 4], &[4], &[4, 2], &[2]], smooth: true, build: tanh_mlp },
    Family { name: "sigmoid_norm", shapes: &[&[3, 2], &[2, 4]], smooth: true, build: sigmoid_norm },
    Family { name: "leaky_logsig", shapes: &[&[3, 4], &[4], &[4, 1]], smooth: false, build: leaky_logsig },
    Family { name: "exp_log_sqrt", shapes: &[&[2, 3], &[4]], smooth: true, build: exp_log_sqrt },
    Family { name: "concat_gather_softmax", shapes: &[&[3, 2], &[3, 3]], smooth: true, build: concat_gather_softmax },
    Family { name: "reshape_mean_bcast", shapes: &[&[6], &[2]], smooth: true, build: reshape_mean_bcast },
];

/// Two-block functions with at most 10 parameters, for cross-Hessian checks.
pub const MIXED_FAMILIES: &[Family] = &[
    Family { name: "bilinear_tanh", shapes: &[&[2, 3], &[1, 3]], smooth: true, build: bilinear_tanh },
    Family { name: "logsig_score", shapes: &[&[3], &[3, 1]], smooth: true, build: logsig_score },
];

fn bilinear_tanh(g: &mut Graph<f64>, p: &[Var]) -> Result<Var, AutodiffError> {
    let wt = g.transpose(p[0])?;
    let h = g.matmul(p[1], wt)?;
    let t = g.tanh(h)?;
    let s = g.squared_norm(t)?;
    let e = g.exp(h)?;
    let m = g.mean(e)?;
    g.add(s, m)
}

fn logsig_score(g: &mut Graph<f64>, p: &[Var]) -> Result<Var, AutodiffError> {
    let x = g.reshape(p[0], vec![1, 3])?;
    let h = g.tanh(x)?;
    let s = g.matmul(h, p[1])?;
    let l = g.log_sigmoid(s)?;
    let n = g.squared_norm(x)?;
    let ln = g.mul(l, l)?;
    let sum = g.sum(ln)?;
    g.add(sum, n)
}

fn random_params(family: &Family, rng: &mut impl Rng) -> Vec<Tensor<f64>> {
    family
        .shapes
        .iter()
        .map(|s| {
            let n: usize = s.iter().product();
            let data = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            Tensor::new(s.to_vec(), data).expect("static shape")
        })
        .collect()
}

fn eval_family(family: &Family, params: &[Tensor<f64>]) -> Result<f64, AutodiffError> {
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|t| g.param(t.clone())).collect();
    let out = (family.build)(&mut g, &vars)?;
    Ok(g.item(out))
}

fn grad_family(family: &Family, params: &[Tensor<f64>]) -> Result<Vec<f64>, AutodiffError> {
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|t| g.param(t.clone())).collect();
    let out = (family.build)(&mut g, &vars)?;
    Ok(g.grad_values(out, &vars)?.flat())
}

/// Max elementwise error scaled by the reference vector's largest magnitude.
pub fn scaled_err(a: &[f64], reference: &[f64]) -> f64 {
    let scale = reference.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    a.iter().zip(reference).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}

/// Reverse-mode gradient vs. central differences (h = 1e-5).
pub fn check_gradient(family: &Family, params: &[Tensor<f64>]) -> Result<f64, AutodiffError> {
    let flat = Tensor::vector(Tensor::flatten_all(params));
    let analytic = grad_family(family, params)?;
    let numeric = finite_diff_jacobian(
        |p| {
            let parts = Tensor::split_like(p.data(), params).expect("same layout");
            vec![eval_family(family, &parts).unwrap_or(f64::NAN)]
        },
        &flat,
        1e-5,
    );
    let numeric: Vec<f64> = numeric.into_iter().map(|row| row[0]).collect();
    Ok(scaled_err(&analytic, &numeric))
}

/// Double-backward HVP vs. central differences of the gradient along `v` (h = 1e-5).
pub fn check_hvp(family: &Family, params: &[Tensor<f64>], v: &[f64]) -> Result<f64, AutodiffError> {
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|t| g.param(t.clone())).collect();
    let out = (family.build)(&mut g, &vars)?;
    let hv = g.hvp_flat(out, &vars, v)?;

    let h = 1e-5;
    let base = Tensor::flatten_all(params);
    let shifted = |sign: f64| -> Result<Vec<f64>, AutodiffError> {
        let p: Vec<f64> = base.iter().zip(v).map(|(b, d)| b + sign * h * d).collect();
        grad_family(family, &Tensor::split_like(&p, params)?)
    };
    let (up, down) = (shifted(1.0)?, shifted(-1.0)?);
    let numeric: Vec<f64> = up.iter().zip(&down).map(|(u, d)| (u - d) / (2.0 * h)).collect();
    Ok(scaled_err(&hv, &numeric))
}

/// Double-backward cross-Hessian product vs. a dense finite-difference cross-Hessian
/// of a two-block function.
pub fn check_mixed_hvp(family: &Family, params: &[Tensor<f64>], v: &[f64]) -> Result<f64, AutodiffError> {
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|t| g.param(t.clone())).collect();
    let out = (family.build)(&mut g, &vars)?;
    let mixed = g.mixed_hvp_flat(out, &vars[..1], &vars[1..], v)?;

    // dense[i][j] = d/d inner_i of (d f / d outer_j)
    let inner = params[1].clone();
    let dense = finite_diff_jacobian(
        |b| {
            let mut g = Graph::new();
            let a = g.param(params[0].clone());
            let bv = g.param(b.clone());
            let out = (family.build)(&mut g, &[a, bv]).expect("family builds");
            g.grad_values(out, &[a]).expect("grad").flat()
        },
        &inner,
        1e-5,
    );
    let outer_len = params[0].len();
    let numeric: Vec<f64> =
        (0..outer_len).map(|j| dense.iter().zip(v).map(|(row, vi)| row[j] * vi).sum()).collect();
    Ok(scaled_err(&mixed, &numeric))
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub instances: usize,
    pub grad_max_err: f64,
    pub hvp_max_err: f64,
    pub mixed_max_err: f64,
    pub grad_tol: f64,
    pub hvp_tol: f64,
    pub mixed_tol: f64,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.grad_max_err < self.grad_tol && self.hvp_max_err < self.hvp_tol && self.mixed_max_err < self.mixed_tol
    }
}

/// Runs `instances` random draws of each check, cycling through the families.
pub fn run_suite(instances: usize, seed: u64) -> Result<SuiteReport, AutodiffError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = SuiteReport {
        instances,
        grad_max_err: 0.0,
        hvp_max_err: 0.0,
        mixed_max_err: 0.0,
        grad_tol: 1e-4,
        hvp_tol: 1e-3,
        mixed_tol: 1e-3,
    };
    let smooth: Vec<&Family> = FAMILIES.iter().filter(|f| f.smooth).collect();
    for i in 0..instances {
        let fam = &FAMILIES[i % FAMILIES.len()];
        let params = random_params(fam, &mut rng);
        report.grad_max_err = report.grad_max_err.max(check_gradient(fam, &params)?);

        let fam = smooth[i % smooth.len()];
        let params = random_params(fam, &mut rng);
        let n: usize = params.iter().map(Tensor::len).sum();
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        report.hvp_max_err = report.hvp_max_err.max(check_hvp(fam, &params, &v)?);

        let fam = &MIXED_FAMILIES[i % MIXED_FAMILIES.len()];
        let params = random_params(fam, &mut rng);
        let v: Vec<f64> = (0..params[1].len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        report.mixed_max_err = report.mixed_max_err.max(check_mixed_hvp(fam, &params, &v)?);
    }
    Ok(report)
}
