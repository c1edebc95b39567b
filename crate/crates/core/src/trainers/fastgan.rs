use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{adam_step, lr_at, AdamState, TrainerConfig, TrainerError};
use crate::autodiff::{AutodiffError, Graph, Tensor};
use crate::games::{GanNetworks, LabeledDataset};
use crate::losses::LossKind;
use crate::metrics::MetricsRecord;
use crate::rng::{self, Stream};
use crate::Scalar;

/// Persistent perturbation added to real batches, kept in the `c_max` infinity-ball.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationState<T> {
    pub eps: Tensor<T>,
    pub c_max: T,
}

impl<T: Scalar> PerturbationState<T> {
    pub fn zeros(shape: Vec<usize>, c_max: T) -> Self {
        Self { eps: Tensor::zeros(shape), c_max }
    }

    pub fn inf_norm(&self) -> T {
        self.eps.max_abs()
    }

    /// Keeps the leading rows (zero-padding new ones) when the batch size changes.
    pub fn resize_rows(&mut self, rows: usize) {
        let cols = self.eps.cols();
        let mut data = self.eps.data().to_vec();
        data.resize(rows * cols, T::zero());
        self.eps = Tensor::new(vec![rows, cols], data).expect("rows * cols elements");
    }
}

fn sign<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// `eps <- clamp(eps - c_max sign(g_x), -c_max, c_max)` elementwise, with `sign(0) = 0`.
pub fn adv_perturb_step<T: Scalar>(state: &PerturbationState<T>, g_x: &Tensor<T>) -> Result<PerturbationState<T>, TrainerError> {
    if state.eps.shape() != g_x.shape() {
        return Err(AutodiffError::ShapeMismatch {
            op: "adv_perturb_step",
            lhs: state.eps.shape().to_vec(),
            rhs: g_x.shape().to_vec(),
        }
        .into());
    }
    let c = state.c_max;
    let eps = state.eps.zip_map(g_x, |e, g| (e - c * sign(g)).max(-c).min(c));
    Ok(PerturbationState { eps, c_max: c })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    /// Completed outer iterations, starting at 1.
    pub iter: usize,
    pub lr: f64,
    pub loss_d: f64,
    pub loss_g: f64,
    pub grad_norm_d: f64,
    pub grad_norm_g: f64,
    /// Largest `|eps|_inf` seen after any perturbation update in this iteration.
    pub eps_inf_norm: f64,
    pub d_update_count: u64,
    pub g_update_count: u64,
    pub generator_forward_count: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub iter: usize,
    #[serde(flatten)]
    pub metrics: MetricsRecord,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Diverged,
    Interrupted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub status: RunStatus,
    pub steps: Vec<StepReport>,
    pub metrics: Vec<MetricsRow>,
    /// Generator tensors then discriminator tensors.
    pub final_params: Vec<Tensor<f64>>,
    /// The step that produced a non-finite value, when diverged.
    pub failure: Option<StepReport>,
    pub d_seconds: f64,
    pub g_seconds: f64,
    pub monitor_seconds: f64,
}

/// Called after every outer iteration with the completed-iteration count.
pub type Monitor<'a, T> = dyn FnMut(usize, &GanNetworks<T>) -> Result<Option<MetricsRecord>, TrainerError> + 'a;

fn is_overflow(e: &TrainerError) -> bool {
    matches!(e, TrainerError::Autodiff(AutodiffError::NonFinite { .. }))
}

fn sq_norm<T: Scalar>(ts: &[Tensor<T>]) -> f64 {
    ts.iter().map(|t| t.dot(t).as_f64()).sum()
}

struct Trainer<'a, T> {
    nets: GanNetworks<T>,
    data: &'a LabeledDataset<T>,
    loss: LossKind,
    cfg: &'a TrainerConfig,
    adam_d: AdamState<T>,
    adam_g: AdamState<T>,
    data_rng: ChaCha8Rng,
    noise_rng: ChaCha8Rng,
    label_rng: ChaCha8Rng,
    report: StepReport,
    d_seconds: f64,
    g_seconds: f64,
}

struct DUpdate<T> {
    objective: T,
    grad_sq_norm: f64,
    grad_x: Option<Tensor<T>>,
}

impl<'a, T: Scalar> Trainer<'a, T> {
    fn new(nets: GanNetworks<T>, data: &'a LabeledDataset<T>, loss: LossKind, cfg: &'a TrainerConfig) -> Result<Self, TrainerError> {
        cfg.validate()?;
        if data.class_count != nets.generator.class_count || data.class_count != nets.discriminator.class_count() {
            return Err(TrainerError::Config(format!(
                "dataset has {} classes, networks expect {}",
                data.class_count, nets.generator.class_count
            )));
        }
        if data.dim() != nets.generator.net.output_dim() {
            return Err(TrainerError::Config("generator output dimension differs from the data".into()));
        }
        Ok(Self {
            adam_d: AdamState::new(nets.discriminator.params()),
            adam_g: AdamState::new(nets.generator.net.params()),
            nets,
            data,
            loss,
            cfg,
            data_rng: rng::stream(cfg.seed, Stream::Data),
            noise_rng: rng::stream(cfg.seed, Stream::Noise),
            label_rng: rng::stream(cfg.seed, Stream::Label),
            report: StepReport {
                iter: 0,
                lr: 0.0,
                loss_d: 0.0,
                loss_g: 0.0,
                grad_norm_d: 0.0,
                grad_norm_g: 0.0,
                eps_inf_norm: 0.0,
                d_update_count: 0,
                g_update_count: 0,
                generator_forward_count: 0,
            },
            d_seconds: 0.0,
            g_seconds: 0.0,
        })
    }

    fn lrs(&self, t: usize) -> (T, T) {
        let g = lr_at(self.cfg.eta0, t, self.cfg);
        let d = lr_at(self.cfg.eta0_d.unwrap_or(self.cfg.eta0), t, self.cfg);
        (T::lit(g), T::lit(d))
    }

    fn fake_conditioning(&mut self) -> (Tensor<T>, Vec<usize>) {
        let b = self.cfg.batch_size;
        let z = rng::standard_normal(&mut self.noise_rng, b * self.nets.generator.noise_dim);
        let c = self.data.class_count;
        let labels = (0..b).map(|_| self.label_rng.random_range(0..c)).collect();
        (Tensor::new(vec![b, self.nets.generator.noise_dim], z).expect("noise shape"), labels)
    }

    fn generate(&mut self, z: &Tensor<T>, labels: &[usize]) -> Result<Tensor<T>, TrainerError> {
        self.report.generator_forward_count += 1;
        Ok(self.nets.generator.generate(z, labels)?)
    }

    fn apply(params: Vec<&mut Tensor<T>>, grads: &[Tensor<T>], state: &mut AdamState<T>, lr: T, ascend: bool, cfg: &TrainerConfig) {
        match cfg.adam {
            Some(a) => {
                let dir: Vec<Tensor<T>> = if ascend { grads.iter().map(|g| g.scale(-T::one())).collect() } else { grads.to_vec() };
                for (p, s) in params.into_iter().zip(adam_step(state, &dir, lr, &a)) {
                    *p = p.sub(&s);
                }
            }
            None => {
                let sgn = if ascend { lr } else { -lr };
                for (p, g) in params.into_iter().zip(grads) {
                    *p = p.add(&g.scale(sgn));
                }
            }
        }
    }

    /// One ascent step of the discriminator on the real or fake part of its objective.
    fn d_update(&mut self, x: &Tensor<T>, labels: &[usize], real: bool, want_x: bool, lr: T) -> Result<DUpdate<T>, TrainerError> {
        let start = Instant::now();
        let mut g = Graph::first_order();
        let d = self.nets.discriminator.bind(&mut g);
        let xv = if want_x { g.param(x.clone()) } else { g.constant(x.clone()) };
        let out = d.forward(&mut g, xv)?;
        let coeffs = &self.cfg.coeffs;
        let obj = if real {
            self.loss.d_real(&mut g, out, labels, coeffs)?
        } else {
            self.loss.d_fake(&mut g, out, labels, coeffs)?
        };
        let mut wrt = d.vars();
        if want_x {
            wrt.push(xv);
        }
        let mut grads = g.grad_values(obj, &wrt)?.into_tensors();
        let grad_x = if want_x { grads.pop() } else { None };
        let grad_sq_norm = sq_norm(&grads);
        Self::apply(self.nets.discriminator.params_mut(), &grads, &mut self.adam_d, lr, true, self.cfg);
        self.report.d_update_count += 1;
        self.d_seconds += start.elapsed().as_secs_f64();
        Ok(DUpdate { objective: g.item(obj), grad_sq_norm, grad_x })
    }

    fn g_update(&mut self, lr: T) -> Result<(), TrainerError> {
        let (z, labels) = self.fake_conditioning();
        let start = Instant::now();
        let mut g = Graph::first_order();
        let gen = self.nets.generator.bind(&mut g);
        let d = self.nets.discriminator.bind(&mut g);
        let zv = g.constant(z);
        let xf = gen.forward(&mut g, zv, &labels)?;
        self.report.generator_forward_count += 1;
        let out = d.forward(&mut g, xf)?;
        let obj = self.loss.g_loss(&mut g, out, &labels, &self.cfg.coeffs)?;
        let grads = g.grad_values(obj, &gen.vars())?.into_tensors();
        self.report.loss_g = g.item(obj).as_f64();
        self.report.grad_norm_g = sq_norm(&grads).sqrt();
        Self::apply(self.nets.generator.net.params_mut(), &grads, &mut self.adam_g, lr, false, self.cfg);
        self.report.g_update_count += 1;
        self.g_seconds += start.elapsed().as_secs_f64();
        Ok(())
    }

    fn check_finite(&self) -> Result<(), TrainerError> {
        let r = &self.report;
        if [r.loss_d, r.loss_g, r.grad_norm_d, r.grad_norm_g].iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(AutodiffError::NonFinite { op: "loss", node: 0, path: "step report".into() }.into())
        }
    }

    fn record(&self, steps: Vec<StepReport>, metrics: Vec<MetricsRow>, status: RunStatus, monitor_seconds: f64) -> RunRecord {
        RunRecord {
            seed: self.cfg.seed,
            status,
            steps,
            metrics,
            final_params: self
                .nets
                .all_params()
                .into_iter()
                .map(|t| Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| v.as_f64()).collect()).unwrap())
                .collect(),
            failure: (status == RunStatus::Diverged).then(|| self.report.clone()),
            d_seconds: self.d_seconds,
            g_seconds: self.g_seconds,
            monitor_seconds,
        }
    }

    /// Runs `iteration` for every outer step, turning overflow into a diverged record.
    fn run(
        mut self,
        mut monitor: Option<&mut Monitor<T>>,
        mut iteration: impl FnMut(&mut Self, usize) -> Result<(), TrainerError>,
    ) -> Result<(GanNetworks<T>, RunRecord), TrainerError> {
        let mut steps = Vec::with_capacity(self.cfg.total_iters);
        let mut metrics = Vec::new();
        let mut monitor_seconds = 0.0;
        for t in 0..self.cfg.total_iters {
            self.report.iter = t + 1;
            self.report.lr = lr_at(self.cfg.eta0, t, self.cfg);
            self.report.eps_inf_norm = 0.0;
            if let Err(e) = iteration(&mut self, t).and_then(|_| self.check_finite()) {
                if !is_overflow(&e) {
                    return Err(e);
                }
                let record = self.record(steps, metrics, RunStatus::Diverged, monitor_seconds);
                return Err(TrainerError::Diverged {
                    iteration: t + 1,
                    reason: e.to_string(),
                    last_finite: None,
                    report: Some(Box::new(self.report.clone())),
                    record: Some(Box::new(record)),
                });
            }
            steps.push(self.report.clone());
            if let Some(m) = monitor.as_deref_mut() {
                let start = Instant::now();
                if let Some(rec) = m(t + 1, &self.nets)? {
                    metrics.push(MetricsRow { iter: t + 1, metrics: rec });
                }
                monitor_seconds += start.elapsed().as_secs_f64();
            }
        }
        let record = self.record(steps, metrics, RunStatus::Completed, monitor_seconds);
        Ok((self.nets, record))
    }
}

/// Free adversarial GAN training.
///
/// Per outer iteration: `max_d_step` times { one fake batch from G, one real batch, then
/// `max_adv_step` times [ascend D on the perturbed real batch, sign-step the perturbation
/// with the input gradient from the same backward pass, ascend D on the reused fake batch] },
/// then one generator step on a fresh fake batch.
pub fn fastgan_train<T: Scalar>(
    nets: GanNetworks<T>,
    data: &LabeledDataset<T>,
    loss: LossKind,
    cfg: &TrainerConfig,
    monitor: Option<&mut Monitor<T>>,
) -> Result<(GanNetworks<T>, RunRecord), TrainerError> {
    let trainer = Trainer::new(nets, data, loss, cfg)?;
    let shape = vec![cfg.batch_size, data.dim()];
    let c_max = T::lit(cfg.c_max);
    let mut eps = PerturbationState::zeros(shape.clone(), c_max);
    let mut eps_fake = PerturbationState::zeros(shape, c_max);

    trainer.run(monitor, move |tr, t| {
        let (lr_g, lr_d) = tr.lrs(t);
        let mut eps_seen = T::zero();
        let (mut loss_d, mut gn_d) = (T::zero(), 0.0);
        for _ in 0..cfg.max_d_step {
            let (z, y_f) = tr.fake_conditioning();
            let x_f = tr.generate(&z, &y_f)?;
            let (x_r, y_r) = data.sample_batch(&mut tr.data_rng, cfg.batch_size);
            for _ in 0..cfg.max_adv_step {
                let real = tr.d_update(&x_r.add(&eps.eps), &y_r, true, true, lr_d)?;
                eps = adv_perturb_step(&eps, real.grad_x.as_ref().expect("input gradient requested"))?;
                debug_assert!(eps.inf_norm() <= c_max);
                eps_seen = eps_seen.max(eps.inf_norm());

                let fake = if cfg.perturb_fake {
                    let f = tr.d_update(&x_f.add(&eps_fake.eps), &y_f, false, true, lr_d)?;
                    eps_fake = adv_perturb_step(&eps_fake, f.grad_x.as_ref().expect("input gradient requested"))?;
                    eps_seen = eps_seen.max(eps_fake.inf_norm());
                    f
                } else {
                    tr.d_update(&x_f, &y_f, false, false, lr_d)?
                };
                loss_d = real.objective + fake.objective;
                gn_d = (real.grad_sq_norm + fake.grad_sq_norm).sqrt();
            }
        }
        tr.report.loss_d = loss_d.as_f64();
        tr.report.grad_norm_d = gn_d;
        tr.report.eps_inf_norm = eps_seen.as_f64();
        tr.g_update(lr_g)
    })
}

/// Alternating Adam-GDA without perturbation: per outer iteration, `max_d_step` times
/// { ascend D on a real batch, then on a fresh fake batch }, then one generator step.
pub fn adam_gda_train<T: Scalar>(
    nets: GanNetworks<T>,
    data: &LabeledDataset<T>,
    loss: LossKind,
    cfg: &TrainerConfig,
    monitor: Option<&mut Monitor<T>>,
) -> Result<(GanNetworks<T>, RunRecord), TrainerError> {
    let trainer = Trainer::new(nets, data, loss, cfg)?;
    trainer.run(monitor, |tr, t| {
        let (lr_g, lr_d) = tr.lrs(t);
        for _ in 0..cfg.max_d_step {
            let (z, y_f) = tr.fake_conditioning();
            let x_f = tr.generate(&z, &y_f)?;
            let (x_r, y_r) = data.sample_batch(&mut tr.data_rng, cfg.batch_size);
            let real = tr.d_update(&x_r, &y_r, true, false, lr_d)?;
            let fake = tr.d_update(&x_f, &y_f, false, false, lr_d)?;
            tr.report.loss_d = (real.objective + fake.objective).as_f64();
            tr.report.grad_norm_d = (real.grad_sq_norm + fake.grad_sq_norm).sqrt();
        }
        tr.g_update(lr_g)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perturbation_examples() {
        let st = PerturbationState::zeros(vec![1, 2], 0.006);
        let g = Tensor::new(vec![1, 2], vec![3.0, -2.0]).unwrap();
        assert_eq!(adv_perturb_step(&st, &g).unwrap().eps.data(), &[-0.006, 0.006]);

        let st = PerturbationState { eps: Tensor::new(vec![1, 2], vec![0.006, 0.006]).unwrap(), c_max: 0.006 };
        let g = Tensor::new(vec![1, 2], vec![-1.0, -1.0]).unwrap();
        assert_eq!(adv_perturb_step(&st, &g).unwrap().eps.data(), &[0.006, 0.006]);

        let st = PerturbationState { eps: Tensor::new(vec![1, 2], vec![0.001, -0.002]).unwrap(), c_max: 0.006 };
        let g = Tensor::zeros(vec![1, 2]);
        assert_eq!(adv_perturb_step(&st, &g).unwrap(), st);
    }

    #[test]
    fn perturbation_resize_keeps_leading_rows() {
        let mut st = PerturbationState { eps: Tensor::new(vec![2, 1], vec![0.1, 0.2]).unwrap(), c_max: 0.3 };
        st.resize_rows(3);
        assert_eq!(st.eps.data(), &[0.1, 0.2, 0.0]);
        st.resize_rows(1);
        assert_eq!(st.eps.data(), &[0.1]);
    }
}
