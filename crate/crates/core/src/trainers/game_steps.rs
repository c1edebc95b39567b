use serde::{Deserialize, Serialize};

use super::TrainerError;
use crate::autodiff::AutodiffError;
use crate::games::{GameError, GamePoint, GameSpec};
use crate::Scalar;

pub const CG_MAX_ITERS: usize = 500;
/// Diagonal shift tried when CG breaks down on `H_yy`.
pub const FR_DAMPING: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GdaMode {
    Simultaneous,
    Alternating,
}

fn to_f64<T: Scalar>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.as_f64()).collect()
}

fn diverged<T: Scalar>(last: &GamePoint<T>, reason: String) -> TrainerError {
    TrainerError::Diverged {
        iteration: 0,
        reason,
        last_finite: Some((to_f64(&last.x), to_f64(&last.y))),
        report: None,
        record: None,
    }
}

/// Maps overflow inside the objective to a divergence carrying `last`.
fn guard<T: Scalar, R>(last: &GamePoint<T>, r: Result<R, GameError>) -> Result<R, TrainerError> {
    match r {
        Err(GameError::Autodiff(e @ AutodiffError::NonFinite { .. })) => Err(diverged(last, e.to_string())),
        other => other.map_err(TrainerError::from),
    }
}

fn finish<T: Scalar>(last: &GamePoint<T>, next: GamePoint<T>) -> Result<GamePoint<T>, TrainerError> {
    if next.is_finite() {
        Ok(next)
    } else {
        Err(diverged(last, "non-finite iterate".into()))
    }
}

fn axpy<T: Scalar>(a: T, x: &[T], y: &[T]) -> Vec<T> {
    y.iter().zip(x).map(|(&yi, &xi)| yi + a * xi).collect()
}

/// `x <- x - eta_x grad_x f`, `y <- y + eta_y grad_y f`; alternating mode evaluates
/// `grad_y f` at the updated `x`.
pub fn gda_step<T: Scalar>(
    game: &GameSpec<T>,
    p: &GamePoint<T>,
    eta_x: T,
    eta_y: T,
    mode: GdaMode,
) -> Result<GamePoint<T>, TrainerError> {
    let (gx, gy) = guard(p, game.gradient(p))?;
    let x = axpy(-eta_x, &gx, &p.x);
    let gy = match mode {
        GdaMode::Simultaneous => gy,
        GdaMode::Alternating => guard(p, game.gradient(&GamePoint::new(x.clone(), p.y.clone())))?.1,
    };
    let y = axpy(eta_y, &gy, &p.y);
    finish(p, GamePoint::new(x, y))
}

/// Simultaneous step with the ascent player corrected by `-eta_x H_yx grad_x f`.
pub fn simplified_fr_step<T: Scalar>(
    game: &GameSpec<T>,
    p: &GamePoint<T>,
    eta_x: T,
    eta_y: T,
) -> Result<GamePoint<T>, TrainerError> {
    let mut gg = guard(p, game.graph_at(p))?;
    let gr = guard(p, gg.graph.grad_values(gg.value, &[gg.x, gg.y]).map_err(GameError::from))?;
    let gx = gr.get(gg.x).unwrap().data().to_vec();
    let gy = gr.get(gg.y).unwrap().data().to_vec();
    let corr = guard(p, gg.graph.mixed_hvp_flat(gg.value, &[gg.y], &[gg.x], &gx).map_err(GameError::from))?;
    let x = axpy(-eta_x, &gx, &p.x);
    let y: Vec<T> = p.y.iter().zip(&gy).zip(&corr).map(|((&y, &g), &c)| y + eta_y * g - eta_x * c).collect();
    finish(p, GamePoint::new(x, y))
}

fn norm<T: Scalar>(v: &[T]) -> T {
    v.iter().map(|&a| a * a).sum::<T>().sqrt()
}

/// Conjugate gradient for `A z = b` given `A v`; `Err(residual)` on breakdown or stall.
pub(crate) fn conjugate_gradient<T: Scalar>(
    mut apply: impl FnMut(&[T]) -> Result<Vec<T>, AutodiffError>,
    b: &[T],
    tol: T,
    max_iters: usize,
) -> Result<Result<(Vec<T>, usize), (T, usize)>, AutodiffError> {
    let mut z = vec![T::zero(); b.len()];
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut rr: T = r.iter().map(|&a| a * a).sum();
    for it in 0..max_iters {
        if rr.sqrt() <= tol {
            return Ok(Ok((z, it)));
        }
        let ap = apply(&p)?;
        let pap: T = p.iter().zip(&ap).map(|(&a, &b)| a * b).sum();
        let scale = p.iter().map(|a| a.abs()).fold(T::zero(), T::max);
        if !pap.is_finite() || pap.abs() <= T::epsilon() * scale * scale {
            return Ok(Err((rr.sqrt(), it)));
        }
        let alpha = rr / pap;
        for i in 0..z.len() {
            z[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new: T = r.iter().map(|&a| a * a).sum();
        let beta = rr_new / rr;
        for i in 0..p.len() {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
    }
    if rr.sqrt() <= tol {
        Ok(Ok((z, max_iters)))
    } else {
        Ok(Err((rr.sqrt(), max_iters)))
    }
}

/// Follow-the-Ridge: GDA plus `eta_x H_yy^{-1} H_yx grad_x f` on the ascent player,
/// with `H_yy^{-1}` applied by conjugate gradient over Hessian-vector products.
pub fn fr_step<T: Scalar>(
    game: &GameSpec<T>,
    p: &GamePoint<T>,
    eta_x: T,
    eta_y: T,
    solver_tol: T,
) -> Result<GamePoint<T>, TrainerError> {
    let mut gg = guard(p, game.graph_at(p))?;
    let (x, y, f) = (gg.x, gg.y, gg.value);
    let g = &mut gg.graph;
    let gr = guard(p, g.grad_values(f, &[x, y]).map_err(GameError::from))?;
    let gx = gr.get(x).unwrap().data().to_vec();
    let gy = gr.get(y).unwrap().data().to_vec();
    let b = g.mixed_hvp_flat(f, &[y], &[x], &gx)?;

    let solved = conjugate_gradient(|v| g.hvp_flat(f, &[y], v), &b, solver_tol, CG_MAX_ITERS)?;
    let z = match solved {
        Ok((z, _)) => z,
        Err(_) => {
            let delta = T::lit(FR_DAMPING);
            let damped = conjugate_gradient(
                |v| Ok(axpy(delta, v, &g.hvp_flat(f, &[y], v)?)),
                &b,
                solver_tol,
                CG_MAX_ITERS,
            )?;
            let (z, iterations) = match damped {
                Ok(found) => found,
                Err((residual, iterations)) => {
                    return Err(TrainerError::SingularHessian { residual: residual.as_f64(), iterations })
                }
            };
            // the shifted system only helps if its solution also solves the original one
            let hz = g.hvp_flat(f, &[y], &z)?;
            let residual = norm(&hz.iter().zip(&b).map(|(&a, &c)| a - c).collect::<Vec<_>>());
            if !(residual <= solver_tol) {
                return Err(TrainerError::SingularHessian { residual: residual.as_f64(), iterations });
            }
            z
        }
    };
    let xn = axpy(-eta_x, &gx, &p.x);
    let yn: Vec<T> = p.y.iter().zip(&gy).zip(&z).map(|((&y, &g), &c)| y + eta_y * g + eta_x * c).collect();
    finish(p, GamePoint::new(xn, yn))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use crate::games::{make_bilinear_game, make_quadratic_game};

    fn xy() -> GameSpec<f64> {
        make_bilinear_game(Tensor::matrix(1, 1, vec![1.0]).unwrap()).unwrap()
    }

    #[test]
    fn gda_on_xy() {
        let p = GamePoint::new(vec![1.0], vec![1.0]);
        let n = gda_step(&xy(), &p, 0.1, 0.1, GdaMode::Simultaneous).unwrap();
        assert_eq!(n, GamePoint::new(vec![0.9], vec![1.1]));
        let a = gda_step(&xy(), &p, 0.1, 0.1, GdaMode::Alternating).unwrap();
        assert!((a.y[0] - 1.09).abs() < 1e-15);
    }

    #[test]
    fn simplified_fr_on_xy() {
        let p = GamePoint::new(vec![1.0], vec![1.0]);
        let n = simplified_fr_step(&xy(), &p, 0.1, 0.1).unwrap();
        assert!((n.x[0] - 0.9).abs() < 1e-15);
        assert!((n.y[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn fr_rejects_xy() {
        let p = GamePoint::new(vec![1.0], vec![1.0]);
        assert!(matches!(fr_step(&xy(), &p, 0.1, 0.1, 1e-10), Err(TrainerError::SingularHessian { .. })));
    }

    #[test]
    fn cg_solves_spd_system() {
        let a = [[4.0, 1.0], [1.0, 3.0]];
        let apply = |v: &[f64]| Ok(vec![a[0][0] * v[0] + a[0][1] * v[1], a[1][0] * v[0] + a[1][1] * v[1]]);
        let (z, _) = conjugate_gradient(apply, &[1.0, 2.0], 1e-12, 10).unwrap().unwrap();
        assert!((z[0] - 1.0 / 11.0).abs() < 1e-12 && (z[1] - 7.0 / 11.0).abs() < 1e-12);
    }

    #[test]
    fn divergence_reports_last_finite_point() {
        let big = make_quadratic_game(
            Tensor::matrix(1, 1, vec![0.0]).unwrap(),
            Tensor::matrix(1, 1, vec![1e200]).unwrap(),
            Tensor::matrix(1, 1, vec![0.0]).unwrap(),
        )
        .unwrap();
        let p = GamePoint::new(vec![1e200], vec![1e200]);
        match gda_step(&big, &p, 1e200, 1e200, GdaMode::Simultaneous) {
            Err(TrainerError::Diverged { last_finite: Some((x, y)), .. }) => {
                assert_eq!((x[0], y[0]), (1e200, 1e200));
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
