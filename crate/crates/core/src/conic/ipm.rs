use log::trace;

use super::cones::{soc_division, soc_max_step, soc_product, soc_violation};
use super::kkt::{Factorization, Layout, Scaling};
use super::{ConicError, ConicProblem, ConicSettings, ConicSolution, ConicStatus};

const STEP_FRACTION: f64 = 0.99;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Jordan product over the stacked cone rows.
fn cone_product(layout: &Layout, u: &[f64], v: &[f64], out: &mut [f64]) {
    for r in 0..layout.nb {
        out[r] = u[r] * v[r];
    }
    for (&off, &d) in layout.soc_offsets.iter().zip(&layout.soc_dims) {
        soc_product(&u[off..off + d], &v[off..off + d], &mut out[off..off + d]);
    }
}

/// Solves `lambda o x = d` over the stacked cone rows.
fn cone_division(layout: &Layout, lambda: &[f64], d: &[f64], out: &mut [f64]) {
    for r in 0..layout.nb {
        out[r] = d[r] / lambda[r];
    }
    for (&off, &k) in layout.soc_offsets.iter().zip(&layout.soc_dims) {
        soc_division(&lambda[off..off + k], &d[off..off + k], &mut out[off..off + k]);
    }
}

fn add_identity(layout: &Layout, v: &mut [f64], scale: f64) {
    for r in 0..layout.nb {
        v[r] += scale;
    }
    for &off in &layout.soc_offsets {
        v[off] += scale;
    }
}

fn max_step(layout: &Layout, u: &[f64], du: &[f64], cap: f64) -> f64 {
    let mut alpha = cap;
    for r in 0..layout.nb {
        if du[r] < 0.0 {
            alpha = alpha.min(-u[r] / du[r]);
        }
    }
    for (&off, &d) in layout.soc_offsets.iter().zip(&layout.soc_dims) {
        alpha = alpha.min(soc_max_step(&u[off..off + d], &du[off..off + d], alpha));
    }
    alpha
}

/// Moves `u` into the interior of the cone if it is not already there.
fn shift_into_cone(layout: &Layout, u: &mut [f64]) {
    let mut worst = f64::NEG_INFINITY;
    for r in 0..layout.nb {
        worst = worst.max(-u[r]);
    }
    for (&off, &d) in layout.soc_offsets.iter().zip(&layout.soc_dims) {
        worst = worst.max(soc_violation(&u[off..off + d]));
    }
    if worst == f64::NEG_INFINITY {
        return;
    }
    let nrm = norm2(u).max(1.0);
    if worst >= -1e-8 * nrm {
        add_identity(layout, u, 1.0 + worst);
    }
}

struct Direction {
    dx: Vec<f64>,
    dy: Vec<f64>,
    dz: Vec<f64>,
    ds: Vec<f64>,
    dtau: f64,
    dkappa: f64,
}

struct Iterate {
    x: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
    s: Vec<f64>,
    tau: f64,
    kappa: f64,
}

/// Solves a conic program. See the module docs for the problem form.
pub fn solve(problem: &ConicProblem, settings: &ConicSettings) -> Result<ConicSolution, ConicError> {
    problem.check()?;
    let layout = Layout::new(problem);
    let n = layout.n;
    let m = layout.m;
    let rows = layout.rows;

    let c_scale = problem.c.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let c_scale = if c_scale > 0.0 { c_scale } else { 1.0 };
    let c: Vec<f64> = problem.c.iter().map(|v| v / c_scale).collect();
    let b = &layout.b;
    let h = &layout.h;
    let degree = (layout.nb + layout.soc_dims.len()) as f64;

    let b_norm = norm2(b).max(1.0);
    let h_norm = norm2(h).max(1.0);
    let c_norm = norm2(&c).max(1.0);

    let stalled = |it: &Iterate, iterations: usize| {
        finish(problem, &layout, it, c_scale, ConicStatus::Stalled, iterations, [f64::NAN; 3])
    };

    // Starting point from two least-squares problems with W = I.
    let scaling = Scaling::identity(&layout);
    let mut it = Iterate {
        x: vec![0.0; n],
        y: vec![0.0; m],
        z: vec![1.0; rows],
        s: vec![1.0; rows],
        tau: 1.0,
        kappa: 1.0,
    };
    let Some(fact) = Factorization::new(&layout, &scaling, settings.dense_extra, settings.refine_steps)
    else {
        return Ok(stalled(&it, 0));
    };
    let Some((x0, _, zp)) = fact.solve(&layout, &scaling, &vec![0.0; n], b, h) else {
        return Ok(stalled(&it, 0));
    };
    let neg_c: Vec<f64> = c.iter().map(|v| -v).collect();
    let Some((_, y0, z0)) = fact.solve(&layout, &scaling, &neg_c, &vec![0.0; m], &vec![0.0; rows])
    else {
        return Ok(stalled(&it, 0));
    };
    it.x = x0;
    it.s = zp.iter().map(|v| -v).collect();
    it.y = y0;
    it.z = z0;
    shift_into_cone(&layout, &mut it.s);
    shift_into_cone(&layout, &mut it.z);

    let mut rx = vec![0.0; n];
    let mut ry = vec![0.0; m];
    let mut rz = vec![0.0; rows];
    let mut metrics = [f64::NAN; 3];

    for iter in 0..=settings.max_iter {
        // Residuals of the embedding.
        let mut hrx = vec![0.0; n];
        layout.at_mul_add(&it.y, &mut hrx);
        layout.gt_mul_add(&it.z, &mut hrx);
        for j in 0..n {
            rx[j] = hrx[j] + c[j] * it.tau;
        }
        let mut ax = vec![0.0; m];
        layout.a_mul(&it.x, &mut ax);
        for i in 0..m {
            ry[i] = ax[i] - b[i] * it.tau;
        }
        let mut gx_s = vec![0.0; rows];
        layout.g_mul(&it.x, &mut gx_s);
        for r in 0..rows {
            gx_s[r] += it.s[r];
            rz[r] = gx_s[r] - h[r] * it.tau;
        }
        let cx = dot(&c, &it.x);
        let by = dot(b, &it.y);
        let hz = dot(h, &it.z);
        let rt = it.kappa + cx + by + hz;

        let tau = it.tau;
        let pres = (norm2(&ry) / b_norm).max(norm2(&rz) / h_norm) / tau;
        let dres = norm2(&rx) / c_norm / tau;
        let pcost = cx / tau;
        let dcost = -(by + hz) / tau;
        let sz = dot(&it.s, &it.z);
        let gap = sz / (tau * tau) / pcost.abs().max(dcost.abs()).max(1.0);
        metrics = [pres, dres, gap];
        trace!("iter {iter}: pcost {pcost:.6e} dcost {dcost:.6e} pres {pres:.2e} dres {dres:.2e} gap {gap:.2e} tau {tau:.2e}");

        if pres <= settings.feas_tol && dres <= settings.feas_tol && gap <= settings.gap_tol {
            return Ok(finish(problem, &layout, &it, c_scale, ConicStatus::Optimal, iter, metrics));
        }
        if by + hz < 0.0 && norm2(&hrx) / c_norm <= settings.feas_tol * -(by + hz) {
            return Ok(finish(problem, &layout, &it, c_scale, ConicStatus::PrimalInfeasible, iter, metrics));
        }
        if cx < 0.0 {
            let dinf = (norm2(&ax) / b_norm).max(norm2(&gx_s) / h_norm);
            if dinf <= settings.feas_tol * -cx {
                return Ok(finish(problem, &layout, &it, c_scale, ConicStatus::DualInfeasible, iter, metrics));
            }
        }
        if iter == settings.max_iter {
            break;
        }

        let scaling = Scaling::nesterov_todd(&layout, &it.s, &it.z);
        let mut lambda = vec![0.0; rows];
        scaling.w(&layout, &it.z, &mut lambda);
        let Some(fact) =
            Factorization::new(&layout, &scaling, settings.dense_extra, settings.refine_steps)
        else {
            return Ok(stalled(&it, iter));
        };
        let mu = (sz + it.tau * it.kappa) / (degree + 1.0);

        let Some((x1, y1, z1)) = fact.solve(&layout, &scaling, &neg_c, b, h) else {
            return Ok(stalled(&it, iter));
        };
        let denom = dot(&c, &x1) + dot(b, &y1) + dot(h, &z1) - it.kappa / it.tau;

        let direction = |factor: f64, ds_target: &[f64], dk_target: f64| -> Option<Direction> {
            let dxr: Vec<f64> = rx.iter().map(|v| -factor * v).collect();
            let dyr: Vec<f64> = ry.iter().map(|v| -factor * v).collect();
            let mut u = vec![0.0; rows];
            cone_division(&layout, &lambda, ds_target, &mut u);
            let mut wu = vec![0.0; rows];
            scaling.w(&layout, &u, &mut wu);
            let dzr: Vec<f64> = (0..rows).map(|r| -factor * rz[r] - wu[r]).collect();
            let (x2, y2, z2) = fact.solve(&layout, &scaling, &dxr, &dyr, &dzr)?;
            let dtau = (-factor * rt - dk_target / it.tau - dot(&c, &x2) - dot(b, &y2)
                - dot(h, &z2))
                / denom;
            let dx: Vec<f64> = x2.iter().zip(&x1).map(|(a, b)| a + dtau * b).collect();
            let dy: Vec<f64> = y2.iter().zip(&y1).map(|(a, b)| a + dtau * b).collect();
            let dz: Vec<f64> = z2.iter().zip(&z1).map(|(a, b)| a + dtau * b).collect();
            let mut w2dz = vec![0.0; rows];
            scaling.w2(&layout, &dz, &mut w2dz);
            let ds: Vec<f64> = wu.iter().zip(&w2dz).map(|(a, b)| a - b).collect();
            let dkappa = (dk_target - it.kappa * dtau) / it.tau;
            Some(Direction {
                dx,
                dy,
                dz,
                ds,
                dtau,
                dkappa,
            })
        };
        let step_to_boundary = |d: &Direction, cap: f64| {
            let mut a = max_step(&layout, &it.s, &d.ds, cap);
            a = a.min(max_step(&layout, &it.z, &d.dz, a));
            if d.dtau < 0.0 {
                a = a.min(-it.tau / d.dtau);
            }
            if d.dkappa < 0.0 {
                a = a.min(-it.kappa / d.dkappa);
            }
            a
        };

        // Predictor.
        let mut ll = vec![0.0; rows];
        cone_product(&layout, &lambda, &lambda, &mut ll);
        let ds_aff: Vec<f64> = ll.iter().map(|v| -v).collect();
        let Some(aff) = direction(1.0, &ds_aff, -it.tau * it.kappa) else {
            return Ok(stalled(&it, iter));
        };
        let alpha_aff = step_to_boundary(&aff, 1.0);
        let sigma = (1.0 - alpha_aff).powi(3).clamp(0.0, 1.0);

        // Corrector with second-order term.
        let mut ws = vec![0.0; rows];
        scaling.w_inv(&layout, &aff.ds, &mut ws);
        let mut wz = vec![0.0; rows];
        scaling.w(&layout, &aff.dz, &mut wz);
        let mut cross = vec![0.0; rows];
        cone_product(&layout, &ws, &wz, &mut cross);
        let mut ds_cc: Vec<f64> = ll.iter().zip(&cross).map(|(a, b)| -a - b).collect();
        add_identity(&layout, &mut ds_cc, sigma * mu);
        let dk_cc = -it.tau * it.kappa - aff.dtau * aff.dkappa + sigma * mu;
        let Some(dir) = direction(1.0 - sigma, &ds_cc, dk_cc) else {
            return Ok(stalled(&it, iter));
        };
        let mut alpha = (STEP_FRACTION * step_to_boundary(&dir, f64::INFINITY)).min(1.0);
        let mut dir = dir;
        // The second-order term can block the step near the boundary; retry
        // with the first-order centered direction.
        if alpha < 0.1 * alpha_aff {
            let mut ds_c = ds_aff.clone();
            add_identity(&layout, &mut ds_c, sigma * mu);
            let dk_c = -it.tau * it.kappa + sigma * mu;
            if let Some(d) = direction(1.0 - sigma, &ds_c, dk_c) {
                let a = (STEP_FRACTION * step_to_boundary(&d, f64::INFINITY)).min(1.0);
                if a > alpha {
                    alpha = a;
                    dir = d;
                }
            }
        }
        if !(alpha > 1e-10) {
            return Ok(stalled(&it, iter));
        }

        it.x.iter_mut().zip(&dir.dx).for_each(|(a, d)| *a += alpha * d);
        it.y.iter_mut().zip(&dir.dy).for_each(|(a, d)| *a += alpha * d);
        it.z.iter_mut().zip(&dir.dz).for_each(|(a, d)| *a += alpha * d);
        it.s.iter_mut().zip(&dir.ds).for_each(|(a, d)| *a += alpha * d);
        it.tau += alpha * dir.dtau;
        it.kappa += alpha * dir.dkappa;
    }

    Ok(finish(
        problem,
        &layout,
        &it,
        c_scale,
        ConicStatus::MaxIterations,
        settings.max_iter,
        metrics,
    ))
}

fn finish(
    problem: &ConicProblem,
    layout: &Layout,
    it: &Iterate,
    c_scale: f64,
    status: ConicStatus,
    iterations: usize,
    metrics: [f64; 3],
) -> ConicSolution {
    // Certificates are returned unnormalized by tau.
    let (primal_div, dual_div) = match status {
        ConicStatus::PrimalInfeasible | ConicStatus::DualInfeasible => (1.0, 1.0),
        _ => (it.tau, it.tau / c_scale),
    };
    let x: Vec<f64> = it.x.iter().map(|v| v / primal_div).collect();
    let y: Vec<f64> = it.y.iter().map(|v| v / dual_div).collect();
    let z: Vec<f64> = it.z.iter().map(|v| v / dual_div).collect();
    let z_socs = layout
        .soc_offsets
        .iter()
        .zip(&layout.soc_dims)
        .map(|(&off, &d)| z[off..off + d].to_vec())
        .collect();
    let primal_objective = dot(&problem.c, &x);
    let dual_objective = -(dot(&layout.b, &y) + dot(&layout.h, &z));
    ConicSolution {
        status,
        z_bounds: z[..layout.nb].to_vec(),
        z_socs,
        x,
        y,
        primal_objective,
        dual_objective,
        primal_residual: metrics[0],
        dual_residual: metrics[1],
        gap: metrics[2],
        iterations,
    }
}
