//! Cone kernels: Jordan algebra, Nesterov-Todd scaling and step lengths for
//! the non-negative orthant and the second-order cone.

/// Nesterov-Todd scaling of one second-order cone block, stored explicitly.
#[derive(Debug, Clone)]
pub(crate) struct SocScaling {
    pub dim: usize,
    /// `W` (symmetric), row-major.
    pub w: Vec<f64>,
    pub w_inv: Vec<f64>,
    /// `W^2`.
    pub w2: Vec<f64>,
}

/// `u0^2 - ||u1||^2`.
pub(crate) fn soc_det(u: &[f64]) -> f64 {
    let tail: f64 = u[1..].iter().map(|v| v * v).sum();
    (u[0] - tail.sqrt()) * (u[0] + tail.sqrt())
}

/// Distance-like margin: negative of the smallest eigenvalue `u0 - ||u1||`.
pub(crate) fn soc_violation(u: &[f64]) -> f64 {
    let tail: f64 = u[1..].iter().map(|v| v * v).sum::<f64>().sqrt();
    tail - u[0]
}

pub(crate) fn matvec(m: &[f64], dim: usize, v: &[f64], out: &mut [f64]) {
    for i in 0..dim {
        out[i] = (0..dim).map(|j| m[i * dim + j] * v[j]).sum();
    }
}

fn matmul(a: &[f64], b: &[f64], dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim * dim];
    for i in 0..dim {
        for k in 0..dim {
            let aik = a[i * dim + k];
            for j in 0..dim {
                out[i * dim + j] += aik * b[k * dim + j];
            }
        }
    }
    out
}

impl SocScaling {
    pub fn identity(dim: usize) -> Self {
        let mut eye = vec![0.0; dim * dim];
        for i in 0..dim {
            eye[i * dim + i] = 1.0;
        }
        Self {
            dim,
            w: eye.clone(),
            w_inv: eye.clone(),
            w2: eye,
        }
    }

    /// Scaling with `W z = W^{-1} s`. Both arguments must be strictly interior.
    pub fn nesterov_todd(s: &[f64], z: &[f64]) -> Self {
        let dim = s.len();
        let s_det = soc_det(s).max(f64::MIN_POSITIVE);
        let z_det = soc_det(z).max(f64::MIN_POSITIVE);
        let s_scale = s_det.sqrt();
        let z_scale = z_det.sqrt();
        let sbar: Vec<f64> = s.iter().map(|v| v / s_scale).collect();
        let zbar: Vec<f64> = z.iter().map(|v| v / z_scale).collect();
        let dot: f64 = sbar.iter().zip(&zbar).map(|(a, b)| a * b).sum();
        let gamma = ((1.0 + dot) / 2.0).sqrt();
        // wbar = (sbar + J zbar) / (2 gamma), unit J-norm.
        let mut wbar = vec![0.0; dim];
        wbar[0] = (sbar[0] + zbar[0]) / (2.0 * gamma);
        for i in 1..dim {
            wbar[i] = (sbar[i] - zbar[i]) / (2.0 * gamma);
        }
        // Restore the unit J-norm exactly so that W and W^{-1} stay inverses.
        let q_norm2: f64 = wbar[1..].iter().map(|v| v * v).sum();
        wbar[0] = (1.0 + q_norm2).sqrt();
        let eta = (s_det / z_det).powf(0.25);
        let a = wbar[0];
        let q = &wbar[1..];
        let mut w = vec![0.0; dim * dim];
        let mut w_inv = vec![0.0; dim * dim];
        w[0] = a;
        w_inv[0] = a;
        for i in 1..dim {
            w[i] = q[i - 1];
            w[i * dim] = q[i - 1];
            w_inv[i] = -q[i - 1];
            w_inv[i * dim] = -q[i - 1];
            for j in 1..dim {
                let block = q[i - 1] * q[j - 1] / (1.0 + a) + if i == j { 1.0 } else { 0.0 };
                w[i * dim + j] = block;
                w_inv[i * dim + j] = block;
            }
        }
        for v in &mut w {
            *v *= eta;
        }
        for v in &mut w_inv {
            *v /= eta;
        }
        let w2 = matmul(&w, &w, dim);
        Self {
            dim,
            w,
            w_inv,
            w2,
        }
    }
}

/// `u o v` for the second-order cone.
pub(crate) fn soc_product(u: &[f64], v: &[f64], out: &mut [f64]) {
    out[0] = u.iter().zip(v).map(|(a, b)| a * b).sum();
    for i in 1..u.len() {
        out[i] = u[0] * v[i] + v[0] * u[i];
    }
}

/// Solves `lambda o x = d` for `x` in the second-order cone algebra.
pub(crate) fn soc_division(lambda: &[f64], d: &[f64], out: &mut [f64]) {
    let det = soc_det(lambda);
    let tail_dot: f64 = lambda[1..].iter().zip(&d[1..]).map(|(a, b)| a * b).sum();
    let x0 = (lambda[0] * d[0] - tail_dot) / det;
    out[0] = x0;
    for i in 1..lambda.len() {
        out[i] = (d[i] - x0 * lambda[i]) / lambda[0];
    }
}

/// Largest `alpha <= cap` keeping `u + alpha du` in the second-order cone.
pub(crate) fn soc_max_step(u: &[f64], du: &[f64], cap: f64) -> f64 {
    let c = soc_det(u).max(0.0);
    let b = u[0] * du[0] - u[1..].iter().zip(&du[1..]).map(|(a, b)| a * b).sum::<f64>();
    let a = soc_det(du);
    let mut alpha = cap;
    if du[0] < 0.0 {
        alpha = alpha.min(-u[0] / du[0]);
    }
    // Smallest positive root of a t^2 + 2 b t + c.
    if a.abs() <= f64::EPSILON * (b.abs() + c.abs()).max(1e-300) {
        if b < 0.0 {
            alpha = alpha.min(-c / (2.0 * b));
        }
    } else {
        let disc = b * b - a * c;
        if disc >= 0.0 {
            let sq = disc.sqrt();
            let qv = -(b + b.signum() * sq);
            let roots = [qv / a, if qv != 0.0 { c / qv } else { f64::INFINITY }];
            for r in roots {
                if r > 0.0 {
                    alpha = alpha.min(r);
                }
            }
        }
    }
    alpha.max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * (1.0 + y.abs()))
    }

    #[test]
    fn nt_scaling_maps_s_and_z_to_same_point() {
        let s = [3.0, 1.0, -0.5, 0.2];
        let z = [2.0, -0.3, 0.7, 1.1];
        let sc = SocScaling::nesterov_todd(&s, &z);
        let mut wz = [0.0; 4];
        let mut winv_s = [0.0; 4];
        matvec(&sc.w, 4, &z, &mut wz);
        matvec(&sc.w_inv, 4, &s, &mut winv_s);
        assert!(close(&wz, &winv_s, 1e-12), "{wz:?} vs {winv_s:?}");
        // W^2 z = s
        let mut w2z = [0.0; 4];
        matvec(&sc.w2, 4, &z, &mut w2z);
        assert!(close(&w2z, &s, 1e-12));
        let prod = matmul(&sc.w, &sc.w_inv, 4);
        for i in 0..4 {
            for j in 0..4 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((prod[i * 4 + j] - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn division_inverts_product() {
        let lambda = [2.0, 0.5, -0.3];
        let x = [0.7, -1.2, 0.4];
        let mut d = [0.0; 3];
        soc_product(&lambda, &x, &mut d);
        let mut back = [0.0; 3];
        soc_division(&lambda, &d, &mut back);
        assert!(close(&back, &x, 1e-13));
    }

    #[test]
    fn step_stops_at_boundary() {
        let u = [1.0, 0.0, 0.0];
        let du = [0.0, 1.0, 0.0];
        let a = soc_max_step(&u, &du, 10.0);
        assert!((a - 1.0).abs() < 1e-12);
        let du = [-1.0, 0.0, 0.0];
        assert!((soc_max_step(&u, &du, 10.0) - 1.0).abs() < 1e-12);
        let du = [1.0, 0.5, 0.0];
        assert_eq!(soc_max_step(&u, &du, 10.0), 10.0);
    }
}
