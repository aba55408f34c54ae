//! Structured solves with the scaled KKT matrix
//!
//! ```text
//! [ 0  A'  G'   ] [dx]   [rx]
//! [ A  0   0    ] [dy] = [ry]
//! [ G  0  -W'W  ] [dz]   [rz]
//! ```
//!
//! Bound rows and most variables outside the cone blocks are eliminated
//! through diagonal pivots; the rest is factorized densely.

use nalgebra::{DMatrix, DVector};

use super::cones::{matvec, SocScaling};
use super::{BoundSide, ConicProblem};

const STATIC_REG: f64 = 1e-11;

/// Problem data rearranged for fast products with `A`, `G` and their transposes.
pub(crate) struct Layout {
    pub n: usize,
    pub m: usize,
    pub nb: usize,
    pub a_rows: Vec<Vec<(usize, f64)>>,
    pub a_cols: Vec<Vec<(usize, f64)>>,
    /// `+1` for upper-bound rows (`G = +e_j`), `-1` for lower-bound rows.
    pub bound_var: Vec<usize>,
    pub bound_sign: Vec<f64>,
    pub soc_vars: Vec<Vec<usize>>,
    pub soc_g: Vec<Vec<f64>>,
    pub soc_dims: Vec<usize>,
    pub soc_offsets: Vec<usize>,
    pub rows: usize,
    pub h: Vec<f64>,
    pub b: Vec<f64>,
    /// Variables touched by at least one cone block.
    pub core: Vec<usize>,
    pub is_core: Vec<bool>,
}

impl Layout {
    pub fn new(p: &ConicProblem) -> Self {
        let n = p.num_vars;
        let m = p.eq_rows.len();
        let mut a_cols = vec![Vec::new(); n];
        for (i, row) in p.eq_rows.iter().enumerate() {
            for &(j, a) in row {
                a_cols[j].push((i, a));
            }
        }
        let nb = p.bounds.len();
        let mut h = Vec::with_capacity(nb);
        let mut bound_var = Vec::with_capacity(nb);
        let mut bound_sign = Vec::with_capacity(nb);
        for bound in &p.bounds {
            bound_var.push(bound.var);
            match bound.side {
                BoundSide::Lower => {
                    bound_sign.push(-1.0);
                    h.push(-bound.value);
                }
                BoundSide::Upper => {
                    bound_sign.push(1.0);
                    h.push(bound.value);
                }
            }
        }
        let mut soc_offsets = Vec::new();
        let mut soc_dims = Vec::new();
        let mut offset = nb;
        let mut is_core = vec![false; n];
        for block in &p.socs {
            soc_offsets.push(offset);
            soc_dims.push(block.h.len());
            offset += block.h.len();
            h.extend_from_slice(&block.h);
            for &j in &block.vars {
                is_core[j] = true;
            }
        }
        let core = (0..n).filter(|&j| is_core[j]).collect();
        Self {
            n,
            m,
            nb,
            a_rows: p.eq_rows.clone(),
            a_cols,
            bound_var,
            bound_sign,
            soc_vars: p.socs.iter().map(|s| s.vars.clone()).collect(),
            soc_g: p.socs.iter().map(|s| s.g.clone()).collect(),
            soc_dims,
            soc_offsets,
            rows: offset,
            h,
            b: p.b.clone(),
            core,
            is_core,
        }
    }

    pub fn a_mul(&self, x: &[f64], out: &mut [f64]) {
        for (i, row) in self.a_rows.iter().enumerate() {
            out[i] = row.iter().map(|&(j, a)| a * x[j]).sum();
        }
    }

    /// `out += A' y`
    pub fn at_mul_add(&self, y: &[f64], out: &mut [f64]) {
        for (i, row) in self.a_rows.iter().enumerate() {
            let yi = y[i];
            if yi != 0.0 {
                for &(j, a) in row {
                    out[j] += a * yi;
                }
            }
        }
    }

    pub fn g_mul(&self, x: &[f64], out: &mut [f64]) {
        for r in 0..self.nb {
            out[r] = self.bound_sign[r] * x[self.bound_var[r]];
        }
        for (k, vars) in self.soc_vars.iter().enumerate() {
            let off = self.soc_offsets[k];
            let g = &self.soc_g[k];
            let nv = vars.len();
            for i in 0..self.soc_dims[k] {
                out[off + i] = (0..nv).map(|j| g[i * nv + j] * x[vars[j]]).sum();
            }
        }
    }

    /// `out += G' z`
    pub fn gt_mul_add(&self, z: &[f64], out: &mut [f64]) {
        for r in 0..self.nb {
            out[self.bound_var[r]] += self.bound_sign[r] * z[r];
        }
        for (k, vars) in self.soc_vars.iter().enumerate() {
            let off = self.soc_offsets[k];
            let g = &self.soc_g[k];
            let nv = vars.len();
            for i in 0..self.soc_dims[k] {
                let zi = z[off + i];
                for j in 0..nv {
                    out[vars[j]] += g[i * nv + j] * zi;
                }
            }
        }
    }
}

/// Block-diagonal Nesterov-Todd scaling `W` over all cone rows.
pub(crate) struct Scaling {
    /// `s/z` per bound row, i.e. the diagonal of `W^2`.
    pub nonneg_w2: Vec<f64>,
    pub soc: Vec<SocScaling>,
}

impl Scaling {
    pub fn identity(layout: &Layout) -> Self {
        Self {
            nonneg_w2: vec![1.0; layout.nb],
            soc: layout.soc_dims.iter().map(|&d| SocScaling::identity(d)).collect(),
        }
    }

    pub fn nesterov_todd(layout: &Layout, s: &[f64], z: &[f64]) -> Self {
        let nonneg_w2 = (0..layout.nb).map(|r| s[r] / z[r]).collect();
        let soc = layout
            .soc_offsets
            .iter()
            .zip(&layout.soc_dims)
            .map(|(&off, &d)| SocScaling::nesterov_todd(&s[off..off + d], &z[off..off + d]))
            .collect();
        Self { nonneg_w2, soc }
    }

    fn apply(&self, layout: &Layout, v: &[f64], out: &mut [f64], which: Which) {
        for r in 0..layout.nb {
            let w2 = self.nonneg_w2[r];
            out[r] = v[r]
                * match which {
                    Which::W => w2.sqrt(),
                    Which::WInv => 1.0 / w2.sqrt(),
                    Which::W2 => w2,
                };
        }
        for (k, sc) in self.soc.iter().enumerate() {
            let off = layout.soc_offsets[k];
            let d = sc.dim;
            let m = match which {
                Which::W => &sc.w,
                Which::WInv => &sc.w_inv,
                Which::W2 => &sc.w2,
            };
            matvec(m, d, &v[off..off + d], &mut out[off..off + d]);
        }
    }

    pub fn w(&self, layout: &Layout, v: &[f64], out: &mut [f64]) {
        self.apply(layout, v, out, Which::W)
    }
    pub fn w_inv(&self, layout: &Layout, v: &[f64], out: &mut [f64]) {
        self.apply(layout, v, out, Which::WInv)
    }
    pub fn w2(&self, layout: &Layout, v: &[f64], out: &mut [f64]) {
        self.apply(layout, v, out, Which::W2)
    }
}

#[derive(Clone, Copy)]
enum Which {
    W,
    WInv,
    W2,
}

/// Factorized reduced KKT system for one scaling.
pub(crate) struct Factorization {
    /// Diagonal of `G_b'W_b^{-2}G_b` over the bound rows, plus regularization.
    hdiag: Vec<f64>,
    dense_pos: Vec<Option<usize>>,
    dense_vars: Vec<usize>,
    lu: nalgebra::linalg::FullPivLU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    /// Symmetric equilibration `D` with `D M D` factorized.
    equil: Vec<f64>,
    refine_steps: usize,
}

impl Factorization {
    pub fn new(layout: &Layout, scaling: &Scaling, dense_extra: usize, refine_steps: usize) -> Option<Self> {
        let n = layout.n;
        let m = layout.m;
        let mut hdiag = vec![STATIC_REG; n];
        for r in 0..layout.nb {
            hdiag[layout.bound_var[r]] += 1.0 / scaling.nonneg_w2[r];
        }

        // Dense block: cone variables, unbounded variables and the non-cone
        // variables with the weakest bound curvature.
        let mut dense_vars = layout.core.clone();
        let mut candidates: Vec<usize> = (0..n).filter(|&j| !layout.is_core[j]).collect();
        let weak = candidates.iter().filter(|&&j| hdiag[j] <= 10.0 * STATIC_REG).count();
        let take = (dense_extra.max(weak)).min(candidates.len());
        if take > 0 && take < candidates.len() {
            candidates.select_nth_unstable_by(take - 1, |&a, &b| {
                hdiag[a].total_cmp(&hdiag[b]).then(a.cmp(&b))
            });
        }
        candidates.truncate(take);
        candidates.sort_unstable();
        dense_vars.extend(candidates);
        let mut dense_pos = vec![None; n];
        for (p, &j) in dense_vars.iter().enumerate() {
            dense_pos[j] = Some(p);
        }
        let nd = dense_vars.len();
        let ns = layout.rows - layout.nb;
        let dim = nd + m + ns;
        let mut mat = DMatrix::<f64>::zeros(dim, dim);

        for (p, &j) in dense_vars.iter().enumerate() {
            mat[(p, p)] += hdiag[j];
            for &(i, a) in &layout.a_cols[j] {
                mat[(p, nd + i)] += a;
                mat[(nd + i, p)] += a;
            }
        }
        // Cone rows stay explicit: [G_k  -W_k^2].
        for (k, vars) in layout.soc_vars.iter().enumerate() {
            let d = layout.soc_dims[k];
            let g = &layout.soc_g[k];
            let nv = vars.len();
            let base = nd + m + layout.soc_offsets[k] - layout.nb;
            for i in 0..d {
                for (jj, &j) in vars.iter().enumerate() {
                    let p = dense_pos[j].expect("cone var in dense block");
                    mat[(base + i, p)] += g[i * nv + jj];
                    mat[(p, base + i)] += g[i * nv + jj];
                }
                for t in 0..d {
                    mat[(base + i, base + t)] -= scaling.soc[k].w2[i * d + t];
                }
                mat[(base + i, base + i)] -= STATIC_REG;
            }
        }
        for j in 0..n {
            if dense_pos[j].is_some() {
                continue;
            }
            let col = &layout.a_cols[j];
            let inv = 1.0 / hdiag[j];
            for &(i1, a1) in col {
                for &(i2, a2) in col {
                    mat[(nd + i1, nd + i2)] -= a1 * a2 * inv;
                }
            }
        }
        for i in 0..m {
            mat[(nd + i, nd + i)] -= STATIC_REG;
        }
        if mat.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let equil = equilibrate(&mut mat);
        let lu = mat.full_piv_lu();
        if !lu.is_invertible() {
            return None;
        }
        Some(Self {
            hdiag,
            dense_pos,
            dense_vars,
            lu,
            equil,
            refine_steps,
        })
    }

    fn solve_once(
        &self,
        layout: &Layout,
        scaling: &Scaling,
        rx: &[f64],
        ry: &[f64],
        rz: &[f64],
    ) -> Option<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let n = layout.n;
        let m = layout.m;
        let nb = layout.nb;
        let nd = self.dense_vars.len();
        let ns = layout.rows - nb;
        // Bound rows are eliminated: r1 = rx + G_b' W_b^{-2} rz_b.
        let mut r1 = rx.to_vec();
        for r in 0..nb {
            r1[layout.bound_var[r]] += layout.bound_sign[r] * rz[r] / scaling.nonneg_w2[r];
        }
        let mut rhs = DVector::<f64>::zeros(nd + m + ns);
        for (p, &j) in self.dense_vars.iter().enumerate() {
            rhs[p] = r1[j];
        }
        for i in 0..m {
            rhs[nd + i] = ry[i];
        }
        for t in 0..ns {
            rhs[nd + m + t] = rz[nb + t];
        }
        for j in 0..n {
            if self.dense_pos[j].is_some() {
                continue;
            }
            let scaled = r1[j] / self.hdiag[j];
            for &(i, a) in &layout.a_cols[j] {
                rhs[nd + i] -= a * scaled;
            }
        }
        for (r, d) in rhs.iter_mut().zip(&self.equil) {
            *r *= d;
        }
        let mut sol = self.lu.solve(&rhs)?;
        for (r, d) in sol.iter_mut().zip(&self.equil) {
            *r *= d;
        }
        let dy: Vec<f64> = (0..m).map(|i| sol[nd + i]).collect();
        let mut dx = vec![0.0; n];
        for j in 0..n {
            dx[j] = match self.dense_pos[j] {
                Some(p) => sol[p],
                None => {
                    let aty: f64 = layout.a_cols[j].iter().map(|&(i, a)| a * dy[i]).sum();
                    (r1[j] - aty) / self.hdiag[j]
                }
            };
        }
        let mut dz = vec![0.0; layout.rows];
        for r in 0..nb {
            let gdx = layout.bound_sign[r] * dx[layout.bound_var[r]];
            dz[r] = (gdx - rz[r]) / scaling.nonneg_w2[r];
        }
        for t in 0..ns {
            dz[nb + t] = sol[nd + m + t];
        }
        Some((dx, dy, dz))
    }

    /// Full solve with iterative refinement against the unregularized matrix.
    pub fn solve(
        &self,
        layout: &Layout,
        scaling: &Scaling,
        rx: &[f64],
        ry: &[f64],
        rz: &[f64],
    ) -> Option<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let (mut dx, mut dy, mut dz) = self.solve_once(layout, scaling, rx, ry, rz)?;
        let norm = |v: &[f64]| v.iter().fold(0.0_f64, |a, x| a.max(x.abs()));
        let rhs_norm = norm(rx).max(norm(ry)).max(norm(rz)).max(1e-300);
        let mut last = f64::INFINITY;
        for _ in 0..self.refine_steps {
            let (ex, ey, ez) = residual(layout, scaling, rx, ry, rz, &dx, &dy, &dz);
            let err = norm(&ex).max(norm(&ey)).max(norm(&ez));
            if err <= 1e-14 * rhs_norm || err >= last {
                break;
            }
            last = err;
            let (cx, cy, cz) = self.solve_once(layout, scaling, &ex, &ey, &ez)?;
            dx.iter_mut().zip(&cx).for_each(|(a, b)| *a += b);
            dy.iter_mut().zip(&cy).for_each(|(a, b)| *a += b);
            dz.iter_mut().zip(&cz).for_each(|(a, b)| *a += b);
        }
        if dx.iter().chain(&dy).chain(&dz).any(|v| !v.is_finite()) {
            return None;
        }
        Some((dx, dy, dz))
    }
}

/// Ruiz scaling: rescales `mat` in place to unit row and column maxima and
/// returns the diagonal used on both sides.
fn equilibrate(mat: &mut DMatrix<f64>) -> Vec<f64> {
    let dim = mat.nrows();
    let mut d = vec![1.0; dim];
    for _ in 0..10 {
        let mut worst = 0.0_f64;
        let scale: Vec<f64> = (0..dim)
            .map(|i| {
                let m = mat.row(i).iter().fold(0.0_f64, |a, v| a.max(v.abs()));
                worst = worst.max((1.0 - m).abs());
                if m > 0.0 {
                    1.0 / m.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        for i in 0..dim {
            for j in 0..dim {
                mat[(i, j)] *= scale[i] * scale[j];
            }
            d[i] *= scale[i];
        }
        if worst < 1e-2 {
            break;
        }
    }
    d
}

#[allow(clippy::too_many_arguments)]
fn residual(
    layout: &Layout,
    scaling: &Scaling,
    rx: &[f64],
    ry: &[f64],
    rz: &[f64],
    dx: &[f64],
    dy: &[f64],
    dz: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut kx = vec![0.0; layout.n];
    layout.at_mul_add(dy, &mut kx);
    layout.gt_mul_add(dz, &mut kx);
    let ex = rx.iter().zip(&kx).map(|(r, k)| r - k).collect();
    let mut ky = vec![0.0; layout.m];
    layout.a_mul(dx, &mut ky);
    let ey = ry.iter().zip(&ky).map(|(r, k)| r - k).collect();
    let mut gdx = vec![0.0; layout.rows];
    layout.g_mul(dx, &mut gdx);
    let mut w2dz = vec![0.0; layout.rows];
    scaling.w2(layout, dz, &mut w2dz);
    let ez = (0..layout.rows).map(|i| rz[i] - (gdx[i] - w2dz[i])).collect();
    (ex, ey, ez)
}
