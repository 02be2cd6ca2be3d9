//! Branching-tree conditional expectations.
//!
//! Every outer node `(p, i)` grows its own tree of `inner` one-step branches
//! per level down to the horizon; the leaves evaluate `ξ` and each interior
//! node applies the same implicit step as the regression scheme. Cost is
//! `paths · Σ_r inner^r`, so this is for small grids only.

use rand_chacha::ChaCha8Rng;

use super::{Ctx, DiscreteSolution, StepOut};
use crate::error::{invalid, Error, Result};
use crate::generator_model::TerminalView;
use crate::par;
use crate::path_engine::{mix_seed, path_rng, StepDraw, StepSampler};

struct Node {
    y: Vec<f64>,
    c: Vec<f64>,
    z: Vec<f64>,
    v: Vec<f64>,
    f: Vec<f64>,
    hit: bool,
}

/// Mean of equal-width blocks, shifted by the first block so that constant
/// data average exactly.
fn shifted_mean(xs: &[f64], width: usize, out: &mut [f64]) {
    let n = xs.len() / width;
    for c in 0..width {
        let x0 = xs[c];
        let s: f64 = (0..n).map(|b| xs[b * width + c] - x0).sum();
        out[c] = x0 + s / n as f64;
    }
}

#[allow(clippy::too_many_arguments)]
fn tree_node(
    ctx: &Ctx,
    sampler: &StepSampler,
    inner: usize,
    i: usize,
    state: &[f64],
    base_var: f64,
    rng: &mut ChaCha8Rng,
    path: usize,
    dr_override: Option<f64>,
) -> Result<Node> {
    let b = ctx.bundle;
    let model = b.model();
    let grid = b.grid();
    let k = ctx.prob.dim();
    let (d, m) = (b.brownian_dim(), b.atoms());
    if i == grid.steps() {
        let mut y = vec![0.0; k];
        ctx.prob
            .terminal
            .eval(&TerminalView::new(grid.horizon(), state, ctx.layout), &mut y);
        if y.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("terminal condition in tree of path {path}"),
            });
        }
        return Ok(Node {
            y,
            c: Vec::new(),
            z: Vec::new(),
            v: Vec::new(),
            f: Vec::new(),
            hit: false,
        });
    }
    let h = grid.h();
    let t = grid.t(i);
    let lam = b.marks().intensities();
    let r = ctx.prob.r_spec.step(t, h, state, base_var);
    let mut draw = StepDraw::new(model);
    let mut next = state.to_vec();
    let mut ys = Vec::with_capacity(inner * k);
    let mut dws = Vec::with_capacity(inner * d);
    let mut comps = Vec::with_capacity(inner * m);
    for _ in 0..inner {
        model.sample_step(rng, sampler, &mut draw);
        model.advance_state(state, h, &draw.dw, &draw.counts, &draw.db, &mut next);
        dws.extend_from_slice(&draw.dw);
        comps.extend(draw.counts.iter().zip(lam).map(|(&n, l)| n as f64 - l * h));
        let child = tree_node(ctx, sampler, inner, i + 1, &next, base_var + r.base_abs, rng, path, None)?;
        ys.extend_from_slice(&child.y);
    }
    let mut c = vec![0.0; k];
    shifted_mean(&ys, k, &mut c);
    let mut z = vec![0.0; k * d];
    let mut v = vec![0.0; k * m];
    for bch in 0..inner {
        for cc in 0..k {
            let dy = ys[bch * k + cc] - c[cc];
            for l in 0..d {
                z[cc * d + l] += dy * dws[bch * d + l];
            }
            for j in 0..m {
                v[j * k + cc] += dy * comps[bch * m + j];
            }
        }
    }
    let nf = inner as f64;
    for cc in 0..k {
        for l in 0..d {
            z[cc * d + l] /= nf * h;
        }
        for j in 0..m {
            v[j * k + cc] /= nf * lam[j] * h;
        }
    }
    let dr = dr_override.unwrap_or(r.dr);
    let base: Vec<f64> = c.iter().map(|x| x + dr).collect();
    let (y, f, hit) = ctx.picard(i, path, state, &base, &z, &v)?;
    Ok(Node { y, c, z, v, f, hit })
}

pub(super) fn nested_pass(ctx: &mut Ctx, inner: usize) -> Result<DiscreteSolution> {
    let mut s = ctx.init()?;
    let ctx = &*ctx;
    let b = ctx.bundle;
    let (n, steps, k, d, m) = (b.n_paths(), b.steps(), s.k, s.d, s.m);
    let leaves: f64 = (1..=steps).map(|r| (inner as f64).powi(r as i32)).sum::<f64>() * n as f64;
    if leaves > ctx.cfg.nested_budget as f64 {
        return Err(invalid(
            "inner",
            format!(
                "nested tree needs {leaves:.3e} branch evaluations, budget is {}",
                ctx.cfg.nested_budget
            ),
        ));
    }
    let grid = *b.grid();
    let h = grid.h();
    let sampler = StepSampler::new(b.model(), h)?;
    let seed = mix_seed(ctx.cfg.nested_seed, b.seed());
    let sref = &s;
    let nodes = par::try_map_indices(n, |p| -> Result<Vec<Node>> {
        let mut base = 0.0;
        let mut out = Vec::with_capacity(steps);
        for i in 0..steps {
            let mut rng = path_rng(mix_seed(seed, i as u64), p);
            let state = b.state(p, i);
            out.push(tree_node(ctx, &sampler, inner, i, state, base, &mut rng, p, Some(sref.dr(p, i)))?);
            base += ctx.prob.r_spec.step(grid.t(i), h, state, base).base_abs;
        }
        Ok(out)
    })?;
    let mut trunc = None;
    for (p, path_nodes) in nodes.into_iter().enumerate() {
        let ys: Vec<Vec<f64>> = path_nodes.iter().map(|nd| nd.y.clone()).collect();
        for (i, nd) in path_nodes.into_iter().enumerate() {
            let ynext = if i + 1 < steps { ys[i + 1].clone() } else { s.xi(p).to_vec() };
            let dm = super::residual(&ynext, &nd.c, &nd.z, &nd.v, b, p, i, k, d, m, h);
            if nd.hit {
                let e: &mut (usize, usize, usize) = trunc.get_or_insert((i, p, 0));
                e.2 += 1;
            }
            s.scatter(
                p,
                i,
                &StepOut {
                    y: nd.y,
                    z: nd.z,
                    v: nd.v,
                    dm,
                    f: nd.f,
                    trunc_hit: nd.hit,
                },
            );
        }
    }
    ctx.finish(&mut s, trunc, false);
    Ok(s)
}
