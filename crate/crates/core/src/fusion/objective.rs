//! Loss and analytic gradient of the fusion objective, compiled once per series.
//!
//! The fused adjacency of a snapshot is linear in `2H` coefficients
//! `c = (W_1..W_H, w_add*W_1..w_add*W_H)` applied to the raw and ancillary
//! layers. Each restricted snapshot ("view") keeps its dense layer matrices
//! and, when memory allows, the packed products `M_k M_l` so that the Gram
//! matrix `A A^T` is a quadratic form in `c`. Gradients flow back through
//! cosine similarity and degree normalization by hand.
//!
//! Co-existence sets are taken from the support of raw and ancillary layers,
//! which matches the fused support whenever `w_add > 0`; the optimizer keeps
//! `w_add` strictly inside `(0, 1)`.

use std::collections::BTreeMap;

use ndarray::{Array2, Zip};

use crate::error::Result;
use crate::graph::{active_nodes, intersect_sorted, FusionWeights, MultiplexSeries, WeightedGraph};

use super::kernels::{self, dot};
use super::loss::{loss_reg, LossWeights, PairTerms};

/// Upper bound on the number of `f64` entries held by precomputed Gram blocks.
const GRAM_BUDGET: usize = 64 << 20;

struct Basis {
    coef: usize,
    dense: Array2<f64>,
    rowsum: Vec<f64>,
}

struct View {
    m: usize,
    offsets: Vec<usize>,
    bases: Vec<Basis>,
    gram: Vec<GramBlock>,
    /// Row `b` holds the packed matrix of `gram[b]`.
    gram_rows: Array2<f64>,
}

/// Coefficient `W_h W_g w_add^power` (with `h <= g`) of one row of
/// [`View::gram_rows`]: the sum of packed products `M_k M_l (+ transpose)`
/// over all basis pairs with that coefficient.
struct GramBlock {
    h: usize,
    g: usize,
    power: i32,
}

fn packed_len(m: usize) -> usize {
    m * (m + 1) / 2
}

fn row_offsets(m: usize) -> Vec<usize> {
    let mut off = Vec::with_capacity(m);
    let mut acc = 0;
    for i in 0..m {
        off.push(acc);
        acc += m - i;
    }
    off
}

fn pack_upper(mat: &Array2<f64>, out: &mut Vec<f64>) {
    let m = mat.nrows();
    out.clear();
    out.reserve(packed_len(m));
    for i in 0..m {
        for j in i..m {
            out.push(mat[[i, j]]);
        }
    }
}

impl View {
    fn new(layers: &[(&WeightedGraph, usize)], nodes: Vec<usize>) -> Self {
        let m = nodes.len();
        let bases = layers
            .iter()
            .filter_map(|(g, coef)| {
                let dense = g.dense(&nodes);
                if dense.iter().all(|&x| x == 0.0) {
                    return None;
                }
                let rowsum = dense.rows().into_iter().map(|r| r.sum()).collect();
                Some(Basis {
                    coef: *coef,
                    dense,
                    rowsum,
                })
            })
            .collect();
        Self {
            m,
            offsets: row_offsets(m),
            bases,
            gram: Vec::new(),
            gram_rows: Array2::zeros((0, 0)),
        }
    }


    fn gram_entries(&self) -> usize {
        let k = self.bases.len();
        k * (k + 1) / 2 * packed_len(self.m)
    }

    fn precompute_gram(&mut self, layers: usize) {
        let mut blocks: BTreeMap<(usize, usize, i32), Vec<f64>> = BTreeMap::new();
        let mut packed = Vec::new();
        let k = self.bases.len();
        for a in 0..k {
            for b in a..k {
                let (ca, cb) = (self.bases[a].coef, self.bases[b].coef);
                let (la, lb) = (ca % layers, cb % layers);
                let power = (ca >= layers) as i32 + (cb >= layers) as i32;
                let p = self.bases[a].dense.dot(&self.bases[b].dense);
                let q = if a == b { p } else { &p + &p.t() };
                pack_upper(&q, &mut packed);
                let slot = blocks
                    .entry((la.min(lb), la.max(lb), power))
                    .or_insert_with(|| vec![0.0; packed.len()]);
                kernels::axpy(1.0, &packed, slot);
            }
        }
        let len = packed_len(self.m);
        let mut rows = Array2::zeros((blocks.len(), len));
        self.gram = blocks
            .into_iter()
            .enumerate()
            .map(|(b, ((h, g, power), q))| {
                rows.row_mut(b).assign(&ndarray::ArrayView1::from(&q[..]));
                GramBlock { h, g, power }
            })
            .collect();
        self.gram_rows = rows;
    }
}

/// Layer coefficients `c = (W, w_add W)` plus their factors.
struct Coefs {
    c: Vec<f64>,
    cum: Vec<f64>,
    a: f64,
}

impl Coefs {
    fn block(&self, b: &GramBlock) -> f64 {
        self.cum[b.h] * self.cum[b.g] * self.a.powi(b.power)
    }
}

struct ViewState {
    inv_norm: Vec<f64>,
    sim: Vec<f64>,
    dens: Vec<f64>,
    total: f64,
    deg: Vec<f64>,
    fused: Option<Array2<f64>>,
}

/// Precompiled fusion objective for one series.
pub struct CompiledObjective {
    layers: usize,
    views: Vec<View>,
    /// View indices for the two snapshots of each consecutive pair;
    /// `None` when the pair has no co-existing nodes.
    pairs: Vec<Option<(usize, usize)>>,
    uses_gram: bool,
}

/// Per-pair terms, regularization and the gradient with respect to
/// `(w_2..w_H, w_add)`.
pub struct EpochEvaluation {
    pub terms: PairTerms,
    pub reg: f64,
    pub grad: Vec<f64>,
}

impl CompiledObjective {
    pub fn new(series: &MultiplexSeries) -> Result<Self> {
        Self::with_budget(series, GRAM_BUDGET)
    }

    /// `gram_budget` caps the precomputed Gram storage (in `f64` entries);
    /// above it the Gram matrix is rebuilt from the fused adjacency each call.
    pub fn with_budget(series: &MultiplexSeries, gram_budget: usize) -> Result<Self> {
        let h = series.layer_count();
        let snaps = series.snapshots();
        let support: Vec<Vec<usize>> = snaps
            .iter()
            .map(|s| {
                let mut union = WeightedGraph::new(s.registry().clone());
                for g in s.raw().iter().chain(s.add()) {
                    for (i, j, _) in g.edges() {
                        union.add_weight(i, j, 1.0)?;
                    }
                }
                Ok(active_nodes(&union))
            })
            .collect::<Result<_>>()?;

        let mut views: Vec<View> = Vec::new();
        let mut keys: Vec<(usize, Vec<usize>)> = Vec::new();
        let mut view_for = |s: usize, nodes: &Vec<usize>, views: &mut Vec<View>| -> usize {
            if let Some(pos) = keys.iter().position(|(ks, kn)| *ks == s && kn == nodes) {
                return pos;
            }
            let snap = &snaps[s];
            let layers: Vec<(&WeightedGraph, usize)> = snap
                .raw()
                .iter()
                .enumerate()
                .map(|(l, g)| (g, l))
                .chain(snap.add().iter().enumerate().map(|(l, g)| (g, h + l)))
                .collect();
            views.push(View::new(&layers, nodes.clone()));
            keys.push((s, nodes.clone()));
            views.len() - 1
        };

        let mut pairs = Vec::with_capacity(snaps.len() - 1);
        for t in 0..snaps.len() - 1 {
            let nodes = intersect_sorted(&support[t], &support[t + 1]);
            if nodes.is_empty() {
                pairs.push(None);
                continue;
            }
            let a = view_for(t, &nodes, &mut views);
            let b = view_for(t + 1, &nodes, &mut views);
            pairs.push(Some((a, b)));
        }

        let needed: usize = views.iter().map(View::gram_entries).sum();
        let uses_gram = needed <= gram_budget;
        if uses_gram {
            for v in &mut views {
                v.precompute_gram(h);
            }
        }
        Ok(Self {
            layers: h,
            views,
            pairs,
            uses_gram,
        })
    }

    pub fn layer_count(&self) -> usize {
        self.layers
    }

    pub fn pair_count(&self) -> usize {
        self.pairs.len()
    }

    pub fn uses_gram(&self) -> bool {
        self.uses_gram
    }

    fn coefficients(&self, weights: &FusionWeights) -> Coefs {
        let cum = weights.cumulative();
        let a = weights.w_add();
        Coefs {
            c: cum.iter().copied().chain(cum.iter().map(|w| a * w)).collect(),
            cum,
            a,
        }
    }

    /// Packed Gram matrices of `view` for every coefficient set, as one
    /// matrix product over the stacked blocks.
    fn gram_forward(&self, view: &View, cs: &[Coefs]) -> Vec<Vec<f64>> {
        if let [c] = cs {
            let mut g = vec![0.0; packed_len(view.m)];
            for (block, q) in view.gram.iter().zip(view.gram_rows.outer_iter()) {
                let a = c.block(block);
                if a != 0.0 {
                    kernels::axpy(a, q.as_slice().expect("standard layout"), &mut g);
                }
            }
            return vec![g];
        }
        let coefs = Array2::from_shape_fn((cs.len(), view.gram.len()), |(r, b)| {
            cs[r].block(&view.gram[b])
        });
        coefs
            .dot(&view.gram_rows)
            .outer_iter()
            .map(|row| row.to_vec())
            .collect()
    }

    fn direct_forward(&self, view: &View, c: &[f64]) -> (Vec<f64>, Array2<f64>) {
        let m = view.m;
        let mut a = Array2::<f64>::zeros((m, m));
        for b in &view.bases {
            a.scaled_add(c[b.coef], &b.dense);
        }
        let mut gpack = Vec::new();
        pack_upper(&a.dot(&a), &mut gpack);
        (gpack, a)
    }

    fn finish_view(view: &View, gpack: Vec<f64>, c: &[f64], fused: Option<Array2<f64>>) -> ViewState {
        let m = view.m;
        let gdiag: Vec<f64> = view.offsets.iter().map(|&o| gpack[o]).collect();
        let inv_norm: Vec<f64> = gdiag
            .iter()
            .map(|&g| if g > 0.0 { 1.0 / g.sqrt() } else { 0.0 })
            .collect();
        let mut sim = gpack;
        for i in 0..m {
            let o = view.offsets[i];
            sim[o] = if inv_norm[i] > 0.0 { 1.0 } else { 0.0 };
            for j in i + 1..m {
                sim[o + j - i] *= inv_norm[i] * inv_norm[j];
            }
        }

        let mut dens = vec![0.0; m];
        for b in &view.bases {
            let cb = c[b.coef];
            for (d, r) in dens.iter_mut().zip(&b.rowsum) {
                *d += cb * r;
            }
        }
        let total: f64 = dens.iter().sum();
        let deg = if total > 0.0 {
            dens.iter().map(|d| d / total).collect()
        } else {
            vec![0.0; m]
        };
        ViewState {
            inv_norm,
            sim,
            dens,
            total,
            deg,
            fused,
        }
    }

    /// States indexed `[batch][view]`.
    fn forward(&self, cs: &[Coefs]) -> Vec<Vec<ViewState>> {
        let mut states: Vec<Vec<ViewState>> = cs.iter().map(|_| Vec::new()).collect();
        for view in &self.views {
            if self.uses_gram {
                for ((g, c), st) in self.gram_forward(view, cs).into_iter().zip(cs).zip(&mut states) {
                    st.push(Self::finish_view(view, g, &c.c, None));
                }
            } else {
                for (c, st) in cs.iter().zip(&mut states) {
                    let (g, a) = self.direct_forward(view, &c.c);
                    st.push(Self::finish_view(view, g, &c.c, Some(a)));
                }
            }
        }
        states
    }

    fn terms(&self, states: &[ViewState]) -> PairTerms {
        let mut sim = Vec::with_capacity(self.pairs.len());
        let mut deg = Vec::with_capacity(self.pairs.len());
        for pair in &self.pairs {
            let Some((a, b)) = *pair else {
                sim.push(0.0);
                deg.push(0.0);
                continue;
            };
            let (va, sa, sb) = (&self.views[a], &states[a], &states[b]);
            // Off-diagonal entries count for both orders.
            let diff: Vec<f64> = sa.sim.iter().zip(&sb.sim).map(|(x, y)| x - y).collect();
            let all = dot(&diff, &diff);
            let diag: f64 = va.offsets.iter().map(|&o| diff[o] * diff[o]).sum();
            sim.push(2.0 * all - diag);
            deg.push(
                sa.deg
                    .iter()
                    .zip(&sb.deg)
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum(),
            );
        }
        PairTerms { sim, deg }
    }

    /// Per-pair terms and regularization without the gradient.
    pub fn evaluate(&self, weights: &FusionWeights) -> (PairTerms, f64) {
        let c = self.coefficients(weights);
        let states = self.forward(std::slice::from_ref(&c));
        (self.terms(&states[0]), loss_reg(weights))
    }

    /// Forward pass over every pair plus the gradient of the weighted loss
    /// restricted to `subset` (zero-based pair indices).
    pub fn evaluate_with_grad(
        &self,
        weights: &FusionWeights,
        lw: &LossWeights,
        subset: &[usize],
    ) -> EpochEvaluation {
        self.evaluate_batch(std::slice::from_ref(weights), lw, subset)
            .pop()
            .expect("one evaluation per input")
    }

    /// [`Self::evaluate_with_grad`] for several weight vectors at once; the
    /// results agree with separate calls up to rounding.
    pub fn evaluate_batch(
        &self,
        batch: &[FusionWeights],
        lw: &LossWeights,
        subset: &[usize],
    ) -> Vec<EpochEvaluation> {
        let h = self.layers;
        let cs: Vec<Coefs> = batch.iter().map(|w| self.coefficients(w)).collect();
        let states = self.forward(&cs);
        let nv = self.views.len();

        // Upstream gradients on the off-diagonal similarities and on the
        // normalized degrees, indexed [batch][view].
        let k = subset.len().max(1) as f64;
        let (f_sim, f_deg) = (lw.alpha1 / k, lw.alpha2 / k);
        let mut g_sim: Vec<Vec<Option<Vec<f64>>>> = vec![vec![None; nv]; batch.len()];
        let mut g_deg: Vec<Vec<Option<Vec<f64>>>> = vec![vec![None; nv]; batch.len()];
        for r in 0..batch.len() {
            for &p in subset {
                let Some((a, b)) = self.pairs[p] else { continue };
                let view = &self.views[a];
                let (sa, sb) = (&states[r][a], &states[r][b]);
                if f_sim != 0.0 {
                    let len = packed_len(view.m);
                    // Diagonal slots are filled too but never read.
                    for (v, scale) in [(a, 4.0 * f_sim), (b, -4.0 * f_sim)] {
                        let g = g_sim[r][v].get_or_insert_with(|| vec![0.0; len]);
                        for ((gq, x), y) in g.iter_mut().zip(&sa.sim).zip(&sb.sim) {
                            *gq += scale * (x - y);
                        }
                    }
                }
                if f_deg != 0.0 {
                    for (v, sign) in [(a, 1.0), (b, -1.0)] {
                        let g = g_deg[r][v].get_or_insert_with(|| vec![0.0; view.m]);
                        for i in 0..view.m {
                            g[i] += sign * 2.0 * f_deg * (sa.deg[i] - sb.deg[i]);
                        }
                    }
                }
            }
        }

        // Gradients in c-space, and directly in (W, w_add) from Gram blocks.
        let mut dcs = vec![vec![0.0; 2 * h]; batch.len()];
        let mut dgs = vec![(vec![0.0; h], 0.0); batch.len()];
        for (vi, view) in self.views.iter().enumerate() {
            let gbars: Vec<(usize, Vec<f64>)> = (0..batch.len())
                .filter_map(|r| {
                    g_sim[r][vi]
                        .as_ref()
                        .map(|gs| (r, sim_to_gram_grad(view, &states[r][vi], gs)))
                })
                .collect();
            if self.uses_gram {
                gram_backward(view, &gbars, &cs, &mut dgs);
            } else {
                for (r, gbar) in &gbars {
                    direct_backward(view, &states[*r][vi], gbar, &mut dcs[*r]);
                }
            }
            for r in 0..batch.len() {
                if let Some(gd) = &g_deg[r][vi] {
                    backward_deg(view, &states[r][vi], gd, &mut dcs[r]);
                }
            }
        }

        batch
            .iter()
            .zip(dcs.iter().zip(&dgs))
            .zip(&states)
            .map(|((weights, (dc, dg)), st)| EpochEvaluation {
                terms: self.terms(st),
                reg: loss_reg(weights),
                grad: chain_to_params(weights, dc, dg, lw),
            })
            .collect()
    }
}

/// Gradient with respect to `(w_2..w_H, w_add)` from the gradient with
/// respect to `c_h = W_h`, `c_{H+h} = w_add W_h` and the partial gradient
/// already expressed in `(W, w_add)`, plus regularization.
fn chain_to_params(weights: &FusionWeights, dc: &[f64], dg: &(Vec<f64>, f64), lw: &LossWeights) -> Vec<f64> {
    let h = weights.layer_count();
    let cum = weights.cumulative();
    let a = weights.w_add();
    let d_cum: Vec<f64> = (0..h).map(|l| dc[l] + a * dc[h + l] + dg.0[l]).collect();
    let mut grad = vec![0.0; h];
    let mut suffix = 0.0;
    for j in (1..h).rev() {
        suffix += d_cum[j];
        grad[j - 1] = suffix;
    }
    grad[h - 1] = dg.1 + (0..h).map(|l| cum[l] * dc[h + l]).sum::<f64>();

    if lw.alpha3 != 0.0 {
        let scale = 2.0 * lw.alpha3 / h as f64;
        let w = weights.increments();
        for j in 1..h {
            grad[j - 1] += scale * w[j];
        }
        grad[h - 1] += scale * a;
    }
    grad
}

/// Gradient with respect to the packed Gram matrix, given the gradient with
/// respect to the off-diagonal cosine similarities.
fn sim_to_gram_grad(view: &View, st: &ViewState, gs: &[f64]) -> Vec<f64> {
    let m = view.m;
    let mut gbar = vec![0.0; packed_len(m)];
    let mut diag = vec![0.0; m];
    // Zero-norm rows have zero similarities, so every term below vanishes
    // for them once their inverse Gram diagonal is taken as zero.
    let inv_gdiag: Vec<f64> = st.inv_norm.iter().map(|x| x * x).collect();
    for i in 0..m {
        let o = view.offsets[i];
        if st.inv_norm[i] == 0.0 {
            continue;
        }
        let len = m - i - 1;
        let (gs_row, sim_row) = (&gs[o + 1..o + 1 + len], &st.sim[o + 1..o + 1 + len]);
        let (inv_row, invg_row) = (&st.inv_norm[i + 1..], &inv_gdiag[i + 1..]);
        let out = &mut gbar[o + 1..o + 1 + len];
        let ni = st.inv_norm[i];
        let mut di = 0.0;
        for k in 0..len {
            let g = gs_row[k];
            out[k] = g * ni * inv_row[k];
            let half = 0.5 * g * sim_row[k];
            di += half;
            diag[i + 1 + k] -= half * invg_row[k];
        }
        diag[i] -= di * inv_gdiag[i];
    }
    for i in 0..m {
        gbar[view.offsets[i]] = diag[i];
    }
    gbar
}

fn gram_backward(
    view: &View,
    gbars: &[(usize, Vec<f64>)],
    cs: &[Coefs],
    dgs: &mut [(Vec<f64>, f64)],
) {
    if gbars.is_empty() {
        return;
    }
    let dots = if let [(_, gbar)] = gbars {
        let d: Vec<f64> = view
            .gram_rows
            .outer_iter()
            .map(|q| dot(gbar, q.as_slice().expect("standard layout")))
            .collect();
        Array2::from_shape_vec((1, d.len()), d).expect("one row")
    } else {
        let len = packed_len(view.m);
        let mut stacked = Array2::zeros((gbars.len(), len));
        for (mut row, (_, gbar)) in stacked.outer_iter_mut().zip(gbars) {
            row.assign(&ndarray::ArrayView1::from(&gbar[..]));
        }
        stacked.dot(&view.gram_rows.t())
    };
    // Block coefficient W_h W_g a^p.
    for ((r, _), d) in gbars.iter().zip(dots.outer_iter()) {
        let (c, (dw, da)) = (&cs[*r], &mut dgs[*r]);
        for (b, &dot) in view.gram.iter().zip(d) {
            let ap = c.a.powi(b.power);
            dw[b.h] += c.cum[b.g] * ap * dot;
            dw[b.g] += c.cum[b.h] * ap * dot;
            if b.power > 0 {
                *da += b.power as f64 * c.a.powi(b.power - 1) * c.cum[b.h] * c.cum[b.g] * dot;
            }
        }
    }
}

fn direct_backward(view: &View, st: &ViewState, gbar: &[f64], dc: &mut [f64]) {
    let m = view.m;
    let fused = st.fused.as_ref().expect("direct mode keeps the fused matrix");
    let mut gsym = Array2::<f64>::zeros((m, m));
    for i in 0..m {
        let o = view.offsets[i];
        gsym[[i, i]] = 2.0 * gbar[o];
        for j in i + 1..m {
            gsym[[i, j]] = gbar[o + j - i];
            gsym[[j, i]] = gbar[o + j - i];
        }
    }
    let da = gsym.dot(fused);
    for b in &view.bases {
        let mut s = 0.0;
        Zip::from(&da).and(&b.dense).for_each(|x, y| s += x * y);
        dc[b.coef] += s;
    }
}

fn backward_deg(view: &View, st: &ViewState, gd: &[f64], dc: &mut [f64]) {
    if st.total <= 0.0 {
        return;
    }
    let inner: f64 = gd.iter().zip(&st.deg).map(|(g, d)| g * d).sum();
    let dr: Vec<f64> = gd.iter().map(|g| (g - inner) / st.total).collect();
    debug_assert_eq!(dr.len(), st.dens.len());
    for b in &view.bases {
        dc[b.coef] += dr.iter().zip(&b.rowsum).map(|(x, r)| x * r).sum::<f64>();
    }
}
