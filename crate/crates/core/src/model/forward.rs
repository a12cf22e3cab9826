use std::sync::Arc;

use ndarray::{s, Array1, Array2, ArrayView2, ArrayViewMut1, Axis};

use super::ImpParams;
use crate::error::{Error, Result};
use crate::pccmp::{MessageType, NodeType, PccmpGraph, PccmpStructure};

/// One graph state and its budget parameter `θ`.
#[derive(Clone, Copy, Debug)]
pub struct StateInput<'a> {
    pub graph: &'a PccmpGraph,
    pub theta: f64,
}

struct LayerCache {
    hv: Array2<f64>,
    hc: Array2<f64>,
    agg_c2v: Array2<f64>,
    agg_v2c: Array2<f64>,
    agg_c2c: Array2<f64>,
    /// `s / ‖s‖` before the ReLU.
    uv: Array2<f64>,
    uc: Array2<f64>,
    norm_v: Vec<f64>,
    norm_c: Vec<f64>,
}

/// Cached intermediates of a batched forward pass.
///
/// Rows of every node matrix are ordered state by state, `N` rows per state.
pub struct ForwardPass {
    batch: usize,
    n: usize,
    structure: Arc<PccmpStructure>,
    x_v: Vec<f64>,
    check_types: Vec<NodeType>,
    tv: Array2<f64>,
    tc: Array2<f64>,
    layers: Vec<LayerCache>,
    mean_v: Array2<f64>,
    mean_c: Array2<f64>,
    pool_v: Array2<f64>,
    pool_c: Array2<f64>,
    post_x: Array2<f64>,
    /// Pre-activations of the POST hidden layers.
    post_a: Vec<Array2<f64>>,
    z: Array2<f64>,
}

impl ForwardPass {
    /// Priority metrics, one row per state.
    pub fn z(&self) -> &Array2<f64> {
        &self.z
    }

    pub fn into_z(self) -> Array2<f64> {
        self.z
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Final check-node embeddings `h_c^(M)`.
    pub fn final_check_embeddings(&self) -> ArrayView2<'_, f64> {
        self.post_x.slice(s![.., ..self.post_x.ncols() - 2 * self.pool_v.ncols() - 1])
    }

    /// Final variable-node embeddings `h_v^(M)`.
    pub fn final_variable_embeddings(&self) -> Array2<f64> {
        let last = self.layers.last().expect("at least one layer");
        last.uv.mapv(relu)
    }

    /// Global features `(h̃_v, h̃_c)`, one row per state.
    pub fn pooled(&self) -> (&Array2<f64>, &Array2<f64>) {
        (&self.pool_v, &self.pool_c)
    }

    /// Signs of every ReLU input, for detecting kink crossings.
    pub fn activation_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend(l.uv.iter().map(|&x| x > 0.0));
            out.extend(l.uc.iter().map(|&x| x > 0.0));
            out.extend(l.norm_v.iter().chain(&l.norm_c).map(|&x| x > 0.0));
        }
        for a in &self.post_a {
            out.extend(a.iter().map(|&x| x > 0.0));
        }
        out
    }

    /// Embeddings `h^(0)` of (variable, check) nodes.
    pub fn initial_embeddings(&self) -> (&Array2<f64>, &Array2<f64>) {
        (&self.layers[0].hv, &self.layers[0].hc)
    }
}

fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// `x · Wᵀ` for the self half (`cols = 0..d_in`) or neighbor half of `W`.
fn mul_half(x: &Array2<f64>, w: &Array2<f64>, nbr: bool) -> Array2<f64> {
    let d_in = w.ncols() / 2;
    let half = if nbr { w.slice(s![.., d_in..]) } else { w.slice(s![.., ..d_in]) };
    x.dot(&half.t())
}

/// Runs the scoring model on a batch of states sharing one graph structure.
pub fn forward(params: &ImpParams, inputs: &[StateInput]) -> Result<ForwardPass> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::Argument("forward pass needs at least one state".into()))?;
    let structure = first.graph.structure().clone();
    let n = structure.n();
    for inp in inputs {
        if !Arc::ptr_eq(inp.graph.structure(), &structure) && inp.graph.structure().as_ref() != structure.as_ref() {
            return Err(Error::Argument("batched states must share one graph structure".into()));
        }
    }
    let h = &params.hyper;
    let batch = inputs.len();
    let rows = batch * n;
    let d0 = h.d_emb + h.d_init;

    let x_v: Vec<f64> = inputs.iter().map(|i| i.graph.x_v()).collect();
    let check_types: Vec<NodeType> = inputs.iter().flat_map(|i| i.graph.check_types().iter().copied()).collect();

    // initialization
    let mut hv = Array2::zeros((rows, d0));
    let mut hc = Array2::zeros((rows, d0));
    let mut tv = Array2::zeros((rows, h.d_init));
    let mut tc = Array2::zeros((rows, h.d_init));
    for b in 0..batch {
        for j in 0..n {
            let r = b * n + j;
            hv.slice_mut(s![r, ..h.d_emb]).assign(&params.emb.row(NodeType::V.index()));
            hc.slice_mut(s![r, ..h.d_emb]).assign(&params.emb.row(check_types[r].index()));
            let xc = inputs[b].graph.x_c(j);
            for k in 0..h.d_init {
                tv[[r, k]] = (params.init_w[0][k] * x_v[b] + params.init_b[0][k]).tanh();
                tc[[r, k]] = (params.init_w[1][k] * xc + params.init_b[1][k]).tanh();
            }
        }
    }
    hv.slice_mut(s![.., h.d_emb..]).assign(&tv);
    hc.slice_mut(s![.., h.d_emb..]).assign(&tc);

    // message passing
    let mut layers = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        let d_in = hv.ncols();
        let d_out = layer.b[0].len();
        let mut agg_c2v = Array2::zeros((rows, d_in));
        let mut agg_v2c = Array2::zeros((rows, d_in));
        let mut agg_c2c = Array2::zeros((rows, d_in));
        for b in 0..batch {
            let o = b * n;
            for i in 0..n {
                let nb = structure.c2v_neighbors(i);
                let mut acc = agg_c2v.row_mut(o + i);
                for &j in nb {
                    acc += &hc.row(o + j);
                }
                acc /= nb.len() as f64;
            }
            for j in 0..n {
                let mut acc = agg_v2c.row_mut(o + j);
                for &i in structure.v2c_neighbors(j) {
                    acc += &hv.row(o + i);
                }
            }
            // running sum over c_0..c_{j-1}, in ascending order
            let mut run = Array1::<f64>::zeros(d_in);
            for j in 1..n {
                run += &hc.row(o + j - 1);
                agg_c2c.row_mut(o + j).assign(&(&run / j as f64));
            }
        }

        let wc2v = &layer.w[MessageType::C2v.index()];
        let wv2c = &layer.w[MessageType::V2c.index()];
        let wc2c = &layer.w[MessageType::C2c.index()];
        let mut sv = mul_half(&hv, wc2v, false) + mul_half(&agg_c2v, wc2v, true);
        sv += &layer.b[MessageType::C2v.index()];
        let mut sc = mul_half(&hc, wv2c, false) + mul_half(&agg_v2c, wv2c, true);
        sc += &layer.b[MessageType::V2c.index()];
        let mut t = mul_half(&hc, wc2c, false) + mul_half(&agg_c2c, wc2c, true);
        t += &layer.b[MessageType::C2c.index()];
        for b in 0..batch {
            // c_0 has no c2c in-neighbors, so that message type is absent there
            t.row_mut(b * n).fill(0.0);
        }
        sc += &t;
        debug_assert_eq!(sc.ncols(), d_out);

        let (uv, norm_v) = normalize_rows(sv);
        let (uc, norm_c) = normalize_rows(sc);
        let next_v = uv.mapv(relu);
        let next_c = uc.mapv(relu);
        layers.push(LayerCache {
            hv: std::mem::replace(&mut hv, next_v),
            hc: std::mem::replace(&mut hc, next_c),
            agg_c2v,
            agg_v2c,
            agg_c2c,
            uv,
            uc,
            norm_v,
            norm_c,
        });
    }

    // pooling
    let d = hc.ncols();
    let dp = h.d_pool;
    let mut mean_v = Array2::zeros((batch, d));
    let mut mean_c = Array2::zeros((batch, d));
    for b in 0..batch {
        let o = b * n;
        let mut mv = mean_v.row_mut(b);
        let mut mc = mean_c.row_mut(b);
        for j in 0..n {
            mv += &hv.row(o + j);
            mc += &hc.row(o + j);
        }
        mv /= n as f64;
        mc /= n as f64;
    }
    let pool_v = mean_v.dot(&params.pool_w[0].t()).mapv(f64::tanh);
    let pool_c = mean_c.dot(&params.pool_w[1].t()).mapv(f64::tanh);

    // per-check-node MLP on [h_c; h̃_v; h̃_c; θ]
    let mut post_x = Array2::zeros((rows, d + 2 * dp + 1));
    post_x.slice_mut(s![.., ..d]).assign(&hc);
    for b in 0..batch {
        for j in 0..n {
            let r = b * n + j;
            post_x.slice_mut(s![r, d..d + dp]).assign(&pool_v.row(b));
            post_x.slice_mut(s![r, d + dp..d + 2 * dp]).assign(&pool_c.row(b));
            post_x[[r, d + 2 * dp]] = inputs[b].theta;
        }
    }
    let mut post_a = Vec::with_capacity(params.mlp_w.len() - 1);
    let mut act = post_x.clone();
    let last = params.mlp_w.len() - 1;
    for (k, (w, bias)) in params.mlp_w.iter().zip(&params.mlp_b).enumerate() {
        let mut a = act.dot(&w.t());
        a += bias;
        if k < last {
            act = a.mapv(relu);
            post_a.push(a);
        } else {
            act = a;
        }
    }
    let z = act.into_shape_with_order((batch, n)).map_err(|e| Error::Invariant(e.to_string()))?;

    Ok(ForwardPass {
        batch,
        n,
        structure,
        x_v,
        check_types,
        tv,
        tc,
        layers,
        mean_v,
        mean_c,
        pool_v,
        pool_c,
        post_x,
        post_a,
        z,
    })
}

fn normalize_rows(mut s: Array2<f64>) -> (Array2<f64>, Vec<f64>) {
    let mut norms = Vec::with_capacity(s.nrows());
    for mut row in s.rows_mut() {
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            row /= norm;
        }
        norms.push(norm);
    }
    (s, norms)
}

// dL/ds for y = ReLU(s/‖s‖), overwriting dy.
fn normalize_backward(mut dy: Array2<f64>, u: &Array2<f64>, norms: &[f64]) -> Array2<f64> {
    for ((mut g, ur), &norm) in dy.rows_mut().into_iter().zip(u.rows()).zip(norms) {
        if norm == 0.0 {
            g.fill(0.0);
            continue;
        }
        g.zip_mut_with(&ur, |gi, &ui| {
            if ui <= 0.0 {
                *gi = 0.0
            }
        });
        let proj = g.dot(&ur);
        g.zip_mut_with(&ur, |gi, &ui| *gi = (*gi - ui * proj) / norm);
    }
    dy
}

fn accumulate_weight(gw: &mut Array2<f64>, ds: &Array2<f64>, h: &Array2<f64>, agg: &Array2<f64>) {
    let d_in = h.ncols();
    let mut gself = gw.slice_mut(s![.., ..d_in]);
    gself += &ds.t().dot(h);
    let mut gnbr = gw.slice_mut(s![.., d_in..]);
    gnbr += &ds.t().dot(agg);
}

fn add_row(mut dst: ArrayViewMut1<f64>, src: ndarray::ArrayView1<f64>, scale: f64) {
    dst.scaled_add(scale, &src);
}

/// Gradients of `Σ_{b,j} dz[b, j] · z[b, j]` with respect to every parameter.
pub fn backward(params: &ImpParams, fp: &ForwardPass, dz: ArrayView2<f64>) -> Result<ImpParams> {
    if dz.dim() != (fp.batch, fp.n) {
        return Err(Error::Argument(format!(
            "cotangent has shape {:?}, forward pass produced ({}, {})",
            dz.dim(),
            fp.batch,
            fp.n
        )));
    }
    let h = &params.hyper;
    let n = fp.n;
    let batch = fp.batch;
    let rows = batch * n;
    let mut g = params.zeros_like();

    // POST
    let mut da = dz.to_owned().into_shape_with_order((rows, 1)).map_err(|e| Error::Invariant(e.to_string()))?;
    let n_mlp = params.mlp_w.len();
    let mut dx = Array2::zeros((0, 0));
    for k in (0..n_mlp).rev() {
        let input = if k == 0 { fp.post_x.clone() } else { fp.post_a[k - 1].mapv(relu) };
        g.mlp_w[k] += &da.t().dot(&input);
        g.mlp_b[k] += &da.sum_axis(Axis(0));
        let mut dprev = da.dot(&params.mlp_w[k]);
        if k > 0 {
            dprev.zip_mut_with(&fp.post_a[k - 1], |d, &a| {
                if a <= 0.0 {
                    *d = 0.0
                }
            });
            da = dprev;
        } else {
            dx = dprev;
        }
    }
    let d = h.d_final();
    let dp = h.d_pool;
    let mut dhc = dx.slice(s![.., ..d]).to_owned();
    let mut dhv = Array2::<f64>::zeros((rows, d));

    // pooling
    for (side, (pool, mean)) in [(&fp.pool_v, &fp.mean_v), (&fp.pool_c, &fp.mean_c)].into_iter().enumerate() {
        let off = d + side * dp;
        for b in 0..batch {
            let dpool = dx.slice(s![b * n..(b + 1) * n, off..off + dp]).sum_axis(Axis(0));
            let dq = &dpool * &pool.row(b).mapv(|p| 1.0 - p * p);
            for (r, &q) in dq.iter().enumerate() {
                g.pool_w[side].row_mut(r).scaled_add(q, &mean.row(b));
            }
            let dmean = params.pool_w[side].t().dot(&dq);
            let target = if side == 0 { &mut dhv } else { &mut dhc };
            for j in 0..n {
                add_row(target.row_mut(b * n + j), dmean.view(), 1.0 / n as f64);
            }
        }
    }

    // message passing, last iteration first
    let st = &fp.structure;
    for (li, cache) in fp.layers.iter().enumerate().rev() {
        let layer = &params.layers[li];
        let dsv = normalize_backward(std::mem::take(&mut dhv), &cache.uv, &cache.norm_v);
        let dsc = normalize_backward(std::mem::take(&mut dhc), &cache.uc, &cache.norm_c);
        let mut dsc_c2c = dsc.clone();
        for b in 0..batch {
            dsc_c2c.row_mut(b * n).fill(0.0);
        }
        let gl = &mut g.layers[li];
        let d_in = cache.hv.ncols();

        let (ic2v, iv2c, ic2c) = (MessageType::C2v.index(), MessageType::V2c.index(), MessageType::C2c.index());
        accumulate_weight(&mut gl.w[ic2v], &dsv, &cache.hv, &cache.agg_c2v);
        gl.b[ic2v] += &dsv.sum_axis(Axis(0));
        accumulate_weight(&mut gl.w[iv2c], &dsc, &cache.hc, &cache.agg_v2c);
        gl.b[iv2c] += &dsc.sum_axis(Axis(0));
        accumulate_weight(&mut gl.w[ic2c], &dsc_c2c, &cache.hc, &cache.agg_c2c);
        gl.b[ic2c] += &dsc_c2c.sum_axis(Axis(0));

        let self_half = |w: &Array2<f64>| w.slice(s![.., ..d_in]).to_owned();
        let nbr_half = |w: &Array2<f64>| w.slice(s![.., d_in..]).to_owned();
        let mut nhv = dsv.dot(&self_half(&layer.w[ic2v]));
        let mut nhc = dsc.dot(&self_half(&layer.w[iv2c])) + dsc_c2c.dot(&self_half(&layer.w[ic2c]));
        let dagg_c2v = dsv.dot(&nbr_half(&layer.w[ic2v]));
        let dagg_v2c = dsc.dot(&nbr_half(&layer.w[iv2c]));
        let dagg_c2c = dsc_c2c.dot(&nbr_half(&layer.w[ic2c]));

        for b in 0..batch {
            let o = b * n;
            for i in 0..n {
                let nb = st.c2v_neighbors(i);
                let scale = 1.0 / nb.len() as f64;
                for &j in nb {
                    add_row(nhc.row_mut(o + j), dagg_c2v.row(o + i), scale);
                }
            }
            for j in 0..n {
                for &i in st.v2c_neighbors(j) {
                    add_row(nhv.row_mut(o + i), dagg_v2c.row(o + j), 1.0);
                }
            }
            // c_{j'} receives Σ_{j > j'} dagg[j] / j
            let mut acc = Array1::<f64>::zeros(d_in);
            for j in (1..n).rev() {
                acc.scaled_add(1.0 / j as f64, &dagg_c2c.row(o + j));
                add_row(nhc.row_mut(o + j - 1), acc.view(), 1.0);
            }
        }
        dhv = nhv;
        dhc = nhc;
    }

    // initialization
    for r in 0..rows {
        let b = r / n;
        let xc = (r % n) as f64 / n as f64;
        g.emb.row_mut(NodeType::V.index()).scaled_add(1.0, &dhv.slice(s![r, ..h.d_emb]));
        g.emb.row_mut(fp.check_types[r].index()).scaled_add(1.0, &dhc.slice(s![r, ..h.d_emb]));
        for k in 0..h.d_init {
            let av = dhv[[r, h.d_emb + k]] * (1.0 - fp.tv[[r, k]] * fp.tv[[r, k]]);
            g.init_w[0][k] += av * fp.x_v[b];
            g.init_b[0][k] += av;
            let ac = dhc[[r, h.d_emb + k]] * (1.0 - fp.tc[[r, k]] * fp.tc[[r, k]]);
            g.init_w[1][k] += ac * xc;
            g.init_b[1][k] += ac;
        }
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::super::{ImpHyper, ImpParams};
    use super::*;
    use crate::channel::SnrDb;
    use crate::pccmp::build_pccmp;

    fn small() -> ImpParams {
        ImpParams::random(ImpHyper::default(), 3).unwrap()
    }

    #[test]
    fn dimensions_and_ranges() {
        let p = small();
        let g = build_pccmp(8, SnrDb(2.0)).unwrap();
        let fp = forward(&p, &[StateInput { graph: &g, theta: 1.0 }]).unwrap();
        let (h0v, h0c) = fp.initial_embeddings();
        assert_eq!(h0v.ncols(), 32);
        assert_eq!(h0c.ncols(), 32);
        assert!(h0c.slice(s![.., 28..]).iter().all(|x| x.abs() < 1.0));
        assert_eq!(fp.final_check_embeddings().ncols(), 64);
        for r in fp.final_check_embeddings().rows() {
            assert!(r.dot(&r).sqrt() <= 1.0 + 1e-12);
        }
        let (pv, pc) = fp.pooled();
        assert_eq!(pv.ncols(), 1);
        assert!(pv.iter().chain(pc.iter()).all(|x| x.abs() < 1.0));
        assert_eq!(fp.z().dim(), (1, 8));
    }

    #[test]
    fn equal_checks_have_equal_initial_embeddings() {
        let mut p = small();
        p.init_w[1].fill(0.0);
        let g = build_pccmp(8, SnrDb(2.0)).unwrap();
        let fp = forward(&p, &[StateInput { graph: &g, theta: 1.0 }]).unwrap();
        let (_, h0c) = fp.initial_embeddings();
        assert_eq!(h0c.row(2), h0c.row(5));
    }

    #[test]
    fn batched_matches_single() {
        let p = small();
        let g = build_pccmp(16, SnrDb(2.0)).unwrap();
        let g2 = g.freeze_node(3).unwrap().freeze_node(0).unwrap();
        let single = forward(&p, &[StateInput { graph: &g2, theta: 0.25 }]).unwrap();
        let batch = forward(
            &p,
            &[StateInput { graph: &g, theta: 1.0 }, StateInput { graph: &g2, theta: 0.25 }],
        )
        .unwrap();
        for j in 0..16 {
            assert!((single.z()[[0, j]] - batch.z()[[1, j]]).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_and_scaled_cotangents() {
        let p = small();
        let g = build_pccmp(8, SnrDb(1.0)).unwrap().freeze_node(2).unwrap();
        let fp = forward(&p, &[StateInput { graph: &g, theta: 0.5 }]).unwrap();
        let zero = backward(&p, &fp, Array2::zeros((1, 8)).view()).unwrap();
        assert_eq!(zero.max_abs(), 0.0);
        let dz = Array2::from_shape_fn((1, 8), |(_, j)| (j as f64 - 3.5) * 0.3);
        let g1 = backward(&p, &fp, dz.view()).unwrap();
        let g2 = backward(&p, &fp, (&dz * 2.0).view()).unwrap();
        for ((_, a), (_, b)) in g1.tensors().iter().zip(g2.tensors()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert_eq!(2.0 * x, *y);
            }
        }
        assert!(backward(&p, &fp, Array2::zeros((2, 8)).view()).is_err());
    }

    #[test]
    fn deterministic() {
        let p = small();
        let g = build_pccmp(32, SnrDb(2.5)).unwrap();
        let a = forward(&p, &[StateInput { graph: &g, theta: 0.3 }]).unwrap().into_z();
        let b = forward(&p, &[StateInput { graph: &g, theta: 0.3 }]).unwrap().into_z();
        assert_eq!(a, b);
    }
}
