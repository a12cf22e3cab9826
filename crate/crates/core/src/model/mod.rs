//! Heterogeneous GNN that scores check nodes of a construction graph.
//!
//! Parameters live in [`ImpParams`]; [`forward`] runs a batch of graph states
//! through initialization, `M` message-passing iterations, pooling and the
//! per-check-node MLP, and [`backward`] returns exact parameter gradients of
//! `Σ dz ⊙ z`.

mod checkpoint;
mod forward;
mod gradcheck;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use forward::{backward, forward, ForwardPass, StateInput};
pub use gradcheck::{gradcheck, GradcheckReport, TensorCheck};

use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::channel::substream;
use crate::error::{Error, Result};
use crate::pccmp::MessageType;

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImpHyper {
    /// Message-passing iterations `M`.
    pub iterations: usize,
    pub d_emb: usize,
    pub d_init: usize,
    /// `d^(i)` for `i = 1..=M`.
    pub hidden: Vec<usize>,
    pub d_pool: usize,
    /// Widths of the POST hidden layers.
    pub mlp_hidden: Vec<usize>,
}

impl Default for ImpHyper {
    fn default() -> Self {
        ImpHyper {
            iterations: 3,
            d_emb: 28,
            d_init: 4,
            hidden: vec![64; 3],
            d_pool: 1,
            mlp_hidden: vec![128, 128],
        }
    }
}

impl ImpHyper {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("at least one message-passing iteration is required".into()));
        }
        if self.hidden.len() != self.iterations {
            return Err(Error::Config(format!(
                "{} hidden widths given for {} iterations",
                self.hidden.len(),
                self.iterations
            )));
        }
        let all = [self.d_emb, self.d_init, self.d_pool];
        if all.iter().chain(&self.hidden).chain(&self.mlp_hidden).any(|&d| d == 0) {
            return Err(Error::Config("all layer widths must be positive".into()));
        }
        Ok(())
    }

    /// `d^(i)` for `i = 0..=M`.
    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.d_emb + self.d_init];
        d.extend(&self.hidden);
        d
    }

    pub fn d_final(&self) -> usize {
        *self.hidden.last().unwrap_or(&(self.d_emb + self.d_init))
    }

    /// Width of the POST input `[h_c; h̃_v; h̃_c; θ]`.
    pub fn post_input(&self) -> usize {
        self.d_final() + 2 * self.d_pool + 1
    }
}

/// Weights of one message-passing iteration, indexed by [`MessageType::index`].
#[derive(Clone, Debug, PartialEq)]
pub struct MpLayer {
    /// `W ∈ R^{d_out × 2 d_in}` acting on `[h_u; h_N]`.
    pub w: [Array2<f64>; 3],
    pub b: [Array1<f64>; 3],
}

/// All trainable tensors of the scoring model.
#[derive(Clone, Debug, PartialEq)]
pub struct ImpParams {
    pub hyper: ImpHyper,
    /// Rows indexed by [`crate::pccmp::NodeType::index`].
    pub emb: Array2<f64>,
    /// Index 0: variable-node init net, 1: check-node init net.
    pub init_w: [Array1<f64>; 2],
    pub init_b: [Array1<f64>; 2],
    pub layers: Vec<MpLayer>,
    /// Index 0: `W_V^pool`, 1: `W_C^pool`.
    pub pool_w: [Array2<f64>; 2],
    pub mlp_w: Vec<Array2<f64>>,
    pub mlp_b: Vec<Array1<f64>>,
}

const SIDES: [&str; 2] = ["v", "c"];

impl ImpParams {
    pub fn zeros(hyper: ImpHyper) -> Result<Self> {
        hyper.validate()?;
        let dims = hyper.dims();
        let layers = dims
            .windows(2)
            .map(|w| MpLayer {
                w: std::array::from_fn(|_| Array2::zeros((w[1], 2 * w[0]))),
                b: std::array::from_fn(|_| Array1::zeros(w[1])),
            })
            .collect();
        let mut widths = vec![hyper.post_input()];
        widths.extend(&hyper.mlp_hidden);
        widths.push(1);
        let mlp_w = widths.windows(2).map(|w| Array2::zeros((w[1], w[0]))).collect();
        let mlp_b = widths[1..].iter().map(|&d| Array1::zeros(d)).collect();
        Ok(ImpParams {
            emb: Array2::zeros((3, hyper.d_emb)),
            init_w: std::array::from_fn(|_| Array1::zeros(hyper.d_init)),
            init_b: std::array::from_fn(|_| Array1::zeros(hyper.d_init)),
            layers,
            pool_w: std::array::from_fn(|_| Array2::zeros((hyper.d_pool, hyper.d_final()))),
            mlp_w,
            mlp_b,
            hyper,
        })
    }

    /// Uniform `±1/√fan_in` for weights and biases, `0.1·N(0,1)` for the
    /// node-type embeddings.
    pub fn random(hyper: ImpHyper, seed: u64) -> Result<Self> {
        let mut p = ImpParams::zeros(hyper)?;
        let mut rng = substream(seed, 0x1a17);
        let fans = fan_ins(&p.tensors());
        for (fan, (name, mut t)) in fans.into_iter().zip(p.tensors_mut()) {
            if name == "emb" {
                t.iter_mut().for_each(|x| *x = 0.1 * rng.sample::<f64, _>(StandardNormal));
            } else {
                let a = 1.0 / (fan as f64).sqrt();
                t.iter_mut().for_each(|x| *x = rng.random_range(-a..a));
            }
        }
        Ok(p)
    }

    pub fn zeros_like(&self) -> Self {
        ImpParams::zeros(self.hyper.clone()).expect("hyperparameters already validated")
    }

    /// Named views of every tensor in a fixed order.
    pub fn tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        let mut out = vec![("emb".to_string(), self.emb.view().into_dyn())];
        for s in 0..2 {
            out.push((format!("init.{}.w", SIDES[s]), self.init_w[s].view().into_dyn()));
            out.push((format!("init.{}.b", SIDES[s]), self.init_b[s].view().into_dyn()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            for mt in MessageType::ALL {
                out.push((format!("mp.{i}.{}.w", mt.name()), l.w[mt.index()].view().into_dyn()));
                out.push((format!("mp.{i}.{}.b", mt.name()), l.b[mt.index()].view().into_dyn()));
            }
        }
        for s in 0..2 {
            out.push((format!("pool.{}.w", SIDES[s]), self.pool_w[s].view().into_dyn()));
        }
        for (k, (w, b)) in self.mlp_w.iter().zip(&self.mlp_b).enumerate() {
            out.push((format!("post.{k}.w"), w.view().into_dyn()));
            out.push((format!("post.{k}.b"), b.view().into_dyn()));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        let mut out = vec![("emb".to_string(), self.emb.view_mut().into_dyn())];
        for (s, (w, b)) in self.init_w.iter_mut().zip(self.init_b.iter_mut()).enumerate() {
            out.push((format!("init.{}.w", SIDES[s]), w.view_mut().into_dyn()));
            out.push((format!("init.{}.b", SIDES[s]), b.view_mut().into_dyn()));
        }
        for (i, l) in self.layers.iter_mut().enumerate() {
            for (mt, (w, b)) in MessageType::ALL.iter().zip(l.w.iter_mut().zip(l.b.iter_mut())) {
                out.push((format!("mp.{i}.{}.w", mt.name()), w.view_mut().into_dyn()));
                out.push((format!("mp.{i}.{}.b", mt.name()), b.view_mut().into_dyn()));
            }
        }
        for (s, w) in self.pool_w.iter_mut().enumerate() {
            out.push((format!("pool.{}.w", SIDES[s]), w.view_mut().into_dyn()));
        }
        for (k, (w, b)) in self.mlp_w.iter_mut().zip(self.mlp_b.iter_mut()).enumerate() {
            out.push((format!("post.{k}.w"), w.view_mut().into_dyn()));
            out.push((format!("post.{k}.b"), b.view_mut().into_dyn()));
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// `self += alpha · other`.
    pub fn axpy(&mut self, alpha: f64, other: &ImpParams) {
        for ((_, mut a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.scaled_add(alpha, &b);
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for (_, mut t) in self.tensors_mut() {
            t.mapv_inplace(|x| x * alpha);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|x| x.is_finite()))
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|(_, t)| t.iter().map(|x| x.abs()).collect::<Vec<_>>())
            .fold(0.0, f64::max)
    }

    /// Rounds every entry through `f32`, the checkpoint precision.
    pub fn round_to_f32(&mut self) {
        for (_, mut t) in self.tensors_mut() {
            t.mapv_inplace(|x| x as f32 as f64);
        }
    }
}

// Weights are listed before their bias, so a bias reuses the preceding fan-in.
fn fan_ins(tensors: &[(String, ArrayViewD<f64>)]) -> Vec<usize> {
    let mut last = 1;
    tensors
        .iter()
        .map(|(name, t)| {
            if name.starts_with("init.") {
                last = 1;
            } else if name.ends_with(".w") {
                last = t.shape()[1];
            }
            last
        })
        .collect()
}
