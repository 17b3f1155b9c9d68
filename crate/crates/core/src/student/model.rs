//! The student planner: vocabulary MLP, one self-attention encoder block, ego
//! embedding, one cross-attention decoder block, imitation + metric heads.
//! Backward passes are written by hand and guarded by finite-difference checks.

use crate::student::encode::{SceneTokens, D_RAW};
use crate::student::nn::{
    activate, activate_backward, sigmoid, softmax_rows, softmax_rows_backward, Linear, Matrix,
};
use crate::vocab::{flatten, Vocabulary, FLAT_DIM};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

const MLP_HIDDEN: usize = 128;
const N_HEADS: usize = 8;
const EGO_DIM: usize = 4;

/// Fixed input scaling for flattened vocabulary trajectories.
const VOCAB_POS_SCALE: f64 = 1.0 / 30.0;
const VOCAB_HEADING_SCALE: f64 = 1.0 / 3.0;

#[derive(Debug, thiserror::Error)]
pub enum StudentError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite loss in batch {batch}")]
    NonFiniteLoss { batch: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("model file error: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub d_raw: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            d_raw: D_RAW,
        }
    }
}

/// All learnable blocks. `Params` doubles as the gradient / moment container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub vocab_mlp1: Linear,
    pub vocab_mlp2: Linear,
    pub scene_proj: Linear,
    pub ego_embed: Linear,
    pub self_wq: Matrix,
    pub self_wk: Matrix,
    pub self_wv: Matrix,
    pub self_wo: Matrix,
    pub ff1_in: Linear,
    pub ff1_out: Linear,
    pub cross_wq: Matrix,
    pub cross_wk: Matrix,
    pub cross_wv: Matrix,
    pub cross_wo: Matrix,
    pub ff2_in: Linear,
    pub ff2_out: Linear,
    pub im_head: Linear,
    pub metric_heads: Linear,
}

impl Params {
    pub fn zeros(cfg: &ModelConfig) -> Params {
        let d = cfg.d_model;
        Params {
            vocab_mlp1: Linear::zeros(MLP_HIDDEN, FLAT_DIM),
            vocab_mlp2: Linear::zeros(d, MLP_HIDDEN),
            scene_proj: Linear::zeros(d, cfg.d_raw),
            ego_embed: Linear::zeros(d, EGO_DIM),
            self_wq: Matrix::zeros(d, d),
            self_wk: Matrix::zeros(d, d),
            self_wv: Matrix::zeros(d, d),
            self_wo: Matrix::zeros(d, d),
            ff1_in: Linear::zeros(2 * d, d),
            ff1_out: Linear::zeros(d, 2 * d),
            cross_wq: Matrix::zeros(d, d),
            cross_wk: Matrix::zeros(d, d),
            cross_wv: Matrix::zeros(d, d),
            cross_wo: Matrix::zeros(d, d),
            ff2_in: Linear::zeros(2 * d, d),
            ff2_out: Linear::zeros(d, 2 * d),
            im_head: Linear::zeros(1, d),
            metric_heads: Linear::zeros(N_HEADS, d),
        }
    }

    pub fn init(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Params {
        let d = cfg.d_model;
        Params {
            vocab_mlp1: Linear::init(MLP_HIDDEN, FLAT_DIM, rng),
            vocab_mlp2: Linear::init(d, MLP_HIDDEN, rng),
            scene_proj: Linear::init(d, cfg.d_raw, rng),
            ego_embed: Linear::init(d, EGO_DIM, rng),
            self_wq: Matrix::uniform(d, d, d, rng),
            self_wk: Matrix::uniform(d, d, d, rng),
            self_wv: Matrix::uniform(d, d, d, rng),
            self_wo: Matrix::uniform(d, d, d, rng),
            ff1_in: Linear::init(2 * d, d, rng),
            ff1_out: Linear::init(d, 2 * d, rng),
            cross_wq: Matrix::uniform(d, d, d, rng),
            cross_wk: Matrix::uniform(d, d, d, rng),
            cross_wv: Matrix::uniform(d, d, d, rng),
            cross_wo: Matrix::uniform(d, d, d, rng),
            ff2_in: Linear::init(2 * d, d, rng),
            ff2_out: Linear::init(d, 2 * d, rng),
            im_head: Linear::init(1, d, rng),
            metric_heads: Linear::init(N_HEADS, d, rng),
        }
    }

    /// Named views over every parameter slice, in a fixed order shared by the
    /// optimizer, gradient checks, and serialization.
    pub fn blocks(&self) -> Vec<(&'static str, &[f64])> {
        vec![
            ("vocab_mlp1.w", &self.vocab_mlp1.w.data),
            ("vocab_mlp1.b", &self.vocab_mlp1.b),
            ("vocab_mlp2.w", &self.vocab_mlp2.w.data),
            ("vocab_mlp2.b", &self.vocab_mlp2.b),
            ("scene_proj.w", &self.scene_proj.w.data),
            ("scene_proj.b", &self.scene_proj.b),
            ("ego_embed.w", &self.ego_embed.w.data),
            ("ego_embed.b", &self.ego_embed.b),
            ("self_wq", &self.self_wq.data),
            ("self_wk", &self.self_wk.data),
            ("self_wv", &self.self_wv.data),
            ("self_wo", &self.self_wo.data),
            ("ff1_in.w", &self.ff1_in.w.data),
            ("ff1_in.b", &self.ff1_in.b),
            ("ff1_out.w", &self.ff1_out.w.data),
            ("ff1_out.b", &self.ff1_out.b),
            ("cross_wq", &self.cross_wq.data),
            ("cross_wk", &self.cross_wk.data),
            ("cross_wv", &self.cross_wv.data),
            ("cross_wo", &self.cross_wo.data),
            ("ff2_in.w", &self.ff2_in.w.data),
            ("ff2_in.b", &self.ff2_in.b),
            ("ff2_out.w", &self.ff2_out.w.data),
            ("ff2_out.b", &self.ff2_out.b),
            ("im_head.w", &self.im_head.w.data),
            ("im_head.b", &self.im_head.b),
            ("metric_heads.w", &self.metric_heads.w.data),
            ("metric_heads.b", &self.metric_heads.b),
        ]
    }

    pub fn blocks_mut(&mut self) -> Vec<(&'static str, &mut Vec<f64>)> {
        vec![
            ("vocab_mlp1.w", &mut self.vocab_mlp1.w.data),
            ("vocab_mlp1.b", &mut self.vocab_mlp1.b),
            ("vocab_mlp2.w", &mut self.vocab_mlp2.w.data),
            ("vocab_mlp2.b", &mut self.vocab_mlp2.b),
            ("scene_proj.w", &mut self.scene_proj.w.data),
            ("scene_proj.b", &mut self.scene_proj.b),
            ("ego_embed.w", &mut self.ego_embed.w.data),
            ("ego_embed.b", &mut self.ego_embed.b),
            ("self_wq", &mut self.self_wq.data),
            ("self_wk", &mut self.self_wk.data),
            ("self_wv", &mut self.self_wv.data),
            ("self_wo", &mut self.self_wo.data),
            ("ff1_in.w", &mut self.ff1_in.w.data),
            ("ff1_in.b", &mut self.ff1_in.b),
            ("ff1_out.w", &mut self.ff1_out.w.data),
            ("ff1_out.b", &mut self.ff1_out.b),
            ("cross_wq", &mut self.cross_wq.data),
            ("cross_wk", &mut self.cross_wk.data),
            ("cross_wv", &mut self.cross_wv.data),
            ("cross_wo", &mut self.cross_wo.data),
            ("ff2_in.w", &mut self.ff2_in.w.data),
            ("ff2_in.b", &mut self.ff2_in.b),
            ("ff2_out.w", &mut self.ff2_out.w.data),
            ("ff2_out.b", &mut self.ff2_out.b),
            ("im_head.w", &mut self.im_head.w.data),
            ("im_head.b", &mut self.im_head.b),
            ("metric_heads.w", &mut self.metric_heads.w.data),
            ("metric_heads.b", &mut self.metric_heads.b),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.blocks().iter().map(|(_, s)| s.len()).sum()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_im: f64,
    pub mean_kd: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudentModel {
    pub config: ModelConfig,
    pub seed: u64,
    pub params: Params,
    pub training_log: Vec<EpochLog>,
}

impl StudentModel {
    pub fn new(cfg: ModelConfig, seed: u64) -> StudentModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        StudentModel {
            params: Params::init(&cfg, &mut rng),
            config: cfg,
            seed,
            training_log: Vec::new(),
        }
    }
}

/// Flattened, standardized vocabulary input (k x 120).
pub fn vocab_input(vocab: &Vocabulary) -> Matrix {
    let rows = vocab
        .trajectories
        .iter()
        .map(|t| {
            flatten(t)
                .chunks_exact(3)
                .flat_map(|c| {
                    [
                        c[0] * VOCAB_POS_SCALE,
                        c[1] * VOCAB_POS_SCALE,
                        c[2] * VOCAB_HEADING_SCALE,
                    ]
                })
                .collect()
        })
        .collect();
    Matrix::from_rows(rows)
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub im_logits: Vec<f64>,
    /// k x 8, strictly inside (0,1)
    pub metric_scores: Matrix,
    pub metric_logits: Matrix,
}

/// Intermediate activations retained for the backward pass.
pub struct ForwardCache {
    vs: Matrix,
    h1_pre: Matrix,
    h1: Matrix,
    v0: Matrix,
    sa_q: Matrix,
    sa_k: Matrix,
    sa_v: Matrix,
    sa_a: Matrix,
    sa_ctx: Matrix,
    v1: Matrix,
    f1_pre: Matrix,
    f1: Matrix,
    v3: Matrix,
    tokens: Matrix,
    t_proj: Matrix,
    ca_q: Matrix,
    ca_k: Matrix,
    ca_v: Matrix,
    ca_a: Matrix,
    ca_ctx: Matrix,
    v4: Matrix,
    f2_pre: Matrix,
    f2: Matrix,
    v5: Matrix,
    ego: Matrix,
}

struct AttnCache {
    q: Matrix,
    k: Matrix,
    v: Matrix,
    a: Matrix,
    ctx: Matrix,
    out: Matrix,
}

fn attention(
    x_q: &Matrix,
    x_kv: &Matrix,
    wq: &Matrix,
    wk: &Matrix,
    wv: &Matrix,
    wo: &Matrix,
) -> AttnCache {
    let d = wq.rows as f64;
    let q = x_q.matmul_nt(wq);
    let k = x_kv.matmul_nt(wk);
    let v = x_kv.matmul_nt(wv);
    let mut scores = q.matmul_nt(&k);
    scores.scale(1.0 / d.sqrt());
    let a = softmax_rows(&scores);
    let ctx = a.matmul(&v);
    let out = ctx.matmul_nt(wo);
    AttnCache {
        q,
        k,
        v,
        a,
        ctx,
        out,
    }
}

/// Backward of `attention`; returns (dX_q, dX_kv) and accumulates weight grads.
#[allow(clippy::too_many_arguments)]
fn attention_backward(
    cache: &AttnCache,
    x_q: &Matrix,
    x_kv: &Matrix,
    wq: &Matrix,
    wk: &Matrix,
    wv: &Matrix,
    wo: &Matrix,
    d_out: &Matrix,
    gq: &mut Matrix,
    gk: &mut Matrix,
    gv: &mut Matrix,
    go: &mut Matrix,
) -> (Matrix, Matrix) {
    let scale = 1.0 / (wq.rows as f64).sqrt();
    go.add_assign(&d_out.matmul_tn(&cache.ctx));
    let d_ctx = d_out.matmul(wo);
    let d_a = d_ctx.matmul_nt(&cache.v);
    let d_v = cache.a.matmul_tn(&d_ctx);
    let mut d_scores = softmax_rows_backward(&cache.a, &d_a);
    d_scores.scale(scale);
    let d_q = d_scores.matmul(&cache.k);
    let d_k = d_scores.matmul_tn(&cache.q);
    gq.add_assign(&d_q.matmul_tn(x_q));
    gk.add_assign(&d_k.matmul_tn(x_kv));
    gv.add_assign(&d_v.matmul_tn(x_kv));
    let dx_q = d_q.matmul(wq);
    let mut dx_kv = d_k.matmul(wk);
    dx_kv.add_assign(&d_v.matmul(wv));
    (dx_q, dx_kv)
}

/// Full forward pass for one frame. `vs` is the standardized vocabulary input.
pub fn forward(
    model: &StudentModel,
    vs: &Matrix,
    ego: [f64; 4],
    tokens: &SceneTokens,
) -> Result<(ForwardOutput, ForwardCache), StudentError> {
    let p = &model.params;
    if vs.cols != FLAT_DIM {
        return Err(StudentError::ShapeMismatch(format!(
            "vocab input has {} columns, expected {}",
            vs.cols, FLAT_DIM
        )));
    }
    if tokens.data.cols != model.config.d_raw {
        return Err(StudentError::ShapeMismatch(format!(
            "tokens have {} columns, expected {}",
            tokens.data.cols, model.config.d_raw
        )));
    }
    if tokens.data.rows == 0 {
        return Err(StudentError::ShapeMismatch("no scene tokens".into()));
    }

    // vocabulary MLP
    let h1_pre = p.vocab_mlp1.forward(vs);
    let h1 = activate(&h1_pre);
    let v0 = p.vocab_mlp2.forward(&h1);

    // self-attention + residual
    let sa = attention(&v0, &v0, &p.self_wq, &p.self_wk, &p.self_wv, &p.self_wo);
    let mut v1 = v0.clone();
    v1.add_assign(&sa.out);

    // feed-forward + residual
    let f1_pre = p.ff1_in.forward(&v1);
    let f1 = activate(&f1_pre);
    let mut v2 = v1.clone();
    v2.add_assign(&p.ff1_out.forward(&f1));

    // ego embedding broadcast
    let ego_mat = Matrix::from_rows(vec![ego.to_vec()]);
    let e = p.ego_embed.forward(&ego_mat);
    let mut v3 = v2;
    v3.add_row_broadcast(e.row(0));

    // scene tokens projection + cross-attention + residual
    let t_proj = p.scene_proj.forward(&tokens.data);
    let ca = attention(
        &v3,
        &t_proj,
        &p.cross_wq,
        &p.cross_wk,
        &p.cross_wv,
        &p.cross_wo,
    );
    let mut v4 = v3.clone();
    v4.add_assign(&ca.out);

    // feed-forward + residual
    let f2_pre = p.ff2_in.forward(&v4);
    let f2 = activate(&f2_pre);
    let mut v5 = v4.clone();
    v5.add_assign(&p.ff2_out.forward(&f2));

    // heads
    let im = p.im_head.forward(&v5);
    let im_logits: Vec<f64> = (0..v5.rows).map(|r| im.at(r, 0)).collect();
    let metric_logits = p.metric_heads.forward(&v5);
    let metric_scores = Matrix {
        rows: metric_logits.rows,
        cols: metric_logits.cols,
        data: metric_logits.data.iter().map(|z| sigmoid(*z)).collect(),
    };

    let cache = ForwardCache {
        vs: vs.clone(),
        h1_pre,
        h1,
        v0,
        sa_q: sa.q,
        sa_k: sa.k,
        sa_v: sa.v,
        sa_a: sa.a,
        sa_ctx: sa.ctx,
        v1,
        f1_pre,
        f1,
        v3,
        tokens: tokens.data.clone(),
        t_proj,
        ca_q: ca.q,
        ca_k: ca.k,
        ca_v: ca.v,
        ca_a: ca.a,
        ca_ctx: ca.ctx,
        v4,
        f2_pre,
        f2,
        v5,
        ego: ego_mat,
    };
    Ok((
        ForwardOutput {
            im_logits,
            metric_scores,
            metric_logits,
        },
        cache,
    ))
}

/// Backward pass from head-logit gradients; accumulates into `grad`.
pub fn backward(
    model: &StudentModel,
    cache: &ForwardCache,
    d_im_logits: &[f64],
    d_metric_logits: &Matrix,
    grad: &mut Params,
) {
    let p = &model.params;
    let k = cache.v5.rows;

    // heads
    let d_im = Matrix::from_rows(d_im_logits.iter().map(|g| vec![*g]).collect());
    let mut d_v5 = p.im_head.backward(&cache.v5, &d_im, &mut grad.im_head);
    d_v5.add_assign(
        &p.metric_heads
            .backward(&cache.v5, d_metric_logits, &mut grad.metric_heads),
    );
    debug_assert_eq!(d_v5.rows, k);

    // ff2 residual
    let d_f2 = p.ff2_out.backward(&cache.f2, &d_v5, &mut grad.ff2_out);
    let d_f2_pre = activate_backward(&cache.f2_pre, &d_f2);
    let mut d_v4 = p.ff2_in.backward(&cache.v4, &d_f2_pre, &mut grad.ff2_in);
    d_v4.add_assign(&d_v5);

    // cross-attention residual
    let ca = AttnCache {
        q: cache.ca_q.clone(),
        k: cache.ca_k.clone(),
        v: cache.ca_v.clone(),
        a: cache.ca_a.clone(),
        ctx: cache.ca_ctx.clone(),
        out: Matrix::zeros(0, 0),
    };
    let (d_v3_attn, d_t_proj) = attention_backward(
        &ca,
        &cache.v3,
        &cache.t_proj,
        &p.cross_wq,
        &p.cross_wk,
        &p.cross_wv,
        &p.cross_wo,
        &d_v4,
        &mut grad.cross_wq,
        &mut grad.cross_wk,
        &mut grad.cross_wv,
        &mut grad.cross_wo,
    );
    let mut d_v3 = d_v4;
    d_v3.add_assign(&d_v3_attn);

    p.scene_proj
        .backward(&cache.tokens, &d_t_proj, &mut grad.scene_proj);

    // ego embedding broadcast: column sums flow into the embed layer
    let d_e = Matrix::from_rows(vec![d_v3.column_sums()]);
    p.ego_embed.backward(&cache.ego, &d_e, &mut grad.ego_embed);
    let d_v2 = d_v3;

    // ff1 residual
    let d_f1 = p.ff1_out.backward(&cache.f1, &d_v2, &mut grad.ff1_out);
    let d_f1_pre = activate_backward(&cache.f1_pre, &d_f1);
    let mut d_v1 = p.ff1_in.backward(&cache.v1, &d_f1_pre, &mut grad.ff1_in);
    d_v1.add_assign(&d_v2);

    // self-attention residual (Q and K/V share the input)
    let sa = AttnCache {
        q: cache.sa_q.clone(),
        k: cache.sa_k.clone(),
        v: cache.sa_v.clone(),
        a: cache.sa_a.clone(),
        ctx: cache.sa_ctx.clone(),
        out: Matrix::zeros(0, 0),
    };
    let (d_v0_q, d_v0_kv) = attention_backward(
        &sa,
        &cache.v0,
        &cache.v0,
        &p.self_wq,
        &p.self_wk,
        &p.self_wv,
        &p.self_wo,
        &d_v1,
        &mut grad.self_wq,
        &mut grad.self_wk,
        &mut grad.self_wv,
        &mut grad.self_wo,
    );
    let mut d_v0 = d_v1;
    d_v0.add_assign(&d_v0_q);
    d_v0.add_assign(&d_v0_kv);

    // vocabulary MLP
    let d_h1 = p
        .vocab_mlp2
        .backward(&cache.h1, &d_v0, &mut grad.vocab_mlp2);
    let d_h1_pre = activate_backward(&cache.h1_pre, &d_h1);
    p.vocab_mlp1
        .backward(&cache.vs, &d_h1_pre, &mut grad.vocab_mlp1);
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    config: ModelConfig,
    seed: u64,
    params: Params,
    training_log: Vec<EpochLog>,
}

pub fn save_model(model: &StudentModel, path: &std::path::Path) -> Result<(), StudentError> {
    let file = ModelFile {
        config: model.config.clone(),
        seed: model.seed,
        params: model.params.clone(),
        training_log: model.training_log.clone(),
    };
    std::fs::write(
        path,
        serde_json::to_string(&file).map_err(|e| StudentError::Format(e.to_string()))?,
    )?;
    Ok(())
}

pub fn load_model(path: &std::path::Path) -> Result<StudentModel, StudentError> {
    let file: ModelFile = serde_json::from_str(&std::fs::read_to_string(path)?)
        .map_err(|e| StudentError::Format(e.to_string()))?;
    Ok(StudentModel {
        config: file.config,
        seed: file.seed,
        params: file.params,
        training_log: file.training_log,
    })
}

/// 64-bit FNV-1a over the canonical model serialization.
pub fn model_hash(model: &StudentModel) -> u64 {
    let s = serde_json::to_string(&model.params).expect("params serialize");
    crate::vocab::fnv1a64(s.as_bytes())
}
