//! Assembled-cost trajectory selection and confidence-weight calibration.

use crate::geom::RigidTransform;
use crate::scenario::gen::FramePair;
use crate::scenario::Scenario;
use crate::student::encode::{ego_features, encode_pair, encode_scene};
use crate::student::model::{forward, vocab_input, ForwardOutput, StudentError, StudentModel};
use crate::student::nn::{softmax_vec, Matrix};
use crate::teachers::{epdms, score_ec, teach_scenario, ScoreMatrix, TeacherConfig, TeacherError};
use crate::vocab::Vocabulary;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Scores are clamped to [SCORE_CLAMP, 1] before taking logs.
pub const SCORE_CLAMP: f64 = 1e-6;

/// (metric column, weight) pairs of the graded weighted term: TTC, C, EP, LK.
/// EC has no prediction head, so it cannot appear here.
pub const WEIGHTED_TERM: [(usize, f64); 4] = [(3, 5.0), (4, 2.0), (2, 5.0), (7, 5.0)];
pub const WEIGHTED_TERM_TOTAL: f64 = 17.0;

const N_TERMS: usize = 6;

#[derive(Debug, thiserror::Error)]
pub enum InferError {
    #[error("empty grid")]
    EmptyGrid,
    #[error(transparent)]
    Student(#[from] StudentError),
    #[error(transparent)]
    Teacher(#[from] TeacherError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("weights file error: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferenceWeights {
    pub k_im: f64,
    pub k_nc: f64,
    pub k_dac: f64,
    pub k_ddc: f64,
    pub k_tl: f64,
    pub k_w: f64,
}

impl InferenceWeights {
    pub fn uniform() -> Self {
        InferenceWeights {
            k_im: 1.0,
            k_nc: 1.0,
            k_dac: 1.0,
            k_ddc: 1.0,
            k_tl: 1.0,
            k_w: 1.0,
        }
    }

    /// Pure imitation: argmax of the imitation softmax.
    pub fn imitation_only() -> Self {
        InferenceWeights {
            k_im: 1.0,
            k_nc: 0.0,
            k_dac: 0.0,
            k_ddc: 0.0,
            k_tl: 0.0,
            k_w: 0.0,
        }
    }

    pub fn as_array(&self) -> [f64; N_TERMS] {
        [
            self.k_im, self.k_nc, self.k_dac, self.k_ddc, self.k_tl, self.k_w,
        ]
    }

    pub fn from_array(a: [f64; N_TERMS]) -> Self {
        InferenceWeights {
            k_im: a[0],
            k_nc: a[1],
            k_dac: a[2],
            k_ddc: a[3],
            k_tl: a[4],
            k_w: a[5],
        }
    }

    pub fn is_valid(&self) -> bool {
        let a = self.as_array();
        a.iter().all(|v| v.is_finite() && *v >= 0.0) && a.iter().any(|v| *v > 0.0)
    }
}

/// Per-trajectory contributions to the assembled cost (pre-weighting logs).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TermBreakdown {
    pub im: f64,
    pub nc: f64,
    pub dac: f64,
    pub ddc: f64,
    pub tl: f64,
    pub weighted: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub chosen_index: usize,
    pub costs: Vec<f64>,
    pub per_term: Vec<TermBreakdown>,
}

fn clamp_score(s: f64) -> f64 {
    s.clamp(SCORE_CLAMP, 1.0)
}

/// k x 6 log-score terms: [ln S_im, ln S_nc, ln S_dac, ln S_ddc, ln S_tl,
/// ln weighted-average]. The assembled cost is minus their weighted sum.
pub fn log_terms(out: &ForwardOutput) -> Matrix {
    let k = out.im_logits.len();
    let p_im = softmax_vec(&out.im_logits);
    let mut terms = Matrix::zeros(k, N_TERMS);
    for i in 0..k {
        let m = |c: usize| clamp_score(out.metric_scores.at(i, c));
        let weighted: f64 =
            WEIGHTED_TERM.iter().map(|(c, w)| w * m(*c)).sum::<f64>() / WEIGHTED_TERM_TOTAL;
        let row = [
            clamp_score(p_im[i]).ln(),
            m(0).ln(), // NC
            m(1).ln(), // DAC
            m(6).ln(), // DDC
            m(5).ln(), // TL
            clamp_score(weighted).ln(),
        ];
        for (c, v) in row.iter().enumerate() {
            *terms.at_mut(i, c) = *v;
        }
    }
    terms
}

fn costs_from_terms(terms: &Matrix, w: &[f64; N_TERMS]) -> Vec<f64> {
    (0..terms.rows)
        .map(|i| -terms.row(i).iter().zip(w).map(|(t, k)| t * k).sum::<f64>())
        .collect()
}

fn argmin(costs: &[f64]) -> usize {
    let mut best = 0;
    for (i, c) in costs.iter().enumerate() {
        if *c < costs[best] {
            best = i;
        }
    }
    best
}

pub fn assembled_cost(out: &ForwardOutput, w: &InferenceWeights) -> Vec<f64> {
    costs_from_terms(&log_terms(out), &w.as_array())
}

pub fn select_from_output(out: &ForwardOutput, w: &InferenceWeights) -> SelectionResult {
    let terms = log_terms(out);
    let costs = costs_from_terms(&terms, &w.as_array());
    let per_term = (0..terms.rows)
        .map(|i| {
            let r = terms.row(i);
            TermBreakdown {
                im: r[0],
                nc: r[1],
                dac: r[2],
                ddc: r[3],
                tl: r[4],
                weighted: r[5],
            }
        })
        .collect();
    SelectionResult {
        chosen_index: argmin(&costs),
        costs,
        per_term,
    }
}

/// Runs the student on the current frame (with temporal context when a
/// preceding frame exists) and selects by assembled cost. Also selects on the
/// preceding frame alone so the caller can evaluate extended comfort on the
/// consecutive pair.
pub fn select(
    model: &StudentModel,
    vs: &Matrix,
    curr: &Scenario,
    prev: Option<(&Scenario, &RigidTransform)>,
    w: &InferenceWeights,
) -> Result<(SelectionResult, Option<usize>), StudentError> {
    let tokens = encode_pair(curr, prev);
    let (out, _) = forward(model, vs, ego_features(curr), &tokens)?;
    let result = select_from_output(&out, w);
    let prev_choice = match prev {
        Some((scene, _)) => {
            let (prev_out, _) = forward(model, vs, ego_features(scene), &encode_scene(scene))?;
            Some(select_from_output(&prev_out, w).chosen_index)
        }
        None => None,
    };
    Ok((result, prev_choice))
}

/// Per-weight candidate values for the exhaustive search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub values: [Vec<f64>; N_TERMS],
}

impl Default for GridSpec {
    fn default() -> Self {
        let axis = vec![0.1, 0.3, 1.0, 3.0, 10.0];
        GridSpec {
            values: std::array::from_fn(|_| axis.clone()),
        }
    }
}

impl GridSpec {
    pub fn single(w: &InferenceWeights) -> Self {
        let a = w.as_array();
        GridSpec {
            values: std::array::from_fn(|i| vec![a[i]]),
        }
    }

    pub fn len(&self) -> usize {
        self.values.iter().map(Vec::len).product()
    }

    pub fn is_empty(&self) -> bool {
        self.values.iter().any(Vec::is_empty)
    }

    /// Lexicographic enumeration (first axis slowest).
    fn point(&self, mut idx: usize) -> [f64; N_TERMS] {
        let mut out = [0.0; N_TERMS];
        for axis in (0..N_TERMS).rev() {
            let n = self.values[axis].len();
            out[axis] = self.values[axis][idx % n];
            idx /= n;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub weights: InferenceWeights,
    pub mean_epdms: f64,
}

/// Everything the grid evaluation needs per validation pair, precomputed once.
pub struct PairEvidence {
    pub terms_curr: Matrix,
    pub terms_prev: Matrix,
    pub matrix: ScoreMatrix,
    pub transform: RigidTransform,
}

/// Student forward passes and ground-truth teacher matrices for each pair.
pub fn gather_evidence(
    model: &StudentModel,
    vocab: &Vocabulary,
    pairs: &[FramePair],
    cfg: &TeacherConfig,
) -> Result<Vec<PairEvidence>, InferError> {
    let vs = vocab_input(vocab);
    pairs
        .par_iter()
        .map(|pair| {
            let tokens = encode_pair(&pair.curr, Some((&pair.prev, &pair.transform)));
            let (out_curr, _) = forward(model, &vs, ego_features(&pair.curr), &tokens)?;
            let (out_prev, _) = forward(
                model,
                &vs,
                ego_features(&pair.prev),
                &encode_scene(&pair.prev),
            )?;
            Ok(PairEvidence {
                terms_curr: log_terms(&out_curr),
                terms_prev: log_terms(&out_prev),
                matrix: teach_scenario(&pair.curr, vocab, cfg),
                transform: pair.transform,
            })
        })
        .collect()
}

/// Ground-truth EPDMS of the weights' selections, averaged over the pairs.
pub fn mean_epdms_of_weights(
    evidence: &[PairEvidence],
    vocab: &Vocabulary,
    cfg: &TeacherConfig,
    w: &[f64; N_TERMS],
) -> f64 {
    let total: f64 = evidence
        .iter()
        .map(|ev| {
            let sel = argmin(&costs_from_terms(&ev.terms_curr, w));
            let prev_sel = argmin(&costs_from_terms(&ev.terms_prev, w));
            let mut sub = ev.matrix.subscores(sel);
            sub.ec = Some(
                score_ec(
                    &vocab.trajectories[sel],
                    Some(&vocab.trajectories[prev_sel]),
                    Some(&ev.transform),
                    cfg,
                )
                .expect("transform present"),
            );
            epdms(&sub).expect("ec present")
        })
        .sum();
    total / evidence.len() as f64
}

/// Exhaustive calibration: maximizes mean ground-truth EPDMS of the selected
/// trajectories over the Cartesian weight grid. Ties break to the
/// lexicographically smallest weight vector (axes enumerated in file order).
pub fn grid_search(
    model: &StudentModel,
    vocab: &Vocabulary,
    pairs: &[FramePair],
    spec: &GridSpec,
    cfg: &TeacherConfig,
) -> Result<(InferenceWeights, Vec<GridRow>), InferError> {
    if spec.is_empty() || pairs.is_empty() {
        return Err(InferError::EmptyGrid);
    }
    let evidence = gather_evidence(model, vocab, pairs, cfg)?;
    let rows: Vec<GridRow> = (0..spec.len())
        .into_par_iter()
        .map(|idx| {
            let w = spec.point(idx);
            GridRow {
                weights: InferenceWeights::from_array(w),
                mean_epdms: mean_epdms_of_weights(&evidence, vocab, cfg, &w),
            }
        })
        .collect();
    let mut best = 0;
    for (i, row) in rows.iter().enumerate() {
        if row.mean_epdms > rows[best].mean_epdms {
            best = i;
        }
    }
    Ok((rows[best].weights, rows))
}

#[derive(Serialize, Deserialize)]
struct WeightsFile {
    k_im: f64,
    k_nc: f64,
    k_dac: f64,
    k_ddc: f64,
    k_tl: f64,
    k_w: f64,
    grid_table_path: Option<String>,
}

pub fn save_weights(
    w: &InferenceWeights,
    grid_table_path: Option<&str>,
    path: &Path,
) -> Result<(), InferError> {
    let file = WeightsFile {
        k_im: w.k_im,
        k_nc: w.k_nc,
        k_dac: w.k_dac,
        k_ddc: w.k_ddc,
        k_tl: w.k_tl,
        k_w: w.k_w,
        grid_table_path: grid_table_path.map(String::from),
    };
    std::fs::write(
        path,
        serde_json::to_string_pretty(&file).map_err(|e| InferError::Format(e.to_string()))?,
    )?;
    Ok(())
}

pub fn load_weights(path: &Path) -> Result<InferenceWeights, InferError> {
    let file: WeightsFile = serde_json::from_str(&std::fs::read_to_string(path)?)
        .map_err(|e| InferError::Format(e.to_string()))?;
    let w = InferenceWeights {
        k_im: file.k_im,
        k_nc: file.k_nc,
        k_dac: file.k_dac,
        k_ddc: file.k_ddc,
        k_tl: file.k_tl,
        k_w: file.k_w,
    };
    if !w.is_valid() {
        return Err(InferError::Format(
            "weights must be non-negative with at least one positive".into(),
        ));
    }
    Ok(w)
}

/// One CSV row per grid point.
pub fn write_grid_table(rows: &[GridRow], path: &Path) -> Result<(), InferError> {
    let mut out = String::from("k_im,k_nc,k_dac,k_ddc,k_tl,k_w,mean_epdms\n");
    for row in rows {
        let a = row.weights.as_array();
        out.push_str(&format!(
            "{},{},{},{},{},{},{:.6}\n",
            a[0], a[1], a[2], a[3], a[4], a[5], row.mean_epdms
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fake_output(k: usize, seed: u64) -> ForwardOutput {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let metric_logits = Matrix::zeros(k, 8);
        ForwardOutput {
            im_logits: (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            metric_scores: Matrix {
                rows: k,
                cols: 8,
                data: (0..k * 8).map(|_| rng.gen_range(0.01..0.99)).collect(),
            },
            metric_logits,
        }
    }

    #[test]
    fn uniform_scores_tie_break_to_zero() {
        let k = 5;
        let out = ForwardOutput {
            im_logits: vec![0.3; k],
            metric_scores: Matrix {
                rows: k,
                cols: 8,
                data: vec![0.7; k * 8],
            },
            metric_logits: Matrix::zeros(k, 8),
        };
        let sel = select_from_output(&out, &InferenceWeights::uniform());
        assert_eq!(sel.chosen_index, 0);
        for c in &sel.costs {
            assert!((c - sel.costs[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn dominance_orders_costs() {
        let mut out = fake_output(2, 1);
        out.im_logits = vec![1.0, 0.0];
        for c in 0..8 {
            *out.metric_scores.at_mut(0, c) = 0.9;
            *out.metric_scores.at_mut(1, c) = 0.5;
        }
        let costs = assembled_cost(&out, &InferenceWeights::uniform());
        assert!(costs[0] < costs[1]);
    }

    #[test]
    fn hand_computed_cost() {
        // k_im = k_nc = 1, rest 0; S_im = (0.6, 0.4), S_nc = (0.9, 0.99)
        let mut out = fake_output(2, 2);
        // logits realizing softmax (0.6, 0.4)
        out.im_logits = vec![0.6f64.ln(), 0.4f64.ln()];
        *out.metric_scores.at_mut(0, 0) = 0.9;
        *out.metric_scores.at_mut(1, 0) = 0.99;
        let w = InferenceWeights {
            k_im: 1.0,
            k_nc: 1.0,
            k_dac: 0.0,
            k_ddc: 0.0,
            k_tl: 0.0,
            k_w: 0.0,
        };
        let costs = assembled_cost(&out, &w);
        assert!((costs[0] - 0.6162).abs() < 1e-4);
        assert!((costs[1] - 0.9264).abs() < 1e-4);
    }

    #[test]
    fn imitation_only_reduces_to_argmax() {
        for seed in 0..20 {
            let out = fake_output(9, seed);
            let sel = select_from_output(&out, &InferenceWeights::imitation_only());
            let p = softmax_vec(&out.im_logits);
            let argmax = p
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert_eq!(sel.chosen_index, argmax);
        }
    }

    #[test]
    fn positive_rescaling_preserves_choice() {
        for seed in 0..20 {
            let out = fake_output(7, 100 + seed);
            let w = InferenceWeights {
                k_im: 0.5,
                k_nc: 2.0,
                k_dac: 0.1,
                k_ddc: 1.0,
                k_tl: 3.0,
                k_w: 0.7,
            };
            let scaled = InferenceWeights::from_array(w.as_array().map(|v| v * 3.7));
            assert_eq!(
                select_from_output(&out, &w).chosen_index,
                select_from_output(&out, &scaled).chosen_index
            );
        }
    }

    #[test]
    fn cost_decreases_in_each_score() {
        let w = InferenceWeights::uniform();
        let base = fake_output(1, 7);
        let c0 = assembled_cost(&base, &w)[0];
        for col in 0..8 {
            let mut bumped = base.clone();
            *bumped.metric_scores.at_mut(0, col) =
                (base.metric_scores.at(0, col) + 0.005).min(0.999);
            let c1 = assembled_cost(&bumped, &w)[0];
            assert!(c1 < c0, "metric {col} did not reduce cost");
        }
    }

    #[test]
    fn grid_point_enumeration_is_lexicographic() {
        let spec = GridSpec {
            values: [
                vec![1.0, 2.0],
                vec![5.0],
                vec![5.0],
                vec![5.0],
                vec![5.0],
                vec![0.1, 0.2],
            ],
        };
        assert_eq!(spec.len(), 4);
        assert_eq!(spec.point(0), [1.0, 5.0, 5.0, 5.0, 5.0, 0.1]);
        assert_eq!(spec.point(1), [1.0, 5.0, 5.0, 5.0, 5.0, 0.2]);
        assert_eq!(spec.point(2), [2.0, 5.0, 5.0, 5.0, 5.0, 0.1]);
        assert_eq!(spec.point(3), [2.0, 5.0, 5.0, 5.0, 5.0, 0.2]);
    }

    #[test]
    fn weights_roundtrip() {
        let dir = std::env::temp_dir().join("drivesim-weights-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("w.json");
        let w = InferenceWeights {
            k_im: 0.3,
            k_nc: 10.0,
            k_dac: 1.0,
            k_ddc: 0.1,
            k_tl: 3.0,
            k_w: 1.0,
        };
        save_weights(&w, Some("grid.csv"), &path).unwrap();
        assert_eq!(load_weights(&path).unwrap(), w);
    }
}
