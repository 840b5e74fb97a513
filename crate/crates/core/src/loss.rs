//! Mask and box supervision losses with analytic gradients, and the policy
//! that decides which of them apply to a training sample.
//!
//! All kernels take predicted foreground probabilities (not logits) on a
//! row-major grid and return the loss value together with its gradient with
//! respect to every probability.
//!
//! * `dice_loss`: `1 - (2 Σ p t + ε) / (Σ p + Σ t + ε)`.
//! * `focal_loss`: mean of `-α_t (1 - p_t)^γ ln p_t`, probabilities clamped to
//!   `[δ, 1 - δ]`; the gradient is zero where the clamp is active.
//! * `boxinst_projection_loss`: dice between the max-projections of the
//!   prediction on each axis and the box's projections, using the
//!   `1 - 2 Σ x t / (Σ x² + Σ t² + ε)` form with a denominator-only ε. The
//!   gradient flows to the lowest-index argmax of each row/column.
//! * `boxinst_pairwise_loss`: mean of `-ln P(y_i = y_j)` over neighbour pairs
//!   `(i, i + dilation·d)` for the eight directions `d`, both ends inside the
//!   box, whose color similarity `exp(-‖c_i - c_j‖ / θ)` reaches the
//!   threshold. `P` is clamped below at δ.

use serde::{Deserialize, Serialize};

use crate::error::LossError;
use crate::mask::{BinaryMask, PixelBox};

/// Predicted foreground probabilities, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbGrid {
    height: u32,
    width: u32,
    values: Vec<f64>,
}

impl ProbGrid {
    pub fn new(height: u32, width: u32, values: Vec<f64>) -> Result<Self, LossError> {
        if values.len() != height as usize * width as usize {
            return Err(LossError::DimensionMismatch {
                left: (height, width),
                right: (values.len() as u32, 1),
            });
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(LossError::OutOfRange);
        }
        Ok(Self { height, width, values })
    }

    pub fn from_mask(mask: &BinaryMask) -> Self {
        Self {
            height: mask.height(),
            width: mask.width(),
            values: mask.pixels().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }

    pub fn filled(height: u32, width: u32, value: f64) -> Result<Self, LossError> {
        Self::new(height, width, vec![value; height as usize * width as usize])
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: u32, col: u32) -> f64 {
        self.values[row as usize * self.width as usize + col as usize]
    }

    /// Copy with one entry replaced, for perturbation checks.
    pub fn with_value(&self, index: usize, value: f64) -> Self {
        let mut values = self.values.clone();
        values[index] = value;
        Self { values, ..*self }
    }
}

/// Three channels per pixel, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorImage {
    height: u32,
    width: u32,
    pixels: Vec<[f64; 3]>,
}

impl ColorImage {
    pub fn new(height: u32, width: u32, pixels: Vec<[f64; 3]>) -> Result<Self, LossError> {
        if pixels.len() != height as usize * width as usize {
            return Err(LossError::DimensionMismatch {
                left: (height, width),
                right: (pixels.len() as u32, 1),
            });
        }
        if pixels.iter().flatten().any(|v| !v.is_finite()) {
            return Err(LossError::OutOfRange);
        }
        Ok(Self { height, width, pixels })
    }

    pub fn uniform(height: u32, width: u32, color: [f64; 3]) -> Self {
        Self {
            height,
            width,
            pixels: vec![color; height as usize * width as usize],
        }
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.height, self.width)
    }

    pub fn get(&self, row: u32, col: u32) -> [f64; 3] {
        self.pixels[row as usize * self.width as usize + col as usize]
    }

    pub fn set(&mut self, row: u32, col: u32, color: [f64; 3]) {
        self.pixels[row as usize * self.width as usize + col as usize] = color;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    /// d value / d p, row-major like the prediction.
    pub grad: Vec<f64>,
}

/// Loss hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    pub dice_smooth: f64,
    pub prob_clamp: f64,
    pub projection_eps: f64,
    pub pairwise_sim_threshold: f64,
    pub pairwise_theta: f64,
    pub pairwise_dilation: u32,
    pub boxinst_scope: BoxInstScope,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            focal_alpha: 0.25,
            focal_gamma: 2.0,
            dice_smooth: 1.0,
            prob_clamp: 1e-6,
            projection_eps: 1e-5,
            pairwise_sim_threshold: 0.3,
            pairwise_theta: 2.0,
            pairwise_dilation: 2,
            boxinst_scope: BoxInstScope::VideoOnly,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), LossError> {
        let bad = |m: &str| Err(LossError::Config(m.into()));
        if !(0.0..=1.0).contains(&self.focal_alpha) {
            return bad("focal_alpha must lie in [0, 1]");
        }
        if !(self.focal_gamma >= 0.0 && self.dice_smooth >= 0.0) {
            return bad("focal_gamma and dice_smooth must be non-negative");
        }
        if !(self.prob_clamp > 0.0 && self.prob_clamp < 0.5) {
            return bad("prob_clamp must lie in (0, 0.5)");
        }
        if !(self.projection_eps > 0.0 && self.pairwise_theta > 0.0) {
            return bad("projection_eps and pairwise_theta must be positive");
        }
        if !(0.0..=1.0).contains(&self.pairwise_sim_threshold) {
            return bad("pairwise_sim_threshold must lie in [0, 1]");
        }
        if self.pairwise_dilation == 0 {
            return bad("pairwise_dilation must be at least 1");
        }
        Ok(())
    }

    pub fn pairwise(&self) -> PairwiseParams {
        PairwiseParams {
            sim_threshold: self.pairwise_sim_threshold,
            theta: self.pairwise_theta,
            dilation: self.pairwise_dilation,
            prob_clamp: self.prob_clamp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairwiseParams {
    pub sim_threshold: f64,
    pub theta: f64,
    pub dilation: u32,
    pub prob_clamp: f64,
}

fn check_target(pred: &ProbGrid, target: &BinaryMask) -> Result<(), LossError> {
    if pred.dims() != target.dims() {
        return Err(LossError::DimensionMismatch {
            left: pred.dims(),
            right: target.dims(),
        });
    }
    Ok(())
}

pub fn dice_loss(pred: &ProbGrid, target: &BinaryMask, smooth: f64) -> Result<LossOutput, LossError> {
    check_target(pred, target)?;
    let t: Vec<f64> = target.pixels().iter().map(|&b| b as u8 as f64).collect();
    let inter: f64 = pred.values.iter().zip(&t).map(|(p, t)| p * t).sum();
    let denom = pred.values.iter().sum::<f64>() + t.iter().sum::<f64>() + smooth;
    let numer = 2.0 * inter + smooth;
    let grad = t
        .iter()
        .map(|&tk| -(2.0 * tk * denom - numer) / (denom * denom))
        .collect();
    Ok(LossOutput {
        value: 1.0 - numer / denom,
        grad,
    })
}

pub fn focal_loss(
    pred: &ProbGrid,
    target: &BinaryMask,
    alpha: f64,
    gamma: f64,
    prob_clamp: f64,
) -> Result<LossOutput, LossError> {
    check_target(pred, target)?;
    let n = pred.values.len().max(1) as f64;
    let (lo, hi) = (prob_clamp, 1.0 - prob_clamp);
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(pred.values.len());
    for (&p_raw, &positive) in pred.values.iter().zip(target.pixels()) {
        let p = p_raw.clamp(lo, hi);
        let (pt, at, sign) = if positive {
            (p, alpha, 1.0)
        } else {
            (1.0 - p, 1.0 - alpha, -1.0)
        };
        let q = 1.0 - pt;
        value += -at * q.powf(gamma) * pt.ln();
        // d/dpt of -a q^g ln pt = a (g q^(g-1) ln pt - q^g / pt)
        let dpt = if gamma == 0.0 {
            -at / pt
        } else {
            at * (gamma * q.powf(gamma - 1.0) * pt.ln() - q.powf(gamma) / pt)
        };
        let clamped = p_raw < lo || p_raw > hi;
        grad.push(if clamped { 0.0 } else { sign * dpt / n });
    }
    Ok(LossOutput { value: value / n, grad })
}

/// `1 - 2 Σ x t / (Σ x² + Σ t² + eps)` and its gradient in `x`.
fn squared_dice(x: &[f64], t: &[f64], eps: f64) -> (f64, Vec<f64>) {
    let inter: f64 = x.iter().zip(t).map(|(a, b)| a * b).sum();
    let union = x.iter().map(|a| a * a).sum::<f64>() + t.iter().map(|b| b * b).sum::<f64>() + eps;
    let grad = x
        .iter()
        .zip(t)
        .map(|(&xi, &ti)| (4.0 * inter * xi / union - 2.0 * ti) / union)
        .collect();
    (1.0 - 2.0 * inter / union, grad)
}

fn check_box(pred_dims: (u32, u32), bbox: &PixelBox) -> Result<(), LossError> {
    let (height, width) = pred_dims;
    if !bbox.fits_within(height, width) {
        return Err(LossError::BoxOutOfBounds {
            bbox: *bbox,
            height,
            width,
        });
    }
    Ok(())
}

pub fn boxinst_projection_loss(pred: &ProbGrid, bbox: &PixelBox, eps: f64) -> Result<LossOutput, LossError> {
    check_box(pred.dims(), bbox)?;
    let (h, w) = (pred.height as usize, pred.width as usize);

    // lowest-index argmax along each column / row
    let mut col_arg = vec![0usize; w];
    let mut row_arg = vec![0usize; h];
    for c in 0..w {
        for r in 1..h {
            if pred.values[r * w + c] > pred.values[col_arg[c] * w + c] {
                col_arg[c] = r;
            }
        }
    }
    for r in 0..h {
        for c in 1..w {
            if pred.values[r * w + c] > pred.values[r * w + row_arg[r]] {
                row_arg[r] = c;
            }
        }
    }
    let x_proj: Vec<f64> = (0..w).map(|c| pred.values[col_arg[c] * w + c]).collect();
    let y_proj: Vec<f64> = (0..h).map(|r| pred.values[r * w + row_arg[r]]).collect();
    let x_target: Vec<f64> = (0..w as u32)
        .map(|c| (c >= bbox.x && c < bbox.x + bbox.w && bbox.h > 0) as u8 as f64)
        .collect();
    let y_target: Vec<f64> = (0..h as u32)
        .map(|r| (r >= bbox.y && r < bbox.y + bbox.h && bbox.w > 0) as u8 as f64)
        .collect();

    let (vx, gx) = squared_dice(&x_proj, &x_target, eps);
    let (vy, gy) = squared_dice(&y_proj, &y_target, eps);
    let mut grad = vec![0.0; h * w];
    for c in 0..w {
        grad[col_arg[c] * w + c] += gx[c];
    }
    for r in 0..h {
        grad[r * w + row_arg[r]] += gy[r];
    }
    Ok(LossOutput { value: vx + vy, grad })
}

const PAIR_DIRECTIONS: [(i64, i64); 4] = [(0, 1), (1, 0), (1, 1), (1, -1)];

/// Neighbour pairs inside the box that pass the color-similarity test, as
/// row-major index pairs. Each unordered pair appears once.
pub fn pairwise_edges(img: &ColorImage, bbox: &PixelBox, params: &PairwiseParams) -> Vec<(usize, usize)> {
    let w = img.width as usize;
    let k = params.dilation.max(1) as i64;
    let mut edges = Vec::new();
    for r in bbox.y..bbox.y + bbox.h {
        for c in bbox.x..bbox.x + bbox.w {
            for (dr, dc) in PAIR_DIRECTIONS {
                let (r2, c2) = (r as i64 + dr * k, c as i64 + dc * k);
                if r2 < 0 || c2 < 0 || !bbox.contains(r2 as u32, c2 as u32) {
                    continue;
                }
                let (a, b) = (img.get(r, c), img.get(r2 as u32, c2 as u32));
                let dist = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
                if (-dist / params.theta).exp() >= params.sim_threshold {
                    edges.push((r as usize * w + c as usize, r2 as usize * w + c2 as usize));
                }
            }
        }
    }
    edges
}

pub fn boxinst_pairwise_loss(
    pred: &ProbGrid,
    img: &ColorImage,
    bbox: &PixelBox,
    params: &PairwiseParams,
) -> Result<LossOutput, LossError> {
    if pred.dims() != img.dims() {
        return Err(LossError::DimensionMismatch {
            left: pred.dims(),
            right: img.dims(),
        });
    }
    check_box(pred.dims(), bbox)?;
    let edges = pairwise_edges(img, bbox, params);
    let mut grad = vec![0.0; pred.values.len()];
    if edges.is_empty() {
        return Ok(LossOutput { value: 0.0, grad });
    }
    let n = edges.len() as f64;
    let mut value = 0.0;
    for &(i, j) in &edges {
        let (pi, pj) = (pred.values[i], pred.values[j]);
        let same = pi * pj + (1.0 - pi) * (1.0 - pj);
        if same > params.prob_clamp {
            value -= same.ln();
            grad[i] -= (2.0 * pj - 1.0) / same / n;
            grad[j] -= (2.0 * pi - 1.0) / same / n;
        } else {
            value -= params.prob_clamp.ln();
        }
    }
    Ok(LossOutput { value: value / n, grad })
}

// ---------------------------------------------------------------------------
// supervision policy

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnnotationKind {
    PixelMask,
    BoxOnly,
    PseudoMask,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainingStage {
    ImageStage,
    VideoStage,
}

/// Where BoxInst supervision is applied. The default keeps it on
/// pseudo-labelled video only; the other settings extend it to image corpora.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoxInstScope {
    #[default]
    VideoOnly,
    BoxOnlyImages,
    AllImages,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LossPolicy {
    pub enable_mask_loss: bool,
    pub enable_boxinst_loss: bool,
    /// Pixel-level supervision of the mask head.
    pub supervise_mask_head: bool,
    /// Box regression / classification supervision.
    pub supervise_boxes: bool,
}

pub fn select_policy(kind: AnnotationKind, stage: TrainingStage) -> Result<LossPolicy, LossError> {
    select_policy_scoped(kind, stage, BoxInstScope::VideoOnly)
}

pub fn select_policy_scoped(
    kind: AnnotationKind,
    stage: TrainingStage,
    scope: BoxInstScope,
) -> Result<LossPolicy, LossError> {
    use AnnotationKind::*;
    use TrainingStage::*;
    match (kind, stage) {
        (PixelMask, ImageStage) => Ok(LossPolicy {
            enable_mask_loss: true,
            enable_boxinst_loss: scope == BoxInstScope::AllImages,
            supervise_mask_head: true,
            supervise_boxes: true,
        }),
        (BoxOnly, ImageStage) => Ok(LossPolicy {
            enable_mask_loss: false,
            enable_boxinst_loss: scope != BoxInstScope::VideoOnly,
            supervise_mask_head: false,
            supervise_boxes: true,
        }),
        (PseudoMask, VideoStage) => Ok(LossPolicy {
            enable_mask_loss: true,
            enable_boxinst_loss: true,
            supervise_mask_head: true,
            supervise_boxes: true,
        }),
        _ => Err(LossError::InvalidCombination { kind, stage }),
    }
}

/// Per-term breakdown of [`supervision_loss`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SupervisionTerms {
    pub dice: Option<f64>,
    pub focal: Option<f64>,
    pub projection: Option<f64>,
    pub pairwise: Option<f64>,
}

/// Sums the mask-side terms enabled by `policy` for one instance. The mask
/// terms need `target`; the BoxInst terms need `bbox` and `image`.
pub fn supervision_loss(
    policy: &LossPolicy,
    cfg: &LossConfig,
    pred: &ProbGrid,
    target: Option<&BinaryMask>,
    bbox: &PixelBox,
    image: &ColorImage,
) -> Result<(LossOutput, SupervisionTerms), LossError> {
    let mut total = LossOutput {
        value: 0.0,
        grad: vec![0.0; pred.values.len()],
    };
    let mut terms = SupervisionTerms::default();
    let mut add = |out: LossOutput| {
        total.value += out.value;
        for (g, d) in total.grad.iter_mut().zip(out.grad) {
            *g += d;
        }
        out.value
    };
    if policy.enable_mask_loss && policy.supervise_mask_head {
        if let Some(t) = target {
            terms.dice = Some(add(dice_loss(pred, t, cfg.dice_smooth)?));
            terms.focal = Some(add(focal_loss(pred, t, cfg.focal_alpha, cfg.focal_gamma, cfg.prob_clamp)?));
        }
    }
    if policy.enable_boxinst_loss {
        terms.projection = Some(add(boxinst_projection_loss(pred, bbox, cfg.projection_eps)?));
        terms.pairwise = Some(add(boxinst_pairwise_loss(pred, image, bbox, &cfg.pairwise())?));
    }
    Ok((total, terms))
}
