//! Training objective for the face and body codecs.
//!
//! Every term is evaluated only on observed frames and returns its gradient
//! with respect to the prediction alongside the value, so the same functions
//! serve both the trainer and direct evaluation.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use crate::error::{Error, Result};
use crate::motion::{
    MotionSequence, StreamKind, BODY_LEFT_HAND, BODY_RIGHT_HAND, BODY_UPPER, FACE_EXPRESSION, FACE_JAW,
};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    /// Commitment weight.
    pub beta: f64,
    pub lambda_f_recon: f64,
    pub lambda_psi: f64,
    pub lambda_jaw: f64,
    pub lambda_f_vel: f64,
    /// Jaw weight inside the face velocity term.
    pub lambda_theta: f64,
    pub lambda_b_recon: f64,
    pub lambda_b_vel: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            beta: 0.02,
            lambda_f_recon: 1.0,
            lambda_psi: 1.0,
            lambda_jaw: 5.0,
            lambda_f_vel: 0.5,
            lambda_theta: 5.0,
            lambda_b_recon: 1.0,
            lambda_b_vel: 0.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.beta,
            self.lambda_f_recon,
            self.lambda_psi,
            self.lambda_jaw,
            self.lambda_f_vel,
            self.lambda_theta,
            self.lambda_b_recon,
            self.lambda_b_vel,
        ];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid("loss weights must be finite and non-negative"));
        }
        Ok(())
    }

    /// `(λ_recon, λ_vel)` for a stream.
    pub fn stream_weights(&self, kind: StreamKind) -> (f64, f64) {
        match kind {
            StreamKind::Face => (self.lambda_f_recon, self.lambda_f_vel),
            StreamKind::Body => (self.lambda_b_recon, self.lambda_b_vel),
        }
    }
}

/// Per-element penalty used by the reconstruction term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReconKind {
    #[default]
    L1,
    L2,
    SmoothL1,
}

impl ReconKind {
    fn value_grad<T: Real>(self, x: T) -> (T, T) {
        let half = T::lit(0.5);
        match self {
            ReconKind::L1 => (x.abs(), sign(x)),
            ReconKind::L2 => (x * x, x + x),
            ReconKind::SmoothL1 => {
                if x.abs() < T::one() {
                    (half * x * x, x)
                } else {
                    (x.abs() - half, sign(x))
                }
            }
        }
    }
}

fn sign<T: Real>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// Named slice of frame channels with its reconstruction and velocity weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelGroup {
    pub name: String,
    pub range: Range<usize>,
    pub recon_weight: f64,
    pub vel_weight: f64,
}

/// Partition of a frame into separately weighted components.
#[derive(Debug, Clone, PartialEq)]
pub struct LossLayout {
    width: usize,
    groups: Vec<ChannelGroup>,
}

impl LossLayout {
    pub fn new(width: usize, groups: Vec<ChannelGroup>) -> Result<Self> {
        let mut next = 0;
        for g in &groups {
            if g.range.start != next || g.range.is_empty() {
                return Err(Error::invalid(format!("channel group {} must start at {next} and be non-empty", g.name)));
            }
            next = g.range.end;
        }
        if next != width {
            return Err(Error::invalid(format!("channel groups cover {next} of {width} channels")));
        }
        Ok(Self { width, groups })
    }

    /// Expression (λ_ψ, velocity 1) and jaw (λ_jaw, velocity λ_θ).
    pub fn face(w: &LossWeights) -> Self {
        Self {
            width: FACE_EXPRESSION.len() + FACE_JAW.len(),
            groups: vec![
                group("expression", FACE_EXPRESSION, w.lambda_psi, 1.0),
                group("jaw", FACE_JAW, w.lambda_jaw, w.lambda_theta),
            ],
        }
    }

    /// Upper body and both hands, all with unit weight.
    pub fn body() -> Self {
        Self {
            width: BODY_LEFT_HAND.end,
            groups: vec![
                group("upper_body", BODY_UPPER, 1.0, 1.0),
                group("right_hand", BODY_RIGHT_HAND, 1.0, 1.0),
                group("left_hand", BODY_LEFT_HAND, 1.0, 1.0),
            ],
        }
    }

    pub fn for_stream(kind: StreamKind, w: &LossWeights) -> Self {
        match kind {
            StreamKind::Face => Self::face(w),
            StreamKind::Body => Self::body(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn groups(&self) -> &[ChannelGroup] {
        &self.groups
    }
}

fn group(name: &str, range: Range<usize>, recon_weight: f64, vel_weight: f64) -> ChannelGroup {
    ChannelGroup { name: name.into(), range, recon_weight, vel_weight }
}

/// Value of a loss term and its gradient with respect to the prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTerm<T> {
    pub value: T,
    pub grad: Tensor<T>,
    /// Set when too few valid frames made the term vacuous (value 0).
    pub degenerate: bool,
}

fn check_pair<T: Real>(gt: &Tensor<T>, pred: &Tensor<T>, mask: &[bool]) -> Result<(usize, usize)> {
    if gt.shape() != pred.shape() || gt.shape().len() != 2 {
        return Err(Error::ShapeMismatch { expected: gt.shape().to_vec(), actual: pred.shape().to_vec() });
    }
    let (width, frames) = (gt.dim(0), gt.dim(1));
    if mask.len() != frames {
        return Err(Error::ShapeMismatch { expected: vec![frames], actual: vec![mask.len()] });
    }
    Ok((width, frames))
}

/// `β · mean((z − sg(ẑ))²)` over valid latent steps; the gradient goes to `z` only.
pub fn commitment_loss<T: Real>(z: &Tensor<T>, z_hat: &Tensor<T>, mask: &[bool], beta: T) -> Result<LossTerm<T>> {
    let (c, steps) = check_pair(z_hat, z, mask)?;
    let valid = mask.iter().filter(|m| **m).count();
    let mut grad = Tensor::zeros(z.shape());
    if valid == 0 {
        return Ok(LossTerm { value: T::zero(), grad, degenerate: true });
    }
    let n = T::lit((valid * c) as f64);
    let mut acc = T::zero();
    for j in 0..c {
        for t in (0..steps).filter(|&t| mask[t]) {
            let i = j * steps + t;
            let d = z.data()[i] - z_hat.data()[i];
            acc = acc + d * d;
            grad.data_mut()[i] = beta * (d + d) / n;
        }
    }
    Ok(LossTerm { value: beta * acc / n, grad, degenerate: false })
}

/// `Σ_g w_g · mean_{valid frames, c ∈ g} ρ(pred − gt)` with ρ from `kind`.
pub fn recon_loss<T: Real>(
    gt: &Tensor<T>,
    pred: &Tensor<T>,
    mask: &[bool],
    layout: &LossLayout,
    kind: ReconKind,
) -> Result<LossTerm<T>> {
    let (width, frames) = check_pair(gt, pred, mask)?;
    if width != layout.width() {
        return Err(Error::ShapeMismatch { expected: vec![layout.width()], actual: vec![width] });
    }
    let valid = mask.iter().filter(|m| **m).count();
    let mut grad = Tensor::zeros(pred.shape());
    if valid == 0 {
        return Ok(LossTerm { value: T::zero(), grad, degenerate: true });
    }
    let mut total = T::zero();
    for g in layout.groups() {
        let n = T::lit((valid * g.range.len()) as f64);
        let scale = T::lit(g.recon_weight) / n;
        let mut acc = T::zero();
        for c in g.range.clone() {
            for t in (0..frames).filter(|&t| mask[t]) {
                let i = c * frames + t;
                let (v, dv) = kind.value_grad(pred.data()[i] - gt.data()[i]);
                acc = acc + v;
                grad.data_mut()[i] = scale * dv;
            }
        }
        total = total + scale * acc;
    }
    Ok(LossTerm { value: total, grad, degenerate: false })
}

/// `Σ_g v_g · mean |v(pred) − v(gt)|` over consecutive valid frame pairs,
/// where `v` is the frame-wise difference.
pub fn velocity_loss<T: Real>(
    gt: &Tensor<T>,
    pred: &Tensor<T>,
    mask: &[bool],
    layout: &LossLayout,
) -> Result<LossTerm<T>> {
    let (width, frames) = check_pair(gt, pred, mask)?;
    if width != layout.width() {
        return Err(Error::ShapeMismatch { expected: vec![layout.width()], actual: vec![width] });
    }
    let pairs: Vec<usize> = (0..frames.saturating_sub(1)).filter(|&t| mask[t] && mask[t + 1]).collect();
    let mut grad = Tensor::zeros(pred.shape());
    if pairs.is_empty() {
        return Ok(LossTerm { value: T::zero(), grad, degenerate: true });
    }
    let mut total = T::zero();
    for g in layout.groups() {
        let n = T::lit((pairs.len() * g.range.len()) as f64);
        let scale = T::lit(g.vel_weight) / n;
        let mut acc = T::zero();
        for c in g.range.clone() {
            let base = c * frames;
            for &t in &pairs {
                let dp = pred.data()[base + t + 1] - pred.data()[base + t];
                let dg = gt.data()[base + t + 1] - gt.data()[base + t];
                let diff = dp - dg;
                acc = acc + diff.abs();
                let s = scale * sign(diff);
                let gd = grad.data_mut();
                gd[base + t + 1] = gd[base + t + 1] + s;
                gd[base + t] = gd[base + t] - s;
            }
        }
        total = total + scale * acc;
    }
    Ok(LossTerm { value: total, grad, degenerate: false })
}

/// Weighted objective and its components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub vq: f64,
    pub recon: f64,
    pub vel: f64,
    pub recon_weight: f64,
    pub vel_weight: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn weighted_terms(&self) -> [f64; 3] {
        [self.vq, self.recon_weight * self.recon, self.vel_weight * self.vel]
    }
}

/// `L_vq + λ_recon·L_recon + λ_vel·L_vel` with the stream's weights.
pub fn total_loss(kind: StreamKind, vq: f64, recon: f64, vel: f64, w: &LossWeights) -> LossBreakdown {
    let (recon_weight, vel_weight) = w.stream_weights(kind);
    LossBreakdown { vq, recon, vel, recon_weight, vel_weight, total: vq + recon_weight * recon + vel_weight * vel }
}

fn sequence_pair(gt: &MotionSequence, pred: &MotionSequence, kind: StreamKind) -> Result<(Tensor<f64>, Tensor<f64>)> {
    if gt.width() != kind.width() || pred.width() != kind.width() || gt.len() != pred.len() {
        return Err(Error::invalid(format!(
            "expected two {kind:?} sequences of equal length, got {}x{} and {}x{}",
            gt.len(),
            gt.width(),
            pred.len(),
            pred.width()
        )));
    }
    let shape = [gt.width(), gt.len()];
    Ok((Tensor::from_vec(&shape, gt.to_real())?, Tensor::from_vec(&shape, pred.to_real())?))
}

/// `λ_ψ·MAE(ψ) + λ_jaw·MAE(θ_jaw)` over the ground truth's valid frames.
pub fn face_recon_loss(gt: &MotionSequence, pred: &MotionSequence, w: &LossWeights) -> Result<f64> {
    let (g, p) = sequence_pair(gt, pred, StreamKind::Face)?;
    Ok(recon_loss(&g, &p, gt.mask(), &LossLayout::face(w), ReconKind::L1)?.value)
}

/// `MAE(v(ψ)) + λ_θ·MAE(v(θ_jaw))`; the flag reports fewer than two valid frames.
pub fn face_velocity_loss(gt: &MotionSequence, pred: &MotionSequence, w: &LossWeights) -> Result<(f64, bool)> {
    let (g, p) = sequence_pair(gt, pred, StreamKind::Face)?;
    let term = velocity_loss(&g, &p, gt.mask(), &LossLayout::face(w))?;
    Ok((term.value, term.degenerate))
}

/// Sum of MAEs over upper body, right hand and left hand.
pub fn body_recon_loss(gt: &MotionSequence, pred: &MotionSequence) -> Result<f64> {
    let (g, p) = sequence_pair(gt, pred, StreamKind::Body)?;
    Ok(recon_loss(&g, &p, gt.mask(), &LossLayout::body(), ReconKind::L1)?.value)
}

pub fn body_velocity_loss(gt: &MotionSequence, pred: &MotionSequence) -> Result<(f64, bool)> {
    let (g, p) = sequence_pair(gt, pred, StreamKind::Body)?;
    let term = velocity_loss(&g, &p, gt.mask(), &LossLayout::body())?;
    Ok((term.value, term.degenerate))
}
