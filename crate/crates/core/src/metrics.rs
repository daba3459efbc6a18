//! Reconstruction and variability metrics in vertex space, plus token-level
//! negative log-likelihood and perplexity.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::motion::MotionSequence;
pub use crate::sequence::TokenClass;

pub const DEFAULT_WVL2_WINDOW: usize = 25;
pub const DEFAULT_DIVERSITY_PAIRS: usize = 1000;
pub const DEFAULT_DIVERSITY_REPEATS: usize = 10;

/// Affine map from `d` parameters to `out` vertex coordinates:
/// `v = basis · m + offset`, with `basis` row-major `out × d`.
#[derive(Debug, Clone, PartialEq)]
pub enum VertexMap {
    Identity,
    Linear { d: usize, out: usize, basis: Vec<f64>, offset: Vec<f64> },
}

impl VertexMap {
    pub fn linear(d: usize, out: usize, basis: Vec<f64>, offset: Vec<f64>) -> Result<Self> {
        if basis.len() != d * out || offset.len() != out {
            return Err(Error::ShapeMismatch { expected: vec![out, d, out], actual: vec![basis.len(), offset.len()] });
        }
        if basis.iter().chain(&offset).any(|v| !v.is_finite()) {
            return Err(Error::Validation("vertex map contains non-finite values".into()));
        }
        Ok(Self::Linear { d, out, basis, offset })
    }

    /// Output dimension for `d` inputs.
    pub fn out_dim(&self, d: usize) -> Result<usize> {
        match self {
            Self::Identity => Ok(d),
            Self::Linear { d: md, out, .. } if *md == d => Ok(*out),
            Self::Linear { d: md, .. } => Err(Error::ShapeMismatch { expected: vec![*md], actual: vec![d] }),
        }
    }

    /// Maps one parameter frame.
    pub fn apply(&self, m: &[f64]) -> Result<Vec<f64>> {
        match self {
            Self::Identity => Ok(m.to_vec()),
            Self::Linear { d, out, basis, offset } => {
                if m.len() != *d {
                    return Err(Error::ShapeMismatch { expected: vec![*d], actual: vec![m.len()] });
                }
                Ok((0..*out)
                    .map(|i| offset[i] + basis[i * d..(i + 1) * d].iter().zip(m).map(|(b, x)| b * x).sum::<f64>())
                    .collect())
            }
        }
    }

    /// Vertex frames of the valid frames of `seq`.
    fn frames(&self, seq: &MotionSequence, keep: &[bool]) -> Result<Vec<Vec<f64>>> {
        (0..seq.len())
            .filter(|&t| keep[t])
            .map(|t| {
                let f: Vec<f64> = seq.frame(t).iter().map(|&v| v as f64).collect();
                self.apply(&f)
            })
            .collect()
    }
}

fn check_pair(gt: &MotionSequence, pred: &MotionSequence) -> Result<()> {
    if gt.len() != pred.len() || gt.width() != pred.width() {
        return Err(Error::invalid(format!(
            "sequence shapes differ: {}x{} vs {}x{}",
            gt.width(),
            gt.len(),
            pred.width(),
            pred.len()
        )));
    }
    Ok(())
}

/// Per-frame vertex differences over frames valid in `gt`.
fn vertex_diffs(gt: &MotionSequence, pred: &MotionSequence, map: &VertexMap) -> Result<Vec<Vec<f64>>> {
    check_pair(gt, pred)?;
    map.out_dim(gt.width())?;
    let a = map.frames(gt, gt.mask())?;
    let b = map.frames(pred, gt.mask())?;
    Ok(a.iter().zip(&b).map(|(g, p)| p.iter().zip(g).map(|(p, g)| p - g).collect()).collect())
}

/// `(1/N) Σ ||V(pred_i) − V(gt_i)||²` over the N frames valid in `gt`.
pub fn vmse(gt: &MotionSequence, pred: &MotionSequence, map: &VertexMap) -> Result<f64> {
    let d = vertex_diffs(gt, pred, map)?;
    if d.is_empty() {
        return Ok(0.0);
    }
    Ok(d.iter().map(|f| f.iter().map(|x| x * x).sum::<f64>()).sum::<f64>() / d.len() as f64)
}

/// `(1/N) Σ ||V(pred_i) − V(gt_i)||₁`.
pub fn lvd(gt: &MotionSequence, pred: &MotionSequence, map: &VertexMap) -> Result<f64> {
    let d = vertex_diffs(gt, pred, map)?;
    if d.is_empty() {
        return Ok(0.0);
    }
    Ok(d.iter().map(|f| f.iter().map(|x| x.abs()).sum::<f64>()).sum::<f64>() / d.len() as f64)
}

/// Mean over windows of the squared distance between window-mean vertices.
/// Windows start every `stride` valid frames and must fit entirely.
pub fn window_vertex_l2(
    gt: &MotionSequence,
    pred: &MotionSequence,
    map: &VertexMap,
    window: usize,
    stride: usize,
) -> Result<f64> {
    if window == 0 || stride == 0 {
        return Err(Error::invalid("window and stride must be positive"));
    }
    let d = vertex_diffs(gt, pred, map)?;
    if window > d.len() {
        return Err(Error::invalid(format!("window {window} exceeds {} valid frames", d.len())));
    }
    let dim = d[0].len();
    let mut total = 0.0;
    let mut count = 0usize;
    let mut start = 0;
    while start + window <= d.len() {
        let mut mean = vec![0.0; dim];
        for f in &d[start..start + window] {
            for (m, x) in mean.iter_mut().zip(f) {
                *m += x;
            }
        }
        total += mean.iter().map(|m| (m / window as f64).powi(2)).sum::<f64>();
        count += 1;
        start += stride;
    }
    Ok(total / count as f64)
}

/// Mean over `repeats` of the mean squared distance between `pairs` ordered
/// pairs `(i, j)`, `i ≠ j`, drawn uniformly with replacement. Motions are
/// compared in parameter space and must share a shape.
pub fn diversity(motions: &[Vec<f64>], pairs: usize, repeats: usize, seed: u64) -> Result<f64> {
    if motions.len() < 2 {
        return Err(Error::invalid("diversity needs at least two motions"));
    }
    if pairs == 0 || repeats == 0 {
        return Err(Error::invalid("pair and repeat counts must be positive"));
    }
    let n = motions[0].len();
    if motions.iter().any(|m| m.len() != n) {
        return Err(Error::invalid("motions differ in size"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = 0.0;
    for _ in 0..repeats {
        let mut s = 0.0;
        for _ in 0..pairs {
            let i = rng.gen_range(0..motions.len());
            let mut j = rng.gen_range(0..motions.len() - 1);
            if j >= i {
                j += 1;
            }
            s += motions[i].iter().zip(&motions[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
        acc += s / pairs as f64;
    }
    Ok(acc / repeats as f64)
}

/// Valid frames of each sequence flattened, for [`diversity`].
pub fn flatten_motions(seqs: &[MotionSequence]) -> Vec<Vec<f64>> {
    seqs.iter()
        .map(|s| (0..s.len()).filter(|&t| s.mask()[t]).flat_map(|t| s.frame(t)).map(|v| v as f64).collect())
        .collect()
}

/// Population variance over time, averaged over channels. `m` is channel-major
/// `channels × frames`.
pub fn variance(m: &[f64], channels: usize, frames: usize) -> Result<f64> {
    if frames == 0 || channels == 0 {
        return Err(Error::invalid("variance of an empty motion"));
    }
    if m.len() != channels * frames {
        return Err(Error::ShapeMismatch { expected: vec![channels, frames], actual: vec![m.len()] });
    }
    let mut acc = 0.0;
    for row in m.chunks_exact(frames) {
        // shifted by the first sample so constant rows give exactly zero
        let y: Vec<f64> = row.iter().map(|x| x - row[0]).collect();
        let mean = y.iter().sum::<f64>() / frames as f64;
        acc += y.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / frames as f64;
    }
    Ok(acc / channels as f64)
}

/// [`variance`] over the valid frames of a sequence.
pub fn sequence_variance(seq: &MotionSequence) -> Result<f64> {
    let keep: Vec<usize> = (0..seq.len()).filter(|&t| seq.mask()[t]).collect();
    let mut m = Vec::with_capacity(seq.width() * keep.len());
    for c in 0..seq.width() {
        let ch = seq.channel(c);
        m.extend(keep.iter().map(|&t| ch[t] as f64));
    }
    variance(&m, seq.width(), keep.len())
}

/// Per-class negative log-likelihood; `None` for classes with no tokens.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NllReport {
    pub nll_text: Option<f64>,
    pub nll_face: Option<f64>,
    pub nll_body: Option<f64>,
    pub nll: f64,
    pub ppl: f64,
}

/// `logprobs` are natural-log probabilities of the observed tokens.
pub fn token_nll_ppl(logprobs: &[f64], classes: &[TokenClass]) -> Result<NllReport> {
    if logprobs.is_empty() {
        return Err(Error::invalid("empty token stream"));
    }
    if logprobs.len() != classes.len() {
        return Err(Error::ShapeMismatch { expected: vec![logprobs.len()], actual: vec![classes.len()] });
    }
    if logprobs.iter().any(|l| l.is_nan() || *l > 0.0) {
        return Err(Error::invalid("log-probabilities must be <= 0"));
    }
    let class_nll = |c: TokenClass| {
        let v: Vec<f64> = logprobs.iter().zip(classes).filter(|(_, k)| **k == c).map(|(l, _)| *l).collect();
        (!v.is_empty()).then(|| -v.iter().sum::<f64>() / v.len() as f64)
    };
    let nll = -logprobs.iter().sum::<f64>() / logprobs.len() as f64;
    Ok(NllReport {
        nll_text: class_nll(TokenClass::Text),
        nll_face: class_nll(TokenClass::Face),
        nll_body: class_nll(TokenClass::Body),
        nll,
        ppl: Float::exp(nll),
    })
}

/// Multiplier `u` such that a value is reported as `value / u` in the
/// conventional table units (e.g. VMSE in units of 1e-1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportScale {
    pub vmse: f64,
    pub lvd: f64,
    pub wvl2: f64,
    pub diversity: f64,
    pub variance: f64,
}

impl ReportScale {
    pub const FACE: Self = Self { vmse: 1e-1, lvd: 1e-3, wvl2: 1e-7, diversity: 1.0, variance: 1.0 };
    pub const BODY: Self = Self { vmse: 1.0, lvd: 1e-1, wvl2: 1e-4, diversity: 1.0, variance: 1e-1 };

    pub fn for_stream(kind: crate::motion::StreamKind) -> Self {
        match kind {
            crate::motion::StreamKind::Face => Self::FACE,
            crate::motion::StreamKind::Body => Self::BODY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub vmse: f64,
    pub lvd: f64,
    pub wvl2: f64,
    pub diversity: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricOptions {
    pub map: VertexMap,
    pub window: usize,
    pub stride: usize,
    pub pairs: usize,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for MetricOptions {
    fn default() -> Self {
        Self {
            map: VertexMap::Identity,
            window: DEFAULT_WVL2_WINDOW,
            stride: DEFAULT_WVL2_WINDOW,
            pairs: DEFAULT_DIVERSITY_PAIRS,
            repeats: DEFAULT_DIVERSITY_REPEATS,
            seed: 0,
        }
    }
}

impl MetricReport {
    /// Reconstruction metrics averaged over pairs; diversity and variance
    /// are computed on the predictions. Diversity compares sequences, so it
    /// needs at least two; with a single pair it is reported as 0.
    pub fn evaluate(gt: &[MotionSequence], pred: &[MotionSequence], opts: &MetricOptions) -> Result<Self> {
        if gt.is_empty() || gt.len() != pred.len() {
            return Err(Error::invalid("need equal, non-zero numbers of ground-truth and predicted sequences"));
        }
        let n = gt.len() as f64;
        let mut r = Self { vmse: 0.0, lvd: 0.0, wvl2: 0.0, diversity: 0.0, variance: 0.0 };
        for (g, p) in gt.iter().zip(pred) {
            r.vmse += vmse(g, p, &opts.map)? / n;
            r.lvd += lvd(g, p, &opts.map)? / n;
            let valid = g.valid_frames();
            let w = opts.window.min(valid);
            if w > 0 {
                r.wvl2 += window_vertex_l2(g, p, &opts.map, w, opts.stride)? / n;
            }
            r.variance += sequence_variance(p)? / n;
        }
        if pred.len() >= 2 {
            let mut flat = flatten_motions(pred);
            let shortest = flat.iter().map(Vec::len).min().unwrap_or(0);
            for f in &mut flat {
                f.truncate(shortest);
            }
            r.diversity = diversity(&flat, opts.pairs, opts.repeats, opts.seed)?;
        }
        Ok(r)
    }

    /// Values divided by the table unit of each column.
    pub fn scaled(&self, s: &ReportScale) -> Self {
        Self {
            vmse: self.vmse / s.vmse,
            lvd: self.lvd / s.lvd,
            wvl2: self.wvl2 / s.wvl2,
            diversity: self.diversity / s.diversity,
            variance: self.variance / s.variance,
        }
    }

    pub fn is_valid(&self) -> bool {
        [self.vmse, self.lvd, self.wvl2, self.diversity, self.variance].iter().all(|v| v.is_finite())
            && self.vmse >= 0.0
            && self.lvd >= 0.0
            && self.wvl2 >= 0.0
    }
}
