//! Nearest-neighbour vector quantization against a unit-norm codebook whose
//! entries are maintained by exponential moving averages of assigned latents.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Added to EMA counts before dividing, so unused codes never divide by zero.
pub const EMA_EPSILON: f64 = 1e-5;

/// `K × C` code table plus EMA accumulators and usage counters.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook<T> {
    size: usize,
    dim: usize,
    entries: Vec<T>,
    ema_counts: Vec<T>,
    ema_sums: Vec<T>,
    usage: Vec<u64>,
}

impl<T: Real> Codebook<T> {
    /// Builds a codebook from row-major entries, L2-normalizing each row.
    /// Accumulators start as if every code had seen its own entry once.
    pub fn from_entries(size: usize, dim: usize, entries: Vec<T>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("code dimension must be positive"));
        }
        if entries.len() != size * dim {
            return Err(Error::ShapeMismatch { expected: vec![size, dim], actual: vec![entries.len()] });
        }
        let mut cb =
            Self { size, dim, entries, ema_counts: vec![T::one(); size], ema_sums: Vec::new(), usage: vec![0; size] };
        for k in 0..size {
            let row = &mut cb.entries[k * dim..(k + 1) * dim];
            if !normalize(row) {
                return Err(Error::Validation(format!("codebook row {k} has zero norm")));
            }
        }
        cb.ema_sums = cb.entries.clone();
        Ok(cb)
    }

    /// Restores a codebook verbatim (checkpoint loading).
    pub fn from_parts(
        size: usize,
        dim: usize,
        entries: Vec<T>,
        ema_counts: Vec<T>,
        ema_sums: Vec<T>,
        usage: Vec<u64>,
    ) -> Result<Self> {
        if entries.len() != size * dim
            || ema_sums.len() != size * dim
            || ema_counts.len() != size
            || usage.len() != size
        {
            return Err(Error::invalid("codebook part lengths disagree with K x C"));
        }
        if ema_counts.iter().any(|c| *c < T::zero()) {
            return Err(Error::Validation("negative EMA count".into()));
        }
        Ok(Self { size, dim, entries, ema_counts, ema_sums, usage })
    }

    /// Gaussian rows projected to the unit sphere.
    pub fn random(size: usize, dim: usize, rng: &mut impl Rng) -> Result<Self> {
        let entries = (0..size * dim).map(|_| T::lit(StandardNormal.sample(rng))).collect();
        Self::from_entries(size, dim, entries)
    }

    /// Seeds every code with a randomly drawn latent (row-major `n × dim`).
    /// Draws with replacement when there are fewer latents than codes.
    pub fn from_latents(size: usize, dim: usize, latents: &[T], rng: &mut impl Rng) -> Result<Self> {
        let n = latents.len() / dim.max(1);
        if n == 0 || latents.len() != n * dim {
            return Err(Error::invalid("no latents to seed the codebook from"));
        }
        let mut order: Vec<usize> = (0..n).collect();
        shuffle(&mut order, rng);
        let mut entries = Vec::with_capacity(size * dim);
        for k in 0..size {
            let src = order.get(k).copied().unwrap_or_else(|| rng.gen_range(0..n));
            let row = &latents[src * dim..(src + 1) * dim];
            let mut v = row.to_vec();
            if !normalize(&mut v) {
                v = (0..dim).map(|_| T::lit(StandardNormal.sample(rng))).collect();
            }
            entries.extend(v);
        }
        Self::from_entries(size, dim, entries)
    }

    /// Number of codes `K`.
    pub fn size(&self) -> usize {
        self.size
    }

    /// Code dimension `C`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[T] {
        &self.entries
    }

    pub fn entry(&self, k: usize) -> &[T] {
        &self.entries[k * self.dim..(k + 1) * self.dim]
    }

    pub fn ema_counts(&self) -> &[T] {
        &self.ema_counts
    }

    pub fn ema_sums(&self) -> &[T] {
        &self.ema_sums
    }

    pub fn usage(&self) -> &[u64] {
        &self.usage
    }

    pub fn reset_usage(&mut self) {
        self.usage.fill(0);
    }

    /// Codes assigned at least once since the last usage reset.
    pub fn active_codes(&self) -> usize {
        self.usage.iter().filter(|u| **u > 0).count()
    }

    pub fn cast<U: Real>(&self) -> Codebook<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::lit(x.to_f64_lossy())).collect();
        Codebook {
            size: self.size,
            dim: self.dim,
            entries: conv(&self.entries),
            ema_counts: conv(&self.ema_counts),
            ema_sums: conv(&self.ema_sums),
            usage: self.usage.clone(),
        }
    }

    /// Index of the closest entry by squared Euclidean distance, lowest index
    /// on ties, together with that distance.
    pub fn nearest(&self, v: &[T]) -> Result<(usize, T)> {
        if self.size == 0 {
            return Err(Error::InvalidState("codebook is empty".into()));
        }
        if v.len() != self.dim {
            return Err(Error::ShapeMismatch { expected: vec![self.dim], actual: vec![v.len()] });
        }
        let mut best = (0, T::infinity());
        for k in 0..self.size {
            let d: T = self.entry(k).iter().zip(v).map(|(e, x)| (*x - *e) * (*x - *e)).sum();
            if d < best.1 {
                best = (k, d);
            }
        }
        Ok(best)
    }

    /// One EMA step over a batch of latents (row-major `n × dim`) and their
    /// code assignments:
    ///
    /// ```text
    /// count_k ← decay·count_k + (1 − decay)·n_k
    /// sum_k   ← decay·sum_k   + (1 − decay)·Σ_{assigned to k} z
    /// e_k     ← normalize(sum_k / (count_k + ε))
    /// ```
    pub fn ema_update(&mut self, latents: &[T], assignments: &[usize], decay: T) -> Result<()> {
        if !(decay > T::zero() && decay < T::one()) {
            return Err(Error::invalid(format!("EMA decay must lie in (0, 1), got {decay:?}")));
        }
        let dim = self.dim;
        if latents.len() != assignments.len() * dim {
            return Err(Error::ShapeMismatch { expected: vec![assignments.len(), dim], actual: vec![latents.len()] });
        }
        let mut counts = vec![T::zero(); self.size];
        let mut sums = vec![T::zero(); self.size * dim];
        for (row, &k) in latents.chunks_exact(dim).zip(assignments) {
            if k >= self.size {
                return Err(Error::invalid(format!("assignment {k} outside codebook of {}", self.size)));
            }
            counts[k] = counts[k] + T::one();
            for (s, &z) in sums[k * dim..(k + 1) * dim].iter_mut().zip(row) {
                *s = *s + z;
            }
        }
        let keep = T::one() - decay;
        let eps = T::lit(EMA_EPSILON);
        for k in 0..self.size {
            self.ema_counts[k] = decay * self.ema_counts[k] + keep * counts[k];
            let denom = self.ema_counts[k] + eps;
            let mut next = vec![T::zero(); dim];
            for (j, n) in next.iter_mut().enumerate() {
                let s = &mut self.ema_sums[k * dim + j];
                *s = decay * *s + keep * sums[k * dim + j];
                *n = *s / denom;
            }
            if normalize(&mut next) {
                self.entries[k * dim..(k + 1) * dim].copy_from_slice(&next);
            }
            self.usage[k] += counts[k].to_u64().unwrap_or(0);
        }
        Ok(())
    }

    /// Re-seeds codes unused since the last usage reset from randomly chosen
    /// latents (row-major `n × dim`). Returns the number of codes re-seeded.
    pub fn reseed_dead(&mut self, latents: &[T], rng: &mut impl Rng) -> usize {
        let dim = self.dim;
        let n = latents.len() / dim;
        if n == 0 {
            return 0;
        }
        let mut reseeded = 0;
        for k in 0..self.size {
            if self.usage[k] > 0 {
                continue;
            }
            let src = rng.gen_range(0..n);
            let mut v = latents[src * dim..(src + 1) * dim].to_vec();
            if !normalize(&mut v) {
                continue;
            }
            self.entries[k * dim..(k + 1) * dim].copy_from_slice(&v);
            self.ema_sums[k * dim..(k + 1) * dim].copy_from_slice(&v);
            self.ema_counts[k] = T::one();
            reseeded += 1;
        }
        reseeded
    }
}

/// Scales `v` to unit L2 norm; returns `false` (leaving `v` untouched) when
/// the norm is zero or not finite.
fn normalize<T: Real>(v: &mut [T]) -> bool {
    let norm = v.iter().map(|x| *x * *x).sum::<T>().sqrt();
    if !(norm.is_finite() && norm > T::min_positive_value()) {
        return false;
    }
    for x in v.iter_mut() {
        *x = *x / norm;
    }
    true
}

fn shuffle<R: Rng>(v: &mut [usize], rng: &mut R) {
    for i in (1..v.len()).rev() {
        let j = rng.gen_range(0..=i);
        v.swap(i, j);
    }
}

/// Code indices for one window plus the quantized latent fed to the decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedClip<T> {
    /// One code per latent step; `len == window / ratio`.
    pub indices: Vec<usize>,
    /// Selected codebook rows, channel-major `[C, τ]`. On a tape this is the
    /// straight-through value `z + stopgrad(ẑ − z)`.
    pub quantized: Tensor<T>,
    /// Validity of each latent step, derived from the source frame mask.
    pub source_mask: Vec<bool>,
}

impl<T: Real> QuantizedClip<T> {
    pub fn steps(&self) -> usize {
        self.indices.len()
    }

    pub fn with_source_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.indices.len() {
            return Err(Error::ShapeMismatch { expected: vec![self.indices.len()], actual: vec![mask.len()] });
        }
        self.source_mask = mask;
        Ok(self)
    }
}

/// Snaps each column of a channel-major latent `z: [C, τ]` to its nearest code.
pub fn quantize<T: Real>(z: &Tensor<T>, cb: &Codebook<T>) -> Result<QuantizedClip<T>> {
    if cb.size() == 0 {
        return Err(Error::InvalidState("codebook is empty".into()));
    }
    if z.shape().len() != 2 || z.dim(0) != cb.dim() {
        return Err(Error::ShapeMismatch { expected: vec![cb.dim(), 0], actual: z.shape().to_vec() });
    }
    let (c, steps) = (z.dim(0), z.dim(1));
    let mut indices = Vec::with_capacity(steps);
    let mut quantized = Tensor::zeros(&[c, steps]);
    let mut col = vec![T::zero(); c];
    for t in 0..steps {
        for (j, v) in col.iter_mut().enumerate() {
            *v = z.data()[j * steps + t];
        }
        let (k, _) = cb.nearest(&col)?;
        for (j, &e) in cb.entry(k).iter().enumerate() {
            quantized.data_mut()[j * steps + t] = e;
        }
        indices.push(k);
    }
    Ok(QuantizedClip { indices, quantized, source_mask: vec![true; steps] })
}

/// Looks up codebook rows for `indices`, giving a channel-major `[C, τ]` latent.
pub fn embed<T: Real>(indices: &[usize], cb: &Codebook<T>) -> Result<Tensor<T>> {
    let steps = indices.len();
    let mut out = Tensor::zeros(&[cb.dim(), steps]);
    for (t, &k) in indices.iter().enumerate() {
        if k >= cb.size() {
            return Err(Error::CodeOutOfRange { k: cb.size(), offending: vec![format!("{k}")] });
        }
        for (j, &e) in cb.entry(k).iter().enumerate() {
            out.data_mut()[j * steps + t] = e;
        }
    }
    Ok(out)
}

/// A latent step is valid when any of its `ratio` source frames is observed.
pub fn downsample_mask(mask: &[bool], ratio: usize) -> Vec<bool> {
    mask.chunks(ratio.max(1)).map(|c| c.iter().any(|m| *m)).collect()
}

/// Columns of a channel-major `[C, τ]` tensor as row-major `τ × C` vectors,
/// keeping only steps where `mask` is true.
pub fn latent_rows<T: Real>(z: &Tensor<T>, mask: &[bool]) -> Vec<T> {
    let (c, steps) = (z.dim(0), z.dim(1));
    let mut out = Vec::with_capacity(c * steps);
    for t in (0..steps).filter(|&t| mask.get(t).copied().unwrap_or(true)) {
        out.extend((0..c).map(|j| z.data()[j * steps + t]));
    }
    out
}
