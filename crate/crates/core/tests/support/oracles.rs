//! Scalar-loop reference implementations, written without the library's helpers.

use rand::Rng;

/// Exhaustive nearest neighbour: first index with the minimal squared distance.
pub fn nearest(entries: &[Vec<f64>], z: &[f64]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (k, e) in entries.iter().enumerate() {
        let mut d = 0.0;
        for j in 0..z.len() {
            d += (z[j] - e[j]) * (z[j] - e[j]);
        }
        if d < best_d {
            best_d = d;
            best = k;
        }
    }
    best
}

/// EMA codebook state updated one scalar at a time.
#[derive(Debug, Clone)]
pub struct EmaState {
    pub entries: Vec<Vec<f64>>,
    pub counts: Vec<f64>,
    pub sums: Vec<Vec<f64>>,
}

impl EmaState {
    pub fn step(&mut self, latents: &[Vec<f64>], assign: &[usize], decay: f64) {
        let k_total = self.counts.len();
        for k in 0..k_total {
            let mut n = 0.0;
            for &a in assign {
                if a == k {
                    n += 1.0;
                }
            }
            self.counts[k] = decay * self.counts[k] + (1.0 - decay) * n;
            let dim = self.sums[k].len();
            let mut fresh = vec![0.0; dim];
            for j in 0..dim {
                let mut s = 0.0;
                for (z, &a) in latents.iter().zip(assign) {
                    if a == k {
                        s += z[j];
                    }
                }
                self.sums[k][j] = decay * self.sums[k][j] + (1.0 - decay) * s;
                fresh[j] = self.sums[k][j] / (self.counts[k] + 1e-5);
            }
            let mut norm = 0.0;
            for v in &fresh {
                norm += v * v;
            }
            let norm = norm.sqrt();
            if norm > 0.0 {
                for j in 0..dim {
                    self.entries[k][j] = fresh[j] / norm;
                }
            }
        }
    }
}

/// `frames[i][c]` difference norms for identity-map metrics.
pub fn vmse(gt: &[Vec<f64>], pred: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for i in 0..gt.len() {
        for c in 0..gt[i].len() {
            let d = pred[i][c] - gt[i][c];
            total += d * d;
        }
    }
    total / gt.len() as f64
}

pub fn lvd(gt: &[Vec<f64>], pred: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for i in 0..gt.len() {
        for c in 0..gt[i].len() {
            total += (pred[i][c] - gt[i][c]).abs();
        }
    }
    total / gt.len() as f64
}

pub fn wvl2(gt: &[Vec<f64>], pred: &[Vec<f64>], window: usize, stride: usize) -> f64 {
    let dim = gt[0].len();
    let mut total = 0.0;
    let mut count = 0;
    let mut s = 0;
    while s + window <= gt.len() {
        let mut dist = 0.0;
        for c in 0..dim {
            let mut mg = 0.0;
            let mut mp = 0.0;
            for i in s..s + window {
                mg += gt[i][c];
                mp += pred[i][c];
            }
            let d = mg / window as f64 - mp / window as f64;
            dist += d * d;
        }
        total += dist;
        count += 1;
        s += stride;
    }
    total / count as f64
}

/// Replays the documented sampling scheme with the same generator.
pub fn diversity(motions: &[Vec<f64>], pairs: usize, repeats: usize, rng: &mut impl Rng) -> f64 {
    let n = motions.len();
    let mut acc = 0.0;
    for _ in 0..repeats {
        let mut s = 0.0;
        for _ in 0..pairs {
            let i = rng.gen_range(0..n);
            let mut j = rng.gen_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            let mut d = 0.0;
            for c in 0..motions[i].len() {
                d += (motions[i][c] - motions[j][c]).powi(2);
            }
            s += d;
        }
        acc += s / pairs as f64;
    }
    acc / repeats as f64
}

/// `m[t][c]`, population variance per channel, averaged.
pub fn variance(m: &[Vec<f64>]) -> f64 {
    let t_len = m.len() as f64;
    let dim = m[0].len();
    let mut acc = 0.0;
    for c in 0..dim {
        let mut mean = 0.0;
        for row in m {
            mean += row[c];
        }
        mean /= t_len;
        let mut v = 0.0;
        for row in m {
            v += (row[c] - mean) * (row[c] - mean);
        }
        acc += v / t_len;
    }
    acc / dim as f64
}
