//! Gaussian-kernel SVM trained with sequential minimal optimization.
//!
//! Decision function `f(x) = sum_i a_i y_i k(x_i, x) + b` with
//! `k(a, b) = exp(-gamma |a - b|^2)`. Working-pair selection follows Platt:
//! alternate full sweeps with sweeps over the unbounded multipliers, choose the
//! partner maximizing `|E1 - E2|`, and fall back to scanning from a seeded
//! random offset.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::util;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    pub c: f64,
    /// `None` means `1 / d`.
    pub gamma: Option<f64>,
    pub tolerance: f64,
    pub max_passes: usize,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self { c: 1.0, gamma: None, tolerance: 1e-3, max_passes: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    pub support_vectors: Vec<Vec<f64>>,
    /// `alpha_i * y_i` for each support vector.
    pub dual_coef: Vec<f64>,
    pub bias: f64,
    pub gamma: f64,
    pub c: f64,
    pub full_passes: usize,
    pub converged: bool,
}

impl SvmParams {
    pub fn decision(&self, x: &[f64]) -> f64 {
        self.bias
            + self
                .support_vectors
                .iter()
                .zip(&self.dual_coef)
                .map(|(sv, a)| a * rbf(sv, x, self.gamma))
                .sum::<f64>()
    }

    pub fn alphas(&self) -> impl Iterator<Item = f64> + '_ {
        self.dual_coef.iter().map(|a| a.abs())
    }
}

#[inline]
pub fn rbf(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * d2).exp()
}

struct Smo<'a> {
    kernel: Vec<f64>,
    n: usize,
    y: Vec<f64>,
    alpha: Vec<f64>,
    error: Vec<f64>,
    b: f64,
    c: f64,
    tol: f64,
    rng: &'a mut util::Rng,
}

const ALPHA_EPS: f64 = 1e-10;

impl Smo<'_> {
    #[inline]
    fn k(&self, i: usize, j: usize) -> f64 {
        self.kernel[i * self.n + j]
    }

    fn bound(&self, i: usize) -> bool {
        self.alpha[i] <= 0.0 || self.alpha[i] >= self.c
    }

    fn take_step(&mut self, i1: usize, i2: usize) -> bool {
        if i1 == i2 {
            return false;
        }
        let (a1, a2) = (self.alpha[i1], self.alpha[i2]);
        let (y1, y2) = (self.y[i1], self.y[i2]);
        let (e1, e2) = (self.error[i1], self.error[i2]);
        let s = y1 * y2;
        let (lo, hi) = if y1 != y2 {
            ((a2 - a1).max(0.0), (self.c + a2 - a1).min(self.c))
        } else {
            ((a1 + a2 - self.c).max(0.0), (a1 + a2).min(self.c))
        };
        if hi - lo <= 0.0 {
            return false;
        }
        let (k11, k12, k22) = (self.k(i1, i1), self.k(i1, i2), self.k(i2, i2));
        let eta = k11 + k22 - 2.0 * k12;
        let mut new_a2 = if eta > 0.0 {
            (a2 + y2 * (e1 - e2) / eta).clamp(lo, hi)
        } else {
            // Objective at both ends of the segment.
            let f1 = y1 * e1 - a1 * k11 - s * a2 * k12;
            let f2 = y2 * e2 - s * a1 * k12 - a2 * k22;
            let l1 = a1 + s * (a2 - lo);
            let h1 = a1 + s * (a2 - hi);
            let obj_lo = l1 * f1 + lo * f2 + 0.5 * l1 * l1 * k11 + 0.5 * lo * lo * k22 + s * lo * l1 * k12;
            let obj_hi = h1 * f1 + hi * f2 + 0.5 * h1 * h1 * k11 + 0.5 * hi * hi * k22 + s * hi * h1 * k12;
            if obj_lo < obj_hi - 1e-12 {
                lo
            } else if obj_lo > obj_hi + 1e-12 {
                hi
            } else {
                a2
            }
        };
        if new_a2 < ALPHA_EPS {
            new_a2 = 0.0;
        } else if new_a2 > self.c - ALPHA_EPS {
            new_a2 = self.c;
        }
        if (new_a2 - a2).abs() < 1e-12 * (new_a2 + a2 + 1e-12) {
            return false;
        }
        let mut new_a1 = a1 + s * (a2 - new_a2);
        if new_a1 < ALPHA_EPS {
            new_a1 = 0.0;
        } else if new_a1 > self.c - ALPHA_EPS {
            new_a1 = self.c;
        }

        let d1 = y1 * (new_a1 - a1);
        let d2 = y2 * (new_a2 - a2);
        let b1 = self.b - e1 - d1 * k11 - d2 * k12;
        let b2 = self.b - e2 - d1 * k12 - d2 * k22;
        let new_b = if new_a1 > 0.0 && new_a1 < self.c {
            b1
        } else if new_a2 > 0.0 && new_a2 < self.c {
            b2
        } else {
            0.5 * (b1 + b2)
        };
        let db = new_b - self.b;
        for k in 0..self.n {
            self.error[k] += d1 * self.k(i1, k) + d2 * self.k(i2, k) + db;
        }
        self.alpha[i1] = new_a1;
        self.alpha[i2] = new_a2;
        self.b = new_b;
        true
    }

    fn examine(&mut self, i2: usize) -> bool {
        let r2 = self.error[i2] * self.y[i2];
        let a2 = self.alpha[i2];
        if !((r2 < -self.tol && a2 < self.c) || (r2 > self.tol && a2 > 0.0)) {
            return false;
        }
        let free: Vec<usize> = (0..self.n).filter(|&i| !self.bound(i)).collect();
        if free.len() > 1 {
            let e2 = self.error[i2];
            let mut best = None;
            let mut best_gap = -1.0;
            for &i in &free {
                let gap = (self.error[i] - e2).abs();
                if gap > best_gap {
                    best_gap = gap;
                    best = Some(i);
                }
            }
            if let Some(i1) = best {
                if self.take_step(i1, i2) {
                    return true;
                }
            }
        }
        if !free.is_empty() {
            let start = self.rng.random_range(0..free.len());
            for k in 0..free.len() {
                if self.take_step(free[(start + k) % free.len()], i2) {
                    return true;
                }
            }
        }
        let start = self.rng.random_range(0..self.n);
        for k in 0..self.n {
            let i1 = (start + k) % self.n;
            if self.bound(i1) && self.take_step(i1, i2) {
                return true;
            }
        }
        false
    }
}

pub fn train(x: &[Vec<f64>], y: &[u8], config: SvmConfig, seed: u64) -> SvmParams {
    let n = x.len();
    let d = x[0].len();
    let gamma = config.gamma.unwrap_or(1.0 / d as f64);
    let mut kernel = vec![0.0; n * n];
    for i in 0..n {
        kernel[i * n + i] = 1.0;
        for j in i + 1..n {
            let v = rbf(&x[i], &x[j], gamma);
            kernel[i * n + j] = v;
            kernel[j * n + i] = v;
        }
    }
    let ys: Vec<f64> = y.iter().map(|&v| if v == 1 { 1.0 } else { -1.0 }).collect();
    let mut rng = util::rng(seed);
    let mut smo = Smo {
        kernel,
        n,
        error: ys.iter().map(|v| -v).collect(),
        y: ys,
        alpha: vec![0.0; n],
        b: 0.0,
        c: config.c,
        tol: config.tolerance,
        rng: &mut rng,
    };

    let mut examine_all = true;
    let mut full_passes = 0;
    let mut converged = false;
    // Sweeps over free multipliers between full passes are bounded too.
    let mut partial_budget = 100 * config.max_passes.max(1);
    loop {
        let mut changed = 0;
        if examine_all {
            full_passes += 1;
            for i in 0..n {
                changed += smo.examine(i) as usize;
            }
        } else {
            partial_budget -= 1;
            for i in 0..n {
                if !smo.bound(i) {
                    changed += smo.examine(i) as usize;
                }
            }
        }
        if examine_all && changed == 0 {
            converged = true;
            break;
        }
        if full_passes >= config.max_passes {
            break;
        }
        if examine_all {
            examine_all = false;
        } else if changed == 0 || partial_budget == 0 {
            examine_all = true;
        }
    }

    // Re-centre the bias on the free multipliers, where f(x_i) = y_i exactly.
    let free: Vec<usize> = (0..n).filter(|&i| !smo.bound(i)).collect();
    let mut bias = smo.b;
    if !free.is_empty() {
        let mut acc = 0.0;
        for &i in &free {
            let f_wo_b: f64 = (0..n).map(|j| smo.alpha[j] * smo.y[j] * smo.k(j, i)).sum();
            acc += smo.y[i] - f_wo_b;
        }
        bias = acc / free.len() as f64;
    }

    let mut support_vectors = Vec::new();
    let mut dual_coef = Vec::new();
    for i in 0..n {
        if smo.alpha[i] > 0.0 {
            support_vectors.push(x[i].clone());
            dual_coef.push(smo.alpha[i] * smo.y[i]);
        }
    }
    SvmParams { support_vectors, dual_coef, bias, gamma, c: config.c, full_passes, converged }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_points_are_classified() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![if i < 10 { -1.0 } else { 1.0 }, (i % 5) as f64 * 0.1]).collect();
        let y: Vec<u8> = (0..20).map(|i| (i >= 10) as u8).collect();
        let p = train(&x, &y, SvmConfig::default(), 1);
        assert!(p.converged);
        for (xi, yi) in x.iter().zip(&y) {
            assert_eq!((p.decision(xi) > 0.0) as u8, *yi);
        }
        assert!(p.alphas().all(|a| a > 0.0 && a <= 1.0 + 1e-12));
    }
}
