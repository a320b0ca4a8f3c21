//! Independent reference implementations, each compared against the library.

use featurelens::classifiers::gbt::{self, GbtConfig, Node};
use featurelens::classifiers::mlp::MlpParams;
use featurelens::freq::{dft2, frequency_features};
use featurelens::metrics::auc;
use featurelens::mmd::{mmd_score, MmdReference};
use featurelens::util::rng;
use featurelens::GrayImage;
use rand::Rng;

/// Direct O(N^4) DFT, returned in centered order (DC at `(H/2, W/2)`).
fn naive_centered_magnitude(img: &GrayImage) -> Vec<f64> {
    let (h, w) = (img.height(), img.width());
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let u = (r + h - h / 2) % h;
            let v = (c + w - w / 2) % w;
            let (mut re, mut im) = (0.0, 0.0);
            for m in 0..h {
                for n in 0..w {
                    let phase = -2.0 * std::f64::consts::PI * ((u * m) as f64 / h as f64 + (v * n) as f64 / w as f64);
                    let x = img.get(m, n);
                    re += x * phase.cos();
                    im += x * phase.sin();
                }
            }
            out[r * w + c] = re.hypot(im);
        }
    }
    out
}

pub fn dft_oracle() -> Result<(), String> {
    let mut g = rng(101);
    for case in 0..50 {
        let h = g.random_range(2..=16);
        let w = g.random_range(2..=16);
        let img = GrayImage::from_fn(h, w, |_, _| g.random::<f64>());
        let fast = dft2(&img).map_err(|e| e.to_string())?;
        let slow = naive_centered_magnitude(&img);
        let scale = slow.iter().cloned().fold(0.0, f64::max);
        for (a, b) in fast.magnitude().iter().zip(&slow) {
            ensure!((a - b).abs() <= 1e-9 * scale, "case {case} ({h}x{w}): {a} vs {b}");
        }
        let f = frequency_features(&fast);
        ensure!((f[0] + f[1] + f[2] - 1.0).abs() <= 1e-9, "case {case}: ratios {:?}", &f[..3]);
    }
    Ok(())
}

fn gaussian(a: &[f64], b: &[f64], h: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-d2 / (h * h)).exp()
}

pub fn mmd_oracle() -> Result<(), String> {
    let mut g = rng(202);
    for case in 0..100 {
        let d = g.random_range(1..=6);
        let mut vec = || (0..d).map(|_| g.random_range(-2.0..2.0)).collect::<Vec<f64>>();
        let refs = vec![vec(), vec(), vec()];
        let x = vec();
        let dist = |a: &[f64], b: &[f64]| gaussian(a, b, 1.0).ln().abs().sqrt();
        let mut pair = [dist(&refs[0], &refs[1]), dist(&refs[0], &refs[2]), dist(&refs[1], &refs[2])];
        pair.sort_by(f64::total_cmp);
        let h = pair[1];
        let mut self_sum = 0.0;
        for a in &refs {
            for b in &refs {
                self_sum += gaussian(a, b, h);
            }
        }
        let cross: f64 = refs.iter().map(|r| gaussian(&x, r, h)).sum();
        let expected = (1.0 - 2.0 * cross / 3.0 + self_sum / 9.0).max(0.0).sqrt();
        let reference = MmdReference::from_vectors(refs.clone()).map_err(|e| e.to_string())?;
        let got = mmd_score(&x, &reference).map_err(|e| e.to_string())?;
        ensure!((got - expected).abs() <= 1e-10, "case {case}: {got} vs {expected}");
    }
    Ok(())
}

pub fn auc_oracle() -> Result<(), String> {
    let mut g = rng(303);
    for case in 0..50 {
        let scores: Vec<f64> = (0..200).map(|_| g.random_range(0..25) as f64 / 24.0).collect();
        let mut labels: Vec<u8> = (0..200).map(|_| g.random_range(0..2)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let (mut wins, mut pos, mut neg) = (0.0, 0.0, 0.0);
        for i in 0..200 {
            if labels[i] == 1 {
                pos += 1.0;
            } else {
                neg += 1.0;
            }
            for j in 0..200 {
                if labels[i] == 1 && labels[j] == 0 {
                    if scores[i] > scores[j] {
                        wins += 1.0;
                    } else if scores[i] == scores[j] {
                        wins += 0.5;
                    }
                }
            }
        }
        let got = auc(&scores, &labels).map_err(|e| e.to_string())?;
        ensure!(got == wins / (pos * neg), "case {case}: {got} vs {}", wins / (pos * neg));
    }
    Ok(())
}

pub fn mlp_gradient_oracle() -> Result<(), String> {
    let dims = [51, 64, 32, 2];
    let mut g = rng(404);
    let step = 1e-5;
    for batch in 0..20 {
        let params = MlpParams::he_init(&dims, 1000 + batch);
        let xs: Vec<Vec<f64>> = (0..8).map(|_| (0..51).map(|_| g.random_range(-2.0..2.0)).collect()).collect();
        let ys: Vec<u8> = (0..8).map(|_| g.random_range(0..2)).collect();
        let views: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let (_, grad) = params.loss_and_gradient(&views, &ys);
        let analytic = grad.blocks();
        for (b, block) in analytic.iter().enumerate() {
            let mut num_sq = 0.0;
            let mut diff_sq = 0.0;
            let mut den_sq = 0.0;
            let coords: Vec<usize> = if block.len() <= 64 {
                (0..block.len()).collect()
            } else {
                (0..64).map(|_| g.random_range(0..block.len())).collect()
            };
            for &k in &coords {
                let mut plus = params.clone();
                plus.blocks_mut()[b][k] += step;
                let mut minus = params.clone();
                minus.blocks_mut()[b][k] -= step;
                let fd = (plus.loss(&views, &ys) - minus.loss(&views, &ys)) / (2.0 * step);
                diff_sq += (fd - block[k]).powi(2);
                num_sq += fd * fd;
                den_sq += block[k] * block[k];
            }
            let rel = diff_sq.sqrt() / (num_sq.sqrt() + den_sq.sqrt()).max(1e-12);
            ensure!(rel < 1e-4, "batch {batch} block {b}: relative error {rel}");
        }
    }
    Ok(())
}

pub fn gbt_gain_oracle() -> Result<(), String> {
    // Six points on a line, labels 0 1 0 1 1 1. At margin 0 every point has
    // g = 0.5 - y and h = 1/4, so G = -1 and H = 3/2.
    let x: Vec<Vec<f64>> = (1..=6).map(|v| vec![v as f64]).collect();
    let y = [0u8, 1, 0, 1, 1, 1];
    let config = GbtConfig { n_trees: 1, min_child_weight: 0.25, ..GbtConfig::default() };
    let params = gbt::train(&x, &y, None, config).map_err(|e| e.to_string())?;
    let by_hand = |gl: f64, hl: f64| {
        let (gr, hr) = (-1.0 - gl, 1.5 - hl);
        0.5 * (gl * gl / (hl + 1.0) + gr * gr / (hr + 1.0) - 1.0 / 2.5)
    };
    let cuts = [by_hand(0.5, 0.25), by_hand(0.0, 0.5), by_hand(0.5, 0.75), by_hand(0.0, 1.0), by_hand(-0.5, 1.25)];
    // Cutting after the third point: (1/4)/(7/4) + (9/4)/(7/4) - 2/5 = 36/35.
    ensure!((cuts[2] - 18.0 / 35.0).abs() < 1e-15, "hand gain {}", cuts[2]);
    ensure!(cuts.iter().enumerate().all(|(k, &c)| k == 2 || c < cuts[2]), "best cut not unique: {cuts:?}");
    match params.trees[0].nodes[0] {
        Node::Split { feature, threshold, gain, cover, .. } => {
            ensure!(feature == 0, "feature {feature}");
            ensure!(threshold == 3.5, "threshold {threshold}");
            ensure!((gain - 18.0 / 35.0).abs() <= 1e-12, "gain {gain}");
            ensure!((cover - 1.5).abs() <= 1e-12, "cover {cover}");
        }
        ref other => return Err(format!("root is not a split: {other:?}")),
    }
    Ok(())
}
