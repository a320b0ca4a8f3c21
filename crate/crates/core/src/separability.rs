//! Feature-space displacement between a clean/perturbed pair and the explicit
//! linear separator built from it.
//!
//! With `w = phi' - phi` and `b = -w.phi - |w|^2 / 2`, the affine function
//! `f(z) = w.z + b` evaluates to `-|w|^2/2` at `phi` and `+|w|^2/2` at `phi'`.

use std::io::Write;

use crate::error::{Error, Result};
use crate::pipeline::{IDX_GRAD_ENTROPY, IDX_HIGH_FREQ_RATIO};
use crate::util::fmt_f64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Displacement {
    pub l2: f64,
    /// |change in HighFreqRatio|
    pub delta1: f64,
    /// |change in GradEntropy|
    pub delta2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Separator {
    pub w: Vec<f64>,
    pub b: f64,
}

impl Separator {
    pub fn eval(&self, z: &[f64]) -> f64 {
        self.w.iter().zip(z).map(|(a, b)| a * b).sum::<f64>() + self.b
    }
}

fn check_dims(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), actual: b.len() });
    }
    if a.len() <= IDX_GRAD_ENTROPY {
        return Err(Error::DimensionMismatch { expected: IDX_GRAD_ENTROPY + 1, actual: a.len() });
    }
    Ok(())
}

pub fn displacement(clean: &[f64], adv: &[f64]) -> Result<Displacement> {
    check_dims(clean, adv)?;
    let l2 = clean.iter().zip(adv).map(|(a, b)| (b - a) * (b - a)).sum::<f64>().sqrt();
    Ok(Displacement {
        l2,
        delta1: (adv[IDX_HIGH_FREQ_RATIO] - clean[IDX_HIGH_FREQ_RATIO]).abs(),
        delta2: (adv[IDX_GRAD_ENTROPY] - clean[IDX_GRAD_ENTROPY]).abs(),
    })
}

pub fn construct_separator(clean: &[f64], adv: &[f64]) -> Result<Separator> {
    check_dims(clean, adv)?;
    let w: Vec<f64> = clean.iter().zip(adv).map(|(a, b)| b - a).collect();
    let norm_sq: f64 = w.iter().map(|v| v * v).sum();
    if norm_sq == 0.0 {
        return Err(Error::ZeroDisplacement);
    }
    let dot: f64 = w.iter().zip(clean).map(|(a, b)| a * b).sum();
    Ok(Separator { b: -dot - 0.5 * norm_sq, w })
}

/// Per-pair diagnostic record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairDiagnostic {
    pub displacement: Displacement,
    pub f_clean: f64,
    pub f_adv: f64,
}

pub fn diagnose_pair(clean: &[f64], adv: &[f64]) -> Result<PairDiagnostic> {
    let displacement = displacement(clean, adv)?;
    let sep = construct_separator(clean, adv)?;
    Ok(PairDiagnostic { displacement, f_clean: sep.eval(clean), f_adv: sep.eval(adv) })
}

pub fn write_diagnostics_csv(rows: &[PairDiagnostic], out: &mut impl Write) -> Result<()> {
    writeln!(out, "l2,delta1,delta2,f_clean,f_adv")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            fmt_f64(r.displacement.l2),
            fmt_f64(r.displacement.delta1),
            fmt_f64(r.displacement.delta2),
            fmt_f64(r.f_clean),
            fmt_f64(r.f_adv)
        )?;
    }
    Ok(())
}

/// Ratio of the mean clean-to-adversarial distance to the mean distance
/// within each class (pooled over both classes). Values above 1 indicate the
/// displacement exceeds intra-class variation.
pub fn class_displacement_ratio(clean: &[Vec<f64>], adv: &[Vec<f64>]) -> Result<f64> {
    if clean.len() < 2 || adv.len() < 2 {
        return Err(Error::TooFewSamples { needed: 2, actual: clean.len().min(adv.len()) });
    }
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let mut inter = 0.0;
    for a in clean {
        for b in adv {
            inter += dist(a, b);
        }
    }
    inter /= (clean.len() * adv.len()) as f64;
    let mut intra = 0.0;
    let mut pairs = 0usize;
    for set in [clean, adv] {
        for i in 0..set.len() {
            for j in i + 1..set.len() {
                intra += dist(&set[i], &set[j]);
                pairs += 1;
            }
        }
    }
    intra /= pairs as f64;
    if intra == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(inter / intra)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_vectors() {
        let v = vec![0.3; 51];
        let d = displacement(&v, &v).unwrap();
        assert_eq!((d.l2, d.delta1, d.delta2), (0.0, 0.0, 0.0));
        assert!(matches!(construct_separator(&v, &v), Err(Error::ZeroDisplacement)));
    }

    #[test]
    fn single_coordinate_shift() {
        let a = vec![0.0; 51];
        let mut b = a.clone();
        b[2] = 0.3;
        let d = displacement(&a, &b).unwrap();
        assert_eq!(d.l2, 0.3);
        assert_eq!(d.delta1, 0.3);
        assert_eq!(d.delta2, 0.0);
    }

    #[test]
    fn unit_vector_closed_form() {
        let a = vec![0.0; 51];
        let mut e2 = a.clone();
        e2[2] = 1.0;
        let s = construct_separator(&a, &e2).unwrap();
        assert_eq!(s.w, e2);
        assert_eq!(s.b, -0.5);
        assert_eq!(s.eval(&a), -0.5);
        assert_eq!(s.eval(&e2), 0.5);
    }

    #[test]
    fn mismatched_lengths() {
        assert!(matches!(displacement(&[0.0; 51], &[0.0; 50]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn ratio_of_separated_clusters() {
        let clean = vec![vec![0.0, 0.0], vec![0.0, 0.1]];
        let adv = vec![vec![5.0, 0.0], vec![5.0, 0.1]];
        assert!(class_displacement_ratio(&clean, &adv).unwrap() > 10.0);
    }
}
