//! Point-level training objectives with analytic gradients.
//!
//! Every loss returns its value together with the gradient with respect to the
//! predicted quantities; targets are treated as data.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::KdIndex;
use crate::skeleton::SkinningWeights;

mod auction;

pub use auction::{emd_match, emd_match_with, AuctionConfig, BidSearch};

/// Loss value and gradient with respect to each predicted 3-vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTerm {
    pub value: f64,
    pub grad: Vec<Vector3<f64>>,
}

impl LossTerm {
    pub fn grad_flat(&self) -> Vec<f64> {
        self.grad.iter().flat_map(|g| [g.x, g.y, g.z]).collect()
    }
}

/// Symmetric squared Chamfer distance: mean over `x_d` of the squared distance to
/// the nearest `x_p` plus the same from `x_p` to `x_d`.
pub fn chamfer(x_d: &[Vector3<f64>], x_p: &[Vector3<f64>]) -> Result<LossTerm> {
    if x_d.is_empty() || x_p.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let (nd, np) = (x_d.len() as f64, x_p.len() as f64);
    let target_index = KdIndex::new(x_p.to_vec());
    let pred_index = KdIndex::new(x_d.to_vec());
    let mut value = 0.0;
    let mut grad = vec![Vector3::zeros(); x_d.len()];
    for (i, d) in x_d.iter().enumerate() {
        let (j, _) = target_index.nearest(d);
        let diff = d - x_p[j];
        value += diff.norm_squared() / nd;
        grad[i] += 2.0 * diff / nd;
    }
    for p in x_p {
        let (i, _) = pred_index.nearest(p);
        let diff = x_d[i] - p;
        value += diff.norm_squared() / np;
        grad[i] += 2.0 * diff / np;
    }
    Ok(LossTerm { value, grad })
}

/// A bijection `x_d[i] -> x_p[assignment[i]]` and its mean distance.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub assignment: Vec<usize>,
    pub cost: f64,
}

impl MatchResult {
    pub fn is_permutation(&self) -> bool {
        let mut seen = vec![false; self.assignment.len()];
        self.assignment
            .iter()
            .all(|&j| j < seen.len() && !std::mem::replace(&mut seen[j], true))
    }
}

fn check_match(m: &MatchResult, n_pred: usize, n_target: usize) -> Result<()> {
    if m.assignment.len() != n_pred || n_pred != n_target {
        return Err(Error::SizeMismatch(m.assignment.len(), n_target));
    }
    if let Some(&j) = m.assignment.iter().find(|&&j| j >= n_target) {
        return Err(Error::DimensionMismatch(format!("matched index {j} outside {n_target} targets")));
    }
    Ok(())
}

/// Mean distance under a frozen matching; the gradient is the unit direction away
/// from the matched target, scaled by `1/n`.
pub fn emd_loss(m: &MatchResult, x_d: &[Vector3<f64>], x_p: &[Vector3<f64>]) -> Result<LossTerm> {
    check_match(m, x_d.len(), x_p.len())?;
    let n = x_d.len() as f64;
    let mut value = 0.0;
    let grad = x_d
        .iter()
        .zip(&m.assignment)
        .map(|(d, &j)| {
            let diff = d - x_p[j];
            let len = diff.norm();
            value += len / n;
            if len > 0.0 {
                diff / (len * n)
            } else {
                Vector3::zeros()
            }
        })
        .collect();
    Ok(LossTerm { value, grad })
}

/// Mean `1 - cos(n_d[i], n_p[assignment[i]])`.
pub fn normal_loss(n_d: &[Vector3<f64>], m: &MatchResult, n_p: &[Vector3<f64>]) -> Result<LossTerm> {
    check_match(m, n_d.len(), n_p.len())?;
    let n = n_d.len() as f64;
    let mut value = 0.0;
    let grad = n_d
        .iter()
        .zip(&m.assignment)
        .map(|(a, &j)| {
            let b = n_p[j];
            let (la, lb) = (a.norm(), b.norm());
            let cos = a.dot(&b) / (la * lb);
            value += (1.0 - cos) / n;
            -(b / lb - cos * a / la) / (la * n)
        })
        .collect();
    Ok(LossTerm { value, grad })
}

/// Weight and offset regularizer with gradients for both inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct RegLoss {
    pub value: f64,
    pub grad_weights: Vec<f64>,
    pub grad_delta: Vec<Vector3<f64>>,
}

/// `(1/m) sum ||w - w*||^2` over registered vertices plus `(1/n) sum ||delta||^2`.
pub fn reg_loss(predicted: &[f64], reference: &SkinningWeights, delta: &[Vector3<f64>]) -> Result<RegLoss> {
    if reference.is_empty() {
        return Err(Error::MissingRegistration);
    }
    if predicted.len() != reference.as_slice().len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predicted weights for {} reference",
            predicted.len(),
            reference.as_slice().len()
        )));
    }
    let m = reference.len() as f64;
    let mut value = 0.0;
    let grad_weights = predicted
        .iter()
        .zip(reference.as_slice())
        .map(|(w, r)| {
            value += (w - r).powi(2) / m;
            2.0 * (w - r) / m
        })
        .collect();
    let n = delta.len().max(1) as f64;
    let grad_delta = delta
        .iter()
        .map(|d| {
            value += d.norm_squared() / n;
            2.0 * d / n
        })
        .collect();
    Ok(RegLoss {
        value,
        grad_weights,
        grad_delta,
    })
}

/// Mean squared RGB error.
pub fn color_loss(predicted: &[[f64; 3]], target: &[[f64; 3]]) -> Result<(f64, Vec<[f64; 3]>)> {
    if predicted.len() != target.len() {
        return Err(Error::SizeMismatch(predicted.len(), target.len()));
    }
    if predicted.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let n = predicted.len() as f64;
    let mut value = 0.0;
    let grad = predicted
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let mut g = [0.0; 3];
            for c in 0..3 {
                value += (p[c] - t[c]).powi(2) / n;
                g[c] = 2.0 * (p[c] - t[c]) / n;
            }
            g
        })
        .collect();
    Ok((value, grad))
}

fn enabled() -> bool {
    true
}

/// Per-term multipliers and switches for the total objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub chamfer: f64,
    pub emd: f64,
    pub normal: f64,
    pub reg: f64,
    pub color: f64,
    #[serde(default = "enabled")]
    pub use_chamfer: bool,
    #[serde(default = "enabled")]
    pub use_emd: bool,
    #[serde(default = "enabled")]
    pub use_normal: bool,
    #[serde(default = "enabled")]
    pub use_reg: bool,
    #[serde(default = "enabled")]
    pub use_color: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            chamfer: 5000.0,
            emd: 5000.0,
            normal: 1.0,
            reg: 100.0,
            color: 10.0,
            use_chamfer: true,
            use_emd: true,
            use_normal: true,
            use_reg: true,
            use_color: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Chamfer,
    Emd,
    Normal,
    Reg,
    Color,
}

impl LossKind {
    pub const ALL: [LossKind; 5] = [LossKind::Chamfer, LossKind::Emd, LossKind::Normal, LossKind::Reg, LossKind::Color];
}

impl LossWeights {
    /// Multiplier of a term, 0 when disabled.
    pub fn effective(&self, kind: LossKind) -> f64 {
        let (w, on) = match kind {
            LossKind::Chamfer => (self.chamfer, self.use_chamfer),
            LossKind::Emd => (self.emd, self.use_emd),
            LossKind::Normal => (self.normal, self.use_normal),
            LossKind::Reg => (self.reg, self.use_reg),
            LossKind::Color => (self.color, self.use_color),
        };
        if on {
            w
        } else {
            0.0
        }
    }

    pub fn disable(mut self, kind: LossKind) -> Self {
        match kind {
            LossKind::Chamfer => self.use_chamfer = false,
            LossKind::Emd => self.use_emd = false,
            LossKind::Normal => self.use_normal = false,
            LossKind::Reg => self.use_reg = false,
            LossKind::Color => self.use_color = false,
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.chamfer, self.emd, self.normal, self.reg, self.color];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config(format!("loss weights must be nonnegative: {all:?}")));
        }
        Ok(())
    }
}

/// Unweighted term values.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    pub chamfer: f64,
    pub emd: f64,
    pub normal: f64,
    pub reg: f64,
    pub color: f64,
}

impl LossValues {
    pub fn get(&self, kind: LossKind) -> f64 {
        match kind {
            LossKind::Chamfer => self.chamfer,
            LossKind::Emd => self.emd,
            LossKind::Normal => self.normal,
            LossKind::Reg => self.reg,
            LossKind::Color => self.color,
        }
    }
}

/// `sum_k lambda_k L_k` over enabled terms.
pub fn total_loss(values: &LossValues, weights: &LossWeights) -> f64 {
    LossKind::ALL
        .iter()
        .map(|&k| {
            let w = weights.effective(k);
            if w == 0.0 {
                0.0
            } else {
                w * values.get(k)
            }
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vector3<f64>> {
        (0..n)
            .map(|_| Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect()
    }

    fn fd_check(x: &[Vector3<f64>], grad: &[Vector3<f64>], f: impl Fn(&[Vector3<f64>]) -> f64, tol: f64) {
        let h = 1e-6;
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..x.len() {
            for c in 0..3 {
                let mut p = x.to_vec();
                p[i][c] += h;
                let mut m = x.to_vec();
                m[i][c] -= h;
                let fd = (f(&p) - f(&m)) / (2.0 * h);
                num += (fd - grad[i][c]).powi(2);
                den += fd * fd;
            }
        }
        assert!((num / den.max(1e-300)).sqrt() < tol, "rel err {}", (num / den).sqrt());
    }

    #[test]
    fn chamfer_closed_forms() {
        let a = vec![Vector3::zeros()];
        let b = vec![Vector3::new(1.0, 0.0, 0.0)];
        assert_eq!(chamfer(&a, &b).unwrap().value, 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = cloud(&mut rng, 50);
        assert_eq!(chamfer(&x, &x).unwrap().value, 0.0);
        assert!(matches!(chamfer(&[], &x), Err(Error::EmptyCloud)));
    }

    #[test]
    fn chamfer_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = cloud(&mut rng, 30);
        let y = cloud(&mut rng, 40);
        let t = chamfer(&x, &y).unwrap();
        fd_check(&x, &t.grad, |p| chamfer(p, &y).unwrap().value, 1e-6);
    }

    #[test]
    fn chamfer_scales_quadratically() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = cloud(&mut rng, 40);
        let y = cloud(&mut rng, 40);
        let s = 2.5;
        let xs: Vec<_> = x.iter().map(|p| p * s).collect();
        let ys: Vec<_> = y.iter().map(|p| p * s).collect();
        let (a, b) = (chamfer(&x, &y).unwrap().value, chamfer(&xs, &ys).unwrap().value);
        assert!((b - s * s * a).abs() < 1e-9 * b);
    }

    fn brute_force_emd(x: &[Vector3<f64>], y: &[Vector3<f64>]) -> f64 {
        fn rec(i: usize, used: &mut Vec<bool>, x: &[Vector3<f64>], y: &[Vector3<f64>], acc: f64, best: &mut f64) {
            if acc >= *best {
                return;
            }
            if i == x.len() {
                *best = acc;
                return;
            }
            for j in 0..y.len() {
                if !used[j] {
                    used[j] = true;
                    rec(i + 1, used, x, y, acc + (x[i] - y[j]).norm(), best);
                    used[j] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        rec(0, &mut vec![false; y.len()], x, y, 0.0, &mut best);
        best / x.len() as f64
    }

    #[test]
    fn auction_matches_exhaustive_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let x = cloud(&mut rng, 7);
            let y = cloud(&mut rng, 7);
            let m = emd_match(&x, &y).unwrap();
            assert!(m.is_permutation());
            let opt = brute_force_emd(&x, &y);
            assert!(m.cost <= opt * 1.01 + 1e-12, "{} vs {opt}", m.cost);
        }
    }

    #[test]
    fn auction_trivial_cases() {
        let x = vec![Vector3::zeros()];
        let y = vec![Vector3::new(0.0, 1.0, 0.0)];
        assert_eq!(emd_match(&x, &y).unwrap().cost, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = cloud(&mut rng, 40);
        let m = emd_match(&a, &a).unwrap();
        assert_eq!(m.cost, 0.0);
        assert!(matches!(emd_match(&a, &a[..3]), Err(Error::SizeMismatch(40, 3))));
    }

    #[test]
    fn indexed_auction_agrees_with_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for shift in [0.02, 0.5] {
            let x = cloud(&mut rng, 300);
            let y: Vec<_> = x.iter().map(|p| p + Vector3::new(rng.gen_range(-0.05..0.05), shift, 0.0)).collect();
            let scan = emd_match(&x, &y).unwrap();
            let cfg = AuctionConfig {
                tolerance: AuctionConfig::default().tolerance,
                ..AuctionConfig::indexed()
            };
            let tree = emd_match_with(&x, &y, &cfg).unwrap();
            assert!(tree.is_permutation());
            assert!((tree.cost - scan.cost).abs() <= 0.005 * scan.cost, "{} vs {}", tree.cost, scan.cost);
        }
    }

    #[test]
    fn training_tolerance_stays_near_optimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        // close clouds are the training regime; a large rigid offset loosens the bound
        for (shift, slack) in [(0.0, 1e-3), (0.02, 1e-3), (0.5, 0.06)] {
            let x = cloud(&mut rng, 500);
            let y: Vec<_> = x.iter().map(|p| p + Vector3::new(rng.gen_range(-0.05..0.05), shift, 0.0)).collect();
            let exact = emd_match(&x, &y).unwrap().cost;
            let coarse = emd_match_with(&x, &y, &AuctionConfig::indexed()).unwrap();
            assert!(coarse.is_permutation());
            assert!(coarse.cost <= (1.0 + slack) * exact, "{} vs {exact}", coarse.cost);
        }
    }

    #[test]
    fn emd_scales_linearly() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = cloud(&mut rng, 6);
        let y = cloud(&mut rng, 6);
        let xs: Vec<_> = x.iter().map(|p| p * 3.0).collect();
        let ys: Vec<_> = y.iter().map(|p| p * 3.0).collect();
        assert!((brute_force_emd(&xs, &ys) - 3.0 * brute_force_emd(&x, &y)).abs() < 1e-12);
    }

    #[test]
    fn emd_loss_gradients() {
        let x = vec![Vector3::zeros()];
        let y = vec![Vector3::new(0.0, 0.0, 2.0)];
        let m = MatchResult { assignment: vec![0], cost: 2.0 };
        let t = emd_loss(&m, &x, &y).unwrap();
        assert_eq!(t.value, 2.0);
        assert_eq!(t.grad[0], Vector3::new(0.0, 0.0, -1.0));
        let same = emd_loss(&m, &y, &y).unwrap();
        assert_eq!(same.grad[0], Vector3::zeros());

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = cloud(&mut rng, 16);
        let y = cloud(&mut rng, 16);
        let m = emd_match(&x, &y).unwrap();
        let t = emd_loss(&m, &x, &y).unwrap();
        assert!((t.value - m.cost).abs() < 1e-12);
        fd_check(&x, &t.grad, |p| emd_loss(&m, p, &y).unwrap().value, 1e-6);
    }

    #[test]
    fn normal_loss_values_and_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a: Vec<_> = cloud(&mut rng, 32).into_iter().map(|v| v.normalize()).collect();
        let b: Vec<_> = cloud(&mut rng, 32).into_iter().map(|v| v.normalize()).collect();
        let id = MatchResult {
            assignment: (0..32).collect(),
            cost: 0.0,
        };
        assert!(normal_loss(&a, &id, &a).unwrap().value.abs() < 1e-15);
        let neg: Vec<_> = a.iter().map(|v| -v).collect();
        assert!((normal_loss(&a, &id, &neg).unwrap().value - 2.0).abs() < 1e-15);
        let direct: f64 = a.iter().zip(&b).map(|(x, y)| 1.0 - x.dot(y)).sum::<f64>() / 32.0;
        let t = normal_loss(&a, &id, &b).unwrap();
        assert!((t.value - direct).abs() < 1e-12);
        fd_check(&a, &t.grad, |p| normal_loss(p, &id, &b).unwrap().value, 1e-6);
    }

    #[test]
    fn reg_loss_values_and_gradient() {
        let w = SkinningWeights::new(2, vec![1.0, 0.0, 0.25, 0.75]).unwrap();
        let delta = vec![Vector3::new(0.1, 0.0, 0.0); 5];
        let r = reg_loss(w.as_slice(), &w, &delta).unwrap();
        assert!((r.value - 0.01).abs() < 1e-15);
        assert_eq!(reg_loss(w.as_slice(), &w, &[Vector3::zeros()]).unwrap().value, 0.0);
        let empty = SkinningWeights::new(2, vec![]).unwrap();
        assert!(matches!(reg_loss(&[], &empty, &delta), Err(Error::MissingRegistration)));

        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let pred: Vec<f64> = (0..4).map(|_| rng.gen_range(0.0..1.0)).collect();
        let d = cloud(&mut rng, 5);
        let r = reg_loss(&pred, &w, &d).unwrap();
        fd_check(&d, &r.grad_delta, |p| reg_loss(&pred, &w, p).unwrap().value, 1e-6);
        let h = 1e-6;
        for k in 0..4 {
            let mut p = pred.clone();
            p[k] += h;
            let mut m = pred.clone();
            m[k] -= h;
            let fd = (reg_loss(&p, &w, &d).unwrap().value - reg_loss(&m, &w, &d).unwrap().value) / (2.0 * h);
            assert!((fd - r.grad_weights[k]).abs() < 1e-6 * fd.abs().max(1.0));
        }
    }

    #[test]
    fn total_loss_weighting() {
        let w = LossWeights::default();
        assert_eq!(total_loss(&LossValues::default(), &w), 0.0);
        let only = LossWeights::default()
            .disable(LossKind::Emd)
            .disable(LossKind::Normal)
            .disable(LossKind::Reg)
            .disable(LossKind::Color);
        let v = LossValues {
            chamfer: 2.0,
            emd: 3.0,
            normal: 0.5,
            reg: 0.1,
            color: 0.2,
        };
        assert_eq!(total_loss(&v, &only), 10000.0);
        let hand = 5000.0 * 2.0 + 5000.0 * 3.0 + 0.5 + 100.0 * 0.1 + 10.0 * 0.2;
        assert!((total_loss(&v, &w) - hand).abs() < 1e-9);
        assert!(LossWeights { reg: -1.0, ..w }.validate().is_err());
    }

    #[test]
    fn color_loss_gradient() {
        let p = [[0.2, 0.5, 0.9], [0.0, 1.0, 0.3]];
        let t = [[0.1, 0.5, 1.0], [0.0, 0.0, 0.3]];
        let (v, g) = color_loss(&p, &t).unwrap();
        assert!((v - (0.01 + 0.01 + 1.0) / 2.0).abs() < 1e-15);
        assert!((g[0][0] - 0.1).abs() < 1e-15);
    }
}
