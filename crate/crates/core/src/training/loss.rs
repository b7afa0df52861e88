use crate::error::{Error, Result};
use crate::numerics::{Graph, Var};

/// Cross-entropy of `logits` (rank 1) against `label`.
pub fn task_loss(g: &mut Graph, logits: Var, label: usize) -> Result<Var> {
    g.cross_entropy(logits, label)
}

/// Value-only cross-entropy: `logsumexp(z) - z[label]`.
pub fn task_loss_value(logits: &[f64], label: usize) -> Result<f64> {
    if label >= logits.len() {
        return Err(Error::LabelRange {
            label,
            vocab: logits.len(),
        });
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    Ok(lse - logits[label])
}

/// Task losses of one sample under ground-truth, top-n and bottom-n features.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RankingTriplet {
    pub gt: f64,
    pub pos: f64,
    pub neg: f64,
}

impl RankingTriplet {
    pub fn is_finite(&self) -> bool {
        self.gt.is_finite() && self.pos.is_finite() && self.neg.is_finite()
    }
}

/// `(max(0, gt - pos), max(0, pos - neg))`.
pub fn ranking_loss(t: &RankingTriplet) -> (f64, f64) {
    ((t.gt - t.pos).max(0.0), (t.pos - t.neg).max(0.0))
}

/// Graph form of [`ranking_loss`].
pub fn ranking_graph(g: &mut Graph, gt: Var, pos: Var, neg: Var) -> Result<(Var, Var)> {
    let d1 = g.sub(gt, pos)?;
    let d2 = g.sub(pos, neg)?;
    Ok((g.relu(d1), g.relu(d2)))
}

/// `task + lambda * (rank_pos + rank_neg)`.
pub fn total_loss(task: f64, rank_pos: f64, rank_neg: f64, lambda: f64) -> f64 {
    task + lambda * (rank_pos + rank_neg)
}

pub fn total_graph(g: &mut Graph, task: Var, rank_pos: Var, rank_neg: Var, lambda: f64) -> Result<Var> {
    let r = g.add(rank_pos, rank_neg)?;
    let r = g.scale(r, lambda);
    g.add(task, r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    #[test]
    fn saturated_and_uniform_logits() {
        assert!(task_loss_value(&[50.0, 0.0, 0.0], 0).unwrap() < 1e-20);
        let l = task_loss_value(&[0.3; 4], 2).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-15);
        assert!((l - 1.3863).abs() < 1e-4);
    }

    #[test]
    fn graph_matches_direct_formula() {
        let z = vec![0.3, -1.1, 2.4, 0.05, -0.7];
        let mut g = Graph::new();
        let v = g.constant(Tensor::vector(z.clone()));
        let l = task_loss(&mut g, v, 3).unwrap();
        let direct = -(z[3].exp() / z.iter().map(|x| x.exp()).sum::<f64>()).ln();
        assert!((g.value(l).item().unwrap() - direct).abs() < 1e-12);
        assert!((task_loss_value(&z, 3).unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_label() {
        assert!(matches!(task_loss_value(&[0.0, 1.0], 2), Err(Error::LabelRange { .. })));
        let mut g = Graph::new();
        let v = g.constant(Tensor::vector(vec![0.0, 1.0]));
        assert!(matches!(task_loss(&mut g, v, 5), Err(Error::LabelRange { .. })));
    }

    #[test]
    fn hinge_examples() {
        let h = |gt, pos, neg| ranking_loss(&RankingTriplet { gt, pos, neg });
        assert_eq!(h(0.5, 0.7, 1.0), (0.0, 0.0));
        let (a, b) = h(0.9, 0.4, 1.0);
        assert!((a - 0.5).abs() < 1e-15 && b == 0.0);
        let (a, b) = h(0.2, 0.5, 0.3);
        assert!(a == 0.0 && (b - 0.2).abs() < 1e-15);
    }

    #[test]
    fn total_examples() {
        assert_eq!(total_loss(0.83, 0.4, 0.1, 0.0), 0.83);
        assert!((total_loss(1.0, 0.5, 0.2, 0.5) - 1.35).abs() < 1e-15);
        let mut g = Graph::new();
        let t = g.constant(Tensor::scalar(1.0));
        let p = g.constant(Tensor::scalar(0.5));
        let n = g.constant(Tensor::scalar(0.2));
        let v = total_graph(&mut g, t, p, n, 0.5).unwrap();
        assert_eq!(g.value(v).item().unwrap(), total_loss(1.0, 0.5, 0.2, 0.5));
    }
}
