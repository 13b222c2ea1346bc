use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};

/// A task head recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct BoundHead {
    /// `[f × |Y|]`
    pub weight: Var,
    /// `[|Y|]`
    pub bias: Var,
}

/// Input ids and per-position targets for next-item training on one
/// padded window `w`: the input is `w` shifted right by one with a pad in
/// front, the target at `t` is `w[t]`. Positions whose input or target is
/// the pad id get no target.
pub fn shift_for_next_item(window: &[usize]) -> (Vec<usize>, Vec<Option<usize>>) {
    let mut input = Vec::with_capacity(window.len());
    input.push(0);
    input.extend_from_slice(&window[..window.len().saturating_sub(1)]);
    let targets = input
        .iter()
        .zip(window)
        .map(|(&x, &y)| (x != 0 && y != 0).then_some(y))
        .collect();
    (input, targets)
}

/// Mean next-item negative log-likelihood for one sequence whose final
/// hidden states are `e: [n × f]`. Each position's softmax runs over its
/// own target plus the shared `sampled` ids. Returns `None` when no
/// position has a target.
pub fn autoregressive_loss(
    tape: &mut Tape<'_>,
    e: Var,
    head: BoundHead,
    targets: &[Option<usize>],
    sampled: &[usize],
) -> Result<Option<Var>> {
    let (n, _) = tape.value(e).dims2("autoregressive_loss")?;
    if targets.len() != n {
        return Err(Error::dim("autoregressive_loss", "positions", n, targets.len()));
    }
    if targets.iter().all(Option::is_none) {
        return Ok(None);
    }
    let columns: Vec<usize> = sampled
        .iter()
        .copied()
        .chain(targets.iter().flatten().copied())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let position = |id: usize| columns.binary_search(&id).expect("column present");
    let sampled_cols: Vec<usize> = sampled.iter().map(|&s| position(s)).collect();
    let c = columns.len();
    let mut allowed = vec![false; n * c];
    let mut local = Vec::with_capacity(n);
    for (r, t) in targets.iter().enumerate() {
        match t {
            Some(id) => {
                let col = position(*id);
                for &s in &sampled_cols {
                    allowed[r * c + s] = true;
                }
                allowed[r * c + col] = true;
                local.push(Some(col));
            }
            None => local.push(None),
        }
    }
    let w = tape.gather_columns(head.weight, &columns)?;
    let b = tape.gather(head.bias, &columns)?;
    let logits = tape.matmul(e, w)?;
    let logits = tape.add_row_bias(logits, b)?;
    tape.softmax_cross_entropy(logits, &local, Some(&allowed)).map(Some)
}

/// `−log σ(s⁺ − s⁻) + l2 · (‖W[:, pos]‖² + ‖W[:, neg]‖²)` for a user
/// vector `g: [1 × f]`.
pub fn bpr_loss(tape: &mut Tape<'_>, g: Var, head: BoundHead, positive: usize, negative: usize, l2: f64) -> Result<Var> {
    if positive == negative {
        return Err(Error::Contract(format!("positive and negative are both {positive}")));
    }
    let ids = [positive, negative];
    let w = tape.gather_columns(head.weight, &ids)?;
    let b = tape.gather(head.bias, &ids)?;
    let scores = tape.matmul(g, w)?;
    let scores = tape.add_row_bias(scores, b)?;
    let diff = tape.constant(Tensor::new(vec![2, 1], vec![1.0, -1.0])?);
    let margin = tape.matmul(scores, diff)?;
    let ls = tape.log_sigmoid(margin);
    let ls = tape.sum(ls);
    let nll = tape.scale(ls, -1.0);
    if l2 == 0.0 {
        return Ok(nll);
    }
    let reg = tape.sum_squares(w);
    let reg = tape.scale(reg, l2);
    tape.add(nll, reg)
}

/// Softmax negative log-likelihood of `label` over the whole label space
/// plus `l2 · ‖W‖²`.
pub fn cross_entropy_loss(tape: &mut Tape<'_>, g: Var, head: BoundHead, label: usize, l2: f64) -> Result<Var> {
    let labels = tape.value(head.bias).len();
    if label >= labels {
        return Err(Error::Data(format!("label {label} outside a label space of {labels}")));
    }
    let nll = class_nll(tape, g, head, label)?;
    if l2 == 0.0 {
        return Ok(nll);
    }
    let reg = weight_penalty(tape, head, l2);
    tape.add(nll, reg)
}

/// Unregularised softmax negative log-likelihood of `label`.
pub(crate) fn class_nll(tape: &mut Tape<'_>, g: Var, head: BoundHead, label: usize) -> Result<Var> {
    let logits = tape.matmul(g, head.weight)?;
    let logits = tape.add_row_bias(logits, head.bias)?;
    tape.softmax_cross_entropy(logits, &[Some(label)], None)
}

/// `l2 · ‖W‖²` of a head.
pub(crate) fn weight_penalty(tape: &mut Tape<'_>, head: BoundHead, l2: f64) -> Var {
    let reg = tape.sum_squares(head.weight);
    tape.scale(reg, l2)
}

/// Mean of scalar terms.
pub(crate) fn mean(tape: &mut Tape<'_>, terms: &[Var]) -> Result<Var> {
    let total = tape.add_all(terms)?;
    Ok(tape.scale(total, 1.0 / terms.len() as f64))
}

#[cfg(test)]
fn row_input<'a>(tape: &mut Tape<'a>, g: &[f64]) -> Var {
    tape.constant(Tensor::new(vec![1, g.len()], g.to_vec()).expect("row"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn head(tape: &mut Tape<'_>, w: Vec<Vec<f64>>, b: Vec<f64>) -> BoundHead {
        BoundHead {
            weight: tape.input(Tensor::from_rows(&w).unwrap()),
            bias: tape.input(Tensor::vector(b)),
        }
    }

    #[test]
    fn shift_excludes_pad_positions() {
        let (input, targets) = shift_for_next_item(&[0, 0, 5, 6, 7]);
        assert_eq!(input, vec![0, 0, 0, 5, 6]);
        assert_eq!(targets, vec![None, None, None, Some(6), Some(7)]);
    }

    #[test]
    fn single_candidate_has_zero_loss() {
        let mut tape = Tape::new();
        let e = tape.input(Tensor::from_rows(&[vec![0.3, -0.2]]).unwrap());
        let h = head(&mut tape, vec![vec![0.0, 1.0], vec![0.0, 2.0]], vec![0.0, 0.5]);
        let loss = autoregressive_loss(&mut tape, e, h, &[Some(1)], &[]).unwrap().unwrap();
        assert_eq!(tape.value(loss).data()[0], 0.0);
    }

    #[test]
    fn uniform_scores_give_log_candidates() {
        let mut tape = Tape::new();
        let e = tape.input(Tensor::from_rows(&[vec![1.0, 1.0], vec![0.5, 0.5]]).unwrap());
        let h = head(&mut tape, vec![vec![0.0; 5], vec![0.0; 5]], vec![0.0; 5]);
        let loss = autoregressive_loss(&mut tape, e, h, &[Some(1), Some(2)], &[3, 4]).unwrap().unwrap();
        assert!((tape.value(loss).data()[0] - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn all_pad_sequence_is_skipped() {
        let mut tape = Tape::new();
        let e = tape.input(Tensor::from_rows(&[vec![1.0]]).unwrap());
        let h = head(&mut tape, vec![vec![0.0, 0.0]], vec![0.0, 0.0]);
        assert!(autoregressive_loss(&mut tape, e, h, &[None], &[1]).unwrap().is_none());
    }

    #[test]
    fn equal_scores_give_log_two() {
        let mut tape = Tape::new();
        let g = row_input(&mut tape, &[1.0, 2.0]);
        let h = head(&mut tape, vec![vec![1.0, 1.0], vec![0.5, 0.5]], vec![0.0, 0.0]);
        let loss = bpr_loss(&mut tape, g, h, 0, 1, 0.0).unwrap();
        assert!((tape.value(loss).data()[0] - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn bpr_regulariser_uses_the_two_columns() {
        let mut tape = Tape::new();
        let g = row_input(&mut tape, &[0.0]);
        let h = head(&mut tape, vec![vec![1.0, 2.0, 10.0]], vec![0.0, 0.0, 0.0]);
        let loss = bpr_loss(&mut tape, g, h, 0, 1, 0.5).unwrap();
        let want = 2f64.ln() + 0.5 * (1.0 + 4.0);
        assert!((tape.value(loss).data()[0] - want).abs() < 1e-12);
    }

    #[test]
    fn identical_pair_is_rejected() {
        let mut tape = Tape::new();
        let g = row_input(&mut tape, &[0.0]);
        let h = head(&mut tape, vec![vec![1.0, 2.0]], vec![0.0, 0.0]);
        assert!(bpr_loss(&mut tape, g, h, 1, 1, 0.0).is_err());
    }

    #[test]
    fn one_class_leaves_only_the_regulariser() {
        let mut tape = Tape::new();
        let g = row_input(&mut tape, &[0.4, 0.1]);
        let h = head(&mut tape, vec![vec![2.0], vec![1.0]], vec![0.3]);
        let loss = cross_entropy_loss(&mut tape, g, h, 0, 0.1).unwrap();
        assert!((tape.value(loss).data()[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn label_out_of_range_is_a_data_error() {
        let mut tape = Tape::new();
        let g = row_input(&mut tape, &[0.4]);
        let h = head(&mut tape, vec![vec![2.0, 1.0]], vec![0.0, 0.0]);
        assert!(matches!(cross_entropy_loss(&mut tape, g, h, 2, 0.0), Err(Error::Data(_))));
    }
}
