use crate::error::{Error, Result};
use crate::tensorops::{FrameLabels, SeqBatch};

/// Fraction of labelled frames whose argmax prediction equals the label.
/// Ties resolve to the lowest class index.
pub fn framewise_accuracy(pred: &SeqBatch, target: &FrameLabels) -> Result<f64> {
    let (nb, nc, nt) = pred.shape();
    if target.batch() != nb || target.length() != nt {
        return Err(Error::invalid("prediction and label shapes differ"));
    }
    let (mut hits, mut total) = (0usize, 0usize);
    for b in 0..nb {
        for t in 0..nt {
            let Some(label) = target.get(b, t) else {
                continue;
            };
            let mut best = 0;
            for c in 1..nc {
                if pred.get(b, c, t) > pred.get(b, best, t) {
                    best = c;
                }
            }
            total += 1;
            hits += usize::from(best == label);
        }
    }
    if total == 0 {
        return Err(Error::invalid("accuracy over an empty mask"));
    }
    Ok(hits as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_hot(labels: &[usize], classes: usize) -> SeqBatch {
        let mut x = SeqBatch::zeros(1, classes, labels.len());
        for (t, &l) in labels.iter().enumerate() {
            x.set(0, l, t, 1.0);
        }
        x
    }

    #[test]
    fn perfect_prediction() {
        let labels = [0, 2, 1, 1, 0];
        let target = FrameLabels::new(1, 5, labels.iter().map(|&l| Some(l)).collect()).unwrap();
        assert_eq!(
            framewise_accuracy(&one_hot(&labels, 3), &target).unwrap(),
            1.0
        );
    }

    #[test]
    fn constant_prediction_on_balanced_labels() {
        let labels: Vec<usize> = (0..100).map(|i| i % 2).collect();
        let target = FrameLabels::new(1, 100, labels.iter().map(|&l| Some(l)).collect()).unwrap();
        let pred = one_hot(&[1; 100], 2);
        assert_eq!(framewise_accuracy(&pred, &target).unwrap(), 0.5);
    }

    #[test]
    fn seven_of_ten() {
        let truth = [0, 1, 1, 0, 1, 0, 0, 1, 1, 0];
        let mut guess = truth;
        for t in [1, 4, 8] {
            guess[t] = 1 - guess[t];
        }
        let target = FrameLabels::new(1, 10, truth.iter().map(|&l| Some(l)).collect()).unwrap();
        assert_eq!(
            framewise_accuracy(&one_hot(&guess, 2), &target).unwrap(),
            0.7
        );
    }

    #[test]
    fn empty_mask_is_an_error() {
        let target = FrameLabels::new(1, 3, vec![None; 3]).unwrap();
        assert!(framewise_accuracy(&SeqBatch::zeros(1, 2, 3), &target).is_err());
    }
}
