use crate::error::{Error, Result};

/// Mean of per-class recalls over `n_classes` classes.
pub fn balanced_accuracy(predictions: &[usize], labels: &[usize], n_classes: usize) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let mut total = vec![0usize; n_classes];
    let mut correct = vec![0usize; n_classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        if l >= n_classes {
            return Err(Error::Data(format!("label {l} outside {n_classes} classes")));
        }
        total[l] += 1;
        if p == l {
            correct[l] += 1;
        }
    }
    if let Some(c) = total.iter().position(|&t| t == 0) {
        return Err(Error::Data(format!(
            "class {c} has no samples; balanced accuracy is undefined"
        )));
    }
    let sum: f64 = correct
        .iter()
        .zip(&total)
        .map(|(&c, &t)| c as f64 / t as f64)
        .sum();
    Ok(sum / n_classes as f64)
}

pub fn mae(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.len() != targets.len() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    if targets.is_empty() {
        return Err(Error::Data("mae of an empty sample".into()));
    }
    let sum: f64 = predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t).abs())
        .sum();
    Ok(sum / targets.len() as f64)
}

/// Index of the largest entry per row; ties go to the lower class.
pub fn argmax_rows(scores: &[f64], n_classes: usize) -> Vec<usize> {
    scores
        .chunks(n_classes)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| {
                    if v > best.1 {
                        (i, v)
                    } else {
                        best
                    }
                })
                .0
        })
        .collect()
}
