/// Kappa straight from the 2x2 confusion table.
pub fn kappa_oracle(a: &[bool], b: &[bool]) -> f64 {
    let mut m = [[0f64; 2]; 2];
    for (x, y) in a.iter().zip(b) {
        m[*x as usize][*y as usize] += 1.0;
    }
    let n = a.len() as f64;
    let po = (m[0][0] + m[1][1]) / n;
    let pe = ((m[1][0] + m[1][1]) * (m[0][1] + m[1][1]) + (m[0][0] + m[0][1]) * (m[0][0] + m[1][0])) / (n * n);
    if pe == 1.0 {
        if po == 1.0 { 1.0 } else { 0.0 }
    } else {
        (po - pe) / (1.0 - pe)
    }
}

/// Macro-F1 from a full confusion matrix over `k` classes.
pub fn macro_f1_oracle(gold: &[usize], pred: &[usize], k: usize) -> f64 {
    let mut cm = vec![vec![0f64; k]; k];
    for (g, p) in gold.iter().zip(pred) {
        cm[*g][*p] += 1.0;
    }
    let mut sum = 0.0;
    let mut used = 0;
    for c in 0..k {
        let tp = cm[c][c];
        let col: f64 = (0..k).map(|r| cm[r][c]).sum();
        let row: f64 = cm[c].iter().sum();
        if row == 0.0 && col == 0.0 {
            continue;
        }
        used += 1;
        let p = if col > 0.0 { tp / col } else { 0.0 };
        let r = if row > 0.0 { tp / row } else { 0.0 };
        sum += if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    }
    sum / used as f64
}
