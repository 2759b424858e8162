//! Literal reference implementations of the evaluation metrics, written
//! pixel by pixel without sharing code with the library.

use ndarray::Array2;

const EPS: f64 = f64::EPSILON;

fn ind(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// Dice, IoU, specificity and MAE from set cardinalities.
pub fn basic(prob: &Array2<f64>, gt: &Array2<bool>, threshold: f64) -> [f64; 4] {
    let (mut inter, mut p, mut g, mut neg, mut true_neg, mut abs_err) =
        (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for (&v, &t) in prob.iter().zip(gt.iter()) {
        let pred = v > threshold;
        inter += ind(pred && t);
        p += ind(pred);
        g += ind(t);
        neg += ind(!t);
        true_neg += ind(!pred && !t);
        abs_err += (v - ind(t)).abs();
    }
    let union = p + g - inter;
    let dice = if p + g == 0.0 {
        1.0
    } else {
        2.0 * inter / (p + g)
    };
    let iou = if union == 0.0 { 1.0 } else { inter / union };
    let spec = if neg == 0.0 { 1.0 } else { true_neg / neg };
    [dice, iou, spec, abs_err / prob.len() as f64]
}

/// Weighted F-measure (beta = 1): exhaustive nearest-foreground search,
/// explicit 7x7 Gaussian (sigma 5, zero padding), distance-decay weights.
pub fn weighted_f(prob: &Array2<f64>, gt: &Array2<bool>) -> f64 {
    let (h, w) = gt.dim();
    let fg: Vec<(usize, usize)> = gt
        .indexed_iter()
        .filter(|(_, &v)| v)
        .map(|(i, _)| i)
        .collect();
    if fg.is_empty() {
        return ind(prob.iter().all(|&v| v == 0.0));
    }
    let e = Array2::from_shape_fn((h, w), |(r, c)| (prob[[r, c]] - ind(gt[[r, c]])).abs());
    let mut dist = Array2::zeros((h, w));
    let mut et = e.clone();
    for r in 0..h {
        for c in 0..w {
            if gt[[r, c]] {
                continue;
            }
            let mut best = (f64::INFINITY, (0, 0));
            for &(fr, fc) in &fg {
                let d = ((fr as f64 - r as f64).powi(2) + (fc as f64 - c as f64).powi(2)).sqrt();
                if d < best.0 {
                    best = (d, (fr, fc));
                }
            }
            dist[[r, c]] = best.0;
            et[[r, c]] = e[best.1];
        }
    }
    let sigma = 5.0f64;
    let mut kernel = [[0.0f64; 7]; 7];
    let mut ksum = 0.0;
    for (i, row) in kernel.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (dy, dx) = (i as f64 - 3.0, j as f64 - 3.0);
            *v = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
            ksum += *v;
        }
    }
    let mut ea = Array2::<f64>::zeros((h, w));
    for r in 0..h as isize {
        for c in 0..w as isize {
            let mut acc = 0.0;
            for dy in -3isize..=3 {
                for dx in -3isize..=3 {
                    let (rr, cc) = (r + dy, c + dx);
                    if rr >= 0 && cc >= 0 && rr < h as isize && cc < w as isize {
                        acc += kernel[(dy + 3) as usize][(dx + 3) as usize] / ksum
                            * et[[rr as usize, cc as usize]];
                    }
                }
            }
            ea[[r as usize, c as usize]] = acc;
        }
    }
    let (mut fg_err, mut fp, mut n_fg) = (0.0, 0.0, 0.0);
    for r in 0..h {
        for c in 0..w {
            if gt[[r, c]] {
                fg_err += e[[r, c]].min(ea[[r, c]]);
                n_fg += 1.0;
            } else {
                let b = 2.0 - ((0.5f64).ln() / 5.0 * dist[[r, c]]).exp();
                fp += e[[r, c]] * b;
            }
        }
    }
    let tp = n_fg - fg_err;
    let recall = 1.0 - fg_err / n_fg;
    let precision = tp / (EPS + tp + fp);
    (2.0 * recall * precision / (EPS + recall + precision)).clamp(0.0, 1.0)
}

fn object(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let x = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - x) * (v - x)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    2.0 * x / (x * x + 1.0 + sd + EPS)
}

fn ssim(p: &[f64], g: &[f64]) -> f64 {
    let n = p.len() as f64;
    let x = p.iter().sum::<f64>() / n;
    let y = g.iter().sum::<f64>() / n;
    let (mut sx, mut sy, mut sxy) = (0.0, 0.0, 0.0);
    for (a, b) in p.iter().zip(g) {
        sx += (a - x) * (a - x);
        sy += (b - y) * (b - y);
        sxy += (a - x) * (b - y);
    }
    let d = n - 1.0 + EPS;
    let (sx, sy, sxy) = (sx / d, sy / d, sxy / d);
    let alpha = 4.0 * x * y * sxy;
    let beta = (x * x + y * y) * (sx + sy);
    if alpha != 0.0 {
        alpha / (beta + EPS)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Structure measure with object and four-quadrant region terms.
pub fn s_measure(prob: &Array2<f64>, gt: &Array2<bool>, alpha: f64) -> f64 {
    let (h, w) = gt.dim();
    let n = (h * w) as f64;
    let y_mean = gt.iter().map(|&v| ind(v)).sum::<f64>() / n;
    let p_mean = prob.sum() / n;
    if y_mean == 0.0 {
        return 1.0 - p_mean;
    }
    if y_mean == 1.0 {
        return p_mean;
    }
    let fg: Vec<f64> = prob
        .iter()
        .zip(gt.iter())
        .filter(|(_, &g)| g)
        .map(|(&p, _)| p)
        .collect();
    let bg: Vec<f64> = prob
        .iter()
        .zip(gt.iter())
        .filter(|(_, &g)| !g)
        .map(|(&p, _)| 1.0 - p)
        .collect();
    let s_obj = y_mean * object(&fg) + (1.0 - y_mean) * object(&bg);

    let (mut row_sum, mut col_sum, mut count) = (0.0, 0.0, 0.0);
    for ((r, c), &g) in gt.indexed_iter() {
        if g {
            row_sum += r as f64;
            col_sum += c as f64;
            count += 1.0;
        }
    }
    let cy = ((row_sum / count).round_ties_even() as usize + 1).min(h);
    let cx = ((col_sum / count).round_ties_even() as usize + 1).min(w);
    let mut s_reg = 0.0;
    for (rows, cols) in [
        (0..cy, 0..cx),
        (0..cy, cx..w),
        (cy..h, 0..cx),
        (cy..h, cx..w),
    ] {
        let mut p = Vec::new();
        let mut g = Vec::new();
        for r in rows.clone() {
            for c in cols.clone() {
                p.push(prob[[r, c]]);
                g.push(ind(gt[[r, c]]));
            }
        }
        if !p.is_empty() {
            s_reg += p.len() as f64 / n * ssim(&p, &g);
        }
    }
    (alpha * s_obj + (1.0 - alpha) * s_reg).clamp(0.0, 1.0)
}

/// Maximum over thresholds `i / k` (binarizing with `>=`) of the mean
/// per-pixel enhanced alignment.
pub fn e_measure_max(prob: &Array2<f64>, gt: &Array2<bool>, k: usize) -> f64 {
    let n = prob.len() as f64;
    let g_sum = gt.iter().map(|&v| ind(v)).sum::<f64>();
    let mut best = f64::NEG_INFINITY;
    for i in 1..=k {
        let t = i as f64 / k as f64;
        let fm: Vec<f64> = prob.iter().map(|&v| ind(v >= t)).collect();
        let total: f64 = if g_sum == 0.0 {
            fm.iter().map(|v| 1.0 - v).sum()
        } else if g_sum == n {
            fm.iter().sum()
        } else {
            let mf = fm.iter().sum::<f64>() / n;
            let mg = g_sum / n;
            fm.iter()
                .zip(gt.iter())
                .map(|(&f, &g)| {
                    let (a, b) = (f - mf, ind(g) - mg);
                    let align = 2.0 * a * b / (a * a + b * b + EPS);
                    (align + 1.0) * (align + 1.0) / 4.0
                })
                .sum()
        };
        best = best.max(total / n);
    }
    best.clamp(0.0, 1.0)
}
