use ndarray::Array2;

use super::{check_prob, check_shapes, BinaryMask};
use crate::error::{Error, Result};

const EPS: f64 = f64::EPSILON;

/// For every pixel, squared distance to and index of the nearest `true`
/// pixel of `fg`; ties go to the smallest `(row, col)`. `None` when `fg` is
/// empty.
pub(crate) fn nearest_foreground(fg: &Array2<bool>) -> Option<Array2<(usize, (usize, usize))>> {
    let (h, w) = fg.dim();
    // Per column, nearest foreground row for every row.
    let mut col_near: Array2<Option<usize>> = Array2::from_elem((h, w), None);
    for c in 0..w {
        let rows: Vec<usize> = (0..h).filter(|&r| fg[[r, c]]).collect();
        if rows.is_empty() {
            continue;
        }
        let mut k = 0;
        for r in 0..h {
            while k + 1 < rows.len() && rows[k + 1].abs_diff(r) < rows[k].abs_diff(r) {
                k += 1;
            }
            col_near[[r, c]] = Some(rows[k]);
        }
    }
    if col_near.iter().all(Option::is_none) {
        return None;
    }
    let mut out = Array2::from_elem((h, w), (usize::MAX, (0, 0)));
    for r in 0..h {
        for c in 0..w {
            let mut best = (usize::MAX, (usize::MAX, usize::MAX));
            for cc in 0..w {
                if let Some(rr) = col_near[[r, cc]] {
                    let d2 = rr.abs_diff(r).pow(2) + cc.abs_diff(c).pow(2);
                    let cand = (d2, (rr, cc));
                    if cand < best {
                        best = cand;
                    }
                }
            }
            out[[r, c]] = best;
        }
    }
    Some(out)
}

/// Normalized 7x7 Gaussian kernel with sigma 5.
fn gaussian_kernel() -> [[f64; 7]; 7] {
    let mut k = [[0.0; 7]; 7];
    let mut sum = 0.0;
    for (i, row) in k.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (y, x) = (i as f64 - 3.0, j as f64 - 3.0);
            *v = (-(x * x + y * y) / (2.0 * 25.0)).exp();
            sum += *v;
        }
    }
    for row in k.iter_mut() {
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    k
}

/// Same-size correlation with zero padding.
fn filter_same(x: &Array2<f64>, k: &[[f64; 7]; 7]) -> Array2<f64> {
    let (h, w) = x.dim();
    let mut out = Array2::zeros((h, w));
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (i, row) in k.iter().enumerate() {
                let rr = r as isize + i as isize - 3;
                if rr < 0 || rr >= h as isize {
                    continue;
                }
                for (j, kv) in row.iter().enumerate() {
                    let cc = c as isize + j as isize - 3;
                    if cc < 0 || cc >= w as isize {
                        continue;
                    }
                    acc += kv * x[[rr as usize, cc as usize]];
                }
            }
            out[[r, c]] = acc;
        }
    }
    out
}

/// Weighted F-measure with beta = 1.
///
/// Errors of background pixels are replaced by the error of their nearest
/// foreground pixel, smoothed with a Gaussian, capped by the raw error on
/// the foreground, and weighted by a distance-decay factor on the
/// background. Empty ground truth: 1 when `prob` is all zero, else 0.
pub fn weighted_fbeta(prob: &Array2<f64>, gt: &BinaryMask) -> Result<f64> {
    check_prob(prob, gt)?;
    let g = gt.grid();
    let Some(near) = nearest_foreground(g) else {
        return Ok(if prob.iter().all(|&p| p == 0.0) {
            1.0
        } else {
            0.0
        });
    };
    let e = Array2::from_shape_fn(prob.dim(), |(r, c)| {
        (prob[[r, c]] - if g[[r, c]] { 1.0 } else { 0.0 }).abs()
    });
    let et = Array2::from_shape_fn(prob.dim(), |(r, c)| {
        if g[[r, c]] {
            e[[r, c]]
        } else {
            e[near[[r, c]].1]
        }
    });
    let ea = filter_same(&et, &gaussian_kernel());
    let decay = 0.5f64.ln() / 5.0;
    let mut fg_sum = 0.0;
    let mut fp_w = 0.0;
    let mut n_fg = 0usize;
    for ((r, c), &is_fg) in g.indexed_iter() {
        let raw = e[[r, c]];
        if is_fg {
            let min_e = if ea[[r, c]] < raw { ea[[r, c]] } else { raw };
            fg_sum += min_e;
            n_fg += 1;
        } else {
            let dist = (near[[r, c]].0 as f64).sqrt();
            fp_w += raw * (2.0 - (decay * dist).exp());
        }
    }
    let tp_w = n_fg as f64 - fg_sum;
    let recall = 1.0 - fg_sum / n_fg as f64;
    let precision = tp_w / (EPS + tp_w + fp_w);
    let q = 2.0 * recall * precision / (EPS + recall + precision);
    Ok(q.clamp(0.0, 1.0))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Object similarity of the values `v` of one region.
fn object_score(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let x = mean(v);
    let sigma = if v.len() < 2 {
        0.0
    } else {
        (v.iter().map(|p| (p - x).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
    };
    2.0 * x / (x * x + 1.0 + sigma + EPS)
}

fn s_object(prob: &Array2<f64>, g: &Array2<bool>) -> f64 {
    let fg: Vec<f64> = prob
        .iter()
        .zip(g.iter())
        .filter(|(_, &t)| t)
        .map(|(&p, _)| p)
        .collect();
    let bg: Vec<f64> = prob
        .iter()
        .zip(g.iter())
        .filter(|(_, &t)| !t)
        .map(|(&p, _)| 1.0 - p)
        .collect();
    let u = fg.len() as f64 / prob.len() as f64;
    u * object_score(&fg) + (1.0 - u) * object_score(&bg)
}

/// SSIM-style similarity of two equally sized value lists.
fn region_ssim(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    if x.is_empty() {
        return 0.0;
    }
    let mx = mean(x);
    let my = mean(y);
    let den = n - 1.0 + EPS;
    let sxx = x.iter().map(|v| (v - mx).powi(2)).sum::<f64>() / den;
    let syy = y.iter().map(|v| (v - my).powi(2)).sum::<f64>() / den;
    let sxy = x
        .iter()
        .zip(y)
        .map(|(a, b)| (a - mx) * (b - my))
        .sum::<f64>()
        / den;
    let alpha = 4.0 * mx * my * sxy;
    let beta = (mx * mx + my * my) * (sxx + syy);
    if alpha != 0.0 {
        alpha / (beta + EPS)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Split point `(rows_top, cols_left)` of the region term: the rounded
/// foreground centroid plus one.
pub(crate) fn centroid_split(g: &Array2<bool>) -> (usize, usize) {
    let (h, w) = g.dim();
    let total = g.iter().filter(|v| **v).count();
    if total == 0 {
        return (
            (h as f64 / 2.0).round() as usize,
            (w as f64 / 2.0).round() as usize,
        );
    }
    let (mut sr, mut sc) = (0usize, 0usize);
    for ((r, c), &v) in g.indexed_iter() {
        if v {
            sr += r;
            sc += c;
        }
    }
    let y = (sr as f64 / total as f64).round_ties_even() as usize + 1;
    let x = (sc as f64 / total as f64).round_ties_even() as usize + 1;
    (y.min(h), x.min(w))
}

fn s_region(prob: &Array2<f64>, g: &Array2<bool>) -> f64 {
    let (h, w) = g.dim();
    let (y, x) = centroid_split(g);
    let area = (h * w) as f64;
    let quads = [(0, y, 0, x), (0, y, x, w), (y, h, 0, x), (y, h, x, w)];
    let mut score = 0.0;
    for (r0, r1, c0, c1) in quads {
        let count = (r1 - r0) * (c1 - c0);
        if count == 0 {
            continue;
        }
        let mut pv = Vec::with_capacity(count);
        let mut gv = Vec::with_capacity(count);
        for r in r0..r1 {
            for c in c0..c1 {
                pv.push(prob[[r, c]]);
                gv.push(if g[[r, c]] { 1.0 } else { 0.0 });
            }
        }
        score += count as f64 / area * region_ssim(&pv, &gv);
    }
    score
}

/// Structure measure `alpha * S_object + (1 - alpha) * S_region`, clamped to
/// [0, 1]. All-background ground truth gives `1 - mean(prob)`, all-foreground
/// gives `mean(prob)`.
pub fn s_measure(prob: &Array2<f64>, gt: &BinaryMask, alpha: f64) -> Result<f64> {
    check_prob(prob, gt)?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidInput(format!("alpha {alpha} outside [0, 1]")));
    }
    let g = gt.grid();
    let fg = gt.count();
    let mean_p = prob.mean().unwrap_or(0.0);
    if fg == 0 {
        return Ok(1.0 - mean_p);
    }
    if fg == g.len() {
        return Ok(mean_p);
    }
    let q = alpha * s_object(prob, g) + (1.0 - alpha) * s_region(prob, g);
    Ok(q.clamp(0.0, 1.0))
}

/// Mean enhanced alignment between a binarized prediction and the ground
/// truth.
pub(crate) fn enhanced_alignment(fm: &[bool], gt: &[bool]) -> f64 {
    let n = gt.len() as f64;
    let fg = gt.iter().filter(|v| **v).count();
    let sum: f64 = if fg == 0 {
        fm.iter().filter(|v| !**v).count() as f64
    } else if fg == gt.len() {
        fm.iter().filter(|v| **v).count() as f64
    } else {
        let mf = fm.iter().filter(|v| **v).count() as f64 / n;
        let mg = fg as f64 / n;
        // Only four (fm, gt) combinations exist; count each once.
        let mut counts = [[0usize; 2]; 2];
        for (&a, &b) in fm.iter().zip(gt) {
            counts[a as usize][b as usize] += 1;
        }
        let mut s = 0.0;
        for (a, row) in counts.iter().enumerate() {
            for (b, &k) in row.iter().enumerate() {
                if k == 0 {
                    continue;
                }
                let af = a as f64 - mf;
                let ag = b as f64 - mg;
                let align = 2.0 * ag * af / (ag * ag + af * af + EPS);
                s += k as f64 * (align + 1.0).powi(2) / 4.0;
            }
        }
        s
    };
    sum / n
}

/// Maximum over thresholds `i / thresholds` (i = 1..=thresholds, binarizing
/// with `prob >= t`) of the mean enhanced alignment.
pub fn e_measure_max(prob: &Array2<f64>, gt: &BinaryMask, thresholds: usize) -> Result<f64> {
    check_prob(prob, gt)?;
    check_shapes(prob.dim(), gt.shape())?;
    if thresholds == 0 {
        return Err(Error::InvalidInput(
            "at least one threshold is required".into(),
        ));
    }
    let g: Vec<bool> = gt.grid().iter().copied().collect();
    let p: Vec<f64> = prob.iter().copied().collect();
    let mut best = f64::NEG_INFINITY;
    let mut fm = vec![false; p.len()];
    for i in 1..=thresholds {
        let t = i as f64 / thresholds as f64;
        for (f, &v) in fm.iter_mut().zip(&p) {
            *f = v >= t;
        }
        best = best.max(enhanced_alignment(&fm, &g));
    }
    Ok(best.clamp(0.0, 1.0))
}
