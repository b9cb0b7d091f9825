//! Structure measure written against 2-D arrays, following the reference
//! formulation step by step.

pub type Grid = Vec<Vec<f64>>;

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sample_std(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

fn object(pred: &[f64]) -> f64 {
    let x = mean(pred);
    2.0 * x / (x * x + 1.0 + sample_std(pred) + f64::EPSILON)
}

fn s_object(p: &Grid, g: &Grid) -> f64 {
    let (mut fg, mut bg, mut n_fg, mut n) = (vec![], vec![], 0.0, 0.0);
    for (pr, gr) in p.iter().zip(g) {
        for (&v, &m) in pr.iter().zip(gr) {
            n += 1.0;
            if m == 1.0 {
                fg.push(v);
                n_fg += 1.0;
            } else {
                bg.push(1.0 - v);
            }
        }
    }
    let u = n_fg / n;
    u * object(&fg) + (1.0 - u) * object(&bg)
}

fn block(a: &Grid, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> Vec<f64> {
    a[rows].iter().flat_map(|r| r[cols.clone()].to_vec()).collect()
}

fn ssim(p: &[f64], g: &[f64]) -> f64 {
    let n = p.len() as f64;
    let (x, y) = (mean(p), mean(g));
    let d = n - 1.0 + f64::EPSILON;
    let sx = p.iter().map(|v| (v - x).powi(2)).sum::<f64>() / d;
    let sy = g.iter().map(|v| (v - y).powi(2)).sum::<f64>() / d;
    let sxy = p.iter().zip(g).map(|(a, b)| (a - x) * (b - y)).sum::<f64>() / d;
    let a = 4.0 * x * y * sxy;
    let b = (x * x + y * y) * (sx + sy);
    if a != 0.0 {
        a / (b + f64::EPSILON)
    } else if b == 0.0 {
        1.0
    } else {
        0.0
    }
}

fn s_region(p: &Grid, g: &Grid) -> f64 {
    let (h, w) = (g.len(), g[0].len());
    let (mut sx, mut sy, mut total) = (0.0, 0.0, 0.0);
    for (r, row) in g.iter().enumerate() {
        for (c, &m) in row.iter().enumerate() {
            sx += m * (c + 1) as f64;
            sy += m * (r + 1) as f64;
            total += m;
        }
    }
    let cx = (sx / total).round() as usize;
    let cy = (sy / total).round() as usize;
    let area = (h * w) as f64;
    let w1 = (cx * cy) as f64 / area;
    let w2 = ((w - cx) * cy) as f64 / area;
    let w3 = (cx * (h - cy)) as f64 / area;
    let w4 = 1.0 - w1 - w2 - w3;
    let q = |rows: std::ops::Range<usize>, cols: std::ops::Range<usize>| {
        if rows.is_empty() || cols.is_empty() {
            0.0
        } else {
            ssim(&block(p, rows.clone(), cols.clone()), &block(g, rows, cols))
        }
    };
    w1 * q(0..cy, 0..cx) + w2 * q(0..cy, cx..w) + w3 * q(cy..h, 0..cx) + w4 * q(cy..h, cx..w)
}

pub fn s_measure(p: &Grid, g: &Grid, alpha: f64) -> f64 {
    let all: Vec<f64> = g.iter().flatten().copied().collect();
    let y = mean(&all);
    let q = if y == 0.0 {
        1.0 - mean(&p.iter().flatten().copied().collect::<Vec<_>>())
    } else if y == 1.0 {
        mean(&p.iter().flatten().copied().collect::<Vec<_>>())
    } else {
        alpha * s_object(p, g) + (1.0 - alpha) * s_region(p, g)
    };
    q.max(0.0)
}
