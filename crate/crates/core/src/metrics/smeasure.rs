//! Structure similarity between a continuous map and a binary mask: an
//! object-aware term and a region-aware term combined with weight `alpha`.

/// A single-channel map laid out row-major.
#[derive(Clone, Copy, Debug)]
pub struct Plane<'a> {
    pub height: usize,
    pub width: usize,
    pub map: &'a [f64],
    pub gt: &'a [bool],
}

/// The two halves of the structure measure, separated so the combination can
/// be exercised with stand-in values.
pub trait SubMeasures {
    fn object(&self, plane: Plane<'_>) -> f64;
    fn region(&self, plane: Plane<'_>) -> f64;
}

/// The standard definitions of the object and region terms.
#[derive(Clone, Copy, Debug, Default)]
pub struct StructureMeasure;

/// Machine epsilon used by the reference formulation as a division guard.
const EPS: f64 = f64::EPSILON;

fn mean(xs: impl Iterator<Item = f64>) -> (f64, usize) {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (if n == 0 { 0.0 } else { sum / n as f64 }, n)
}

/// `2x / (x^2 + 1 + sigma + eps)` over the selected pixels.
fn object_score(values: &[f64]) -> f64 {
    let (x, n) = mean(values.iter().copied());
    let sigma = if n > 1 {
        (values.iter().map(|v| (v - x).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    2.0 * x / (x * x + 1.0 + sigma + EPS)
}

/// Structural similarity of one quadrant.
fn ssim(map: &[f64], gt: &[f64]) -> f64 {
    let n = map.len() as f64;
    let (x, _) = mean(map.iter().copied());
    let (y, _) = mean(gt.iter().copied());
    let denom = n - 1.0 + EPS;
    let sx2 = map.iter().map(|v| (v - x).powi(2)).sum::<f64>() / denom;
    let sy2 = gt.iter().map(|v| (v - y).powi(2)).sum::<f64>() / denom;
    let sxy = map.iter().zip(gt).map(|(a, b)| (a - x) * (b - y)).sum::<f64>() / denom;
    let alpha = 4.0 * x * y * sxy;
    let beta = (x * x + y * y) * (sx2 + sy2);
    if alpha != 0.0 {
        alpha / (beta + EPS)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

/// 1-based centroid `(column, row)` of the mask, rounded half away from zero;
/// an empty mask uses the image centre.
fn centroid(p: Plane<'_>) -> (usize, usize) {
    let total = p.gt.iter().filter(|&&g| g).count();
    if total == 0 {
        return ((p.width as f64 / 2.0).round() as usize, (p.height as f64 / 2.0).round() as usize);
    }
    let (mut sx, mut sy) = (0.0, 0.0);
    for y in 0..p.height {
        for x in 0..p.width {
            if p.gt[y * p.width + x] {
                sx += (x + 1) as f64;
                sy += (y + 1) as f64;
            }
        }
    }
    ((sx / total as f64).round() as usize, (sy / total as f64).round() as usize)
}

impl SubMeasures for StructureMeasure {
    fn object(&self, p: Plane<'_>) -> f64 {
        let fg: Vec<f64> = p.map.iter().zip(p.gt).filter(|(_, &g)| g).map(|(&v, _)| v).collect();
        let bg: Vec<f64> = p.map.iter().zip(p.gt).filter(|(_, &g)| !g).map(|(&v, _)| 1.0 - v).collect();
        let u = fg.len() as f64 / p.map.len() as f64;
        u * object_score(&fg) + (1.0 - u) * object_score(&bg)
    }

    fn region(&self, p: Plane<'_>) -> f64 {
        let (cx, cy) = centroid(p);
        let (w, h) = (p.width, p.height);
        let area = (w * h) as f64;
        let quadrants = [(0, cy, 0, cx), (0, cy, cx, w), (cy, h, 0, cx), (cy, h, cx, w)];
        let weights = [
            (cx * cy) as f64 / area,
            ((w - cx) * cy) as f64 / area,
            (cx * (h - cy)) as f64 / area,
        ];
        let weights = [weights[0], weights[1], weights[2], 1.0 - weights[0] - weights[1] - weights[2]];
        quadrants
            .iter()
            .zip(weights)
            .map(|(&(y0, y1, x0, x1), weight)| {
                if y1 <= y0 || x1 <= x0 {
                    return 0.0;
                }
                let mut m = Vec::with_capacity((y1 - y0) * (x1 - x0));
                let mut g = Vec::with_capacity(m.capacity());
                for y in y0..y1 {
                    for x in x0..x1 {
                        m.push(p.map[y * w + x]);
                        g.push(if p.gt[y * w + x] { 1.0 } else { 0.0 });
                    }
                }
                weight * ssim(&m, &g)
            })
            .sum()
    }
}

/// Structure measure with the given sub-measures.
///
/// A mask with no foreground scores `1 - mean(map)`, an all-foreground mask
/// scores `mean(map)`; otherwise `alpha * object + (1 - alpha) * region`,
/// floored at 0 and capped at 1.
pub fn s_measure_with(p: Plane<'_>, alpha: f64, sub: &dyn SubMeasures) -> f64 {
    let (fg, _) = mean(p.gt.iter().map(|&g| if g { 1.0 } else { 0.0 }));
    let (m, _) = mean(p.map.iter().copied());
    let q = if fg == 0.0 {
        1.0 - m
    } else if fg == 1.0 {
        m
    } else {
        alpha * sub.object(p) + (1.0 - alpha) * sub.region(p)
    };
    q.clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Fixed(f64, f64);
    impl SubMeasures for Fixed {
        fn object(&self, _: Plane<'_>) -> f64 {
            self.0
        }
        fn region(&self, _: Plane<'_>) -> f64 {
            self.1
        }
    }

    fn plane<'a>(map: &'a [f64], gt: &'a [bool], h: usize, w: usize) -> Plane<'a> {
        Plane { height: h, width: w, map, gt }
    }

    #[test]
    fn combination_is_isolated() {
        let map = [0.0, 1.0];
        let gt = [false, true];
        let q = s_measure_with(plane(&map, &gt, 1, 2), 0.5, &Fixed(0.8, 0.6));
        assert!((q - 0.7).abs() < 1e-12);
    }

    #[test]
    fn perfect_map_scores_one() {
        let gt: Vec<bool> = (0..64).map(|i| (i % 8) < 3 && i / 8 > 2).collect();
        let map: Vec<f64> = gt.iter().map(|&g| if g { 1.0 } else { 0.0 }).collect();
        let q = s_measure_with(plane(&map, &gt, 8, 8), 0.5, &StructureMeasure);
        assert!((q - 1.0).abs() < 1e-9, "{q}");
    }

    #[test]
    fn degenerate_masks() {
        let map = [0.25, 0.75];
        assert_eq!(s_measure_with(plane(&map, &[false, false], 1, 2), 0.5, &StructureMeasure), 0.5);
        assert_eq!(s_measure_with(plane(&map, &[true, true], 1, 2), 0.5, &StructureMeasure), 0.5);
    }

    #[test]
    fn centroid_is_one_based() {
        let gt = [false, false, false, true];
        assert_eq!(centroid(plane(&[0.0; 4], &gt, 2, 2)), (2, 2));
        assert_eq!(centroid(plane(&[0.0; 9], &[false; 9], 3, 3)), (2, 2));
    }
}
