use super::Sample;
use crate::tensor::Tensor;

/// Half-pixel-centre bilinear resize of an NHWC tensor with edge clamping.
pub fn resize_bilinear(t: &Tensor<f32>, (oh, ow): (usize, usize)) -> Tensor<f32> {
    let [n, h, w, c] = t.dims4().expect("rank-4 image");
    if (h, w) == (oh, ow) {
        return t.clone();
    }
    let src = t.data();
    let axis = |out: usize, inp: usize| -> Vec<(usize, usize, f32)> {
        let scale = inp as f64 / out as f64;
        (0..out)
            .map(|o| {
                let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(inp - 1);
                (i0, i1, (s - i0 as f64) as f32)
            })
            .collect()
    };
    let ys = axis(oh, h);
    let xs = axis(ow, w);
    let mut out = Vec::with_capacity(n * oh * ow * c);
    for b in 0..n {
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                for ch in 0..c {
                    let at = |y: usize, x: usize| src[((b * h + y) * w + x) * c + ch];
                    let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                    let bot = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                    out.push(top * (1.0 - fy) + bot * fy);
                }
            }
        }
    }
    Tensor::new(vec![n, oh, ow, c], out).expect("sized buffer")
}

/// Nearest-neighbour resize; preserves the value set exactly.
pub fn resize_nearest(t: &Tensor<f32>, (oh, ow): (usize, usize)) -> Tensor<f32> {
    let [n, h, w, c] = t.dims4().expect("rank-4 image");
    if (h, w) == (oh, ow) {
        return t.clone();
    }
    let pick = |o: usize, out: usize, inp: usize| (((o as f64 + 0.5) * inp as f64 / out as f64) as usize).min(inp - 1);
    let src = t.data();
    let mut out = Vec::with_capacity(n * oh * ow * c);
    for b in 0..n {
        for y in 0..oh {
            let sy = pick(y, oh, h);
            for x in 0..ow {
                let sx = pick(x, ow, w);
                let off = ((b * h + sy) * w + sx) * c;
                out.extend_from_slice(&src[off..off + c]);
            }
        }
    }
    Tensor::new(vec![n, oh, ow, c], out).expect("sized buffer")
}

/// Bilinear for the image; nearest-neighbour then re-binarised for the mask.
pub fn resize(sample: &Sample, size: (usize, usize)) -> Sample {
    let mask = resize_nearest(&sample.mask, size).map(|v| if v >= 0.5 { 1.0 } else { 0.0 });
    Sample {
        id: sample.id.clone(),
        image: resize_bilinear(&sample.image, size),
        mask,
        source_dims: sample.source_dims,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_resize_is_bit_exact() {
        let img = Tensor::from_fn(vec![1, 8, 8, 3], |i| (i as f32 * 0.013).fract());
        let s = Sample::new("a", img, Tensor::zeros(vec![1, 8, 8, 1])).unwrap();
        assert_eq!(resize(&s, (8, 8)), s);
    }

    #[test]
    fn large_to_small_and_ones_mask() {
        let img = Tensor::full(vec![1, 987, 1264, 3], 0.25);
        let s = Sample::new("b", img, Tensor::full(vec![1, 987, 1264, 1], 1.0)).unwrap();
        let r = resize(&s, (128, 128));
        assert_eq!(r.image.shape(), &[1, 128, 128, 3]);
        assert!(r.mask.data().iter().all(|&v| v == 1.0));
        assert!(r.image.data().iter().all(|&v| (v - 0.25).abs() < 1e-6));
        assert_eq!(r.source_dims, (987, 1264));
    }

    #[test]
    fn bilinear_midpoint() {
        // 1x2 -> 1x4: half-pixel centres sample at -0.25, 0.25, 0.75, 1.25.
        let t = Tensor::new(vec![1, 1, 2, 1], vec![0.0, 1.0]).unwrap();
        let r = resize_bilinear(&t, (1, 4));
        assert_eq!(r.data(), &[0.0, 0.25, 0.75, 1.0]);
    }
}
