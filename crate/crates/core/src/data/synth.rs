use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, Provenance, Sample, Split};
use crate::error::config_err;
use crate::tensor::Tensor;
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SynthShape {
    Rect { half_w: f64, half_h: f64 },
    Ellipse { rx: f64, ry: f64 },
    /// A thin rotated bar; `angle` is in radians.
    Bar { half_len: f64, half_thick: f64, angle: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthObject {
    pub shape: SynthShape,
    pub cx: f64,
    pub cy: f64,
    pub color: [f32; 3],
}

impl SynthObject {
    /// Whether the pixel whose centre is `(x + 0.5, y + 0.5)` is covered.
    pub fn covers(&self, y: usize, x: usize) -> bool {
        let dx = x as f64 + 0.5 - self.cx;
        let dy = y as f64 + 0.5 - self.cy;
        match self.shape {
            SynthShape::Rect { half_w, half_h } => dx.abs() <= half_w && dy.abs() <= half_h,
            SynthShape::Ellipse { rx, ry } => (dx / rx).powi(2) + (dy / ry).powi(2) <= 1.0,
            SynthShape::Bar { half_len, half_thick, angle } => {
                let (s, c) = angle.sin_cos();
                (dx * c + dy * s).abs() <= half_len && (-dx * s + dy * c).abs() <= half_thick
            }
        }
    }
}

/// Everything needed to redraw one synthetic sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthScene {
    pub size: usize,
    pub background: [f32; 3],
    /// Coarse value-noise lattice, `(cells + 1)^2` entries.
    pub lattice: Vec<f32>,
    pub cells: usize,
    /// Per-pixel grain added on top of the lattice.
    pub grain: Vec<f32>,
    pub objects: Vec<SynthObject>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthOptions {
    /// Fraction of samples with no object at all.
    pub empty_fraction: f64,
    pub max_objects: usize,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            empty_fraction: 0.1,
            max_objects: 4,
        }
    }
}

/// Written next to a synthetic dataset on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub seed: u64,
    pub n: usize,
    pub size: usize,
    pub empty_fraction: f64,
    pub empty_ids: Vec<String>,
}

/// Draws a random scene. With `empty` set the scene has only background.
pub fn synth_scene(rng: &mut impl Rng, size: usize, empty: bool, max_objects: usize) -> SynthScene {
    let cells = (size / 8).max(2);
    let background = [0; 3].map(|_: u8| rng.gen_range(0.38..0.58));
    let lattice = (0..(cells + 1) * (cells + 1)).map(|_| rng.gen_range(-0.12..0.12)).collect();
    let grain = (0..size * size).map(|_| rng.gen_range(-0.04..0.04)).collect();
    let count = if empty { 0 } else { rng.gen_range(1..=max_objects.max(1)) };
    let s = size as f64;
    let objects = (0..count)
        .map(|_| {
            let shape = match rng.gen_range(0..3) {
                0 => SynthShape::Rect {
                    half_w: rng.gen_range(0.08..0.22) * s,
                    half_h: rng.gen_range(0.08..0.22) * s,
                },
                1 => SynthShape::Ellipse {
                    rx: rng.gen_range(0.09..0.24) * s,
                    ry: rng.gen_range(0.09..0.24) * s,
                },
                _ => SynthShape::Bar {
                    half_len: rng.gen_range(0.2..0.4) * s,
                    half_thick: rng.gen_range(1.0..(0.05 * s).max(1.5)),
                    angle: rng.gen_range(0.0..std::f64::consts::PI),
                },
            };
            let bright = rng.gen_bool(0.5);
            let color = [0; 3].map(|_: u8| {
                if bright {
                    rng.gen_range(0.85..1.0)
                } else {
                    rng.gen_range(0.0..0.12)
                }
            });
            SynthObject {
                shape,
                cx: rng.gen_range(0.2..0.8) * s,
                cy: rng.gen_range(0.2..0.8) * s,
                color,
            }
        })
        .collect();
    SynthScene {
        size,
        background,
        lattice,
        cells,
        grain,
        objects,
    }
}

/// Renders `(image (1,S,S,3), mask (1,S,S,1))`; the mask is the union of object footprints.
pub fn render_scene(scene: &SynthScene) -> (Tensor<f32>, Tensor<f32>) {
    let n = scene.size;
    let mut image = Vec::with_capacity(n * n * 3);
    let mut mask = Vec::with_capacity(n * n);
    let lat = |gy: usize, gx: usize| scene.lattice[gy * (scene.cells + 1) + gx];
    for y in 0..n {
        for x in 0..n {
            let top = scene.objects.iter().rev().find(|o| o.covers(y, x));
            match top {
                Some(o) => {
                    image.extend_from_slice(&o.color);
                    mask.push(1.0);
                }
                None => {
                    let fy = (y as f32 + 0.5) / n as f32 * scene.cells as f32;
                    let fx = (x as f32 + 0.5) / n as f32 * scene.cells as f32;
                    let (gy, gx) = ((fy as usize).min(scene.cells - 1), (fx as usize).min(scene.cells - 1));
                    let (ty, tx) = (fy - gy as f32, fx - gx as f32);
                    let texture = (lat(gy, gx) * (1.0 - tx) + lat(gy, gx + 1) * tx) * (1.0 - ty)
                        + (lat(gy + 1, gx) * (1.0 - tx) + lat(gy + 1, gx + 1) * tx) * ty
                        + scene.grain[y * n + x];
                    image.extend(scene.background.iter().map(|b| (b + texture).clamp(0.0, 1.0)));
                    mask.push(0.0);
                }
            }
        }
    }
    (
        Tensor::new(vec![1, n, n, 3], image).expect("sized buffer"),
        Tensor::new(vec![1, n, n, 1], mask).expect("sized buffer"),
    )
}

/// Whether sample `i` of `n` is assigned an empty mask: `floor(n f)` empties
/// spread evenly by index stride.
pub(crate) fn is_empty_slot(i: usize, n: usize, empty_fraction: f64) -> bool {
    let k = ((n as f64 * empty_fraction) + 1e-9).floor() as usize;
    (i + 1) * k / n > i * k / n
}

pub fn synth_generate(n: usize, size: usize, seed: u64) -> Result<Dataset> {
    synth_generate_with(n, size, seed, &SynthOptions::default())
}

pub fn synth_generate_with(n: usize, size: usize, seed: u64, opts: &SynthOptions) -> Result<Dataset> {
    if n == 0 {
        return Err(config_err!("synthetic dataset needs n >= 1"));
    }
    if size < 8 {
        return Err(config_err!("synthetic size {size} is below the minimum of 8"));
    }
    if !(0.0..=1.0).contains(&opts.empty_fraction) {
        return Err(config_err!("empty_fraction {} is outside [0, 1]", opts.empty_fraction));
    }
    let samples = (0..n)
        .map(|i| {
            // One independent stream per sample keeps sample i stable as n changes.
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let scene = synth_scene(&mut rng, size, is_empty_slot(i, n, opts.empty_fraction), opts.max_objects);
            let (image, mask) = render_scene(&scene);
            Sample::new(format!("synth_{i:04}"), image, mask)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(
        samples,
        Split::All,
        Provenance::Synthetic {
            seed,
            n,
            size,
            empty_fraction: opts.empty_fraction,
        },
    )
}
