use std::collections::{BTreeMap, HashMap};

use super::{Activation, Model, Operand, UnitId, UnitSpec};
use crate::error::{config_err, shape_err};
use crate::tensor::{Scalar, Tape, Tensor, Var};
use crate::Result;

/// Result of a full forward pass.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    /// Saliency map `(N, H, W, 1)`.
    pub output: Var,
    /// Input pyramid, level `k` at index `k - 1`.
    pub pyramid: Vec<Var>,
    /// Output of every unit, the output unit included.
    pub features: BTreeMap<UnitId, Var>,
}

/// Repeated 2x max pooling of `image`: levels `1 ..= scales - 1`.
pub fn input_pyramid<T: Scalar>(tape: &mut Tape<T>, image: Var, scales: usize) -> Result<Vec<Var>> {
    let [_, h, w, _] = tape.value(image).dims4()?;
    let div = 1usize << scales.saturating_sub(1);
    if scales < 2 || h % div != 0 || w % div != 0 {
        return Err(config_err!(
            "image {h}x{w} cannot form a {scales}-scale pyramid (needs divisibility by {div})"
        ));
    }
    let mut levels = Vec::with_capacity(scales - 1);
    let mut cur = image;
    for _ in 1..scales {
        cur = tape.maxpool2(cur)?;
        levels.push(cur);
    }
    Ok(levels)
}

struct Env {
    image: Var,
    pyramid: Vec<Var>,
    features: BTreeMap<UnitId, Var>,
    down: HashMap<UnitId, Var>,
    up: HashMap<UnitId, Var>,
}

impl Env {
    fn new(image: Var, pyramid: Vec<Var>) -> Self {
        Self {
            image,
            pyramid,
            features: BTreeMap::new(),
            down: HashMap::new(),
            up: HashMap::new(),
        }
    }

    fn resolve<T: Scalar>(&mut self, model: &Model<T>, tape: &mut Tape<T>, op: Operand) -> Result<Var> {
        let feature = |env: &Env, u: UnitId| {
            env.features
                .get(&u)
                .copied()
                .ok_or_else(|| config_err!("feature {u} has not been computed"))
        };
        match op {
            Operand::Image => Ok(self.image),
            Operand::Pyramid(k) => self
                .pyramid
                .get(k.wrapping_sub(1))
                .copied()
                .ok_or_else(|| config_err!("input pyramid level {k} is missing")),
            Operand::Unit(u) => feature(self, u),
            Operand::Down(u) => {
                if let Some(&v) = self.down.get(&u) {
                    return Ok(v);
                }
                let src = feature(self, u)?;
                let v = tape.maxpool2(src)?;
                self.down.insert(u, v);
                Ok(v)
            }
            Operand::Up(u) => {
                if let Some(&v) = self.up.get(&u) {
                    return Ok(v);
                }
                let src = feature(self, u)?;
                let (wid, bid) = model.upsampler_params(u)?;
                let w = tape.param(model.params(), wid);
                let b = tape.param(model.params(), bid);
                let v = tape.conv_transpose2d(src, w, b)?;
                self.up.insert(u, v);
                Ok(v)
            }
        }
    }

    fn run_unit<T: Scalar>(&mut self, model: &Model<T>, tape: &mut Tape<T>, spec: &UnitSpec) -> Result<Var> {
        let inputs = spec
            .operands
            .iter()
            .map(|&op| self.resolve(model, tape, op))
            .collect::<Result<Vec<_>>>()?;
        let x = apply_unit(model, tape, spec, &inputs)?;
        self.features.insert(spec.id, x);
        Ok(x)
    }
}

/// Concatenates `inputs` and applies the unit's convolution stack.
fn apply_unit<T: Scalar>(model: &Model<T>, tape: &mut Tape<T>, spec: &UnitSpec, inputs: &[Var]) -> Result<Var> {
    let mut x = if inputs.len() == 1 {
        inputs[0]
    } else {
        tape.concat(inputs)?
    };
    let convs = &model.unit_params(spec.id)?.convs;
    for (n, &(wid, bid)) in convs.iter().enumerate() {
        let w = tape.param(model.params(), wid);
        let b = tape.param(model.params(), bid);
        x = tape
            .conv2d(x, w, b)
            .map_err(|e| shape_err!("{}: {e}", spec.id))?;
        let last = n + 1 == convs.len();
        x = if last && spec.final_activation == Activation::Sigmoid {
            tape.sigmoid(x)?
        } else {
            tape.relu(x)?
        };
    }
    Ok(x)
}

/// One multi-scale convolution unit on pyramid level `k`.
pub fn mcu_forward<T: Scalar>(model: &Model<T>, tape: &mut Tape<T>, x: Var, k: usize) -> Result<Var> {
    let spec = model.topology().unit(UnitId::Mcu(k))?;
    apply_unit(model, tape, spec, &[x])
}

/// Encoder column `F_(0,0) .. F_(S-1,0)`. `mcu_outputs[k - 1]` is the
/// output of `M-CU_k`; it may be empty when the feature pyramid is disabled.
pub fn encoder_forward<T: Scalar>(
    model: &Model<T>,
    tape: &mut Tape<T>,
    image: Var,
    pyramid: &[Var],
    mcu_outputs: &[Var],
) -> Result<Vec<Var>> {
    let mut env = Env::new(image, pyramid.to_vec());
    for (k, &v) in mcu_outputs.iter().enumerate() {
        env.features.insert(UnitId::Mcu(k + 1), v);
    }
    let s = model.config().scales;
    let mut out = Vec::with_capacity(s);
    for p in 0..s {
        let spec = model.topology().unit(UnitId::Cu(p, 0))?;
        out.push(env.run_unit(model, tape, spec)?);
    }
    Ok(out)
}

/// Every skip-pathway unit (`j >= 1`) except the output unit.
pub fn nested_decoder_forward<T: Scalar>(
    model: &Model<T>,
    tape: &mut Tape<T>,
    encoder: &[Var],
) -> Result<BTreeMap<UnitId, Var>> {
    let s = model.config().scales;
    if encoder.len() != s {
        return Err(config_err!("decoder needs {s} encoder features, got {}", encoder.len()));
    }
    let mut env = Env::new(encoder[0], Vec::new());
    for (p, &v) in encoder.iter().enumerate() {
        env.features.insert(UnitId::Cu(p, 0), v);
    }
    let topo = model.topology();
    for spec in &topo.units {
        if matches!(spec.id, UnitId::Cu(_, j) if j >= 1) && spec.id != topo.output {
            env.run_unit(model, tape, spec)?;
        }
    }
    env.features.retain(|id, _| matches!(id, UnitId::Cu(_, j) if *j >= 1));
    Ok(env.features)
}

/// The output unit over its operands, drawn from `features` (which must
/// hold every unit the output consumes).
pub fn head_forward<T: Scalar>(
    model: &Model<T>,
    tape: &mut Tape<T>,
    features: &BTreeMap<UnitId, Var>,
) -> Result<Var> {
    let topo = model.topology();
    let spec = topo.unit(topo.output)?;
    let mut env = Env::new(features.values().next().copied().ok_or_else(|| config_err!("no features given"))?, Vec::new());
    env.features = features.clone();
    env.run_unit(model, tape, spec)
}

/// Runs the whole network on `batch` `(N, H, W, 3)`.
pub fn forward<T: Scalar>(model: &Model<T>, tape: &mut Tape<T>, batch: Var) -> Result<ForwardPass> {
    let cfg = model.config();
    let [_, h, w, c] = tape.value(batch).dims4()?;
    if (h, w) != cfg.input_size || c != 3 {
        return Err(config_err!(
            "input batch is {h}x{w}x{c}, model expects {}x{}x3",
            cfg.input_size.0,
            cfg.input_size.1
        ));
    }
    let pyramid = if cfg.input_pyramid_enabled || cfg.feature_pyramid_enabled {
        input_pyramid(tape, batch, cfg.scales)?
    } else {
        Vec::new()
    };
    let mut env = Env::new(batch, pyramid);
    for spec in &model.topology().units {
        env.run_unit(model, tape, spec)?;
    }
    let output = env.features[&model.topology().output];
    Ok(ForwardPass {
        output,
        pyramid: env.pyramid,
        features: env.features,
    })
}

/// Forward pass without keeping the tape: returns the saliency maps.
pub fn predict<T: Scalar>(model: &Model<T>, images: &Tensor<T>) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let x = tape.constant(images.clone());
    let pass = forward(model, &mut tape, x)?;
    Ok(tape.value(pass.output).clone())
}
