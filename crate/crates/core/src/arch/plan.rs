use std::fmt::Write as _;

use serde::Serialize;

use super::{ArchConfig, Operand, Topology, UnitId};
use crate::error::shape_err;
use crate::Result;

/// What a plan row describes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlanRowKind {
    Unit(UnitId),
    /// Transposed convolution that up-samples the named unit's output.
    Upsampler(UnitId),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PlanRow {
    pub name: String,
    #[serde(skip)]
    pub kind: PlanRowKind,
    pub input: [usize; 4],
    pub output: [usize; 4],
    pub params: usize,
}

/// Symbolic per-unit shapes and parameter counts; no weights are allocated.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ShapePlan {
    pub rows: Vec<PlanRow>,
    pub total_params: usize,
}

/// `k^2 * cin * cout + cout`: one convolution with bias.
pub fn conv_params(k: usize, cin: usize, cout: usize) -> usize {
    k * k * cin * cout + cout
}

pub fn shape_plan(cfg: &ArchConfig, batch: usize) -> Result<ShapePlan> {
    let topo = Topology::build(cfg)?;
    let (h, w) = cfg.input_size;
    let at = |level: usize, c: usize| [batch, h >> level, w >> level, c];
    let mut rows = Vec::new();

    for unit in &topo.units {
        let level = unit.id.level();
        let mut cin = 0;
        for &op in &unit.operands {
            let l = topo.operand_level(op);
            if l != level {
                return Err(shape_err!(
                    "{}: operand {:?} is at level {l}, unit is at level {level}",
                    unit.id,
                    op
                ));
            }
            if let Operand::Up(src) = op {
                if src.level() != level + 1 {
                    return Err(shape_err!("{}: cannot up-sample {} to level {level}", unit.id, src));
                }
            }
            cin += topo.operand_channels(op)?;
        }
        let mut params = 0;
        let mut c = cin;
        for &k in &unit.kernels {
            params += conv_params(k, c, unit.out_channels);
            c = unit.out_channels;
        }
        rows.push(PlanRow {
            name: unit.id.to_string(),
            kind: PlanRowKind::Unit(unit.id),
            input: at(level, cin),
            output: at(level, unit.out_channels),
            params,
        });
    }
    for &(src, c) in &topo.upsamplers {
        let level = src.level();
        rows.push(PlanRow {
            name: format!("UP_{}", &src.to_string()[3..]),
            kind: PlanRowKind::Upsampler(src),
            input: at(level, c),
            output: at(level - 1, c),
            params: conv_params(3, c, c),
        });
    }
    let total_params = rows.iter().map(|r| r.params).sum();
    Ok(ShapePlan { rows, total_params })
}

impl ShapePlan {
    pub fn row(&self, name: &str) -> Option<&PlanRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn unit(&self, id: UnitId) -> Option<&PlanRow> {
        self.rows.iter().find(|r| r.kind == PlanRowKind::Unit(id))
    }

    /// Bytes needed for the parameters at 4 bytes each.
    pub fn param_bytes(&self) -> usize {
        self.total_params * 4
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("unit,in_n,in_h,in_w,in_c,out_n,out_h,out_w,out_c,params\n");
        for r in &self.rows {
            let [a, b, c, d] = r.input;
            let [e, f, g, hh] = r.output;
            writeln!(s, "{},{a},{b},{c},{d},{e},{f},{g},{hh},{}", r.name, r.params).unwrap();
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cu00_parameter_count() {
        let plan = shape_plan(&ArchConfig::default(), 16).unwrap();
        assert_eq!(plan.unit(UnitId::Cu(0, 0)).unwrap().params, 38_720);
    }

    #[test]
    fn csv_has_header_and_one_line_per_row() {
        let plan = shape_plan(&ArchConfig::tiny(), 1).unwrap();
        let csv = plan.to_csv();
        assert!(csv.starts_with("unit,in_n,in_h,in_w,in_c,out_n,out_h,out_w,out_c,params\n"));
        assert_eq!(csv.lines().count(), plan.rows.len() + 1);
    }

    #[test]
    fn upsampler_rows_double_resolution() {
        let plan = shape_plan(&ArchConfig::default(), 2).unwrap();
        let up = plan.row("UP_(4,0)").unwrap();
        assert_eq!(up.input, [2, 8, 8, 1024]);
        assert_eq!(up.output, [2, 16, 16, 1024]);
    }
}
