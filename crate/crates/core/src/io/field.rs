use std::io::Write;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::dynamics::VehicleState;
use crate::error::{invalid, Result};
use crate::risk_field::{RiskField, RiskFieldParams, RiskTerm};
use crate::sim::StepRecord;

use super::export::num;

/// Rectangular sampling grid; both ends are included when they fall on the lattice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub resolution: f64,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.x_min,
            self.x_max,
            self.y_min,
            self.y_max,
            self.resolution,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(invalid("grid", "bounds and resolution must be finite"));
        }
        if !(self.resolution > 0.0) {
            return Err(invalid("grid.resolution", "must be positive"));
        }
        if self.x_max < self.x_min || self.y_max < self.y_min {
            return Err(invalid("grid", "max must not be below min"));
        }
        Ok(())
    }

    fn axis(lo: f64, hi: f64, res: f64) -> Vec<f64> {
        let n = ((hi - lo) / res + 1e-9).floor() as usize + 1;
        (0..n).map(|i| lo + i as f64 * res).collect()
    }

    pub fn xs(&self) -> Vec<f64> {
        Self::axis(self.x_min, self.x_max, self.resolution)
    }

    pub fn ys(&self) -> Vec<f64> {
        Self::axis(self.y_min, self.y_max, self.resolution)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldCell {
    pub x: f64,
    pub y: f64,
    pub v_erpf: f64,
    pub v_rpf: f64,
}

/// Field values on a grid, row-major: one row per `y`, `x` varying fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldGrid {
    pub nx: usize,
    pub ny: usize,
    pub cells: Vec<FieldCell>,
}

impl FieldGrid {
    pub fn cell(&self, ix: usize, iy: usize) -> &FieldCell {
        &self.cells[iy * self.nx + ix]
    }

    pub fn peak_erpf(&self) -> f64 {
        self.cells.iter().map(|c| c.v_erpf).fold(0.0, f64::max)
    }
}

/// Samples a frozen field (horizon step 0) with and without the evolution factor.
pub fn dump_field(field: &RiskField, grid: &GridSpec) -> Result<FieldGrid> {
    grid.validate()?;
    let (xs, ys) = (grid.xs(), grid.ys());
    let mut cells = Vec::with_capacity(xs.len() * ys.len());
    for &y in &ys {
        for &x in &xs {
            let s = VehicleState::new(x, y, 0.0);
            cells.push(FieldCell {
                x,
                y,
                v_erpf: field.value(&s, 0),
                v_rpf: field.static_value(&s, 0),
            });
        }
    }
    Ok(FieldGrid {
        nx: xs.len(),
        ny: ys.len(),
        cells,
    })
}

/// Rebuilds the field a planner froze at a logged tick.
pub fn field_at_record(record: &StepRecord, params: &RiskFieldParams, dt: f64) -> RiskField {
    let d = &record.diagnostics;
    let terms = record
        .obstacles
        .iter()
        .zip(d.etas.iter().zip(&d.gains))
        .map(|(p, (&eta, &gain))| RiskTerm {
            position: Vector2::new(p[0], p[1]),
            velocity: Vector2::zeros(),
            gain,
            eta,
        })
        .collect();
    RiskField::new(terms, dt, params.clone())
}

pub const FIELD_HEADER: [&str; 4] = ["x", "y", "v_erpf", "v_rpf"];

pub fn write_field<W: Write>(grid: &FieldGrid, w: W) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(FIELD_HEADER)?;
    for c in &grid.cells {
        csv.write_record([num(c.x), num(c.y), num(c.v_erpf), num(c.v_rpf)])?;
    }
    csv.flush()?;
    Ok(())
}
