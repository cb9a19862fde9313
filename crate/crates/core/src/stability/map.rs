use std::io::Write;
use std::sync::atomic::{AtomicBool, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{classify, FixedPointClass};
use crate::error::{invalid, Result};
use crate::model::{build_dynamical_matrix, DriveConfig, SystemParams};

pub const MAP_FORMAT: &str = "twotone.stability_map/1";

pub const MAP_CSV_HEADER: [&str; 5] = ["delta_m_norm", "delta_c_norm", "margin", "class", "offending_im"];

/// Evenly spaced, inclusive axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub n: usize,
}

impl Axis {
    pub fn new(min: f64, max: f64, n: usize) -> Result<Self> {
        let axis = Self { min, max, n };
        axis.validate()?;
        Ok(axis)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.min.is_finite() && self.max.is_finite()) {
            return Err(invalid("axis", "bounds must be finite"));
        }
        if self.n == 0 {
            return Err(invalid("axis", "needs at least one point"));
        }
        if self.n > 1 && self.max <= self.min {
            return Err(invalid(
                "axis",
                format!("range must be increasing, got {}:{}", self.min, self.max),
            ));
        }
        Ok(())
    }

    pub fn step(&self) -> f64 {
        if self.n > 1 {
            (self.max - self.min) / (self.n - 1) as f64
        } else {
            0.0
        }
    }

    pub fn value(&self, i: usize) -> f64 {
        if self.n == 1 {
            return self.min;
        }
        if i + 1 == self.n {
            return self.max;
        }
        self.min + self.step() * i as f64
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.value(i)).collect()
    }
}

/// Grid over normalized detunings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub delta_m_norm: Axis,
    pub delta_c_norm: Axis,
}

impl GridSpec {
    /// Grid given in units of κ for both detunings.
    pub fn in_kappa_units(params: &SystemParams, delta_m: Axis, delta_c: Axis) -> Self {
        let to_m = 2.0 * params.kappa() / params.gamma_m();
        Self {
            delta_m_norm: Axis {
                min: delta_m.min * to_m,
                max: delta_m.max * to_m,
                n: delta_m.n,
            },
            delta_c_norm: Axis {
                min: delta_c.min * 2.0,
                max: delta_c.max * 2.0,
                n: delta_c.n,
            },
        }
    }

    pub fn len(&self) -> usize {
        self.delta_m_norm.n * self.delta_c_norm.n
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapCell {
    pub delta_m_norm: f64,
    pub delta_c_norm: f64,
    pub margin: f64,
    pub class: Option<FixedPointClass>,
    pub offending_im: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl MapCell {
    pub fn is_unstable(&self) -> bool {
        self.class.is_some_and(FixedPointClass::is_unstable)
    }
}

/// Stability classification over a detuning grid.
///
/// Cells are stored row-major with `Δ̃c` as the slow (row) index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityMap {
    pub grid: GridSpec,
    pub params: SystemParams,
    pub tol: f64,
    pub cells: Vec<MapCell>,
}

/// Classifies the full 4×4 model at every grid point.
///
/// Cells are independent and evaluated in parallel; the output order is the
/// grid order regardless of scheduling. A failing cell is recorded with its
/// error instead of aborting the map.
pub fn stability_map(params: &SystemParams, grid: &GridSpec, tol: f64) -> StabilityMap {
    let dm = grid.delta_m_norm.values();
    let dc = grid.delta_c_norm.values();
    let nm = dm.len();
    let cells = (0..grid.len())
        .into_par_iter()
        .map(|k| map_cell(params, dm[k % nm], dc[k / nm], tol))
        .collect();
    StabilityMap {
        grid: *grid,
        params: *params,
        tol,
        cells,
    }
}

/// Like [`stability_map`], but evaluated row by row (constant `Δ̃c`) and
/// stopping before the next row once `stop` is set. The returned map then
/// holds only the completed rows.
pub fn stability_map_until(params: &SystemParams, grid: &GridSpec, tol: f64, stop: &AtomicBool) -> StabilityMap {
    let dm = grid.delta_m_norm.values();
    let mut cells = Vec::with_capacity(grid.len());
    for dc in grid.delta_c_norm.values() {
        if stop.load(Ordering::Relaxed) {
            break;
        }
        let row: Vec<MapCell> = dm.par_iter().map(|&m| map_cell(params, m, dc, tol)).collect();
        cells.extend(row);
    }
    StabilityMap {
        grid: *grid,
        params: *params,
        tol,
        cells,
    }
}

fn map_cell(params: &SystemParams, dm: f64, dc: f64, tol: f64) -> MapCell {
    let drive = DriveConfig::two_tone_normalized(params, dc, dm);
    let result = build_dynamical_matrix(params, &drive).and_then(|m| classify(&m, tol));
    match result {
        Ok(r) => MapCell {
            delta_m_norm: dm,
            delta_c_norm: dc,
            margin: r.margin,
            class: Some(r.classification),
            offending_im: r.offending_im,
            error: None,
        },
        Err(e) => MapCell {
            delta_m_norm: dm,
            delta_c_norm: dc,
            margin: f64::NAN,
            class: None,
            offending_im: f64::NAN,
            error: Some(e.to_string()),
        },
    }
}

impl StabilityMap {
    pub fn cell(&self, i_dm: usize, j_dc: usize) -> &MapCell {
        &self.cells[j_dc * self.grid.delta_m_norm.n + i_dm]
    }

    /// Margins as rows of constant `Δ̃c`.
    pub fn margin_field(&self) -> Vec<Vec<f64>> {
        self.cells
            .chunks(self.grid.delta_m_norm.n)
            .map(|row| row.iter().map(|c| c.margin).collect())
            .collect()
    }

    /// False for a map cut short by [`stability_map_until`].
    pub fn is_complete(&self) -> bool {
        self.cells.len() == self.grid.len()
    }

    pub fn failed_cells(&self) -> usize {
        self.cells.iter().filter(|c| c.error.is_some()).count()
    }

    /// Writes the CSV table. An `error` column is appended only when at
    /// least one cell failed.
    pub fn write_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        let with_errors = self.failed_cells() > 0;
        let mut out = csv::Writer::from_writer(w);
        let mut header: Vec<&str> = MAP_CSV_HEADER.to_vec();
        if with_errors {
            header.push("error");
        }
        out.write_record(&header)?;
        for c in &self.cells {
            let class = c.class.map_or("error", FixedPointClass::code);
            let mut rec = vec![
                c.delta_m_norm.to_string(),
                c.delta_c_norm.to_string(),
                c.margin.to_string(),
                class.to_string(),
                c.offending_im.to_string(),
            ];
            if with_errors {
                rec.push(c.error.clone().unwrap_or_default());
            }
            out.write_record(&rec)?;
        }
        out.flush()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "format": MAP_FORMAT,
            "params": self.params,
            "tol": self.tol,
            "grid": self.grid,
            "notes": [
                "cells with delta_m_norm > 0 correspond to a negative mechanical frequency under the single-tone mapping delta_m = -omega_m and are unphysical for single-tone driving"
            ],
            "cells": self.cells,
        })
    }
}
