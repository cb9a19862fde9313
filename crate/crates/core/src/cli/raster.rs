//! Nearest-neighbour (Voronoi) rasterization of scattered map samples.

use std::path::Path;

use serde::Deserialize;

use super::{io_err, CliError};

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
pub struct ScatterPoint {
    pub delta_m_norm: f64,
    pub delta_c_norm: f64,
    #[serde(default)]
    pub value: Option<f64>,
}

/// Reads `delta_m_norm,delta_c_norm[,value]` rows; `#` lines are comments.
pub fn read_scatter(path: &Path) -> Result<Vec<ScatterPoint>, CliError> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(file);
    let points = reader
        .deserialize()
        .collect::<Result<Vec<ScatterPoint>, _>>()
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if points.is_empty() {
        return Err(CliError::Config(format!("{}: no scatter points", path.display())));
    }
    if points
        .iter()
        .any(|p| !(p.delta_m_norm.is_finite() && p.delta_c_norm.is_finite()))
    {
        return Err(CliError::Config(format!(
            "{}: coordinates must be finite",
            path.display()
        )));
    }
    Ok(points)
}

/// Assigns each grid node the value of its nearest sample.
///
/// Distances are measured after dividing each coordinate by `scale`
/// (typically the axis spans), so axes of very different extent weigh
/// equally. Rows of the result are indexed by `ys`. Ties go to the earlier
/// sample.
pub fn rasterize_nearest(samples: &[(f64, f64, f64)], xs: &[f64], ys: &[f64], scale: (f64, f64)) -> Vec<Vec<f64>> {
    let (sx, sy) = (
        scale.0.abs().max(f64::MIN_POSITIVE),
        scale.1.abs().max(f64::MIN_POSITIVE),
    );
    ys.iter()
        .map(|&y| {
            xs.iter()
                .map(|&x| {
                    let mut best = (f64::INFINITY, f64::NAN);
                    for &(px, py, v) in samples {
                        let d = ((px - x) / sx).powi(2) + ((py - y) / sy).powi(2);
                        if d < best.0 {
                            best = (d, v);
                        }
                    }
                    best.1
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_nodes_take_nearest_value() {
        let samples = [(0.0, 0.0, 1.0), (10.0, 0.0, 2.0), (0.0, 1.0, 3.0)];
        let r = rasterize_nearest(&samples, &[1.0, 9.0], &[0.0, 0.9], (10.0, 1.0));
        assert_eq!(r, vec![vec![1.0, 2.0], vec![3.0, 2.0]]);
    }

    #[test]
    fn reads_optional_value_column() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        std::fs::write(&p, "# measured\ndelta_m_norm,delta_c_norm\n-18, 0.0\n2.0,0.1\n").unwrap();
        let pts = read_scatter(&p).unwrap();
        assert_eq!(pts.len(), 2);
        assert_eq!(pts[1].value, None);
        std::fs::write(&p, "delta_m_norm,delta_c_norm,value\n1,2,3\n").unwrap();
        assert_eq!(read_scatter(&p).unwrap()[0].value, Some(3.0));
        std::fs::write(&p, "delta_m_norm,delta_c_norm\n").unwrap();
        assert!(read_scatter(&p).is_err());
    }
}
