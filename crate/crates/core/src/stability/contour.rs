//! Marching squares on a rectilinear grid.

use std::collections::HashMap;

use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Polyline {
    pub points: Vec<(f64, f64)>,
    pub closed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Edge {
    // between (i, j) and (i + 1, j)
    H(usize, usize),
    // between (i, j) and (i, j + 1)
    V(usize, usize),
}

/// Extracts the `level` iso-lines of `z` (rows indexed by `ys`, columns by
/// `xs`) with linear interpolation along cell edges. Cells touching a NaN
/// are skipped. Saddle cells are disambiguated by the cell-centre average.
pub fn marching_squares(xs: &[f64], ys: &[f64], z: &[Vec<f64>], level: f64) -> Vec<Polyline> {
    let nx = xs.len();
    let ny = ys.len();
    if nx < 2 || ny < 2 {
        return Vec::new();
    }
    assert_eq!(z.len(), ny, "field rows must match ys");

    let point = |e: Edge| -> (f64, f64) {
        let (ia, ja, ib, jb) = match e {
            Edge::H(i, j) => (i, j, i + 1, j),
            Edge::V(i, j) => (i, j, i, j + 1),
        };
        let (za, zb) = (z[ja][ia], z[jb][ib]);
        let t = if zb != za { (level - za) / (zb - za) } else { 0.5 };
        (xs[ia] + t * (xs[ib] - xs[ia]), ys[ja] + t * (ys[jb] - ys[ja]))
    };

    let mut segments: Vec<(Edge, Edge)> = Vec::new();
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            let c = [z[j][i], z[j][i + 1], z[j + 1][i + 1], z[j + 1][i]];
            if c.iter().any(|v| v.is_nan()) {
                continue;
            }
            let above = c.map(|v| v >= level);
            let bottom = Edge::H(i, j);
            let right = Edge::V(i + 1, j);
            let top = Edge::H(i, j + 1);
            let left = Edge::V(i, j);
            let edges = [(bottom, 0, 1), (right, 1, 2), (top, 2, 3), (left, 3, 0)];
            let crossed: Vec<Edge> = edges
                .iter()
                .filter(|(_, a, b)| above[*a] != above[*b])
                .map(|(e, _, _)| *e)
                .collect();
            match crossed.len() {
                2 => segments.push((crossed[0], crossed[1])),
                4 => {
                    let centre = c.iter().sum::<f64>() / 4.0 >= level;
                    if centre == above[0] {
                        segments.push((bottom, right));
                        segments.push((top, left));
                    } else {
                        segments.push((left, bottom));
                        segments.push((right, top));
                    }
                }
                _ => {}
            }
        }
    }

    let mut by_edge: HashMap<Edge, Vec<usize>> = HashMap::new();
    for (k, (a, b)) in segments.iter().enumerate() {
        by_edge.entry(*a).or_default().push(k);
        by_edge.entry(*b).or_default().push(k);
    }

    let mut used = vec![false; segments.len()];
    let mut lines = Vec::new();
    let walk = |start_seg: usize, start_edge: Edge, used: &mut Vec<bool>| -> (Vec<Edge>, bool) {
        let mut path = vec![start_edge];
        let mut seg = start_seg;
        let mut at = start_edge;
        loop {
            used[seg] = true;
            let (a, b) = segments[seg];
            let next = if a == at { b } else { a };
            path.push(next);
            if next == start_edge {
                return (path, true);
            }
            match by_edge[&next].iter().find(|&&s| !used[s]) {
                Some(&s) => {
                    seg = s;
                    at = next;
                }
                None => return (path, false),
            }
        }
    };

    // open lines start at edges owned by a single segment (the grid boundary)
    let mut starts: Vec<(Edge, usize)> = by_edge
        .iter()
        .filter(|(_, segs)| segs.len() == 1)
        .map(|(e, segs)| (*e, segs[0]))
        .collect();
    starts.sort_by_key(|(e, _)| edge_key(*e));
    for (edge, seg) in starts {
        if !used[seg] {
            let (path, closed) = walk(seg, edge, &mut used);
            lines.push(Polyline {
                points: path.into_iter().map(point).collect(),
                closed,
            });
        }
    }
    for k in 0..segments.len() {
        if !used[k] {
            let (path, closed) = walk(k, segments[k].0, &mut used);
            lines.push(Polyline {
                points: path.into_iter().map(point).collect(),
                closed,
            });
        }
    }
    lines
}

fn edge_key(e: Edge) -> (u8, usize, usize) {
    match e {
        Edge::H(i, j) => (0, j, i),
        Edge::V(i, j) => (1, j, i),
    }
}
