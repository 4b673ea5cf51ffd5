//! Level-set extraction on a uniform grid (marching squares) and SVG output.

use std::collections::HashMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::interval::IntervalBox;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ContourError {
    #[error("contours need a 2-d domain, got dimension {0}")]
    Dimension(usize),
    #[error("grid resolution must be at least 2")]
    Resolution,
}

/// Polylines of one level; closed curves repeat their first vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSet {
    pub level: f64,
    pub polylines: Vec<Vec<[f64; 2]>>,
}

/// Edge of the grid: `(i, j, vertical)` starting at node `(i, j)`.
type EdgeId = (usize, usize, bool);

/// Contours of `f` at each level over a `res x res` node grid on `domain`.
pub fn contours(
    f: impl Fn(&[f64]) -> f64,
    domain: &IntervalBox,
    levels: &[f64],
    res: usize,
) -> Result<Vec<LevelSet>, ContourError> {
    if domain.dim() != 2 {
        return Err(ContourError::Dimension(domain.dim()));
    }
    if res < 2 {
        return Err(ContourError::Resolution);
    }
    let (x0, y0) = (domain[0].lo, domain[1].lo);
    let dx = domain[0].width() / (res - 1) as f64;
    let dy = domain[1].width() / (res - 1) as f64;
    let xs: Vec<f64> = (0..res).map(|i| x0 + i as f64 * dx).collect();
    let ys: Vec<f64> = (0..res).map(|j| y0 + j as f64 * dy).collect();
    let grid: Vec<f64> = (0..res)
        .flat_map(|j| xs.iter().map(move |&x| (x, j)))
        .map(|(x, j)| f(&[x, ys[j]]))
        .collect();
    let val = |i: usize, j: usize| grid[j * res + i];
    Ok(levels
        .iter()
        .map(|&level| LevelSet {
            level,
            polylines: trace(&val, &xs, &ys, level),
        })
        .collect())
}

fn trace(val: &impl Fn(usize, usize) -> f64, xs: &[f64], ys: &[f64], level: f64) -> Vec<Vec<[f64; 2]>> {
    let res = xs.len();
    let above = |i, j| val(i, j) > level;
    let point = |e: EdgeId| -> [f64; 2] {
        let (i, j, vertical) = e;
        let (i2, j2) = if vertical { (i, j + 1) } else { (i + 1, j) };
        let (a, b) = (val(i, j), val(i2, j2));
        let t = if a == b { 0.5 } else { ((level - a) / (b - a)).clamp(0.0, 1.0) };
        [xs[i] + t * (xs[i2] - xs[i]), ys[j] + t * (ys[j2] - ys[j])]
    };

    let mut segments: Vec<(EdgeId, EdgeId)> = Vec::new();
    for j in 0..res - 1 {
        for i in 0..res - 1 {
            let code = (above(i, j) as u8)
                | (above(i + 1, j) as u8) << 1
                | (above(i + 1, j + 1) as u8) << 2
                | (above(i, j + 1) as u8) << 3;
            let bottom = (i, j, false);
            let right = (i + 1, j, true);
            let top = (i, j + 1, false);
            let left = (i, j, true);
            match code {
                0 | 15 => {}
                1 | 14 => segments.push((left, bottom)),
                2 | 13 => segments.push((bottom, right)),
                3 | 12 => segments.push((left, right)),
                4 | 11 => segments.push((right, top)),
                6 | 9 => segments.push((bottom, top)),
                7 | 8 => segments.push((left, top)),
                5 | 10 => {
                    // Saddle: resolve with the cell-centre average.
                    let centre = 0.25 * (val(i, j) + val(i + 1, j) + val(i + 1, j + 1) + val(i, j + 1));
                    let centre_above = centre > level;
                    if (code == 5) == centre_above {
                        segments.push((left, top));
                        segments.push((bottom, right));
                    } else {
                        segments.push((left, bottom));
                        segments.push((right, top));
                    }
                }
                _ => unreachable!(),
            }
        }
    }

    // Chain segments through shared edges.
    let mut at: HashMap<EdgeId, Vec<usize>> = HashMap::new();
    for (k, (a, b)) in segments.iter().enumerate() {
        at.entry(*a).or_default().push(k);
        at.entry(*b).or_default().push(k);
    }
    let mut used = vec![false; segments.len()];
    let mut out = Vec::new();
    let extend = |start: EdgeId, first: usize, used: &mut Vec<bool>| {
        let mut chain = vec![start];
        let mut seg = first;
        let mut cur = start;
        loop {
            used[seg] = true;
            let (a, b) = segments[seg];
            cur = if a == cur { b } else { a };
            chain.push(cur);
            match at[&cur].iter().find(|&&s| !used[s]) {
                Some(&s) => seg = s,
                None => break,
            }
        }
        chain
    };
    // Open curves start at edges used by a single segment.
    let mut starts: Vec<(EdgeId, usize)> = at
        .iter()
        .filter(|(_, v)| v.len() == 1)
        .map(|(e, v)| (*e, v[0]))
        .collect();
    starts.sort_unstable();
    for (e, s) in starts {
        if !used[s] {
            out.push(extend(e, s, &mut used));
        }
    }
    for s in 0..segments.len() {
        if !used[s] {
            let e = segments[s].0;
            out.push(extend(e, s, &mut used));
        }
    }
    out.into_iter()
        .map(|chain| chain.into_iter().map(point).collect())
        .collect()
}

/// CSV rows `level,curve,x,y`.
pub fn contours_csv(sets: &[(String, Vec<LevelSet>)]) -> String {
    let mut s = String::from("function,level,curve,x,y\n");
    for (name, levels) in sets {
        for ls in levels {
            for (k, poly) in ls.polylines.iter().enumerate() {
                for p in poly {
                    let _ = writeln!(s, "{name},{:.16e},{k},{:.16e},{:.16e}", ls.level, p[0], p[1]);
                }
            }
        }
    }
    s
}

/// One styled family of curves in an SVG plot.
pub struct SvgLayer<'a> {
    pub label: &'a str,
    pub color: &'a str,
    pub dashed: bool,
    pub sets: &'a [LevelSet],
}

/// Standalone SVG with the domain frame and one path per level.
pub fn contours_svg(domain: &IntervalBox, layers: &[SvgLayer]) -> String {
    let size = 600.0;
    let pad = 20.0;
    let (wx, wy) = (domain[0].width(), domain[1].width());
    let scale = (size - 2.0 * pad) / wx.max(wy);
    let (w, h) = (wx * scale + 2.0 * pad, wy * scale + 2.0 * pad);
    let map = |p: &[f64; 2]| {
        (
            pad + (p[0] - domain[0].lo) * scale,
            h - pad - (p[1] - domain[1].lo) * scale,
        )
    };
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.1}" height="{h:.1}" viewBox="0 0 {w:.1} {h:.1}">"#
    );
    let _ = writeln!(
        s,
        r#"<rect x="{pad}" y="{pad}" width="{:.3}" height="{:.3}" fill="none" stroke="black"/>"#,
        wx * scale,
        wy * scale
    );
    for layer in layers {
        for ls in layer.sets {
            let mut d = String::new();
            for poly in &ls.polylines {
                for (k, p) in poly.iter().enumerate() {
                    let (x, y) = map(p);
                    let _ = write!(d, "{}{x:.3},{y:.3} ", if k == 0 { "M" } else { "L" });
                }
            }
            let dash = if layer.dashed { r#" stroke-dasharray="6,4""# } else { "" };
            let _ = writeln!(
                s,
                r#"<path d="{}" fill="none" stroke="{}" stroke-width="1.5"{dash}><title>{} = {}</title></path>"#,
                d.trim_end(),
                layer.color,
                layer.label,
                ls.level
            );
        }
    }
    s.push_str("</svg>\n");
    s
}
