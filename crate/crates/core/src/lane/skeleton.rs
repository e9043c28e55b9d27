//! Morphological thinning, skeleton tracing and polyline simplification.

use std::collections::{BTreeSet, HashSet};

use crate::geom::{point_segment_distance, Point};

use super::grid::{distance_transform, BinaryGrid};

const N8: [(i64, i64); 8] = [(0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1)];

/// Zhang-Suen two-subiteration thinning. The result is a subset of `grid`.
///
/// Only pixels touching the background can ever be deleted, so each
/// subiteration evaluates the current frontier instead of the whole raster.
pub fn thin(grid: &BinaryGrid) -> BinaryGrid {
    let mut g = grid.clone();
    let on_border = |g: &BinaryGrid, (c, r): Pixel| {
        N8.iter().any(|(dx, dy)| !g.get_signed(c as i64 + dx, r as i64 + dy))
    };
    let mut frontier: BTreeSet<Pixel> = g.iter_set().filter(|&p| on_border(&g, p)).collect();
    loop {
        let mut changed = false;
        for pass in 0..2 {
            let remove: Vec<Pixel> = frontier
                .iter()
                .copied()
                .filter(|&(c, r)| g.get(c, r) && deletable(&g, c as i64, r as i64, pass))
                .collect();
            if remove.is_empty() {
                continue;
            }
            changed = true;
            for &(c, r) in &remove {
                g.set(c, r, false);
            }
            for &(c, r) in &remove {
                frontier.remove(&(c, r));
                for (dx, dy) in N8 {
                    let (nc, nr) = (c as i64 + dx, r as i64 + dy);
                    if g.get_signed(nc, nr) {
                        frontier.insert((nc as usize, nr as usize));
                    }
                }
            }
        }
        if !changed {
            return g;
        }
    }
}

fn deletable(g: &BinaryGrid, c: i64, r: i64, pass: usize) -> bool {
    // p2..p9 clockwise from north.
    let mut p = [false; 8];
    for (slot, (dx, dy)) in p.iter_mut().zip(N8) {
        *slot = g.get_signed(c + dx, r + dy);
    }
    let b = p.iter().filter(|&&v| v).count();
    if !(2..=6).contains(&b) {
        return false;
    }
    let a = (0..8).filter(|&i| !p[i] && p[(i + 1) % 8]).count();
    if a != 1 {
        return false;
    }
    let (p2, p4, p6, p8) = (p[0], p[2], p[4], p[6]);
    if pass == 0 {
        !(p2 && p4 && p6) && !(p4 && p6 && p8)
    } else {
        !(p2 && p4 && p8) && !(p2 && p6 && p8)
    }
}

type Pixel = (usize, usize);

/// Skeleton adjacency: 4-neighbors, plus diagonals that are not already
/// bridged by a shared 4-neighbor (drops staircase triangles).
fn neighbors(g: &BinaryGrid, (c, r): Pixel) -> Vec<Pixel> {
    let (c, r) = (c as i64, r as i64);
    let mut out = Vec::with_capacity(8);
    for (dx, dy) in N8 {
        if !g.get_signed(c + dx, r + dy) {
            continue;
        }
        if dx != 0 && dy != 0 && (g.get_signed(c + dx, r) || g.get_signed(c, r + dy)) {
            continue;
        }
        out.push(((c + dx) as usize, (r + dy) as usize));
    }
    out
}

fn step_len(a: Pixel, b: Pixel) -> f64 {
    if a.0 != b.0 && a.1 != b.1 {
        std::f64::consts::SQRT_2
    } else {
        1.0
    }
}

fn path_len(path: &[Pixel]) -> f64 {
    path.windows(2).map(|w| step_len(w[0], w[1])).sum()
}

/// Splits a skeleton into branches between nodes (pixels whose degree is not
/// 2). Node-free cycles come back closed (first pixel repeated at the end).
fn branches(g: &BinaryGrid) -> Vec<Vec<Pixel>> {
    // Row-major order keeps tracing deterministic.
    let ordered: Vec<Pixel> = g.iter_set().collect();
    let degree = |p: Pixel| neighbors(g, p).len();
    let is_node = |p: Pixel| degree(p) != 2;

    let mut out = Vec::new();
    let mut used_edges: HashSet<(Pixel, Pixel)> = HashSet::new();
    let mut seen: HashSet<Pixel> = HashSet::new();
    for &node in ordered.iter().filter(|&&p| is_node(p)) {
        seen.insert(node);
        let nbs = neighbors(g, node);
        if nbs.is_empty() {
            out.push(vec![node]);
            continue;
        }
        for nb in nbs {
            if used_edges.contains(&(node, nb)) {
                continue;
            }
            let mut path = vec![node];
            let (mut prev, mut cur) = (node, nb);
            used_edges.insert((prev, cur));
            used_edges.insert((cur, prev));
            loop {
                path.push(cur);
                seen.insert(cur);
                if is_node(cur) {
                    break;
                }
                let next = neighbors(g, cur).into_iter().find(|&n| n != prev);
                match next {
                    Some(n) if !used_edges.contains(&(cur, n)) => {
                        used_edges.insert((cur, n));
                        used_edges.insert((n, cur));
                        prev = cur;
                        cur = n;
                    }
                    _ => break,
                }
            }
            out.push(path);
        }
    }
    for &start in &ordered {
        if seen.contains(&start) {
            continue;
        }
        let mut path = vec![start];
        seen.insert(start);
        let (mut prev, mut cur) = (start, neighbors(g, start)[0]);
        while cur != start {
            path.push(cur);
            seen.insert(cur);
            let next = neighbors(g, cur).into_iter().find(|&n| n != prev);
            match next {
                Some(n) => {
                    prev = cur;
                    cur = n;
                }
                None => break,
            }
        }
        path.push(start);
        out.push(path);
    }
    out
}

/// Removes terminal branches shorter than `min_len` that hang off a junction.
fn prune_spurs(g: &mut BinaryGrid, min_len: f64) {
    loop {
        let mut removed = false;
        for b in branches(g) {
            if b.len() < 2 {
                continue;
            }
            let (a, z) = (b[0], *b.last().unwrap());
            let (da, dz) = (neighbors(g, a).len(), neighbors(g, z).len());
            let (spur, keep) = if da == 1 && dz >= 3 {
                (&b[..b.len() - 1], z)
            } else if dz == 1 && da >= 3 {
                (&b[1..], a)
            } else {
                continue;
            };
            if path_len(&b) < min_len {
                for &p in spur {
                    if p != keep {
                        g.set(p.0, p.1, false);
                    }
                }
                removed = true;
            }
        }
        if !removed {
            return;
        }
    }
}

/// Recursive farthest-point splitting. Every dropped point lies within `eps`
/// of the kept segment that replaces it.
pub fn douglas_peucker(points: &[Point], eps: f64) -> Vec<Point> {
    let n = points.len();
    if n < 3 {
        return points.to_vec();
    }
    let mut keep = vec![false; n];
    keep[0] = true;
    keep[n - 1] = true;
    let mut stack = vec![(0, n - 1)];
    while let Some((s, e)) = stack.pop() {
        if e <= s + 1 {
            continue;
        }
        let (mut best, mut best_d) = (s, -1.0);
        for i in s + 1..e {
            let d = point_segment_distance(points[i], points[s], points[e]);
            if d > best_d {
                best = i;
                best_d = d;
            }
        }
        if best_d > eps {
            keep[best] = true;
            stack.push((s, best));
            stack.push((best, e));
        }
    }
    points.iter().zip(keep).filter(|(_, k)| *k).map(|(p, _)| *p).collect()
}

fn pixel_center(p: Pixel) -> Point {
    Point::new(p.0 as f64 + 0.5, p.1 as f64 + 0.5)
}

/// A traced skeleton path before simplification, with flags telling whether
/// each end is a free skeleton end (not a junction).
#[derive(Debug, Clone)]
pub struct TracedPath {
    pub points: Vec<Point>,
    pub free_start: bool,
    pub free_end: bool,
}

/// Thins, prunes short spurs and traces the skeleton into paths.
pub fn trace_skeleton(grid: &BinaryGrid) -> Vec<TracedPath> {
    if grid.is_empty() {
        return Vec::new();
    }
    let dt = distance_transform(grid);
    let max_dt = dt.iter().copied().fold(0.0, f64::max);
    let mut skel = thin(grid);
    prune_spurs(&mut skel, 2.0 * max_dt);
    branches(&skel)
        .into_iter()
        .filter(|b| b.len() >= 2)
        .map(|b| {
            let closed = b.first() == b.last();
            let free = |p: Pixel| !closed && neighbors(&skel, p).len() == 1;
            TracedPath {
                free_start: free(b[0]),
                free_end: free(*b.last().unwrap()),
                points: b.into_iter().map(pixel_center).collect(),
            }
        })
        .collect()
}

/// Centerline polylines of a mask: thinning, tracing, simplification with
/// tolerance `eps` pixels. Empty masks give no polylines.
pub fn extract_centerline(grid: &BinaryGrid, eps: f64) -> Vec<Vec<Point>> {
    trace_skeleton(grid)
        .into_iter()
        .map(|p| douglas_peucker(&p.points, eps))
        .filter(|p| p.len() >= 2)
        .collect()
}

/// Pushes `from` along `dir` in half-pixel steps while it stays in the mask.
fn march(grid: &BinaryGrid, from: Point, dir: Point) -> Point {
    let len = dir.norm();
    if len == 0.0 {
        return from;
    }
    let step = dir.scale(0.5 / len);
    let mut cur = from;
    loop {
        let next = cur.add(step);
        if !grid.contains_point(next) {
            return cur;
        }
        cur = next;
    }
}

/// Like [`extract_centerline`], but free ends are extended along their
/// terminal direction up to the mask border, undoing the end shortening
/// that thinning introduces.
pub fn extract_extended_centerline(grid: &BinaryGrid, eps: f64) -> Vec<Vec<Point>> {
    trace_skeleton(grid)
        .into_iter()
        .filter_map(|p| {
            let mut line = douglas_peucker(&p.points, eps);
            if line.len() < 2 {
                return None;
            }
            let n = line.len();
            if p.free_start {
                line[0] = march(grid, line[0], line[0].sub(line[1]));
            }
            if p.free_end {
                line[n - 1] = march(grid, line[n - 1], line[n - 1].sub(line[n - 2]));
            }
            Some(line)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn skeleton_of_band_is_inside_and_thin() {
        let g = BinaryGrid::from_fn(60, 30, |c, r| (5..55).contains(&c) && (10..21).contains(&r));
        let s = thin(&g);
        assert!(s.iter_set().all(|(c, r)| g.get(c, r)));
        // One pixel per column in the middle of the band.
        for c in 20..40 {
            let rows: Vec<_> = (0..30).filter(|&r| s.get(c, r)).collect();
            assert_eq!(rows, vec![15], "column {c}");
        }
    }

    #[test]
    fn empty_grid_has_no_centerline() {
        assert!(extract_centerline(&BinaryGrid::new(10, 10), 2.0).is_empty());
    }

    #[test]
    fn dp_keeps_corner() {
        let pts: Vec<Point> = (0..=10)
            .map(|i| Point::new(i as f64, 0.0))
            .chain((1..=10).map(|i| Point::new(10.0, i as f64)))
            .collect();
        let s = douglas_peucker(&pts, 0.5);
        assert_eq!(s, vec![Point::new(0.0, 0.0), Point::new(10.0, 0.0), Point::new(10.0, 10.0)]);
    }

    #[test]
    fn ring_traces_as_closed_path() {
        let g = BinaryGrid::from_fn(12, 12, |c, r| {
            let border = c == 2 || c == 9 || r == 2 || r == 9;
            border && (2..10).contains(&c) && (2..10).contains(&r)
        });
        let paths = trace_skeleton(&g);
        assert_eq!(paths.len(), 1);
        assert_eq!(paths[0].points.first(), paths[0].points.last());
    }
}
