use crate::geom::{horizontal_crossings, Point};

use super::LaneError;

/// Row-major boolean raster; cell `(col, row)` has its center at
/// `(col + 0.5, row + 0.5)` in pixel coordinates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryGrid {
    width: usize,
    height: usize,
    cells: Vec<bool>,
}

impl BinaryGrid {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, cells: vec![false; width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, col: usize, row: usize) -> bool {
        self.cells[row * self.width + col]
    }

    /// Out-of-range coordinates read as background.
    pub fn get_signed(&self, col: i64, row: i64) -> bool {
        col >= 0
            && row >= 0
            && (col as usize) < self.width
            && (row as usize) < self.height
            && self.get(col as usize, row as usize)
    }

    /// Cell containing the continuous point `p`.
    pub fn contains_point(&self, p: Point) -> bool {
        self.get_signed(p.x.floor() as i64, p.y.floor() as i64)
    }

    pub fn set(&mut self, col: usize, row: usize, value: bool) {
        self.cells[row * self.width + col] = value;
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.cells.iter().any(|&c| c)
    }

    pub fn union_with(&mut self, other: &BinaryGrid) {
        for (a, b) in self.cells.iter_mut().zip(&other.cells) {
            *a |= *b;
        }
    }

    pub fn iter_set(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, &c)| c)
            .map(|(i, _)| (i % self.width, i / self.width))
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut g = Self::new(width, height);
        for row in 0..height {
            for col in 0..width {
                g.cells[row * width + col] = f(col, row);
            }
        }
        g
    }
}

/// Cells whose centers fall inside `polygon` under the even-odd rule,
/// clipped to a `width` x `height` image.
pub fn rasterize_polygon(polygon: &[Point], width: usize, height: usize) -> Result<BinaryGrid, LaneError> {
    if polygon.len() < 3 {
        return Err(LaneError::Geometry(format!("polygon has {} vertices", polygon.len())));
    }
    if !polygon.iter().all(|p| p.is_finite()) {
        return Err(LaneError::Geometry("non-finite polygon vertex".into()));
    }
    let mut grid = BinaryGrid::new(width, height);
    for row in 0..height {
        let yc = row as f64 + 0.5;
        let xs = horizontal_crossings(yc, polygon);
        for pair in xs.chunks_exact(2) {
            let (x0, x1) = (pair[0], pair[1]);
            let lo = (x0.floor() as i64 - 1).max(0);
            let hi = (x1.ceil() as i64 + 1).min(width as i64);
            for col in lo..hi {
                let xc = col as f64 + 0.5;
                if x0 <= xc && xc < x1 {
                    grid.set(col as usize, row, true);
                }
            }
        }
    }
    Ok(grid)
}

/// Chamfer (1, sqrt 2) distance from each set cell to the nearest background
/// cell; cells outside the grid count as background.
pub fn distance_transform(grid: &BinaryGrid) -> Vec<f64> {
    let (w, h) = (grid.width(), grid.height());
    let diag = std::f64::consts::SQRT_2;
    let mut d: Vec<f64> = (0..w * h)
        .map(|i| if grid.cells[i] { f64::INFINITY } else { 0.0 })
        .collect();
    let at = |d: &Vec<f64>, c: i64, r: i64| -> f64 {
        if c < 0 || r < 0 || c >= w as i64 || r >= h as i64 {
            0.0
        } else {
            d[r as usize * w + c as usize]
        }
    };
    for r in 0..h as i64 {
        for c in 0..w as i64 {
            let i = r as usize * w + c as usize;
            if d[i] == 0.0 {
                continue;
            }
            let v = (at(&d, c - 1, r) + 1.0)
                .min(at(&d, c, r - 1) + 1.0)
                .min(at(&d, c - 1, r - 1) + diag)
                .min(at(&d, c + 1, r - 1) + diag);
            d[i] = d[i].min(v);
        }
    }
    for r in (0..h as i64).rev() {
        for c in (0..w as i64).rev() {
            let i = r as usize * w + c as usize;
            if d[i] == 0.0 {
                continue;
            }
            let v = (at(&d, c + 1, r) + 1.0)
                .min(at(&d, c, r + 1) + 1.0)
                .min(at(&d, c + 1, r + 1) + diag)
                .min(at(&d, c - 1, r + 1) + diag);
            d[i] = d[i].min(v);
        }
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(x0: f64, y0: f64, x1: f64, y1: f64) -> Vec<Point> {
        vec![Point::new(x0, y0), Point::new(x1, y0), Point::new(x1, y1), Point::new(x0, y1)]
    }

    #[test]
    fn square_covers_expected_cells() {
        let g = rasterize_polygon(&square(2.0, 2.0, 6.0, 6.0), 8, 8).unwrap();
        assert_eq!(g.count(), 16);
        for (c, r) in g.iter_set() {
            assert!((2..6).contains(&c) && (2..6).contains(&r));
        }
    }

    #[test]
    fn outside_polygon_is_empty() {
        let g = rasterize_polygon(&square(20.0, 20.0, 30.0, 30.0), 8, 8).unwrap();
        assert!(g.is_empty());
        let g = rasterize_polygon(&square(-10.0, -10.0, -1.0, 4.0), 8, 8).unwrap();
        assert!(g.is_empty());
    }

    #[test]
    fn degenerate_polygon_rejected() {
        assert!(rasterize_polygon(&[Point::new(0.0, 0.0), Point::new(1.0, 1.0)], 4, 4).is_err());
    }

    #[test]
    fn distance_transform_of_band() {
        let g = BinaryGrid::from_fn(20, 11, |_, _| true);
        let d = distance_transform(&g);
        assert_eq!(d[5 * 20 + 10], 6.0);
    }
}
