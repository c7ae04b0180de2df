//! Boolean occupancy grids, either world-aligned or attached to a pose.

use serde::{Deserialize, Serialize};

use super::geometry::{Obstacle, Pose, Rect};
use crate::{Error, Result};

const EPS: f64 = 1e-9;

/// Grid of square cells. Cell `(ix, iy)` spans
/// `origin + [ix, ix+1) * resolution` along the frame's forward axis and
/// `origin + [iy, iy+1) * resolution` along its left axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyGrid {
    pub resolution: f64,
    pub width: usize,
    pub height: usize,
    pub frame: Pose,
    pub origin: (f64, f64),
    pub occupied: Vec<bool>,
}

pub type Cell = (usize, usize);

impl OccupancyGrid {
    pub fn empty(resolution: f64, width: usize, height: usize, frame: Pose, origin: (f64, f64)) -> Self {
        Self {
            resolution,
            width,
            height,
            frame,
            origin,
            occupied: vec![false; width * height],
        }
    }

    /// Grid centred on `pose`, `nx` cells forward-back and `ny` left-right.
    pub fn egocentric(pose: Pose, nx: usize, ny: usize, resolution: f64) -> Self {
        let origin = (-(nx as f64) * resolution / 2.0, -(ny as f64) * resolution / 2.0);
        Self::empty(resolution, nx, ny, pose, origin)
    }

    pub fn index(&self, (ix, iy): Cell) -> usize {
        iy * self.width + ix
    }

    pub fn cell_of_index(&self, i: usize) -> Cell {
        (i % self.width, i / self.width)
    }

    pub fn len(&self) -> usize {
        self.occupied.len()
    }

    pub fn is_empty(&self) -> bool {
        self.occupied.is_empty()
    }

    pub fn in_range(&self, (ix, iy): Cell) -> bool {
        ix < self.width && iy < self.height
    }

    pub fn is_free(&self, c: Cell) -> bool {
        self.in_range(c) && !self.occupied[self.index(c)]
    }

    pub fn set(&mut self, c: Cell, occ: bool) {
        let i = self.index(c);
        self.occupied[i] = occ;
    }

    pub fn cell_center_local(&self, (ix, iy): Cell) -> (f64, f64) {
        (
            self.origin.0 + (ix as f64 + 0.5) * self.resolution,
            self.origin.1 + (iy as f64 + 0.5) * self.resolution,
        )
    }

    pub fn cell_center_world(&self, c: Cell) -> (f64, f64) {
        let (f, l) = self.cell_center_local(c);
        self.frame.to_world(f, l)
    }

    pub fn local_to_cell(&self, f: f64, l: f64) -> Option<Cell> {
        let fx = ((f - self.origin.0) / self.resolution).floor();
        let fy = ((l - self.origin.1) / self.resolution).floor();
        if fx < 0.0 || fy < 0.0 {
            return None;
        }
        let c = (fx as usize, fy as usize);
        self.in_range(c).then_some(c)
    }

    pub fn world_to_cell(&self, x: f64, y: f64) -> Option<Cell> {
        let (f, l) = self.frame.to_local(x, y);
        self.local_to_cell(f, l)
    }

    /// Marks every cell that overlaps an obstacle footprint with positive
    /// area, or that sticks out of `bounds`.
    pub fn rasterize(&mut self, bounds: &Rect, obstacles: &[Obstacle]) {
        let half = self.resolution / 2.0;
        let (s, c) = self.frame.yaw.sin_cos();
        for i in 0..self.len() {
            let cell = self.cell_of_index(i);
            let (cx, cy) = self.cell_center_world(cell);
            let sq = RotatedSquare { cx, cy, half, c, s };
            self.occupied[i] = !sq.inside(bounds) || obstacles.iter().any(|o| sq.overlaps(&o.footprint));
        }
    }

    /// World-aligned grid over `bounds`.
    pub fn world(bounds: &Rect, obstacles: &[Obstacle], resolution: f64) -> Self {
        let w = (bounds.width() / resolution - EPS).ceil().max(1.0) as usize;
        let h = (bounds.height() / resolution - EPS).ceil().max(1.0) as usize;
        let mut g = Self::empty(resolution, w, h, Pose::default(), (bounds.min_x, bounds.min_y));
        // Cells past the far edge are only partly inside; they count as in.
        let padded = Rect::new(
            bounds.min_x,
            bounds.min_y,
            bounds.min_x + w as f64 * resolution,
            bounds.min_y + h as f64 * resolution,
        );
        g.rasterize(&padded, obstacles);
        g
    }

    /// Navigation grid whose free cells are centres with at least
    /// `clearance` to every obstacle and to the bounds.
    pub fn clearance(bounds: &Rect, obstacles: &[Obstacle], resolution: f64, clearance: f64) -> Self {
        let mut g = Self::world(bounds, &[], resolution);
        for i in 0..g.len() {
            let (x, y) = g.cell_center_world(g.cell_of_index(i));
            let inside = x - clearance >= bounds.min_x
                && x + clearance <= bounds.max_x
                && y - clearance >= bounds.min_y
                && y + clearance <= bounds.max_y;
            g.occupied[i] = !inside || obstacles.iter().any(|o| o.footprint.distance(x, y) < clearance);
        }
        g
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.occupied.iter().map(|&o| if o { 1.0 } else { 0.0 }).collect()
    }

    /// Alternating run lengths, starting with a (possibly empty) free run.
    pub fn to_rle(&self) -> String {
        let mut runs = Vec::new();
        let mut current = false;
        let mut n = 0usize;
        for &o in &self.occupied {
            if o == current {
                n += 1;
            } else {
                runs.push(n.to_string());
                current = o;
                n = 1;
            }
        }
        runs.push(n.to_string());
        runs.join(",")
    }

    pub fn occupied_from_rle(rle: &str, len: usize) -> Result<Vec<bool>> {
        let mut out = Vec::with_capacity(len);
        let mut current = false;
        for tok in rle.split(',') {
            let n: usize = tok
                .trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad run length {tok:?}")))?;
            out.extend(std::iter::repeat(current).take(n));
            current = !current;
        }
        if out.len() != len {
            return Err(Error::InvalidArgument(format!(
                "run lengths cover {} cells, expected {len}",
                out.len()
            )));
        }
        Ok(out)
    }
}

struct RotatedSquare {
    cx: f64,
    cy: f64,
    half: f64,
    c: f64,
    s: f64,
}

impl RotatedSquare {
    fn corners(&self) -> [(f64, f64); 4] {
        let (h, c, s) = (self.half, self.c, self.s);
        let mut out = [(0.0, 0.0); 4];
        for (k, (a, b)) in [(-h, -h), (h, -h), (h, h), (-h, h)].into_iter().enumerate() {
            out[k] = (self.cx + c * a - s * b, self.cy + s * a + c * b);
        }
        out
    }

    fn inside(&self, r: &Rect) -> bool {
        self.corners().iter().all(|&(x, y)| {
            x >= r.min_x - EPS && x <= r.max_x + EPS && y >= r.min_y - EPS && y <= r.max_y + EPS
        })
    }

    /// Separating-axis test requiring strictly positive overlap on every axis.
    fn overlaps(&self, r: &Rect) -> bool {
        let ext = self.half * (self.c.abs() + self.s.abs());
        if self.cx + ext <= r.min_x + EPS || self.cx - ext >= r.max_x - EPS {
            return false;
        }
        if self.cy + ext <= r.min_y + EPS || self.cy - ext >= r.max_y - EPS {
            return false;
        }
        for axis in [(self.c, self.s), (-self.s, self.c)] {
            let centre = self.cx * axis.0 + self.cy * axis.1;
            let (lo, hi) = r
                .corners()
                .iter()
                .map(|&(x, y)| x * axis.0 + y * axis.1)
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p), b.max(p)));
            if centre + self.half <= lo + EPS || centre - self.half >= hi - EPS {
                return false;
            }
        }
        true
    }
}
