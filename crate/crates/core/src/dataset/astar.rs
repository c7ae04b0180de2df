//! 8-connected grid search.
//!
//! Costs are kept as exact `(straight, diagonal)` move counts so two optimal
//! paths always compare equal, whatever order their steps were summed in.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::sim::{Cell, OccupancyGrid};
use crate::{Error, Result};

const SQRT2: f64 = std::f64::consts::SQRT_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct PathCost {
    pub straight: u32,
    pub diagonal: u32,
}

impl PathCost {
    pub fn value(&self) -> f64 {
        self.straight as f64 + self.diagonal as f64 * SQRT2
    }

    fn plus(self, diagonal: bool) -> Self {
        if diagonal {
            Self {
                diagonal: self.diagonal + 1,
                ..self
            }
        } else {
            Self {
                straight: self.straight + 1,
                ..self
            }
        }
    }
}

pub fn octile(a: Cell, b: Cell) -> f64 {
    let dx = a.0.abs_diff(b.0) as f64;
    let dy = a.1.abs_diff(b.1) as f64;
    dx.max(dy) + (SQRT2 - 1.0) * dx.min(dy)
}

/// Free neighbours of `c`; diagonal moves need both adjacent orthogonal
/// cells free so paths never cut an occupied corner.
pub fn neighbours(grid: &OccupancyGrid, c: Cell) -> impl Iterator<Item = (Cell, bool)> + '_ {
    const DIRS: [(i64, i64); 8] = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)];
    let free = move |x: i64, y: i64| x >= 0 && y >= 0 && grid.is_free((x as usize, y as usize));
    let (x, y) = (c.0 as i64, c.1 as i64);
    DIRS.into_iter().filter_map(move |(dx, dy)| {
        let (nx, ny) = (x + dx, y + dy);
        if !free(nx, ny) {
            return None;
        }
        let diagonal = dx != 0 && dy != 0;
        if diagonal && !(free(x + dx, y) && free(x, y + dy)) {
            return None;
        }
        Some(((nx as usize, ny as usize), diagonal))
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Entry {
    f: f64,
    h: f64,
    index: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    // Reversed for a min-heap on (f, h, index).
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .f
            .total_cmp(&self.f)
            .then_with(|| other.h.total_cmp(&self.h))
            .then_with(|| other.index.cmp(&self.index))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn search(
    grid: &OccupancyGrid,
    start: Cell,
    heuristic: impl Fn(Cell) -> f64,
    mut visit: impl FnMut(Cell, PathCost) -> bool,
) -> (Vec<Option<PathCost>>, Vec<usize>) {
    let n = grid.len();
    let mut cost: Vec<Option<PathCost>> = vec![None; n];
    let mut parent = vec![usize::MAX; n];
    let mut closed = vec![false; n];
    let mut heap = BinaryHeap::new();
    let s = grid.index(start);
    cost[s] = Some(PathCost::default());
    let h0 = heuristic(start);
    heap.push(Entry { f: h0, h: h0, index: s });
    while let Some(Entry { index, .. }) = heap.pop() {
        if closed[index] {
            continue;
        }
        closed[index] = true;
        let cell = grid.cell_of_index(index);
        let g = cost[index].expect("queued cells have a cost");
        if visit(cell, g) {
            break;
        }
        for (nb, diagonal) in neighbours(grid, cell) {
            let ni = grid.index(nb);
            if closed[ni] {
                continue;
            }
            let cand = g.plus(diagonal);
            if cost[ni].is_none_or(|c| cand.value() < c.value()) {
                cost[ni] = Some(cand);
                parent[ni] = index;
                let h = heuristic(nb);
                heap.push(Entry {
                    f: cand.value() + h,
                    h,
                    index: ni,
                });
            }
        }
    }
    (cost, parent)
}

fn unwind(grid: &OccupancyGrid, parent: &[usize], start: Cell, goal: Cell) -> Vec<Cell> {
    let s = grid.index(start);
    let mut i = grid.index(goal);
    let mut path = vec![goal];
    while i != s {
        i = parent[i];
        path.push(grid.cell_of_index(i));
    }
    path.reverse();
    path
}

/// Cost-minimal path from `start` to `goal`, both included.
pub fn astar(grid: &OccupancyGrid, start: Cell, goal: Cell) -> Result<Vec<Cell>> {
    let no_path = || Error::NoPath { start, goal };
    if !grid.is_free(start) || !grid.is_free(goal) {
        return Err(no_path());
    }
    let mut reached = false;
    let (_, parent) = search(grid, start, |c| octile(c, goal), |c, _| {
        reached = c == goal;
        reached
    });
    if !reached {
        return Err(no_path());
    }
    Ok(unwind(grid, &parent, start, goal))
}

pub fn path_cost(path: &[Cell]) -> PathCost {
    path.windows(2).fold(PathCost::default(), |acc, w| {
        acc.plus(w[0].0 != w[1].0 && w[0].1 != w[1].1)
    })
}

/// Uniform-cost expansion from `start`.
pub struct Dijkstra {
    pub cost: Vec<Option<PathCost>>,
    parent: Vec<usize>,
    start: Cell,
}

impl Dijkstra {
    /// Expands until `stop` returns true for a popped cell, or everything
    /// reachable has been settled. Returns the stopping cell, if any.
    pub fn run(grid: &OccupancyGrid, start: Cell, mut stop: impl FnMut(Cell) -> bool) -> (Self, Option<Cell>) {
        let mut hit = None;
        let (cost, parent) = if grid.is_free(start) {
            search(grid, start, |_| 0.0, |c, _| {
                if stop(c) {
                    hit = Some(c);
                    true
                } else {
                    false
                }
            })
        } else {
            (vec![None; grid.len()], vec![usize::MAX; grid.len()])
        };
        (Self { cost, parent, start }, hit)
    }

    pub fn path_to(&self, grid: &OccupancyGrid, goal: Cell) -> Option<Vec<Cell>> {
        self.cost[grid.index(goal)]?;
        Some(unwind(grid, &self.parent, self.start, goal))
    }
}
