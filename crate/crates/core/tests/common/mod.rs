use oavat::sim::{OccupancyGrid, Pose};

/// Plain uniform-cost search over the same 8-connected, no-corner-cutting
/// moves, with exact `(straight, diagonal)` counts.
pub fn oracle_cost(blocked: &[bool], w: usize, h: usize, start: (usize, usize), goal: (usize, usize)) -> Option<(u32, u32)> {
    use std::cmp::Reverse;
    use std::collections::BinaryHeap;
    let free = |x: i64, y: i64| x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h && !blocked[y as usize * w + x as usize];
    let value = |c: (u32, u32)| c.0 as f64 + c.1 as f64 * std::f64::consts::SQRT_2;
    let key = |c: (u32, u32)| Reverse((value(c).to_bits(), c));
    if !free(start.0 as i64, start.1 as i64) || !free(goal.0 as i64, goal.1 as i64) {
        return None;
    }
    let mut best: Vec<Option<(u32, u32)>> = vec![None; w * h];
    let mut heap = BinaryHeap::new();
    best[start.1 * w + start.0] = Some((0, 0));
    heap.push((key((0, 0)), start));
    while let Some((Reverse((_, c)), (x, y))) = heap.pop() {
        if best[y * w + x] != Some(c) {
            continue;
        }
        if (x, y) == goal {
            return Some(c);
        }
        for dx in -1i64..=1 {
            for dy in -1i64..=1 {
                if (dx, dy) == (0, 0) {
                    continue;
                }
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                let diagonal = dx != 0 && dy != 0;
                if !free(nx, ny) || (diagonal && !(free(x as i64 + dx, y as i64) && free(x as i64, y as i64 + dy))) {
                    continue;
                }
                let n = if diagonal { (c.0, c.1 + 1) } else { (c.0 + 1, c.1) };
                let i = ny as usize * w + nx as usize;
                if best[i].is_none_or(|b| value(n) < value(b)) {
                    best[i] = Some(n);
                    heap.push((key(n), (nx as usize, ny as usize)));
                }
            }
        }
    }
    None
}

pub fn occupancy(w: usize, h: usize, blocked: &[bool]) -> OccupancyGrid {
    let mut g = OccupancyGrid::empty(1.0, w, h, Pose::default(), (0.0, 0.0));
    for y in 0..h {
        for x in 0..w {
            g.set((x, y), blocked[y * w + x]);
        }
    }
    g
}
