//! Core geometric types: rank-space points, dominance cells, cuttings.
//!
//! All algorithms run in rank space: per axis, coordinates are replaced by
//! distinct integer ranks in `[0, N-1]`, ties broken by point id. Sentinels
//! `-1` and `N` stand for minus and plus infinity, so every closed predicate
//! is exact integer arithmetic with no degeneracies.

use crate::iomodel::{ExtVec, Record, Session, Word};

/// Integer coordinate in rank space, including the `-1`/`N` sentinels.
pub type Rank = i64;

/// A 3-D point in rank space with a stable identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Point3 {
    pub id: i64,
    pub x: Rank,
    pub y: Rank,
    pub z: Rank,
}

impl Record for Point3 {
    const WIDTH: usize = 4;
    #[inline]
    fn encode(&self, out: &mut [Word]) {
        out[0] = self.id;
        out[1] = self.x;
        out[2] = self.y;
        out[3] = self.z;
    }
    #[inline]
    fn decode(w: &[Word]) -> Self {
        Point3 { id: w[0], x: w[1], y: w[2], z: w[3] }
    }
}

/// Apex of a dominance cell `(-inf, x] x (-inf, y] x (-inf, z]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Apex {
    pub x: Rank,
    pub y: Rank,
    pub z: Rank,
}

impl Apex {
    pub fn new(x: Rank, y: Rank, z: Rank) -> Self {
        Apex { x, y, z }
    }

    /// Universal cell apex at `(+inf, +inf, +inf)` for a ground set of `n` points.
    pub fn universal(n: usize) -> Self {
        let s = n as Rank;
        Apex { x: s, y: s, z: s }
    }

    /// Closed containment: does this cell contain `(x, y, z)`?
    #[inline]
    pub fn contains(&self, x: Rank, y: Rank, z: Rank) -> bool {
        x <= self.x && y <= self.y && z <= self.z
    }

    #[inline]
    pub fn contains_point(&self, p: &Point3) -> bool {
        self.contains(p.x, p.y, p.z)
    }

    #[inline]
    pub fn contains_apex(&self, q: &Apex) -> bool {
        self.contains(q.x, q.y, q.z)
    }
}

impl Record for Apex {
    const WIDTH: usize = 3;
    #[inline]
    fn encode(&self, out: &mut [Word]) {
        out[0] = self.x;
        out[1] = self.y;
        out[2] = self.z;
    }
    #[inline]
    fn decode(w: &[Word]) -> Self {
        Apex { x: w[0], y: w[1], z: w[2] }
    }
}

/// A query apex with a stable id, used by the batched offline procedures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueryPoint {
    pub id: i64,
    pub apex: Apex,
}

impl Record for QueryPoint {
    const WIDTH: usize = 4;
    #[inline]
    fn encode(&self, out: &mut [Word]) {
        out[0] = self.id;
        self.apex.encode(&mut out[1..4]);
    }
    #[inline]
    fn decode(w: &[Word]) -> Self {
        QueryPoint { id: w[0], apex: Apex::decode(&w[1..4]) }
    }
}

/// One cell of a shallow cutting. The apex `z` is the creation height of the
/// sweep (`cre`), so the cell is `(-inf, x] x (-inf, y] x (-inf, cre]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cell {
    pub id: i64,
    pub apex: Apex,
    /// Sweep height at which the cell's outer corner left the staircase;
    /// `-1` if it survived to the end. Always `<= cre`.
    pub exp: Rank,
    /// Parent cell id in the coarser cutting, `None` for the root stage.
    pub parent: Option<i64>,
    /// Conflict-list run within the cutting's conflict sequence.
    pub conflict_off: u64,
    pub conflict_len: u64,
}

impl Cell {
    #[inline]
    pub fn cre(&self) -> Rank {
        self.apex.z
    }

    #[inline]
    pub fn conflict_size(&self) -> usize {
        self.conflict_len as usize
    }
}

impl Record for Cell {
    const WIDTH: usize = 8;
    fn encode(&self, out: &mut [Word]) {
        out[0] = self.id;
        self.apex.encode(&mut out[1..4]);
        out[4] = self.exp;
        out[5] = self.parent.unwrap_or(-1);
        out[6] = self.conflict_off as Word;
        out[7] = self.conflict_len as Word;
    }
    fn decode(w: &[Word]) -> Self {
        Cell {
            id: w[0],
            apex: Apex::decode(&w[1..4]),
            exp: w[4],
            parent: if w[5] < 0 { None } else { Some(w[5]) },
            conflict_off: w[6] as u64,
            conflict_len: w[7] as u64,
        }
    }
}

/// A k-level shallow cutting: cells plus their conflict lists, both stored
/// externally. Serialized form is a header `[k, cell_count, n_points]`
/// followed by the fixed-width cell records and the conflict-list runs.
pub struct Cutting {
    pub k: i64,
    pub n_points: usize,
    pub cells: ExtVec<Cell>,
    pub conflicts: ExtVec<Point3>,
}

impl Cutting {
    pub fn cell_count(&self, sess: &Session) -> usize {
        sess.len(self.cells)
    }

    /// Header sequence for the serialized layout.
    pub fn write_header(&self, sess: &mut Session) -> ExtVec<Word> {
        let h = sess.create::<Word>();
        sess.append(h, &[self.k, self.cell_count(sess) as Word, self.n_points as Word]);
        h
    }

    /// Read all cells into memory. Diagnostic path: cell tables at desk scale
    /// are small, but callers measuring I/O should snapshot stats first.
    pub fn load_cells(&self, sess: &mut Session) -> Vec<Cell> {
        let n = sess.len(self.cells);
        let mut out = Vec::with_capacity(n);
        let mut r = crate::iomodel::SeqReader::new(sess, self.cells);
        while let Some(c) = r.next(sess) {
            out.push(c);
        }
        out
    }

    /// Read one cell's conflict list into memory.
    pub fn load_conflict(&self, sess: &mut Session, cell: &Cell) -> Vec<Point3> {
        let mut out = Vec::with_capacity(cell.conflict_len as usize);
        let mut r = crate::iomodel::SeqReader::with_range(
            sess,
            self.conflicts,
            cell.conflict_off as usize,
            cell.conflict_len as usize,
        );
        while let Some(p) = r.next(sess) {
            out.push(p);
        }
        out
    }
}

/// Raw (pre-reduction) point with real coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawPoint {
    pub id: i64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

/// Per-axis map from raw coordinates back to ranks, for translating raw
/// query coordinates by predecessor search.
pub struct AxisMaps {
    sorted_x: Vec<f64>,
    sorted_y: Vec<f64>,
    sorted_z: Vec<f64>,
}

impl AxisMaps {
    fn rank_of(sorted: &[f64], v: f64) -> Rank {
        // Number of point coordinates <= v, minus one; -1 when below all.
        let mut lo = 0usize;
        let mut hi = sorted.len();
        while lo < hi {
            let mid = (lo + hi) / 2;
            if sorted[mid] <= v {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        lo as Rank - 1
    }

    pub fn map_query(&self, x: f64, y: f64, z: f64) -> Apex {
        Apex {
            x: Self::rank_of(&self.sorted_x, x),
            y: Self::rank_of(&self.sorted_y, y),
            z: Self::rank_of(&self.sorted_z, z),
        }
    }
}

/// Rank-space reduction: per-axis distinct ranks in `[0, N-1]`, ties broken
/// by id order. Pure CPU-side normalization applied before any accounted
/// phase begins.
pub fn rank_space_reduce(raw: &[RawPoint]) -> (Vec<Point3>, AxisMaps) {
    let n = raw.len();
    let mut out: Vec<Point3> =
        raw.iter().map(|r| Point3 { id: r.id, x: 0, y: 0, z: 0 }).collect();
    let mut order: Vec<usize> = (0..n).collect();

    let mut sorted_x = Vec::with_capacity(n);
    order.sort_by(|&a, &b| raw[a].x.total_cmp(&raw[b].x).then(raw[a].id.cmp(&raw[b].id)));
    for (rank, &i) in order.iter().enumerate() {
        out[i].x = rank as Rank;
        sorted_x.push(raw[i].x);
    }

    let mut sorted_y = Vec::with_capacity(n);
    order.sort_by(|&a, &b| raw[a].y.total_cmp(&raw[b].y).then(raw[a].id.cmp(&raw[b].id)));
    for (rank, &i) in order.iter().enumerate() {
        out[i].y = rank as Rank;
        sorted_y.push(raw[i].y);
    }

    let mut sorted_z = Vec::with_capacity(n);
    order.sort_by(|&a, &b| raw[a].z.total_cmp(&raw[b].z).then(raw[a].id.cmp(&raw[b].id)));
    for (rank, &i) in order.iter().enumerate() {
        out[i].z = rank as Rank;
        sorted_z.push(raw[i].z);
    }

    (out, AxisMaps { sorted_x, sorted_y, sorted_z })
}

/// Reflect a rank through the space of `n` points: `r -> n-1-r`. Maps point
/// ranks onto point ranks and swaps the two sentinels, turning downward
/// dominance queries into upward ones.
#[inline]
pub fn reflect(n: usize, r: Rank) -> Rank {
    n as Rank - 1 - r
}

pub fn reflect_apex(n: usize, a: Apex) -> Apex {
    Apex { x: reflect(n, a.x), y: reflect(n, a.y), z: reflect(n, a.z) }
}

pub fn reflect_point(n: usize, p: Point3) -> Point3 {
    Point3 { id: p.id, x: reflect(n, p.x), y: reflect(n, p.y), z: reflect(n, p.z) }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn contains_is_closed() {
        let a = Apex::new(3, 3, 3);
        assert!(a.contains(3, 3, 3));
        assert!(!a.contains(4, 3, 3));
        let u = Apex::universal(7);
        assert!(u.contains(7, 7, 7));
        assert!(u.contains(-1, 0, 3));
    }

    #[test]
    fn reduce_breaks_ties_by_id() {
        let raw = vec![
            RawPoint { id: 0, x: 5.0, y: 5.0, z: 5.0 },
            RawPoint { id: 1, x: 5.0, y: 1.0, z: 2.0 },
        ];
        let (pts, _) = rank_space_reduce(&raw);
        assert_eq!((pts[0].x, pts[1].x), (0, 1));
        assert_eq!((pts[0].y, pts[1].y), (1, 0));
        assert_eq!((pts[0].z, pts[1].z), (1, 0));
    }

    #[test]
    fn reduce_distinct_integers() {
        let raw = vec![
            RawPoint { id: 10, x: 1.0, y: 1.0, z: 1.0 },
            RawPoint { id: 11, x: 2.0, y: 2.0, z: 2.0 },
        ];
        let (pts, _) = rank_space_reduce(&raw);
        assert_eq!((pts[0].x, pts[0].y, pts[0].z), (0, 0, 0));
        assert_eq!((pts[1].x, pts[1].y, pts[1].z), (1, 1, 1));
    }

    #[test]
    fn query_below_all_maps_to_minus_one() {
        let raw = vec![
            RawPoint { id: 0, x: 1.0, y: 2.0, z: 3.0 },
            RawPoint { id: 1, x: 4.0, y: 5.0, z: 6.0 },
        ];
        let (_, maps) = rank_space_reduce(&raw);
        let q = maps.map_query(0.5, 10.0, 4.0);
        assert_eq!(q, Apex::new(-1, 1, 0));
    }

    #[test]
    fn reflect_swaps_sentinels() {
        assert_eq!(reflect(8, -1), 8);
        assert_eq!(reflect(8, 8), -1);
        assert_eq!(reflect(8, 0), 7);
    }
}
