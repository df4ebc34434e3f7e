//! Batched offline find-any: assign to each query point any containing cell.
//!
//! Cells and queries are merged into one stream sorted by z descending, so a
//! cell is "active" for every query it precedes. The remaining 2-D question
//! (is there an active cell with apex x and y above the query?) is solved by
//! distribution sweeping: partition the y-order into `O(M/B)` strips; during
//! the z-sweep each strip tracks the maximum apex-x among its active cells,
//! so a query in strip `s` is answered by the suffix maxima of strips above
//! it - any such witness dominates the whole strip in y. Queries that no
//! higher strip can answer recurse into their own strip; subproblems that
//! fit in a quarter of memory are solved by a resident scan.

use crate::extsort::external_sort_by;
use crate::geometry::{Cell, QueryPoint, Rank};
use crate::iomodel::{ExtVec, Record, SeqReader, SeqWriter, Session, Word};

/// Outcome for one query: a containing cell's id, or none.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FindAnyResult {
    pub query_id: i64,
    pub cell_id: Option<i64>,
}

impl Record for FindAnyResult {
    const WIDTH: usize = 2;
    fn encode(&self, out: &mut [Word]) {
        out[0] = self.query_id;
        out[1] = self.cell_id.unwrap_or(-1);
    }
    fn decode(w: &[Word]) -> Self {
        FindAnyResult { query_id: w[0], cell_id: if w[1] < 0 { None } else { Some(w[1]) } }
    }
}

const KIND_QUERY: Word = 0;
const KIND_CELL: Word = 1;

/// Internal sweep item: a cell apex or a query apex.
#[derive(Debug, Clone, Copy)]
struct Item {
    kind: Word,
    id: i64,
    x: Rank,
    y: Rank,
    z: Rank,
}

impl Record for Item {
    const WIDTH: usize = 5;
    fn encode(&self, out: &mut [Word]) {
        out[0] = self.kind;
        out[1] = self.id;
        out[2] = self.x;
        out[3] = self.y;
        out[4] = self.z;
    }
    fn decode(w: &[Word]) -> Self {
        Item { kind: w[0], id: w[1], x: w[2], y: w[3], z: w[4] }
    }
}

/// Unique y-order key. Cells sort after queries on equal y so a tying cell
/// never lands in a lower strip than the query it could answer.
fn y_key(it: &Item) -> (Rank, Word, i64) {
    (it.y, it.kind, it.id)
}

/// z-descending sweep order; cells precede queries at equal z so closed
/// containment holds on the boundary.
fn z_key(it: &Item) -> (Rank, Word, i64) {
    (-it.z, -it.kind, it.id)
}

/// For each query, find any cell whose apex dominates it, in
/// `O(((|C|+|Q|)/B) log_{M/B}(|C|/B))` transfers. Results are sorted by
/// query id, one record per query.
pub fn offline_find_any(
    sess: &mut Session,
    cells: ExtVec<Cell>,
    queries: ExtVec<QueryPoint>,
) -> ExtVec<FindAnyResult> {
    let results = sess.create::<FindAnyResult>();
    let n_q = sess.len(queries);
    if n_q == 0 {
        return results;
    }

    let items = sess.create::<Item>();
    {
        let mut w = SeqWriter::new(sess, items);
        let mut r = SeqReader::new(sess, cells);
        while let Some(c) = r.next(sess) {
            w.push(sess, Item { kind: KIND_CELL, id: c.id, x: c.apex.x, y: c.apex.y, z: c.apex.z });
        }
        let mut r = SeqReader::new(sess, queries);
        while let Some(q) = r.next(sess) {
            w.push(sess, Item { kind: KIND_QUERY, id: q.id, x: q.apex.x, y: q.apex.y, z: q.apex.z });
        }
        w.finish(sess);
    }

    let by_z = external_sort_by(sess, items, |a, b| z_key(a).cmp(&z_key(b)));
    let by_y = external_sort_by(sess, items, |a, b| y_key(a).cmp(&y_key(b)));
    sess.release(items);

    let mut out = SeqWriter::new(sess, results);
    recurse(sess, by_z, by_y, &mut out);
    out.finish(sess);

    let sorted = external_sort_by(sess, results, |a, b| a.query_id.cmp(&b.query_id));
    sess.release(results);
    sorted
}

fn recurse(
    sess: &mut Session,
    by_z: ExtVec<Item>,
    by_y: ExtVec<Item>,
    out: &mut SeqWriter<FindAnyResult>,
) {
    let n_z = sess.len(by_z);
    let n_y = sess.len(by_y);
    let m = sess.config().m();
    let b = sess.config().b();

    if n_z == 0 {
        sess.release(by_z);
        sess.release(by_y);
        return;
    }
    if n_z <= m / 4 {
        solve_resident(sess, by_z, out);
        sess.release(by_z);
        sess.release(by_y);
        return;
    }

    let strips = (m / (2 * b)).max(2).min(n_y);
    // Strip boundaries: the y-key of the last item of each strip chunk.
    let _bound_guard = sess.mem().reserve(5 * strips);
    let mut bounds: Vec<(Rank, Word, i64)> = Vec::with_capacity(strips - 1);
    for j in 1..strips {
        let pos = j * n_y / strips;
        let it = sess.read_one(by_y, pos - 1);
        bounds.push(y_key(&it));
    }
    let strip_of =
        |it: &Item, bounds: &[(Rank, Word, i64)]| -> usize { bounds.partition_point(|bk| *bk < y_key(it)) };

    // z-sweep: per-strip max apex-x among active cells, with witness ids.
    let mut maxima: Vec<Option<(Rank, i64)>> = vec![None; strips];
    let z_buckets: Vec<ExtVec<Item>> = (0..strips).map(|_| sess.create()).collect();
    {
        let mut writers: Vec<SeqWriter<Item>> =
            z_buckets.iter().map(|&sq| SeqWriter::new(sess, sq)).collect();
        let mut r = SeqReader::new(sess, by_z);
        while let Some(it) = r.next(sess) {
            let t = strip_of(&it, &bounds);
            if it.kind == KIND_CELL {
                let better = match maxima[t] {
                    None => true,
                    Some((mx, mid)) => it.x > mx || (it.x == mx && it.id < mid),
                };
                if better {
                    maxima[t] = Some((it.x, it.id));
                }
                writers[t].push(sess, it);
            } else {
                // Any strip above t answers y; take the best x among them.
                let mut hit: Option<(Rank, i64)> = None;
                for upper in maxima[t + 1..].iter().flatten() {
                    let better = match hit {
                        None => true,
                        Some((hx, hid)) => upper.0 > hx || (upper.0 == hx && upper.1 < hid),
                    };
                    if better {
                        hit = Some(*upper);
                    }
                }
                match hit {
                    Some((mx, mid)) if mx >= it.x => {
                        out.push(sess, FindAnyResult { query_id: it.id, cell_id: Some(mid) });
                    }
                    _ => writers[t].push(sess, it),
                }
            }
        }
        for w in writers {
            w.finish(sess);
        }
    }
    sess.release(by_z);

    // Distribute the y-order; resolved queries ride along harmlessly since
    // only z-buckets are ever solved.
    let y_buckets: Vec<ExtVec<Item>> = (0..strips).map(|_| sess.create()).collect();
    {
        let mut writers: Vec<SeqWriter<Item>> =
            y_buckets.iter().map(|&sq| SeqWriter::new(sess, sq)).collect();
        let mut r = SeqReader::new(sess, by_y);
        while let Some(it) = r.next(sess) {
            writers[strip_of(&it, &bounds)].push(sess, it);
        }
        for w in writers {
            w.finish(sess);
        }
    }
    sess.release(by_y);

    for (zb, yb) in z_buckets.into_iter().zip(y_buckets.into_iter()) {
        recurse(sess, zb, yb, out);
    }
}

/// Base case: the subproblem fits in a quarter of memory; scan actives per
/// query. Witness choice matches the sweep: max x, ties to the lower id.
fn solve_resident(sess: &mut Session, by_z: ExtVec<Item>, out: &mut SeqWriter<FindAnyResult>) {
    let n = sess.len(by_z);
    let _g = sess.mem().reserve(n);
    let items = sess.read_range(by_z, 0, n);
    let mut active: Vec<(Rank, Rank, i64)> = Vec::new(); // (x, y, id)
    for it in items {
        if it.kind == KIND_CELL {
            active.push((it.x, it.y, it.id));
        } else {
            let mut best: Option<(Rank, i64)> = None;
            for &(cx, cy, cid) in &active {
                if cx >= it.x && cy >= it.y {
                    let better = match best {
                        None => true,
                        Some((bx, bid)) => cx > bx || (cx == bx && cid < bid),
                    };
                    if better {
                        best = Some((cx, cid));
                    }
                }
            }
            out.push(sess, FindAnyResult { query_id: it.id, cell_id: best.map(|(_, cid)| cid) });
        }
    }
}
