//! Slab-grid structures for dominance reporting, counting, selection, and
//! additive-error offline counting.
//!
//! [`GridTree`] partitions its point set by `alpha` planes per axis, stores
//! per-cell conflict lists plus strict-suffix counts, and recurses on the
//! `3(alpha-1)` slab subsets until fewer than `B*alpha^3` points remain. A
//! query visits one cell plus three residual children per node, so counting
//! touches a suffix entry per node and reporting streams whole conflict runs.
//!
//! [`AdditiveRoot`] is the single-level variant with a much finer grid: it
//! answers batched counting with an additive error of at most three slab
//! shells, i.e. `3*ceil(n/s) <= eps * n^(2/3) * B^(1/3)` by choice of `s`.
//!
//! Both structures natively answer upward queries `[q, +inf)^3`; downward
//! (depth-style) queries use the same code path on coordinate-reflected
//! points, selected by [`Orient`] at build time.

use crate::extsort::{external_sort, external_sort_by, Axis, SortKey};
use crate::geometry::{reflect_apex, reflect_point, Apex, Point3, QueryPoint, Rank};
use crate::iomodel::{ExtVec, SeqReader, SeqWriter, Session, Word};

/// Query orientation fixed at build time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orient {
    /// Count / report points componentwise `>=` the apex.
    Upward,
    /// Count / report points componentwise `<=` the apex (depth semantics).
    Downward,
}

/// Dense additive tables are precomputed up to this many words; above it the
/// suffix grid is materialized lazily per query batch instead.
pub const ADDITIVE_TABLE_CAP: usize = 1 << 24;

const TAG_LEAF: Word = 0;
const TAG_INTERNAL: Word = 1;

pub struct GridTree {
    pub orient: Orient,
    /// Ambient rank-space size (the global N), for reflection and sentinels.
    pub space: usize,
    pub n: usize,
    pub alpha: usize,
    pub leaf_cap: usize,
    meta: ExtVec<Word>,
    pts: ExtVec<Point3>,
    root: usize,
}

impl GridTree {
    /// Drop the tree's backing sequences.
    pub fn release(&self, sess: &mut Session) {
        sess.release(self.meta);
        sess.release(self.pts);
    }
}

/// `alpha = max(3, ceil((n/B)^(1/6)))`: the recursion height stays at most 3
/// while every internal node still shrinks strictly.
pub fn alpha_for(n: usize, b: usize) -> usize {
    let nb = (n.max(1) as f64 / b as f64).max(1.0);
    (nb.powf(1.0 / 6.0).ceil() as usize).max(3)
}

struct BuildCtx {
    slabs: usize,
    leaf_cap: usize,
    meta: ExtVec<Word>,
    pts: ExtVec<Point3>,
}

/// Build a grid tree over `points` (the sequence is consumed). `space` is
/// the global rank-space size; all coordinates must already be ranks.
pub fn build_grid_tree(
    sess: &mut Session,
    points: ExtVec<Point3>,
    space: usize,
    orient: Orient,
) -> GridTree {
    let n = sess.len(points);
    let b = sess.config().b();
    let alpha = alpha_for(n, b);
    let slabs = alpha - 1;
    let leaf_cap = b * alpha * alpha * alpha;
    assert!(slabs * slabs * slabs <= sess.config().m() / 2, "grid cell table must fit memory");

    let input = match orient {
        Orient::Upward => points,
        Orient::Downward => reflect_seq(sess, points, space),
    };

    let mut ctx = BuildCtx {
        slabs,
        leaf_cap,
        meta: sess.create::<Word>(),
        pts: sess.create::<Point3>(),
    };
    let root = build_node(sess, &mut ctx, input, space);
    GridTree { orient, space, n, alpha, leaf_cap, meta: ctx.meta, pts: ctx.pts, root }
}

fn reflect_seq(sess: &mut Session, points: ExtVec<Point3>, space: usize) -> ExtVec<Point3> {
    let refl = sess.create::<Point3>();
    let mut w = SeqWriter::new(sess, refl);
    let mut r = SeqReader::new(sess, points);
    while let Some(p) = r.next(sess) {
        w.push(sess, reflect_point(space, p));
    }
    w.finish(sess);
    sess.release(points);
    refl
}

fn build_node(sess: &mut Session, ctx: &mut BuildCtx, input: ExtVec<Point3>, space: usize) -> usize {
    let n = sess.len(input);
    let s = ctx.slabs;
    if n < ctx.leaf_cap {
        // Leaf: points sorted by x so counting can skip to the x-suffix.
        let by_x = external_sort(sess, input, SortKey::axis(Axis::X, false));
        sess.release(input);
        let pts_off = sess.len(ctx.pts);
        copy_seq(sess, by_x, ctx.pts);
        sess.release(by_x);
        let off = sess.len(ctx.meta);
        sess.append(ctx.meta, &[TAG_LEAF, n as Word, pts_off as Word, n as Word]);
        return off;
    }

    let by_x = external_sort(sess, input, SortKey::axis(Axis::X, false));
    let by_y = external_sort(sess, input, SortKey::axis(Axis::Y, false));
    let by_z = external_sort(sess, input, SortKey::axis(Axis::Z, false));
    sess.release(input);

    let cuts_x = collect_cuts(sess, by_x, n, s, space, Axis::X);
    let cuts_y = collect_cuts(sess, by_y, n, s, space, Axis::Y);
    let cuts_z = collect_cuts(sess, by_z, n, s, space, Axis::Z);

    let x_slabs = split_by_positions(sess, by_x, n, s);
    let y_slabs = split_by_positions(sess, by_y, n, s);
    let z_slabs = split_by_positions(sess, by_z, n, s);
    sess.release(by_x);
    sess.release(by_y);
    sess.release(by_z);

    // Conflict runs in (i, j, k)-lexicographic order. The size and offset
    // tables stay resident while the per-slab sorts run with what is left.
    let off;
    {
        let _table_guard = sess.mem().reserve(3 * s * s * s);
        let mut sizes = vec![0u64; s * s * s];
        let mut offs = vec![(0u64, 0u64); s * s * s];
        for (i, &xs) in x_slabs.iter().enumerate() {
            let by_y_i = external_sort(sess, xs, SortKey::axis(Axis::Y, false));
            let ij = split_by_cuts(sess, by_y_i, &cuts_y, Axis::Y);
            sess.release(by_y_i);
            for (j, &ys) in ij.iter().enumerate() {
                let by_z_ij = external_sort(sess, ys, SortKey::axis(Axis::Z, false));
                let ijk = split_by_cuts(sess, by_z_ij, &cuts_z, Axis::Z);
                sess.release(by_z_ij);
                sess.release(ys);
                for (k, &zs) in ijk.iter().enumerate() {
                    let run_off = sess.len(ctx.pts);
                    let len = sess.len(zs);
                    copy_seq(sess, zs, ctx.pts);
                    sess.release(zs);
                    let idx = (i * s + j) * s + k;
                    sizes[idx] = len as u64;
                    offs[idx] = (run_off as u64, len as u64);
                }
            }
        }

        // Strict suffix counts via a closed triple suffix, axis by axis.
        let mut closed = sizes;
        for i in (0..s.saturating_sub(1)).rev() {
            for j in 0..s {
                for k in 0..s {
                    closed[(i * s + j) * s + k] += closed[((i + 1) * s + j) * s + k];
                }
            }
        }
        for j in (0..s.saturating_sub(1)).rev() {
            for i in 0..s {
                for k in 0..s {
                    closed[(i * s + j) * s + k] += closed[(i * s + j + 1) * s + k];
                }
            }
        }
        for k in (0..s.saturating_sub(1)).rev() {
            for i in 0..s {
                for j in 0..s {
                    closed[(i * s + j) * s + k] += closed[(i * s + j) * s + k + 1];
                }
            }
        }
        let strict_suffix = |i: usize, j: usize, k: usize| -> u64 {
            if i + 1 >= s || j + 1 >= s || k + 1 >= s {
                0
            } else {
                closed[((i + 1) * s + j + 1) * s + k + 1]
            }
        };

        // Write the node block now with child-offset placeholders, streaming
        // the cell table one (i, j) row at a time; children are patched in
        // afterwards so nothing large survives the recursion.
        off = sess.len(ctx.meta);
        let mut head = Vec::with_capacity(3 + 3 * (s + 1) + 3 * s);
        head.extend_from_slice(&[TAG_INTERNAL, n as Word, s as Word]);
        head.extend_from_slice(&cuts_x);
        head.extend_from_slice(&cuts_y);
        head.extend_from_slice(&cuts_z);
        head.extend_from_slice(&vec![0; 3 * s]);
        sess.append(ctx.meta, &head);
        let mut row = Vec::with_capacity(3 * s);
        for i in 0..s {
            for j in 0..s {
                row.clear();
                for k in 0..s {
                    let idx = (i * s + j) * s + k;
                    row.push(offs[idx].0 as Word);
                    row.push(offs[idx].1 as Word);
                    row.push(strict_suffix(i, j, k) as Word);
                }
                sess.append(ctx.meta, &row);
            }
        }
    }

    let mut child_offs = Vec::with_capacity(3 * s);
    for &seq in x_slabs.iter().chain(y_slabs.iter()).chain(z_slabs.iter()) {
        child_offs.push(build_node(sess, ctx, seq, space) as Word);
    }
    sess.write_range(ctx.meta, off + 3 + 3 * (s + 1), &child_offs);
    off
}

fn copy_seq(sess: &mut Session, from: ExtVec<Point3>, to: ExtVec<Point3>) {
    let mut r = SeqReader::new(sess, from);
    let mut w = SeqWriter::new(sess, to);
    while let Some(p) = r.next(sess) {
        w.push(sess, p);
    }
    w.finish(sess);
}

/// Slab boundaries: `cuts[0] = -2`, `cuts[s] = space`, and `cuts[j]` the
/// coordinate of the last record of slab `j-1` in the sorted order.
fn collect_cuts(
    sess: &mut Session,
    sorted: ExtVec<Point3>,
    n: usize,
    s: usize,
    space: usize,
    axis: Axis,
) -> Vec<Word> {
    let coord = |p: &Point3| match axis {
        Axis::X => p.x,
        Axis::Y => p.y,
        Axis::Z => p.z,
    };
    let mut cuts = Vec::with_capacity(s + 1);
    cuts.push(-2);
    for j in 1..s {
        let pos = j * n / s;
        let p = sess.read_one(sorted, pos - 1);
        cuts.push(coord(&p));
    }
    cuts.push(space as Word);
    cuts
}

/// Like [`collect_cuts`] but stored externally, for structures whose slab
/// count is too large to keep resident.
fn persist_cuts(
    sess: &mut Session,
    sorted: ExtVec<Point3>,
    n: usize,
    s: usize,
    space: usize,
    axis: Axis,
) -> ExtVec<Word> {
    let _g = sess.mem().reserve(s + 1);
    let cuts = collect_cuts(sess, sorted, n, s, space, axis);
    let seq = sess.create::<Word>();
    sess.append(seq, &cuts);
    seq
}

fn split_by_positions(
    sess: &mut Session,
    sorted: ExtVec<Point3>,
    n: usize,
    s: usize,
) -> Vec<ExtVec<Point3>> {
    let mut out = Vec::with_capacity(s);
    let mut r = SeqReader::new(sess, sorted);
    for j in 0..s {
        let start = j * n / s;
        let end = (j + 1) * n / s;
        let seq = sess.create::<Point3>();
        let mut w = SeqWriter::new(sess, seq);
        for _ in start..end {
            let p = r.next(sess).expect("split ran past end");
            w.push(sess, p);
        }
        w.finish(sess);
        out.push(seq);
    }
    out
}

fn split_by_cuts(
    sess: &mut Session,
    sorted: ExtVec<Point3>,
    cuts: &[Word],
    axis: Axis,
) -> Vec<ExtVec<Point3>> {
    let s = cuts.len() - 1;
    let coord = |p: &Point3| match axis {
        Axis::X => p.x,
        Axis::Y => p.y,
        Axis::Z => p.z,
    };
    let mut out = Vec::with_capacity(s);
    let mut r = SeqReader::new(sess, sorted);
    let mut pending = r.next(sess);
    for j in 0..s {
        let seq = sess.create::<Point3>();
        let mut w = SeqWriter::new(sess, seq);
        while let Some(p) = pending {
            if coord(&p) <= cuts[j + 1] {
                w.push(sess, p);
                pending = r.next(sess);
            } else {
                break;
            }
        }
        w.finish(sess);
        out.push(seq);
    }
    assert!(pending.is_none(), "point beyond final cut");
    out
}

fn locate(cuts: &[Word], v: Rank) -> usize {
    // Slab i such that cuts[i] < v <= cuts[i+1].
    let s = cuts.len() - 1;
    cuts[1..s].partition_point(|&c| c < v).min(s - 1)
}

/// Exact count of points in the query region (orientation fixed at build).
pub fn grid_count(sess: &mut Session, tree: &GridTree, q: Apex) -> u64 {
    if tree.n == 0 {
        return 0;
    }
    let a = match tree.orient {
        Orient::Upward => q,
        Orient::Downward => reflect_apex(tree.space, q),
    };
    count_rec(sess, tree, tree.root, a)
}

fn count_rec(sess: &mut Session, tree: &GridTree, off: usize, a: Apex) -> u64 {
    let head = sess.read_range(tree.meta, off, 4);
    if head[0] == TAG_LEAF {
        let (pts_off, len) = (head[2] as usize, head[3] as usize);
        return leaf_scan(sess, tree, pts_off, len, a, &mut |_| {});
    }
    let s = head[2] as usize;
    let body = sess.read_range(tree.meta, off + 3, 3 * (s + 1) + 3 * s);
    let cuts_x = &body[0..s + 1];
    let cuts_y = &body[s + 1..2 * (s + 1)];
    let cuts_z = &body[2 * (s + 1)..3 * (s + 1)];
    let kids = &body[3 * (s + 1)..];
    let (i, j, k) = (locate(cuts_x, a.x), locate(cuts_y, a.y), locate(cuts_z, a.z));

    let cell_base = off + 3 + 3 * (s + 1) + 3 * s;
    let entry = sess.read_range(tree.meta, cell_base + 3 * ((i * s + j) * s + k), 3);
    let mut total = entry[2] as u64;

    let (xk, yk, zk) = (kids[i] as usize, kids[s + j] as usize, kids[2 * s + k] as usize);
    let ax2 = Apex::new(cuts_x[i + 1] + 1, a.y, a.z);
    let ax3 = Apex::new(cuts_x[i + 1] + 1, cuts_y[j + 1] + 1, a.z);
    total += count_rec(sess, tree, xk, a);
    total += count_rec(sess, tree, yk, ax2);
    total += count_rec(sess, tree, zk, ax3);
    total
}

fn leaf_scan(
    sess: &mut Session,
    tree: &GridTree,
    pts_off: usize,
    len: usize,
    a: Apex,
    emit: &mut dyn FnMut(Point3),
) -> u64 {
    if len == 0 {
        return 0;
    }
    // Binary search the x-sorted run for the first record with x >= a.x,
    // then stream only that suffix.
    let mut lo = 0usize;
    let mut hi = len;
    while lo < hi {
        let mid = (lo + hi) / 2;
        let p = sess.read_one(tree.pts, pts_off + mid);
        if p.x < a.x {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    let mut cnt = 0u64;
    let mut r = SeqReader::with_range(sess, tree.pts, pts_off + lo, len - lo);
    while let Some(p) = r.next(sess) {
        if p.y >= a.y && p.z >= a.z {
            cnt += 1;
            emit(p);
        }
    }
    cnt
}

/// Report the query region's points, appending to `out` (coordinates are
/// de-reflected for downward trees). Returns the count.
pub fn grid_report_into(sess: &mut Session, tree: &GridTree, q: Apex, out: ExtVec<Point3>) -> u64 {
    if tree.n == 0 {
        return 0;
    }
    let a = match tree.orient {
        Orient::Upward => q,
        Orient::Downward => reflect_apex(tree.space, q),
    };
    let mut w = SeqWriter::new(sess, out);
    let cnt = report_rec(sess, tree, tree.root, a, &mut w);
    w.finish(sess);
    cnt
}

/// Test convenience: report into a fresh sequence and read it back.
pub fn grid_report(sess: &mut Session, tree: &GridTree, q: Apex) -> Vec<Point3> {
    let out = sess.create::<Point3>();
    grid_report_into(sess, tree, q, out);
    let v = sess.dump(out);
    sess.release(out);
    v
}

fn report_rec(
    sess: &mut Session,
    tree: &GridTree,
    off: usize,
    a: Apex,
    w: &mut SeqWriter<Point3>,
) -> u64 {
    let head = sess.read_range(tree.meta, off, 4);
    let space = tree.space;
    let down = tree.orient == Orient::Downward;
    if head[0] == TAG_LEAF {
        let (pts_off, len) = (head[2] as usize, head[3] as usize);
        let mut emitted = Vec::new();
        let cnt = leaf_scan(sess, tree, pts_off, len, a, &mut |p| emitted.push(p));
        for p in emitted {
            w.push(sess, if down { reflect_point(space, p) } else { p });
        }
        return cnt;
    }
    let s = head[2] as usize;
    let body = sess.read_range(tree.meta, off + 3, 3 * (s + 1) + 3 * s);
    let cuts_x = body[0..s + 1].to_vec();
    let cuts_y = body[s + 1..2 * (s + 1)].to_vec();
    let cuts_z = body[2 * (s + 1)..3 * (s + 1)].to_vec();
    let kids = body[3 * (s + 1)..].to_vec();
    let (i, j, k) = (locate(&cuts_x, a.x), locate(&cuts_y, a.y), locate(&cuts_z, a.z));
    let cell_base = off + 3 + 3 * (s + 1) + 3 * s;

    let mut total = 0u64;
    // Fully inside cells: for each (i', j') beyond the apex cell, the runs
    // for k' > k are contiguous in the conflict sequence.
    if k + 1 < s {
        for i2 in i + 1..s {
            for j2 in j + 1..s {
                let first =
                    sess.read_range(tree.meta, cell_base + 3 * ((i2 * s + j2) * s + k + 1), 3);
                let last =
                    sess.read_range(tree.meta, cell_base + 3 * ((i2 * s + j2) * s + (s - 1)), 3);
                let start = first[0] as usize;
                let end = (last[0] + last[1]) as usize;
                if end > start {
                    let mut r = SeqReader::with_range(sess, tree.pts, start, end - start);
                    while let Some(p) = r.next(sess) {
                        w.push(sess, if down { reflect_point(space, p) } else { p });
                        total += 1;
                    }
                }
            }
        }
    }

    total += report_rec(sess, tree, kids[i] as usize, a, w);
    let ax2 = Apex::new(cuts_x[i + 1] + 1, a.y, a.z);
    total += report_rec(sess, tree, kids[s + j] as usize, ax2, w);
    let ax3 = Apex::new(cuts_x[i + 1] + 1, cuts_y[j + 1] + 1, a.z);
    total += report_rec(sess, tree, kids[2 * s + k] as usize, ax3, w);
    total
}

/// Dominance selection on a downward tree: the smallest rank `r` on `axis`
/// such that the apex with that coordinate has depth exactly `k_sel`.
/// `None` when fewer than `k_sel` points are available.
pub fn grid_select_axis(
    sess: &mut Session,
    tree: &GridTree,
    q: Apex,
    k_sel: usize,
    axis: Axis,
) -> Option<Apex> {
    assert_eq!(tree.orient, Orient::Downward, "selection is defined on downward trees");
    assert!(k_sel >= 1);
    let with_axis = |a: Apex, r: Rank| -> Apex {
        match axis {
            Axis::X => Apex::new(r, a.y, a.z),
            Axis::Y => Apex::new(a.x, r, a.z),
            Axis::Z => Apex::new(a.x, a.y, r),
        }
    };
    let space = tree.space as Rank;
    if grid_count(sess, tree, with_axis(q, space)) < k_sel as u64 {
        return None;
    }
    let mut lo: Rank = -1;
    let mut hi: Rank = space;
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if grid_count(sess, tree, with_axis(q, mid)) >= k_sel as u64 {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    let apex = with_axis(q, lo);
    debug_assert_eq!(grid_count(sess, tree, apex), k_sel as u64);
    Some(apex)
}

// ---------------------------------------------------------------------------
// Additive-error offline counting (single-level fine grid).
// ---------------------------------------------------------------------------

enum AdditiveMode {
    /// Few points or an error budget too small for any grid: answer exactly
    /// by streaming points against resident query batches.
    Scan { pts: ExtVec<Point3> },
    Grid {
        cuts_x: ExtVec<Word>,
        cuts_y: ExtVec<Word>,
        cuts_z: ExtVec<Word>,
        /// Slab triples (sx, sy, sz), sorted by sx descending then (sy, sz).
        slab_pts: ExtVec<(Word, Word, Word)>,
        /// Dense strict-suffix table in (i, j, k)-lex order when it fits
        /// [`ADDITIVE_TABLE_CAP`]; otherwise rebuilt per query batch.
        table: Option<ExtVec<Word>>,
    },
}

pub struct AdditiveRoot {
    pub orient: Orient,
    pub space: usize,
    pub n: usize,
    /// Slabs per axis (the construction's `alpha - 1`).
    pub slabs: usize,
    pub eps: f64,
    mode: AdditiveMode,
}

/// The guaranteed additive error `eps * n^(2/3) * B^(1/3)`.
pub fn additive_error_bound(n: usize, b: usize, eps: f64) -> f64 {
    eps * (n as f64).powf(2.0 / 3.0) * (b as f64).powf(1.0 / 3.0)
}

impl AdditiveRoot {
    pub fn is_scan_mode(&self) -> bool {
        matches!(self.mode, AdditiveMode::Scan { .. })
    }

    pub fn has_dense_table(&self) -> bool {
        matches!(self.mode, AdditiveMode::Grid { table: Some(_), .. })
    }

    #[cfg(test)]
    fn drop_table(&mut self) {
        if let AdditiveMode::Grid { table, .. } = &mut self.mode {
            *table = None;
        }
    }

    pub fn release(&self, sess: &mut Session) {
        match &self.mode {
            AdditiveMode::Scan { pts } => sess.release(*pts),
            AdditiveMode::Grid { cuts_x, cuts_y, cuts_z, slab_pts, table } => {
                sess.release(*cuts_x);
                sess.release(*cuts_y);
                sess.release(*cuts_z);
                sess.release(*slab_pts);
                if let Some(t) = table {
                    sess.release(*t);
                }
            }
        }
    }
}

/// Build the additive-error structure over `points` (consumed).
pub fn build_additive_root(
    sess: &mut Session,
    points: ExtVec<Point3>,
    space: usize,
    eps: f64,
    orient: Orient,
) -> AdditiveRoot {
    assert!(eps > 0.0 && eps < 1.0, "eps must lie in (0, 1)");
    let n = sess.len(points);
    let b = sess.config().b();
    let m = sess.config().m();
    let budget = additive_error_bound(n, b, eps);

    // Smallest slab count with 3*ceil(n/s) within the budget.
    let mut slabs =
        if budget >= 3.0 { ((3.0 * n as f64) / budget).ceil() as usize } else { usize::MAX };
    while slabs <= n && 3.0 * (n.div_ceil(slabs.max(1)) as f64) > budget {
        slabs += 1;
    }

    let grid_feasible = n > 0 && (2..=n).contains(&slabs) && slabs + 1 <= m / 2;
    if !grid_feasible {
        return AdditiveRoot {
            orient,
            space,
            n,
            slabs: 1,
            eps,
            mode: AdditiveMode::Scan { pts: points },
        };
    }

    let input = match orient {
        Orient::Upward => points,
        Orient::Downward => reflect_seq(sess, points, space),
    };

    // Three sorted passes assign slab indices one axis at a time; the point
    // record carries the partial triple through each pass.
    let s = slabs;
    let by_x = external_sort(sess, input, SortKey::axis(Axis::X, false));
    sess.release(input);
    let cuts_x = persist_cuts(sess, by_x, n, s, space, Axis::X);
    let tagged_x = tag_axis(sess, by_x, n, s, Axis::X);
    sess.release(by_x);

    let by_y = external_sort(sess, tagged_x, SortKey::axis(Axis::Y, false));
    sess.release(tagged_x);
    let cuts_y = persist_cuts(sess, by_y, n, s, space, Axis::Y);
    let tagged_y = tag_axis(sess, by_y, n, s, Axis::Y);
    sess.release(by_y);

    let by_z = external_sort(sess, tagged_y, SortKey::axis(Axis::Z, false));
    sess.release(tagged_y);
    let cuts_z = persist_cuts(sess, by_z, n, s, space, Axis::Z);
    let tagged_z = tag_axis(sess, by_z, n, s, Axis::Z);
    sess.release(by_z);

    // (sx desc, sy, sz) order groups each x-shell for the sweep.
    let ordered = external_sort_by(sess, tagged_z, |a, b| {
        b.x.cmp(&a.x).then(a.y.cmp(&b.y)).then(a.z.cmp(&b.z)).then(a.id.cmp(&b.id))
    });
    sess.release(tagged_z);
    let slab_pts = sess.create::<(Word, Word, Word)>();
    {
        let mut r = SeqReader::new(sess, ordered);
        let mut w = SeqWriter::new(sess, slab_pts);
        while let Some(p) = r.next(sess) {
            w.push(sess, (p.x, p.y, p.z));
        }
        w.finish(sess);
    }
    sess.release(ordered);

    let table = if s * s * s <= ADDITIVE_TABLE_CAP {
        Some(build_dense_table(sess, slab_pts, s))
    } else {
        None
    };

    AdditiveRoot {
        orient,
        space,
        n,
        slabs: s,
        eps,
        mode: AdditiveMode::Grid { cuts_x, cuts_y, cuts_z, slab_pts, table },
    }
}

/// Replace the sorted axis coordinate with its slab index (positional split).
fn tag_axis(
    sess: &mut Session,
    sorted: ExtVec<Point3>,
    n: usize,
    s: usize,
    axis: Axis,
) -> ExtVec<Point3> {
    let out = sess.create::<Point3>();
    let mut r = SeqReader::new(sess, sorted);
    let mut w = SeqWriter::new(sess, out);
    let mut pos = 0usize;
    let mut slab = 0usize;
    while let Some(mut p) = r.next(sess) {
        while pos >= (slab + 1) * n / s {
            slab += 1;
        }
        match axis {
            Axis::X => p.x = slab as Word,
            Axis::Y => p.y = slab as Word,
            Axis::Z => p.z = slab as Word,
        }
        w.push(sess, p);
        pos += 1;
    }
    w.finish(sess);
    out
}

/// Sweep x-shells from high to low, maintaining the 2-D histogram of seen
/// shells and emitting each x-row of the strict suffix table.
fn build_dense_table(
    sess: &mut Session,
    slab_pts: ExtVec<(Word, Word, Word)>,
    s: usize,
) -> ExtVec<Word> {
    let table = sess.create::<Word>();
    sess.write_range(table, 0, &vec![0; s * s * s]);
    let hist = sess.create::<Word>();
    sess.write_range(hist, 0, &vec![0; s * s]);
    let carry = sess.create::<Word>();
    sess.write_range(carry, 0, &vec![0; s]);

    let mut reader = SeqReader::new(sess, slab_pts);
    let mut pending = reader.next(sess);
    for i in (0..s).rev() {
        while let Some((sx, sy, sz)) = pending {
            if sx as usize > i {
                let idx = sy as usize * s + sz as usize;
                let v = sess.read_one(hist, idx);
                sess.write_range(hist, idx, &[v + 1]);
                pending = reader.next(sess);
            } else {
                break;
            }
        }
        write_suffix_plane(sess, hist, carry, Some((table, i)), None, s);
    }
    sess.release(hist);
    sess.release(carry);
    table
}

/// Compute the strict 2-D suffix of `hist` with the running row kept
/// external, writing either into x-row `i` of a dense table or into a
/// standalone `s*s` plane.
fn write_suffix_plane(
    sess: &mut Session,
    hist: ExtVec<Word>,
    carry: ExtVec<Word>,
    dense: Option<(ExtVec<Word>, usize)>,
    plane: Option<ExtVec<Word>>,
    s: usize,
) {
    let b = sess.config().b();
    sess.write_range(carry, 0, &vec![0; s]);
    for j in (0..s).rev() {
        // carry[z] = sum over rows > j of hist[.][z]; fold row j+1 first.
        if j + 1 < s {
            let mut at = 0;
            while at < s {
                let take = b.min(s - at);
                let hrow = sess.read_range(hist, (j + 1) * s + at, take);
                let mut c = sess.read_range(carry, at, take);
                for (cv, hv) in c.iter_mut().zip(hrow.iter()) {
                    *cv += *hv;
                }
                sess.write_range(carry, at, &c);
                at += take;
            }
        }
        // Emit the strict-z suffix of carry as row j, walking backwards so a
        // single running sum suffices.
        let mut run = 0i64;
        let mut k = s as i64 - 1;
        let mut buf = Vec::with_capacity(b);
        while k >= 0 {
            let take = b.min((k + 1) as usize);
            let start = (k + 1) as usize - take;
            let cvals = sess.read_range(carry, start, take);
            buf.clear();
            for idx in (0..take).rev() {
                buf.push(run);
                run += cvals[idx];
            }
            buf.reverse();
            match (dense, plane) {
                (Some((table, i)), _) => {
                    sess.write_range(table, (i * s + j) * s + start, &buf)
                }
                (None, Some(pl)) => sess.write_range(pl, j * s + start, &buf),
                _ => unreachable!(),
            }
            k -= take as i64;
        }
    }
}

/// Batched additive counting: returns `(query id, n_q)` pairs sorted by id.
/// Every `n_q` is an underestimate within the additive error bound.
pub fn offline_additive_count(
    sess: &mut Session,
    root: &AdditiveRoot,
    queries: ExtVec<QueryPoint>,
) -> ExtVec<(Word, Word)> {
    let out = sess.create::<(Word, Word)>();
    let nq = sess.len(queries);
    if nq == 0 {
        return out;
    }
    match &root.mode {
        AdditiveMode::Scan { pts } => {
            let m = sess.config().m();
            let batch = (m / 4).max(1);
            let mut w = SeqWriter::new(sess, out);
            let mut at = 0;
            while at < nq {
                let take = batch.min(nq - at);
                let _g = sess.mem().reserve(2 * take);
                let qs = sess.read_range(queries, at, take);
                let mut counts = vec![0i64; take];
                let mut r = SeqReader::new(sess, *pts);
                while let Some(p) = r.next(sess) {
                    for (qi, q) in qs.iter().enumerate() {
                        let inside = match root.orient {
                            Orient::Downward => q.apex.contains_point(&p),
                            Orient::Upward => {
                                p.x >= q.apex.x && p.y >= q.apex.y && p.z >= q.apex.z
                            }
                        };
                        if inside {
                            counts[qi] += 1;
                        }
                    }
                }
                for (qi, q) in qs.iter().enumerate() {
                    w.push(sess, (q.id, counts[qi]));
                }
                at += take;
            }
            w.finish(sess);
        }
        AdditiveMode::Grid { cuts_x, cuts_y, cuts_z, slab_pts, table } => {
            let s = root.slabs;
            // Locate cells one axis per pass, keeping a single cuts array
            // resident at a time.
            let mut located = sess.duplicate(queries);
            for (axis, cuts_seq) in
                [(Axis::X, *cuts_x), (Axis::Y, *cuts_y), (Axis::Z, *cuts_z)]
            {
                let _g = sess.mem().reserve(s + 1);
                let cuts = sess.read_range(cuts_seq, 0, s + 1);
                let next = sess.create::<QueryPoint>();
                let mut r = SeqReader::new(sess, located);
                let mut w = SeqWriter::new(sess, next);
                while let Some(mut q) = r.next(sess) {
                    let v = match axis {
                        Axis::X => q.apex.x,
                        Axis::Y => q.apex.y,
                        Axis::Z => q.apex.z,
                    };
                    let v = match root.orient {
                        Orient::Upward => v,
                        Orient::Downward => root.space as Rank - 1 - v,
                    };
                    let slab = locate(&cuts, v) as Rank;
                    match axis {
                        Axis::X => q.apex.x = slab,
                        Axis::Y => q.apex.y = slab,
                        Axis::Z => q.apex.z = slab,
                    }
                    w.push(sess, q);
                }
                w.finish(sess);
                sess.release(located);
                located = next;
            }

            match table {
                Some(table) => {
                    // Sorted by cell index: table reads advance monotonically.
                    let sorted = external_sort_by(sess, located, |a, b| {
                        (a.apex.x, a.apex.y, a.apex.z, a.id)
                            .cmp(&(b.apex.x, b.apex.y, b.apex.z, b.id))
                    });
                    sess.release(located);
                    let mut r = SeqReader::new(sess, sorted);
                    let mut w = SeqWriter::new(sess, out);
                    while let Some(q) = r.next(sess) {
                        let idx =
                            (q.apex.x as usize * s + q.apex.y as usize) * s + q.apex.z as usize;
                        let v = sess.read_one(*table, idx);
                        w.push(sess, (q.id, v));
                    }
                    w.finish(sess);
                    sess.release(sorted);
                }
                None => {
                    sweep_count(sess, *slab_pts, located, out, s);
                    sess.release(located);
                }
            }
        }
    }
    let sorted = external_sort_by(sess, out, |a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));
    sess.release(out);
    sorted
}

/// Lazy variant for grids too fine for a dense table: one x-shell sweep per
/// batch, materializing the 2-D suffix only for shells that carry queries.
fn sweep_count(
    sess: &mut Session,
    slab_pts: ExtVec<(Word, Word, Word)>,
    located: ExtVec<QueryPoint>,
    out: ExtVec<(Word, Word)>,
    s: usize,
) {
    let qsorted = external_sort_by(sess, located, |a, b| {
        b.apex
            .x
            .cmp(&a.apex.x)
            .then(a.apex.y.cmp(&b.apex.y))
            .then(a.apex.z.cmp(&b.apex.z))
            .then(a.id.cmp(&b.id))
    });
    let hist = sess.create::<Word>();
    sess.write_range(hist, 0, &vec![0; s * s]);
    let suffix = sess.create::<Word>();
    sess.write_range(suffix, 0, &vec![0; s * s]);
    let carry = sess.create::<Word>();
    sess.write_range(carry, 0, &vec![0; s]);

    let mut preader = SeqReader::new(sess, slab_pts);
    let mut pending = preader.next(sess);
    let mut qreader = SeqReader::new(sess, qsorted);
    let mut qpending = qreader.next(sess);
    let mut w = SeqWriter::new(sess, out);

    for i in (0..s).rev() {
        while let Some((sx, sy, sz)) = pending {
            if sx as usize > i {
                let idx = sy as usize * s + sz as usize;
                let v = sess.read_one(hist, idx);
                sess.write_range(hist, idx, &[v + 1]);
                pending = preader.next(sess);
            } else {
                break;
            }
        }
        let has_queries = matches!(qpending, Some(q) if q.apex.x as usize == i);
        if !has_queries {
            continue;
        }
        write_suffix_plane(sess, hist, carry, None, Some(suffix), s);
        while let Some(q) = qpending {
            if q.apex.x as usize != i {
                break;
            }
            let v = sess.read_one(suffix, q.apex.y as usize * s + q.apex.z as usize);
            w.push(sess, (q.id, v));
            qpending = qreader.next(sess);
        }
    }
    w.finish(sess);
    sess.release(qsorted);
    sess.release(hist);
    sess.release(suffix);
    sess.release(carry);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::iomodel::IoConfig;
    use crate::oracle::{oracle_depth, oracle_report};

    fn session() -> Session {
        Session::open(IoConfig { memory_words: 1024, block_words: 16 }).unwrap()
    }

    fn xorshift(seed: u64) -> impl FnMut() -> u64 {
        let mut state = seed | 1;
        move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            state
        }
    }

    fn random_points(n: usize, rng: &mut impl FnMut() -> u64) -> Vec<Point3> {
        let mut xs: Vec<i64> = (0..n as i64).collect();
        let mut ys: Vec<i64> = (0..n as i64).collect();
        let mut zs: Vec<i64> = (0..n as i64).collect();
        for i in (1..n).rev() {
            xs.swap(i, (rng() % (i as u64 + 1)) as usize);
            ys.swap(i, (rng() % (i as u64 + 1)) as usize);
            zs.swap(i, (rng() % (i as u64 + 1)) as usize);
        }
        (0..n).map(|i| Point3 { id: i as i64, x: xs[i], y: ys[i], z: zs[i] }).collect()
    }

    fn upward_oracle(pts: &[Point3], q: Apex) -> usize {
        pts.iter().filter(|p| p.x >= q.x && p.y >= q.y && p.z >= q.z).count()
    }

    fn random_apex(n: usize, rng: &mut impl FnMut() -> u64) -> Apex {
        Apex::new(
            (rng() % (n as u64 + 2)) as i64 - 1,
            (rng() % (n as u64 + 2)) as i64 - 1,
            (rng() % (n as u64 + 2)) as i64 - 1,
        )
    }

    #[test]
    fn count_upward_matches_oracle() {
        let mut rng = xorshift(42);
        let n = 600;
        let pts = random_points(n, &mut rng);
        let mut s = session();
        let seq = s.create::<Point3>();
        s.append(seq, &pts);
        let tree = build_grid_tree(&mut s, seq, n, Orient::Upward);

        assert_eq!(grid_count(&mut s, &tree, Apex::new(-1, -1, -1)), n as u64);
        assert_eq!(grid_count(&mut s, &tree, Apex::new(n as i64, n as i64, n as i64)), 0);
        for _ in 0..300 {
            let q = random_apex(n, &mut rng);
            assert_eq!(grid_count(&mut s, &tree, q), upward_oracle(&pts, q) as u64, "q={q:?}");
        }
    }

    #[test]
    fn count_downward_matches_depth_oracle() {
        let mut rng = xorshift(7);
        let n = 500;
        let pts = random_points(n, &mut rng);
        let mut s = session();
        let seq = s.create::<Point3>();
        s.append(seq, &pts);
        let tree = build_grid_tree(&mut s, seq, n, Orient::Downward);
        for _ in 0..300 {
            let q = random_apex(n, &mut rng);
            assert_eq!(grid_count(&mut s, &tree, q), oracle_depth(&pts, q) as u64);
        }
    }

    #[test]
    fn report_matches_oracle_sets() {
        let mut rng = xorshift(1234);
        let n = 400;
        let pts = random_points(n, &mut rng);
        let mut s = session();
        let seq = s.create::<Point3>();
        s.append(seq, &pts);
        let tree = build_grid_tree(&mut s, seq, n, Orient::Downward);
        for _ in 0..60 {
            let q = random_apex(n, &mut rng);
            let mut got: Vec<i64> = grid_report(&mut s, &tree, q).iter().map(|p| p.id).collect();
            let mut want: Vec<i64> = oracle_report(&pts, q).iter().map(|p| p.id).collect();
            got.sort_unstable();
            want.sort_unstable();
            assert_eq!(got, want, "q={q:?}");
            let len = got.len();
            got.dedup();
            assert_eq!(len, got.len(), "duplicate reports");
        }
    }

    #[test]
    fn selection_inverse_property() {
        let mut rng = xorshift(99);
        let n = 500;
        let pts = random_points(n, &mut rng);
        let mut s = session();
        let seq = s.create::<Point3>();
        s.append(seq, &pts);
        let tree = build_grid_tree(&mut s, seq, n, Orient::Downward);

        for _ in 0..100 {
            let q = random_apex(n, &mut rng);
            let avail = oracle_depth(&pts, Apex::new(n as i64, q.y, q.z));
            let k_sel = 1 + (rng() as usize) % n;
            let got = grid_select_axis(&mut s, &tree, q, k_sel, Axis::X);
            if k_sel > avail {
                assert!(got.is_none());
            } else {
                let apex = got.expect("feasible selection");
                assert_eq!(oracle_depth(&pts, apex), k_sel);
                assert_eq!((apex.y, apex.z), (q.y, q.z));
            }
        }
    }

    #[test]
    fn selection_on_chain() {
        let n = 4;
        let pts: Vec<Point3> = (0..n).map(|i| Point3 { id: i, x: i, y: i, z: i }).collect();
        let mut s = session();
        let seq = s.create::<Point3>();
        s.append(seq, &pts);
        let tree = build_grid_tree(&mut s, seq, n as usize, Orient::Downward);
        let apex = grid_select_axis(&mut s, &tree, Apex::new(0, 4, 4), 2, Axis::X).unwrap();
        assert_eq!(apex.x, 1);
        let apex = grid_select_axis(&mut s, &tree, Apex::new(4, 4, -1), 4, Axis::Z).unwrap();
        assert_eq!(apex.z, 3);
        assert!(grid_select_axis(&mut s, &tree, Apex::new(1, 1, 1), 4, Axis::Z).is_none());
    }

    #[test]
    fn additive_bounds_hold() {
        let mut rng = xorshift(5150);
        let n = 2048;
        let b = 16;
        let pts = random_points(n, &mut rng);
        for eps in [0.15, 0.6] {
            let mut s = session();
            let seq = s.create::<Point3>();
            s.append(seq, &pts);
            let root = build_additive_root(&mut s, seq, n, eps, Orient::Downward);
            let bound = additive_error_bound(n, b, eps);

            let queries = s.create::<QueryPoint>();
            let mut qs = Vec::new();
            for qi in 0..256 {
                qs.push(QueryPoint { id: qi, apex: random_apex(n, &mut rng) });
            }
            s.append(queries, &qs);
            let res = offline_additive_count(&mut s, &root, queries);
            let pairs = s.dump(res);
            assert_eq!(pairs.len(), qs.len());
            for (qi, &(qid, nq)) in pairs.iter().enumerate() {
                assert_eq!(qid, qi as i64);
                let exact = oracle_depth(&pts, qs[qi].apex) as i64;
                assert!(nq <= exact, "overestimate: nq={nq} exact={exact}");
                assert!(
                    (exact - nq) as f64 <= bound,
                    "error {} > bound {bound} (eps={eps})",
                    exact - nq
                );
            }
        }
    }

    #[test]
    fn additive_sentinel_cases() {
        let mut rng = xorshift(31337);
        let n = 512;
        let pts = random_points(n, &mut rng);
        let mut s = session();
        let seq = s.create::<Point3>();
        s.append(seq, &pts);
        let root = build_additive_root(&mut s, seq, n, 0.5, Orient::Upward);
        let queries = s.create::<QueryPoint>();
        s.append(
            queries,
            &[
                QueryPoint { id: 0, apex: Apex::new(n as i64, n as i64, n as i64) },
                QueryPoint { id: 1, apex: Apex::new(-1, -1, -1) },
            ],
        );
        let res = offline_additive_count(&mut s, &root, queries);
        let pairs = s.dump(res);
        // Upward from +inf is empty; from -inf it is everything, counted
        // with at most the additive slack.
        assert_eq!(pairs[0], (0, 0));
        let bound = additive_error_bound(n, 16, 0.5);
        assert!(pairs[1].1 <= n as i64 && (n as i64 - pairs[1].1) as f64 <= bound);
    }

    #[test]
    fn dense_and_sweep_paths_agree() {
        let mut rng = xorshift(777);
        let n = 1500;
        let pts = random_points(n, &mut rng);
        let mut qs = Vec::new();
        for qi in 0..128 {
            qs.push(QueryPoint { id: qi, apex: random_apex(n, &mut rng) });
        }

        let mut s = session();
        let seq = s.create::<Point3>();
        s.append(seq, &pts);
        let root = build_additive_root(&mut s, seq, n, 0.2, Orient::Downward);
        assert!(root.has_dense_table());
        let queries = s.create::<QueryPoint>();
        s.append(queries, &qs);
        let dense_res = offline_additive_count(&mut s, &root, queries);
        let dense = s.dump(dense_res);

        let mut s2 = session();
        let seq = s2.create::<Point3>();
        s2.append(seq, &pts);
        let mut root2 = build_additive_root(&mut s2, seq, n, 0.2, Orient::Downward);
        root2.drop_table();
        let queries = s2.create::<QueryPoint>();
        s2.append(queries, &qs);
        let swept_res = offline_additive_count(&mut s2, &root2, queries);
        let swept = s2.dump(swept_res);

        assert_eq!(dense, swept);
    }

    #[test]
    fn scan_mode_small_inputs() {
        let pts: Vec<Point3> = (0..8).map(|i| Point3 { id: i, x: i, y: i, z: i }).collect();
        let mut s = session();
        let seq = s.create::<Point3>();
        s.append(seq, &pts);
        // Budget 0.05 * 8^(2/3) * 16^(1/3) < 3: no slab count can meet it.
        let root = build_additive_root(&mut s, seq, 8, 0.05, Orient::Downward);
        assert!(root.is_scan_mode());
        let queries = s.create::<QueryPoint>();
        s.append(queries, &[QueryPoint { id: 5, apex: Apex::new(3, 3, 3) }]);
        let res = offline_additive_count(&mut s, &root, queries);
        assert_eq!(s.dump(res), vec![(5, 4)]);
    }
}
