//! 2-D k-level shallow cuttings as monotone orthogonal staircases.
//!
//! A staircase is the outer boundary of a union of 2-D dominance cells:
//! alternating outer corners (cell apexes) and inner corners (reflex
//! vertices), with x strictly increasing and y strictly decreasing along the
//! sequence. The leftmost cell reaches `y = +inf` and the rightmost
//! `x = +inf`, so every apex of depth <= k in the full rank grid is covered.
//!
//! Corner placement is coverage-first: an outer corner sits at the largest x
//! whose depth at the current y threshold stays within `outer_cap`, and the
//! following inner corner at the largest y whose depth one column to the
//! right stays within `inner_target`. Every apex outside the boundary
//! therefore has depth > inner_target, which is the fact the 3-D sweep
//! leans on.

use thiserror::Error;

use crate::extsort::{external_sort, Axis, SortKey};
use crate::geometry::{Point3, Rank};
use crate::iomodel::{ExtVec, Record, SeqReader, SeqWriter, Session, Word};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CornerKind {
    Outer,
    Inner,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Corner {
    pub kind: CornerKind,
    pub x: Rank,
    pub y: Rank,
    pub depth_at_build: i64,
}

impl Record for Corner {
    const WIDTH: usize = 4;
    fn encode(&self, out: &mut [Word]) {
        out[0] = match self.kind {
            CornerKind::Outer => 0,
            CornerKind::Inner => 1,
        };
        out[1] = self.x;
        out[2] = self.y;
        out[3] = self.depth_at_build;
    }
    fn decode(w: &[Word]) -> Self {
        Corner {
            kind: if w[0] == 0 { CornerKind::Outer } else { CornerKind::Inner },
            x: w[1],
            y: w[2],
            depth_at_build: w[3],
        }
    }
}

/// In-memory corner sequence ordered by increasing x. The external form is
/// an `ExtVec<Corner>` in the same order.
#[derive(Debug, Clone)]
pub struct Staircase {
    pub level: i64,
    pub corners: Vec<Corner>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SpliceError {
    #[error("corner sequence violates staircase monotonicity at index {0}")]
    Monotonicity(usize),
    #[error("removed corner ({0}, {1}) not dominated by any inserted corner")]
    UncoveredRemoval(Rank, Rank),
    #[error("remove range out of bounds")]
    BadRange,
}

impl Staircase {
    pub fn from_ext(sess: &mut Session, level: i64, seq: ExtVec<Corner>) -> Self {
        Staircase { level, corners: sess.dump(seq) }
    }

    pub fn outer_corners(&self) -> impl Iterator<Item = &Corner> {
        self.corners.iter().filter(|c| c.kind == CornerKind::Outer)
    }

    /// Does any cell of the staircase contain `(x, y)`?
    pub fn covers(&self, x: Rank, y: Rank) -> bool {
        self.outer_corners().any(|c| x <= c.x && y <= c.y)
    }

    /// Structural check: alternation, monotonicity, outer ends.
    pub fn check_shape(&self) -> Result<(), SpliceError> {
        let cs = &self.corners;
        if cs.is_empty() || cs.len() % 2 == 0 {
            return Err(SpliceError::Monotonicity(cs.len().saturating_sub(1)));
        }
        for (i, c) in cs.iter().enumerate() {
            let want = if i % 2 == 0 { CornerKind::Outer } else { CornerKind::Inner };
            if c.kind != want {
                return Err(SpliceError::Monotonicity(i));
            }
        }
        for i in 1..cs.len() {
            let (a, b) = (&cs[i - 1], &cs[i]);
            // Outer -> inner shares x and drops y; inner -> outer shares y
            // and grows x.
            let ok = if a.kind == CornerKind::Outer {
                a.x == b.x && b.y < a.y
            } else {
                a.y == b.y && b.x > a.x
            };
            if !ok {
                return Err(SpliceError::Monotonicity(i));
            }
        }
        Ok(())
    }
}

/// Replace `remove` (a corner index range) with `insert`, validating the
/// splice preconditions. Identity when both are empty.
pub fn splice(
    stair: &Staircase,
    remove: std::ops::Range<usize>,
    insert: &[Corner],
) -> Result<Staircase, SpliceError> {
    if remove.start > remove.end || remove.end > stair.corners.len() {
        return Err(SpliceError::BadRange);
    }
    for old in &stair.corners[remove.clone()] {
        let dominated = insert.iter().any(|c| old.x <= c.x && old.y <= c.y);
        if !dominated {
            return Err(SpliceError::UncoveredRemoval(old.x, old.y));
        }
    }
    let mut corners = Vec::with_capacity(stair.corners.len() - remove.len() + insert.len());
    corners.extend_from_slice(&stair.corners[..remove.start]);
    corners.extend_from_slice(insert);
    corners.extend_from_slice(&stair.corners[remove.end..]);
    let out = Staircase { level: stair.level, corners };
    out.check_shape()?;
    Ok(out)
}

/// Depth multipliers for construction: inner corners target `inner_target`,
/// outer corners are capped at `outer_cap`.
#[derive(Debug, Clone, Copy)]
pub struct Multipliers {
    pub inner_target: usize,
    pub outer_cap: usize,
}

impl Multipliers {
    /// Standalone defaults `(k, 2k)`.
    pub fn standalone(k: usize) -> Self {
        Multipliers { inner_target: k.max(1), outer_cap: (2 * k).max(2) }
    }

    /// Sweep defaults `(9k, 10k)` used while patching 3-D cuttings.
    pub fn sweep(k: usize) -> Self {
        Multipliers { inner_target: (9 * k).max(1), outer_cap: (10 * k).max(2) }
    }
}

/// Build the staircase of `points` (xy-projection; z ignored) at level `k`
/// with the given multipliers, in sort-bound transfers. Output corners are
/// written to a fresh sequence in increasing x. `sentinel` is the +inf rank
/// of the ambient rank space.
///
/// When `outer_cap` fits a quarter of memory the survivor set is kept
/// resident; otherwise a two-pass variant buckets survivors by y-rank and
/// streams one bucket per emission to locate the inner-corner threshold.
pub fn build_staircase(
    sess: &mut Session,
    points: ExtVec<Point3>,
    k: usize,
    mult: Multipliers,
    sentinel: Rank,
) -> (ExtVec<Corner>, Staircase) {
    assert!(k >= 1, "staircase level must be positive");
    assert!(mult.inner_target < mult.outer_cap, "need inner_target < outer_cap");
    let seq = sess.create::<Corner>();
    let m = sess.config().m();

    let corners = if mult.outer_cap + 1 <= m / 4 {
        build_resident(sess, points, mult, sentinel)
    } else {
        build_bucketed(sess, points, mult, sentinel)
    };
    sess.append(seq, &corners);
    (seq, Staircase { level: k as i64, corners })
}

fn build_resident(
    sess: &mut Session,
    points: ExtVec<Point3>,
    mult: Multipliers,
    sentinel: Rank,
) -> Vec<Corner> {
    let by_x = external_sort(sess, points, SortKey::axis(Axis::X, false));
    let _guard = sess.mem().reserve(mult.outer_cap + 1);
    let mut survivors: Vec<Rank> = Vec::with_capacity(mult.outer_cap + 1); // sorted y-ranks
    let mut y_cur = sentinel;
    let mut corners = Vec::new();

    let mut reader = SeqReader::new(sess, by_x);
    while let Some(p) = reader.next(sess) {
        if p.y > y_cur {
            continue;
        }
        if survivors.len() == mult.outer_cap {
            // p is the (cap+1)-th survivor: close the cell just left of it.
            let xj = p.x - 1;
            corners.push(Corner {
                kind: CornerKind::Outer,
                x: xj,
                y: y_cur,
                depth_at_build: mult.outer_cap as i64,
            });
            let pos = survivors.partition_point(|&v| v < p.y);
            survivors.insert(pos, p.y);
            let y_next = survivors[mult.inner_target] - 1;
            let below = survivors.partition_point(|&v| v <= y_next);
            // The corner sits at x = p.x - 1, so p itself does not count
            // toward its depth even when it survives the prune.
            let p_counted = usize::from(p.y <= y_next);
            corners.push(Corner {
                kind: CornerKind::Inner,
                x: xj,
                y: y_next,
                depth_at_build: (below - p_counted) as i64,
            });
            survivors.truncate(below);
            y_cur = y_next;
        } else {
            let pos = survivors.partition_point(|&v| v < p.y);
            survivors.insert(pos, p.y);
        }
    }
    corners.push(Corner {
        kind: CornerKind::Outer,
        x: sentinel,
        y: y_cur,
        depth_at_build: survivors.len() as i64,
    });
    sess.release(by_x);
    corners
}

fn build_bucketed(
    sess: &mut Session,
    points: ExtVec<Point3>,
    mult: Multipliers,
    sentinel: Rank,
) -> Vec<Corner> {
    let n = sess.len(points);
    let m = sess.config().m();
    let b = sess.config().b();
    let by_y = external_sort(sess, points, SortKey::axis(Axis::Y, false));
    let by_x = external_sort(sess, points, SortKey::axis(Axis::X, false));

    // Bucket = contiguous range of the y-sorted order; the resident count
    // array needs n / bucket_len slots, kept within M/4.
    let bucket_len = b.max(n.div_ceil((m / 4).max(1))).max(1);
    let n_buckets = n.div_ceil(bucket_len).max(1);
    let _guard = sess.mem().reserve(2 * n_buckets);

    // First y of each bucket, one streaming pass.
    let mut bucket_floor: Vec<Rank> = Vec::with_capacity(n_buckets);
    {
        let mut r = SeqReader::new(sess, by_y);
        let mut i = 0usize;
        while let Some(p) = r.next(sess) {
            if i % bucket_len == 0 {
                bucket_floor.push(p.y);
            }
            i += 1;
        }
    }
    let bucket_of =
        |y: Rank, floors: &[Rank]| -> usize { floors.partition_point(|&f| f <= y).saturating_sub(1) };

    let mut cnt = vec![0usize; n_buckets];
    let mut total = 0usize;
    let mut y_cur = sentinel;
    let mut corners = Vec::new();

    let mut reader = SeqReader::new(sess, by_x);
    while let Some(p) = reader.next(sess) {
        if p.y > y_cur {
            continue;
        }
        if total == mult.outer_cap {
            let xj = p.x - 1;
            corners.push(Corner {
                kind: CornerKind::Outer,
                x: xj,
                y: y_cur,
                depth_at_build: mult.outer_cap as i64,
            });
            cnt[bucket_of(p.y, &bucket_floor)] += 1;

            // Locate the bucket holding the (inner_target+1)-th smallest
            // survivor y, then stream just that bucket for the exact value.
            let need = mult.inner_target + 1;
            let mut acc = 0usize;
            let mut bsel = 0usize;
            for (bi, &c) in cnt.iter().enumerate() {
                if acc + c >= need {
                    bsel = bi;
                    break;
                }
                acc += c;
            }
            let within = need - acc;
            let start = bsel * bucket_len;
            let len = bucket_len.min(n - start);
            let mut seen = 0usize;
            let mut v = sentinel;
            let mut br = SeqReader::with_range(sess, by_y, start, len);
            while let Some(q) = br.next(sess) {
                if q.x <= p.x && q.y <= y_cur {
                    seen += 1;
                    if seen == within {
                        v = q.y;
                        break;
                    }
                }
            }
            assert!(v < sentinel, "bucket selection must find the threshold");
            let y_next = v - 1;
            let p_counted = usize::from(p.y <= y_next);
            corners.push(Corner {
                kind: CornerKind::Inner,
                x: xj,
                y: y_next,
                depth_at_build: (mult.inner_target - p_counted) as i64,
            });
            // Prune survivors above the new threshold.
            cnt[bsel] = within - 1;
            for c in cnt.iter_mut().skip(bsel + 1) {
                *c = 0;
            }
            total = mult.inner_target;
            y_cur = y_next;
        } else {
            cnt[bucket_of(p.y, &bucket_floor)] += 1;
            total += 1;
        }
    }
    corners.push(Corner {
        kind: CornerKind::Outer,
        x: sentinel,
        y: y_cur,
        depth_at_build: total as i64,
    });
    sess.release(by_y);
    sess.release(by_x);
    corners
}

/// Write corners to a fresh sequence (helper for tests and the sweep).
pub fn corners_to_ext(sess: &mut Session, corners: &[Corner]) -> ExtVec<Corner> {
    let seq = sess.create::<Corner>();
    let mut w = SeqWriter::new(sess, seq);
    for c in corners {
        w.push(sess, *c);
    }
    w.finish(sess);
    seq
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::iomodel::IoConfig;
    use crate::oracle::oracle_depth2;

    fn session() -> Session {
        Session::open(IoConfig { memory_words: 64, block_words: 4 }).unwrap()
    }

    fn mk_points(xy: &[(i64, i64)]) -> Vec<Point3> {
        xy.iter().enumerate().map(|(i, &(x, y))| Point3 { id: i as i64, x, y, z: 0 }).collect()
    }

    fn check_invariants(pts: &[Point3], k: usize, stair: &Staircase, mult: Multipliers) {
        stair.check_shape().unwrap();
        let n = pts.len() as Rank;
        for c in &stair.corners {
            let d = oracle_depth2(pts, c.x, c.y, i64::MAX);
            match c.kind {
                CornerKind::Outer => assert!(d <= mult.outer_cap, "outer depth {d}"),
                CornerKind::Inner => {
                    assert!(d <= mult.inner_target);
                    assert!(
                        d + 1 >= mult.inner_target,
                        "inner depth {d} vs target {}",
                        mult.inner_target
                    );
                    assert_eq!(d as i64, c.depth_at_build);
                }
            }
        }
        // Coverage: every grid apex of depth <= k lies under the boundary.
        for x in -1..=n {
            for y in -1..=n {
                if oracle_depth2(pts, x, y, i64::MAX) <= k {
                    assert!(stair.covers(x, y), "uncovered shallow apex ({x}, {y})");
                }
            }
        }
        // Corner budget.
        let bound = 4 * pts.len().div_ceil(k) + 4;
        assert!(stair.corners.len() <= bound);
    }

    #[test]
    fn tiny_input_single_corner() {
        let mut s = session();
        let pts = mk_points(&[(0, 1), (1, 0)]);
        let seq = s.create::<Point3>();
        s.append(seq, &pts);
        let (_, stair) = build_staircase(&mut s, seq, 3, Multipliers::standalone(3), 2);
        assert_eq!(stair.corners.len(), 1);
        assert_eq!((stair.corners[0].x, stair.corners[0].y), (2, 2));
        check_invariants(&pts, 3, &stair, Multipliers::standalone(3));
    }

    #[test]
    fn chain_k1_matches_oracle() {
        let mut s = session();
        let pts = mk_points(&[(0, 0), (1, 1), (2, 2), (3, 3)]);
        let seq = s.create::<Point3>();
        s.append(seq, &pts);
        let mult = Multipliers::standalone(1);
        let (_, stair) = build_staircase(&mut s, seq, 1, mult, 4);
        check_invariants(&pts, 1, &stair, mult);
    }

    #[test]
    fn eighteen_point_level3_configuration() {
        // 18 points, k = 3: inner corners at depth 3, outer corners at most
        // 6, mirroring the canonical warm-up figure.
        let mut xy = Vec::new();
        for i in 0..18i64 {
            xy.push((i, i));
        }
        let pts = mk_points(&xy);
        let mut s = session();
        let seq = s.create::<Point3>();
        s.append(seq, &pts);
        let mult = Multipliers::standalone(3);
        let (_, stair) = build_staircase(&mut s, seq, 3, mult, 18);
        for c in &stair.corners {
            let d = oracle_depth2(&pts, c.x, c.y, i64::MAX);
            match c.kind {
                CornerKind::Inner => assert_eq!(d, 3),
                CornerKind::Outer => assert!(d <= 6),
            }
        }
        check_invariants(&pts, 3, &stair, mult);
    }

    #[test]
    fn random_sets_all_levels() {
        let mut state = 0xdeadbeefu64;
        let mut rng = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            state
        };
        for n in [5usize, 17, 40] {
            let mut xs: Vec<i64> = (0..n as i64).collect();
            let mut ys: Vec<i64> = (0..n as i64).collect();
            for i in (1..n).rev() {
                xs.swap(i, (rng() % (i as u64 + 1)) as usize);
                ys.swap(i, (rng() % (i as u64 + 1)) as usize);
            }
            let pts: Vec<Point3> =
                (0..n).map(|i| Point3 { id: i as i64, x: xs[i], y: ys[i], z: 0 }).collect();
            for k in [1usize, 2, 3, n.div_ceil(2)] {
                let mut s = session();
                let seq = s.create::<Point3>();
                s.append(seq, &pts);
                let mult = Multipliers::standalone(k);
                let (_, stair) = build_staircase(&mut s, seq, k, mult, n as Rank);
                check_invariants(&pts, k, &stair, mult);
            }
        }
    }

    #[test]
    fn bucketed_variant_agrees_with_resident() {
        let n = 64usize;
        let mut state = 0x1234_5678u64;
        let mut rng = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            state
        };
        let mut xs: Vec<i64> = (0..n as i64).collect();
        let mut ys: Vec<i64> = (0..n as i64).collect();
        for i in (1..n).rev() {
            xs.swap(i, (rng() % (i as u64 + 1)) as usize);
            ys.swap(i, (rng() % (i as u64 + 1)) as usize);
        }
        let pts: Vec<Point3> =
            (0..n).map(|i| Point3 { id: i as i64, x: xs[i], y: ys[i], z: 0 }).collect();

        let k = 8usize; // cap 16: over M/4 in the small session, resident in the big one
        let mult = Multipliers::standalone(k);

        let mut small = Session::open(IoConfig { memory_words: 32, block_words: 4 }).unwrap();
        let seq = small.create::<Point3>();
        small.append(seq, &pts);
        let (_, bucketed) = build_staircase(&mut small, seq, k, mult, n as Rank);

        let mut big = Session::open(IoConfig { memory_words: 4096, block_words: 4 }).unwrap();
        let seq = big.create::<Point3>();
        big.append(seq, &pts);
        let (_, resident) = build_staircase(&mut big, seq, k, mult, n as Rank);

        let strip = |s: &Staircase| s.corners.iter().map(|c| (c.kind, c.x, c.y)).collect::<Vec<_>>();
        assert_eq!(strip(&bucketed), strip(&resident));
        check_invariants(&pts, k, &bucketed, mult);
    }

    #[test]
    fn splice_identity_and_rules() {
        let stair = Staircase {
            level: 1,
            corners: vec![
                Corner { kind: CornerKind::Outer, x: 2, y: 9, depth_at_build: 2 },
                Corner { kind: CornerKind::Inner, x: 2, y: 5, depth_at_build: 1 },
                Corner { kind: CornerKind::Outer, x: 6, y: 5, depth_at_build: 2 },
                Corner { kind: CornerKind::Inner, x: 6, y: 2, depth_at_build: 1 },
                Corner { kind: CornerKind::Outer, x: 9, y: 2, depth_at_build: 2 },
            ],
        };
        stair.check_shape().unwrap();

        let same = splice(&stair, 0..0, &[]).unwrap();
        assert_eq!(same.corners, stair.corners);

        // Remove the middle outer and its flanking inners; insert a single
        // step that dominates all three and reconnects both sides.
        let ok = splice(
            &stair,
            1..4,
            &[
                Corner { kind: CornerKind::Inner, x: 2, y: 7, depth_at_build: 0 },
                Corner { kind: CornerKind::Outer, x: 7, y: 7, depth_at_build: 2 },
                Corner { kind: CornerKind::Inner, x: 7, y: 2, depth_at_build: 0 },
            ],
        )
        .unwrap();
        ok.check_shape().unwrap();

        // A removal not dominated by any insert is rejected.
        let bad = splice(
            &stair,
            0..2,
            &[Corner { kind: CornerKind::Outer, x: 1, y: 1, depth_at_build: 0 }],
        );
        assert!(matches!(bad, Err(SpliceError::UncoveredRemoval(..))));

        // X-monotonicity violations are rejected even when every removed
        // corner is dominated.
        let bad = splice(
            &stair,
            2..5,
            &[
                Corner { kind: CornerKind::Outer, x: 10, y: 5, depth_at_build: 0 },
                Corner { kind: CornerKind::Inner, x: 10, y: 4, depth_at_build: 0 },
                Corner { kind: CornerKind::Outer, x: 9, y: 4, depth_at_build: 0 },
            ],
        );
        assert!(matches!(bad, Err(SpliceError::Monotonicity(_))));
    }
}
