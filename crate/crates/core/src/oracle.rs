//! Brute-force reference implementations: depth, reporting, cutting validation.
//!
//! Everything here is a direct scan over in-memory points, deliberately free
//! of any shared code with the structures under test. Oracles run outside
//! I/O accounting and are the trust anchor for every acceptance check, so
//! they get their own micro-tests on hand-enumerable instances.

use crate::geometry::{Apex, Cell, Point3, Rank};

/// Number of points inside the closed cell of `q`.
pub fn oracle_depth(points: &[Point3], q: Apex) -> usize {
    points.iter().filter(|p| q.contains_point(p)).count()
}

/// The exact point set inside the closed cell of `q`.
pub fn oracle_report(points: &[Point3], q: Apex) -> Vec<Point3> {
    points.iter().filter(|p| q.contains_point(p)).copied().collect()
}

/// 2-D depth over the xy-projection, restricted to points with `z <= zmax`.
pub fn oracle_depth2(points: &[Point3], x: Rank, y: Rank, zmax: Rank) -> usize {
    points.iter().filter(|p| p.x <= x && p.y <= y && p.z <= zmax).count()
}

/// Validation outcome for one cutting against one apex sample.
#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub k: i64,
    pub n_points: usize,
    pub cell_count: usize,
    /// `|cells| * k / N`: property-1 cell-count ratio.
    pub cell_count_ratio: f64,
    /// `max conflict size / k`: property-2 ratio, must stay <= 10.
    pub max_conflict_ratio: f64,
    /// Apexes of depth <= k with no containing cell.
    pub uncovered: Vec<Apex>,
    /// Cells whose stored conflict list differs from the oracle set.
    pub conflict_mismatches: Vec<i64>,
    pub samples_tested: usize,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.uncovered.is_empty()
            && self.conflict_mismatches.is_empty()
            && self.max_conflict_ratio <= 10.0
    }

    pub fn summary(&self) -> String {
        format!(
            "k={} cells={} cells*k/N={:.3} max_conflict/k={:.3} uncovered={} mismatches={} samples={}",
            self.k,
            self.cell_count,
            self.cell_count_ratio,
            self.max_conflict_ratio,
            self.uncovered.len(),
            self.conflict_mismatches.len(),
            self.samples_tested
        )
    }
}

/// Which apexes to test for property 3.
pub enum ApexSample {
    /// Every apex of the rank grid `[0, N]^3`. Only sensible for tiny `N`.
    Exhaustive,
    /// A caller-provided sample, typically from [`sample_shallow_apexes`].
    Given(Vec<Apex>),
}

/// Validate a cutting's three properties plus conflict-list set equality.
///
/// `cells` carry (offset, len) handles that are resolved through `conflict_of`,
/// so the caller decides where the lists actually live.
pub fn validate_cutting(
    points: &[Point3],
    k: i64,
    cells: &[Cell],
    conflict_of: &mut dyn FnMut(&Cell) -> Vec<Point3>,
    sample: ApexSample,
) -> ValidationReport {
    let n = points.len();
    let mut max_conflict = 0usize;
    let mut mismatches = Vec::new();

    for cell in cells {
        let stored = conflict_of(cell);
        max_conflict = max_conflict.max(stored.len());
        let expected = oracle_report(points, cell.apex);
        let mut a: Vec<i64> = stored.iter().map(|p| p.id).collect();
        let mut b: Vec<i64> = expected.iter().map(|p| p.id).collect();
        a.sort_unstable();
        b.sort_unstable();
        if a != b {
            mismatches.push(cell.id);
        }
    }

    let apexes: Vec<Apex> = match sample {
        ApexSample::Exhaustive => {
            let s = n as Rank;
            let mut v = Vec::new();
            for x in 0..=s {
                for y in 0..=s {
                    for z in 0..=s {
                        v.push(Apex::new(x, y, z));
                    }
                }
            }
            v
        }
        ApexSample::Given(v) => v,
    };

    let mut uncovered = Vec::new();
    let mut tested = 0usize;
    for q in apexes {
        if oracle_depth(points, q) > k as usize {
            continue;
        }
        tested += 1;
        if !cells.iter().any(|c| c.apex.contains_apex(&q)) {
            uncovered.push(q);
        }
    }

    ValidationReport {
        k,
        n_points: n,
        cell_count: cells.len(),
        cell_count_ratio: cells.len() as f64 * k as f64 / (n.max(1) as f64),
        max_conflict_ratio: max_conflict as f64 / (k.max(1) as f64),
        uncovered,
        conflict_mismatches: mismatches,
        samples_tested: tested,
    }
}

/// Draw `count` apexes of depth <= k, mixing uniform rejection samples with
/// boundary apexes sitting at depth exactly <= k on a random column. The
/// boundary construction guarantees the requested count even when the
/// shallow region is a small fraction of the grid.
pub fn sample_shallow_apexes(
    points: &[Point3],
    k: i64,
    count: usize,
    rng: &mut impl FnMut() -> u64,
) -> Vec<Apex> {
    let n = points.len();
    let s = n as Rank;
    let mut out = Vec::with_capacity(count);
    let mut xs_buf: Vec<Rank> = Vec::new();

    while out.len() < count {
        let y = (rng() % (s as u64 + 2)) as Rank - 1;
        let z = (rng() % (s as u64 + 2)) as Rank - 1;
        // Largest x with depth(x, y, z) <= k: one filtered pass per sample.
        xs_buf.clear();
        for p in points {
            if p.y <= y && p.z <= z {
                xs_buf.push(p.x);
            }
        }
        let x = if xs_buf.len() <= k as usize {
            s
        } else {
            let idx = k as usize; // (k+1)-th smallest x, 0-based k
            let (_, nth, _) = xs_buf.select_nth_unstable(idx);
            *nth - 1
        };
        out.push(Apex::new(x, y, z));
        if out.len() < count {
            // Every other draw: a uniform apex kept only when shallow.
            let q = Apex::new(
                (rng() % (s as u64 + 1)) as Rank,
                (rng() % (s as u64 + 1)) as Rank,
                (rng() % (s as u64 + 1)) as Rank,
            );
            if oracle_depth(points, q) <= k as usize {
                out.push(q);
            }
        }
    }
    out.truncate(count);
    out
}
