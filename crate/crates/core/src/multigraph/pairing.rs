//! Complete pairings (perfect matchings) of grouped points.

use serde::Serialize;

/// A labelled half-edge: copy `slot` of group `group`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Point {
    pub group: usize,
    pub slot: usize,
}

/// A complete Feynman diagram on the points of the groups.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PairingDiagram {
    pub points: Vec<Point>,
    /// Each edge is a pair of indices into `points`, smaller index first.
    pub edges: Vec<(usize, usize)>,
}

impl PairingDiagram {
    pub fn edge_points(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        self.edges.iter().map(|&(a, b)| (self.points[a], self.points[b]))
    }
}

/// Lazily enumerates every perfect matching of the points
/// `(g, s), s < groups[g]`, optionally forbidding edges inside a group.
///
/// The smallest unmatched point is always paired next, trying partners in
/// increasing order, so the output order is deterministic.
pub fn enumerate_pairings(groups: &[usize], forbid_intra_group: bool) -> PairingIter {
    PairingIter::new(groups, forbid_intra_group)
}

pub struct PairingIter {
    points: Vec<Point>,
    forbid_intra: bool,
    mate: Vec<usize>,
    stack: Vec<(usize, usize)>,
    edges: Vec<(Point, Point)>,
    started: bool,
    done: bool,
}

const UNMATCHED: usize = usize::MAX;

impl PairingIter {
    fn new(groups: &[usize], forbid_intra: bool) -> Self {
        let points: Vec<Point> =
            groups.iter().enumerate().flat_map(|(group, &size)| (0..size).map(move |slot| Point { group, slot })).collect();
        let done = points.len() % 2 == 1;
        Self {
            mate: vec![UNMATCHED; points.len()],
            points,
            forbid_intra,
            stack: Vec::new(),
            edges: Vec::new(),
            started: false,
            done,
        }
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    fn admissible(&self, a: usize, b: usize) -> bool {
        self.mate[b] == UNMATCHED && !(self.forbid_intra && self.points[a].group == self.points[b].group)
    }

    fn pop(&mut self) -> Option<(usize, usize)> {
        let (a, b) = self.stack.pop()?;
        self.mate[a] = UNMATCHED;
        self.mate[b] = UNMATCHED;
        Some((a, b))
    }

    /// Extends the current partial matching; `resume` retries point `a`
    /// with partners strictly after `b`.
    fn advance(&mut self, mut resume: Option<(usize, usize)>) -> bool {
        let n = self.points.len();
        loop {
            let (a, from) = match resume.take() {
                Some((a, b)) => (a, b + 1),
                None => match (0..n).find(|&p| self.mate[p] == UNMATCHED) {
                    None => return true,
                    Some(a) => (a, a + 1),
                },
            };
            match (from..n).find(|&b| self.admissible(a, b)) {
                Some(b) => {
                    self.mate[a] = b;
                    self.mate[b] = a;
                    self.stack.push((a, b));
                }
                None => match self.pop() {
                    Some(last) => resume = Some(last),
                    None => return false,
                },
            }
        }
    }

    /// Next matching as `(point, point)` edges, without allocating a diagram.
    pub fn next_edges(&mut self) -> Option<&[(Point, Point)]> {
        if self.done {
            return None;
        }
        let found = if !self.started {
            self.started = true;
            self.advance(None)
        } else {
            match self.pop() {
                Some(last) => self.advance(Some(last)),
                None => false,
            }
        };
        if !found {
            self.done = true;
            return None;
        }
        self.edges.clear();
        for &(a, b) in &self.stack {
            self.edges.push((self.points[a], self.points[b]));
        }
        Some(&self.edges)
    }
}

impl Iterator for PairingIter {
    type Item = PairingDiagram;

    fn next(&mut self) -> Option<PairingDiagram> {
        self.next_edges()?;
        let mut edges = self.stack.clone();
        edges.sort_unstable();
        Some(PairingDiagram { points: self.points.clone(), edges })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_counts() {
        assert_eq!(enumerate_pairings(&[1, 1], true).count(), 1);
        assert_eq!(enumerate_pairings(&[2, 2], true).count(), 2);
        assert_eq!(enumerate_pairings(&[2, 2, 2], true).count(), 8);
        assert_eq!(enumerate_pairings(&[3, 1], true).count(), 0);
        assert_eq!(enumerate_pairings(&[1, 1, 1], true).count(), 0);
        // Unrestricted: (2n-1)!! matchings.
        assert_eq!(enumerate_pairings(&[6], false).count(), 15);
        assert_eq!(enumerate_pairings(&[2, 2], false).count(), 3);
    }

    #[test]
    fn empty_point_set_has_one_pairing() {
        let all: Vec<_> = enumerate_pairings(&[], true).collect();
        assert_eq!(all.len(), 1);
        assert!(all[0].edges.is_empty());
        assert_eq!(enumerate_pairings(&[0, 0], true).count(), 1);
    }

    #[test]
    fn every_point_matched_once_and_no_intra_edges() {
        for p in enumerate_pairings(&[2, 3, 1, 2], true) {
            let mut seen = vec![0; p.points.len()];
            for &(a, b) in &p.edges {
                seen[a] += 1;
                seen[b] += 1;
                assert_ne!(p.points[a].group, p.points[b].group);
            }
            assert!(seen.iter().all(|&s| s == 1));
        }
    }

    #[test]
    fn order_is_deterministic_and_duplicate_free() {
        let a: Vec<_> = enumerate_pairings(&[2, 2, 2], true).collect();
        let b: Vec<_> = enumerate_pairings(&[2, 2, 2], true).collect();
        assert_eq!(a, b);
        let mut edges: Vec<_> = a.iter().map(|p| p.edges.clone()).collect();
        edges.sort();
        edges.dedup();
        assert_eq!(edges.len(), a.len());
    }
}
