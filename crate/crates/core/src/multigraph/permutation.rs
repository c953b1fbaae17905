//! Permutations of a vertex set and their symmetrized multigraphs.

use super::{Multigraph, MultigraphError};

fn check_permutation(sigma: &[usize]) -> Result<(), MultigraphError> {
    let mut seen = vec![false; sigma.len()];
    for (i, &s) in sigma.iter().enumerate() {
        if s >= sigma.len() || seen[s] {
            return Err(MultigraphError::InvalidPermutation(format!("image {s} at position {i}")));
        }
        seen[s] = true;
    }
    Ok(())
}

/// Cycles of `sigma` (one-line notation), each starting at its smallest element.
pub fn cycle_decomposition(sigma: &[usize]) -> Result<Vec<Vec<usize>>, MultigraphError> {
    check_permutation(sigma)?;
    let mut seen = vec![false; sigma.len()];
    let mut cycles = Vec::new();
    for start in 0..sigma.len() {
        if seen[start] {
            continue;
        }
        let mut cycle = Vec::new();
        let mut i = start;
        while !seen[i] {
            seen[i] = true;
            cycle.push(i);
            i = sigma[i];
        }
        cycles.push(cycle);
    }
    Ok(cycles)
}

/// `q = P + Pᵀ` off the diagonal, `q_ii = 1` for fixed points. Every vertex
/// ends up with degree 2.
pub fn permutation_to_multigraph(sigma: &[usize]) -> Result<Multigraph, MultigraphError> {
    check_permutation(sigma)?;
    let mut q = Multigraph::empty(sigma.len(), true);
    for (i, &s) in sigma.iter().enumerate() {
        q.add(i, s, 1);
    }
    Ok(q)
}

/// All permutations whose symmetrized multigraph is `q` (degrees must all be 2).
///
/// Components of a degree-2 multigraph are loops (fixed points), double
/// edges (transpositions) or simple cycles of length >= 3, each of which
/// lifts to its two orientations. Output is sorted.
pub fn multigraph_to_permutations(q: &Multigraph) -> Result<Vec<Vec<usize>>, MultigraphError> {
    for vertex in 0..q.size() {
        let actual = q.degree(vertex);
        if actual != 2 {
            return Err(MultigraphError::DegreeMismatch { vertex, expected: 2, actual });
        }
    }
    let mut cycles: Vec<Vec<usize>> = Vec::new();
    for (verts, comp) in q.connected_components() {
        if verts.len() <= 2 {
            cycles.push(verts);
            continue;
        }
        // Walk the simple cycle starting from its smallest vertex.
        let mut order = vec![0usize];
        let mut prev = usize::MAX;
        let mut cur = 0usize;
        loop {
            let next = (0..comp.size()).find(|&w| w != cur && w != prev && comp.get(cur, w) > 0).expect("degree-2 cycle");
            if next == 0 {
                break;
            }
            order.push(next);
            prev = cur;
            cur = next;
        }
        cycles.push(order.into_iter().map(|k| verts[k]).collect());
    }

    let mut perms = vec![(0..q.size()).collect::<Vec<usize>>()];
    for cycle in &cycles {
        let orientations: Vec<Vec<usize>> = if cycle.len() >= 3 {
            let mut rev = vec![cycle[0]];
            rev.extend(cycle[1..].iter().rev());
            vec![cycle.clone(), rev]
        } else {
            vec![cycle.clone()]
        };
        let mut next = Vec::with_capacity(perms.len() * orientations.len());
        for base in &perms {
            for orient in &orientations {
                let mut p = base.clone();
                for k in 0..orient.len() {
                    p[orient[k]] = orient[(k + 1) % orient.len()];
                }
                next.push(p);
            }
        }
        perms = next;
    }
    perms.sort();
    Ok(perms)
}
