//! Design-quality metrics the Critic attaches to its verdicts.

use std::collections::VecDeque;

use topopt_core::fem::{BoundaryConditions, StructuredMesh};

pub const DEFAULT_CONNECTIVITY_THRESHOLD: f64 = 0.3;

/// Mean of `4ρ̄(1−ρ̄)` over active elements: 0 for a crisp design, 1 for
/// uniform gray.
pub fn discreteness_measure(rho_bar: &[f64], active: &[bool]) -> f64 {
    let (sum, count) = rho_bar
        .iter()
        .zip(active)
        .filter(|(_, &a)| a)
        .fold((0.0, 0usize), |(s, c), (&v, _)| (s + 4.0 * v * (1.0 - v), c + 1));
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Fraction of interior vertices whose four surrounding active elements form
/// a 2×2 checkerboard after thresholding at 0.5.
pub fn checkerboard_score(rho_bar: &[f64], mesh: &StructuredMesh) -> f64 {
    let solid = |ex: usize, ey: usize| rho_bar[mesh.element_index(ex, ey)] > 0.5;
    let mut eligible = 0usize;
    let mut flagged = 0usize;
    for ey in 1..mesh.ny {
        for ex in 1..mesh.nx {
            let block = [(ex - 1, ey - 1), (ex, ey - 1), (ex - 1, ey), (ex, ey)];
            if !block.iter().all(|&(i, j)| mesh.is_active(mesh.element_index(i, j))) {
                continue;
            }
            eligible += 1;
            let (b11, b21, b12, b22) = (solid(ex - 1, ey - 1), solid(ex, ey - 1), solid(ex - 1, ey), solid(ex, ey));
            if b11 == b22 && b21 == b12 && b11 != b21 {
                flagged += 1;
            }
        }
    }
    if eligible == 0 {
        0.0
    } else {
        flagged as f64 / eligible as f64
    }
}

/// Flood fill over solid elements (ρ̄ ≥ `threshold`, 4-connected). Passes when
/// at least one solid element touches a load node and every such element
/// reaches a solid element touching a support node.
pub fn connectivity_check(rho_bar: &[f64], mesh: &StructuredMesh, bc: &BoundaryConditions, threshold: f64) -> bool {
    let n = mesh.n_elements();
    let solid: Vec<bool> = (0..n).map(|e| mesh.is_active(e) && rho_bar[e] >= threshold).collect();
    let touching = |nodes: &[usize]| -> Vec<usize> {
        let mut out: Vec<usize> = nodes.iter().flat_map(|&nd| mesh.node_elements(nd)).filter(|&e| solid[e]).collect();
        out.sort_unstable();
        out.dedup();
        out
    };
    let load_elems = touching(&bc.load_nodes);
    let support_elems = touching(&bc.support_nodes);
    if load_elems.is_empty() || support_elems.is_empty() {
        return false;
    }

    // Label connected components, then compare labels.
    let mut label = vec![usize::MAX; n];
    let mut next = 0;
    let mut queue = VecDeque::new();
    for start in 0..n {
        if !solid[start] || label[start] != usize::MAX {
            continue;
        }
        label[start] = next;
        queue.push_back(start);
        while let Some(e) = queue.pop_front() {
            let (ex, ey) = mesh.element_position(e);
            let mut neighbours = Vec::with_capacity(4);
            if ex > 0 {
                neighbours.push(mesh.element_index(ex - 1, ey));
            }
            if ex + 1 < mesh.nx {
                neighbours.push(mesh.element_index(ex + 1, ey));
            }
            if ey > 0 {
                neighbours.push(mesh.element_index(ex, ey - 1));
            }
            if ey + 1 < mesh.ny {
                neighbours.push(mesh.element_index(ex, ey + 1));
            }
            for nb in neighbours {
                if solid[nb] && label[nb] == usize::MAX {
                    label[nb] = next;
                    queue.push_back(nb);
                }
            }
        }
        next += 1;
    }
    let mut grounded = vec![false; next];
    for &e in &support_elems {
        grounded[label[e]] = true;
    }
    load_elems.iter().all(|&e| grounded[label[e]])
}
