use crate::problem::{LoadDistribution, LoadLocation, LoadRegion, Point, SupportRegion};

use super::{FemError, StructuredMesh};

/// Supports and loads resolved onto mesh dofs.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryConditions {
    pub fixed: Vec<bool>,
    pub force: Vec<f64>,
    pub load_nodes: Vec<usize>,
    pub support_nodes: Vec<usize>,
}

fn tolerance(mesh: &StructuredMesh) -> f64 {
    1e-6 * mesh.dx.max(mesh.dy)
}

fn distance_to_segment(p: Point, a: Point, b: Point) -> f64 {
    let (vx, vy) = (b.x - a.x, b.y - a.y);
    let len2 = vx * vx + vy * vy;
    let t = if len2 == 0.0 { 0.0 } else { (((p.x - a.x) * vx + (p.y - a.y) * vy) / len2).clamp(0.0, 1.0) };
    p.distance(Point::new(a.x + t * vx, a.y + t * vy))
}

fn nodes_on_segment(mesh: &StructuredMesh, a: Point, b: Point) -> Vec<usize> {
    let tol = tolerance(mesh);
    (0..mesh.n_nodes()).filter(|&n| distance_to_segment(mesh.node_coords(n), a, b) <= tol).collect()
}

/// Node nearest to `p`, lowest index on ties.
pub fn nearest_node(mesh: &StructuredMesh, p: Point) -> usize {
    let i = (p.x / mesh.dx).round().clamp(0.0, mesh.nx as f64) as usize;
    let j = (p.y / mesh.dy).round().clamp(0.0, mesh.ny as f64) as usize;
    mesh.node_index(i, j)
}

fn is_boundary_node(mesh: &StructuredMesh, n: usize) -> bool {
    let active = mesh.active_elements_at_node(n);
    active >= 1 && active < 4
}

fn by_distance(mesh: &StructuredMesh, p: Point, nodes: &mut [usize]) {
    nodes.sort_by(|&a, &b| {
        let da = mesh.node_coords(a).distance(p);
        let db = mesh.node_coords(b).distance(p);
        da.total_cmp(&db).then(a.cmp(&b))
    });
}

fn load_targets(mesh: &StructuredMesh, load: &LoadRegion, index: usize) -> Result<Vec<usize>, FemError> {
    let in_void = |n: usize| {
        FemError::SingularSystem(format!(
            "load {index} acts on node {n} which touches no active element (load inside a void region)"
        ))
    };
    let nodes = match load.location {
        LoadLocation::Point { x, y } => {
            let p = Point::new(x, y);
            let n0 = nearest_node(mesh, p);
            if mesh.active_elements_at_node(n0) == 0 {
                return Err(in_void(n0));
            }
            match load.distribution {
                LoadDistribution::Nodal => vec![n0],
                LoadDistribution::DistributedOverNNodes { n } => {
                    let on_edge = is_boundary_node(mesh, n0);
                    let mut candidates: Vec<usize> = (0..mesh.n_nodes())
                        .filter(|&m| {
                            if on_edge {
                                is_boundary_node(mesh, m)
                            } else {
                                mesh.active_elements_at_node(m) > 0
                            }
                        })
                        .collect();
                    by_distance(mesh, p, &mut candidates);
                    candidates.truncate(n.max(1));
                    candidates
                }
            }
        }
        LoadLocation::Segment { start, end } => {
            let nodes = nodes_on_segment(mesh, start, end);
            if nodes.is_empty() {
                return Err(FemError::SingularSystem(format!("load {index} segment contains no mesh node")));
            }
            if let Some(&n) = nodes.iter().find(|&&n| mesh.active_elements_at_node(n) == 0) {
                return Err(in_void(n));
            }
            nodes
        }
    };
    Ok(nodes)
}

pub fn resolve_boundary(
    mesh: &StructuredMesh,
    supports: &[SupportRegion],
    loads: &[LoadRegion],
) -> Result<BoundaryConditions, FemError> {
    let ndof = mesh.n_dofs();
    let mut fixed = vec![false; ndof];
    let mut support_nodes = Vec::new();
    for s in supports {
        for n in nodes_on_segment(mesh, s.start, s.end) {
            if mesh.active_elements_at_node(n) == 0 {
                continue;
            }
            fixed[2 * n] |= s.fixed.fixes_x();
            fixed[2 * n + 1] |= s.fixed.fixes_y();
            support_nodes.push(n);
        }
    }
    support_nodes.sort_unstable();
    support_nodes.dedup();

    let fx = (0..ndof).step_by(2).filter(|&d| fixed[d]).count();
    let fy = (1..ndof).step_by(2).filter(|&d| fixed[d]).count();
    if fx == 0 || fy == 0 || fx + fy < 3 {
        return Err(FemError::SingularSystem(format!(
            "supports leave rigid-body motion unconstrained ({fx} x-dofs and {fy} y-dofs fixed on active material)"
        )));
    }

    let mut force = vec![0.0; ndof];
    let mut load_nodes = Vec::new();
    for (index, load) in loads.iter().enumerate() {
        let nodes = load_targets(mesh, load, index)?;
        let share = 1.0 / nodes.len() as f64;
        for &n in &nodes {
            force[2 * n] += load.force.x * share;
            force[2 * n + 1] += load.force.y * share;
        }
        load_nodes.extend(nodes);
    }
    load_nodes.sort_unstable();
    load_nodes.dedup();
    Ok(BoundaryConditions { fixed, force, load_nodes, support_nodes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::build_mesh;
    use crate::problem::{builtin_benchmark, Benchmark, FixedComponents};

    #[test]
    fn cantilever_tip_load_spreads_over_three_edge_nodes() {
        let spec = builtin_benchmark(Benchmark::Cantilever);
        let mesh = build_mesh(&spec.geometry).unwrap();
        let bc = resolve_boundary(&mesh, &spec.supports, &spec.loads).unwrap();
        let coords: Vec<Point> = bc.load_nodes.iter().map(|&n| mesh.node_coords(n)).collect();
        assert_eq!(coords.len(), 3);
        assert!(coords.iter().all(|p| (p.x - 2.0).abs() < 1e-12));
        let total: f64 = bc.force.iter().skip(1).step_by(2).sum();
        assert!((total + 1.0).abs() < 1e-14);
        assert_eq!(bc.fixed.iter().filter(|&&f| f).count(), 2 * 41);
    }

    #[test]
    fn mbb_corner_support_fixes_one_vertical_dof() {
        let spec = builtin_benchmark(Benchmark::MbbMidRight);
        let mesh = build_mesh(&spec.geometry).unwrap();
        let bc = resolve_boundary(&mesh, &spec.supports, &spec.loads).unwrap();
        let fy: Vec<usize> = (1..mesh.n_dofs()).step_by(2).filter(|&d| bc.fixed[d]).collect();
        assert_eq!(fy, vec![1]);
    }

    #[test]
    fn load_in_void_is_singular() {
        let mut spec = builtin_benchmark(Benchmark::LBracketStress);
        spec.loads[0].location = LoadLocation::Point { x: 0.7, y: 0.7 };
        let mesh = build_mesh(&spec.geometry).unwrap();
        let err = resolve_boundary(&mesh, &spec.supports, &spec.loads).unwrap_err();
        assert!(matches!(err, FemError::SingularSystem(ref m) if m.contains("void")));
    }

    #[test]
    fn missing_supports_are_singular() {
        let spec = builtin_benchmark(Benchmark::Cantilever);
        let mesh = build_mesh(&spec.geometry).unwrap();
        assert!(matches!(resolve_boundary(&mesh, &[], &spec.loads), Err(FemError::SingularSystem(_))));
        let rollers = SupportRegion { fixed: FixedComponents::X, ..spec.supports[0] };
        assert!(resolve_boundary(&mesh, &[rollers], &spec.loads).is_err());
    }
}
