//! Walks the nested mesh hierarchy: sizes, interior numbering, and the
//! classification of fine nodes by coarse entity.

use lod2d::mesh::{classify_nodes, MeshHierarchy, NodeClass};

fn main() {
    let hier = MeshHierarchy::build(4, 8).expect("valid mesh");
    println!(
        "coarse {0}x{0} (H = {1}), fine {2}x{2} (h = {3})",
        hier.coarse_divisions, hier.coarse_h, hier.fine_divisions, hier.fine_h
    );
    println!("interior fine nodes n = {}, coarse elements m = {}", hier.n, hier.m);

    let cls = classify_nodes(&hier);
    let mut counts = [0usize; 3];
    for &c in &cls.classes {
        match c {
            NodeClass::ElementInterior(_) => counts[0] += 1,
            NodeClass::EdgeInterior(_) => counts[1] += 1,
            NodeClass::CoarseVertex(_) => counts[2] += 1,
        }
    }
    println!(
        "node classes: {} element-interior, {} edge-interior, {} coarse-vertex",
        counts[0], counts[1], counts[2]
    );
    println!(
        "coarse edges: {}, interior coarse vertices: {}",
        cls.edges.len(),
        cls.vertices.len()
    );

    // membership of a corner element vs an interior one
    for e in [0, 5] {
        let mem = &hier.element_membership[e];
        println!("element {e}: {} membership nodes", mem.len());
    }
}
