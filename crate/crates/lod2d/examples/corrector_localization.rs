//! Shows how k conjugate gradient steps localize a corrected basis
//! function: mass outside a growing patch around its element decays with k.

use lod2d::assembly::assemble_stiffness;
use lod2d::auxiliary::build_aux_space;
use lod2d::coefficient::four_channels;
use lod2d::corrector::corrector_solve;
use lod2d::dual::{build_dual_functions, select_dual_nodes};
use lod2d::kernel::{build_kernel_basis, KtAK};
use lod2d::mesh::{classify_nodes, MeshHierarchy};

fn main() {
    let hier = MeshHierarchy::build(8, 8).expect("valid mesh");
    let kappa = four_channels(&hier, 1.0e4).expect("aligned fine mesh");
    let cls = classify_nodes(&hier);
    let a = assemble_stiffness(&hier, &kappa);
    let aux = build_aux_space(&hier, &kappa, &cls).expect("eigensolves");
    let dual = select_dual_nodes(&hier, &aux, &a, 1).expect("dual nodes");
    let fns = build_dual_functions(&dual, &a).expect("dual coupling");
    let basis = build_kernel_basis(&hier, &cls, &aux, &dual, &fns, &a).expect("kernel basis");
    let op = KtAK { basis: &basis, a: &a };

    // center element, first dual node
    let home = hier.element_id(4, 4);
    let ed = &dual.per_element[home];
    let mut hat = vec![0.0; hier.n];
    hat[ed.nodes[0]] = ed.hat_scale[0];
    let (hx, hy) = element_center(&hier, home);

    println!("fraction of |b|^2 beyond `layers` coarse layers from element {home}:");
    println!("{:>4} {:>10} {:>10} {:>10}", "k", "1 layer", "2 layers", "3 layers");
    for k in [1, 2, 4, 8, 16, 32] {
        let (corr, _) = corrector_solve(&op, &basis, &a, &hat, k).expect("cg");
        let b: Vec<f64> = hat.iter().zip(&corr).map(|(h, c)| h - c).collect();
        let total: f64 = b.iter().map(|x| x * x).sum();
        let mut line = format!("{k:>4}");
        for layers in 1..=3 {
            let radius = (layers as f64 + 0.5) * hier.coarse_h;
            let outside: f64 = b
                .iter()
                .enumerate()
                .filter(|(p, _)| {
                    let (x, y) = hier.node_position(*p);
                    (x - hx).abs().max((y - hy).abs()) > radius
                })
                .map(|(_, x)| x * x)
                .sum();
            line.push_str(&format!(" {:>10.3e}", outside / total));
        }
        println!("{line}");
    }
}

fn element_center(hier: &MeshHierarchy, e: usize) -> (f64, f64) {
    let (cx, cy) = (e % hier.coarse_divisions, e / hier.coarse_divisions);
    (
        (cx as f64 + 0.5) * hier.coarse_h,
        (cy as f64 + 0.5) * hier.coarse_h,
    )
}
