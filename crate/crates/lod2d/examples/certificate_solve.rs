//! End-to-end run of one configuration cell: offline basis construction,
//! fine and multiscale solves, error norms against the certificate.

use lod2d::experiment::{run_cell, ExperimentConfig};

fn main() {
    let cfg = ExperimentConfig {
        coarse_divisions: vec![8],
        fine_divisions: 64,
        betas: vec![1.0e4],
        out_dir: std::env::temp_dir().join("lod2d_certificate_solve"),
        ..ExperimentConfig::default()
    };
    let cell = run_cell(&cfg, 8, 1.0e4).expect("cell pipeline");

    print!("{}", cell.cert.render());
    let r = &cell.report;
    println!("e_energy_abs={:.6e} (rel {:.3e})", r.e_energy_abs, r.e_energy_rel);
    println!("e_l2_abs={:.6e} (rel {:.3e})", r.e_l2_abs, r.e_l2_rel);
    println!("e_l2k_abs={:.6e}", r.e_l2k_abs);
    println!(
        "energy error within certificate: {} ({:.3e} <= {:.3e})",
        r.estimate_satisfied, r.e_energy_abs, cell.cert.energy_estimate
    );
    println!("cell pass = {}", cell.pass);

    let mean_iters: f64 = cell.iterations.iter().map(|&(_, _, it)| it as f64).sum::<f64>()
        / cell.iterations.len() as f64;
    println!(
        "corrector solves: {} vectors, k = {}, mean iterations {:.1}, {} entries dropped",
        cell.iterations.len(),
        cell.cert.k,
        mean_iters,
        cell.dropped_entries
    );
}
