//! Small convergence sweep: errors for a grid of (H, beta) cells and the
//! fitted log-log orders in H.

use lod2d::experiment::{cmd_table, ExperimentConfig};

fn main() {
    let cfg = ExperimentConfig {
        coarse_divisions: vec![4, 8, 16],
        fine_divisions: 64,
        betas: vec![1.0e2, 1.0e4],
        out_dir: std::env::temp_dir().join("lod2d_convergence_table"),
        ..ExperimentConfig::default()
    };
    let (sweep, slopes) = cmd_table(&cfg).expect("sweep");

    println!("{:>6} {:>8} {:>12} {:>12} {:>6}", "H", "beta", "e_energy_rel", "e_l2_rel", "pass");
    for c in &sweep.cells {
        println!(
            "  1/{:<3} {:>8.0e} {:>12.3e} {:>12.3e} {:>6}",
            c.coarse_divisions, c.beta, c.report.e_energy_rel, c.report.e_l2_rel, c.pass
        );
    }
    for s in &slopes {
        println!(
            "beta {:>8.0e}: energy order {:.2}, L2 order {:.2}",
            s.beta, s.energy_slope, s.l2_slope
        );
    }
    println!("artifacts in {}", cfg.out_dir.display());
}
