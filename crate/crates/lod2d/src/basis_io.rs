//! Binary persistence of the offline stage: dual node data and the
//! substructured kernel basis, so online runs can skip the eigensolves and
//! orthogonalization.
//!
//! Layout (all integers u64, all floats f64, little-endian): magic `LODB`,
//! u32 version, configuration hash, mesh parameters and seed, dual data per
//! coarse element, then the three block groups of the kernel basis.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::dual::{DualNodeSet, ElementDuals};
use crate::error::{LodError, Result};
use crate::kernel::{Block, BlockKernelBasis};
use crate::mesh::MeshHierarchy;

const MAGIC: &[u8; 4] = b"LODB";
const VERSION: u32 = 1;

/// Hash tying a basis file to the configuration that produced it.
pub fn config_hash(
    coarse_divisions: usize,
    refine_ratio: usize,
    beta: f64,
    coefficient_tag: &str,
    dual_seed: u64,
) -> u64 {
    use std::collections::hash_map::DefaultHasher;
    use std::hash::{Hash, Hasher};
    let mut h = DefaultHasher::new();
    coarse_divisions.hash(&mut h);
    refine_ratio.hash(&mut h);
    beta.to_bits().hash(&mut h);
    coefficient_tag.hash(&mut h);
    dual_seed.hash(&mut h);
    h.finish()
}

struct Sink<W: Write>(W);

impl<W: Write> Sink<W> {
    fn u64(&mut self, v: u64) -> Result<()> {
        self.0.write_all(&v.to_le_bytes())?;
        Ok(())
    }
    fn f64(&mut self, v: f64) -> Result<()> {
        self.0.write_all(&v.to_le_bytes())?;
        Ok(())
    }
    fn f64s(&mut self, vs: impl Iterator<Item = f64>) -> Result<()> {
        for v in vs {
            self.f64(v)?;
        }
        Ok(())
    }
}

struct Source<R: Read>(R);

impl<R: Read> Source<R> {
    fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.0.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }
    fn usize(&mut self) -> Result<usize> {
        Ok(self.u64()? as usize)
    }
    fn f64(&mut self) -> Result<f64> {
        let mut b = [0u8; 8];
        self.0.read_exact(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }
}

fn write_block<W: Write>(s: &mut Sink<W>, b: &Block) -> Result<()> {
    s.u64(b.support.len() as u64)?;
    s.u64(b.cols.ncols() as u64)?;
    for &g in &b.support {
        s.u64(g as u64)?;
    }
    s.f64s(b.cols.iter().cloned())
}

fn read_block<R: Read>(s: &mut Source<R>) -> Result<Block> {
    let rows = s.usize()?;
    let cols = s.usize()?;
    let mut support = Vec::with_capacity(rows);
    for _ in 0..rows {
        support.push(s.usize()?);
    }
    let mut data = DMatrix::zeros(rows, cols);
    for v in data.iter_mut() {
        *v = s.f64()?;
    }
    Ok(Block {
        support,
        cols: data,
    })
}

pub fn write_basis(
    path: &Path,
    hash: u64,
    hier: &MeshHierarchy,
    dual_seed: u64,
    dual: &DualNodeSet,
    basis: &BlockKernelBasis,
) -> Result<()> {
    let mut s = Sink(BufWriter::new(File::create(path)?));
    s.0.write_all(MAGIC)?;
    s.0.write_all(&VERSION.to_le_bytes())?;
    s.u64(hash)?;
    s.u64(hier.coarse_divisions as u64)?;
    s.u64(hier.refine_ratio as u64)?;
    s.u64(dual_seed)?;
    s.u64(basis.n as u64)?;
    s.u64(basis.ell as u64)?;
    s.u64(dual.n_aux as u64)?;
    s.u64(dual.per_element.len() as u64)?;
    for ed in &dual.per_element {
        let li = ed.nodes.len();
        s.u64(ed.element as u64)?;
        s.u64(li as u64)?;
        for &g in &ed.nodes {
            s.u64(g as u64)?;
        }
        s.f64s(ed.hat_scale.iter().cloned())?;
        s.f64s(ed.s_mat.iter().cloned())?;
        s.f64(ed.inv_cond)?;
        s.u64(ed.attempts as u64)?;
    }
    for group in [&basis.element_blocks, &basis.edge_blocks, &basis.vertex_blocks] {
        s.u64(group.len() as u64)?;
        for b in group {
            write_block(&mut s, b)?;
        }
    }
    s.0.flush()?;
    Ok(())
}

/// Reads a basis file back, refusing files whose hash does not match the
/// present configuration.
pub fn read_basis(
    path: &Path,
    expected_hash: u64,
) -> Result<(MeshHierarchy, u64, DualNodeSet, BlockKernelBasis)> {
    let mut s = Source(BufReader::new(File::open(path)?));
    let mut magic = [0u8; 4];
    s.0.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(LodError::BasisFile("bad magic".into()));
    }
    let mut ver = [0u8; 4];
    s.0.read_exact(&mut ver)?;
    if u32::from_le_bytes(ver) != VERSION {
        return Err(LodError::BasisFile(format!(
            "unsupported version {}",
            u32::from_le_bytes(ver)
        )));
    }
    let hash = s.u64()?;
    if hash != expected_hash {
        return Err(LodError::BasisFile(
            "configuration hash mismatch; rebuild the basis".into(),
        ));
    }
    let nh = s.usize()?;
    let r = s.usize()?;
    let dual_seed = s.u64()?;
    let hier = MeshHierarchy::build(nh, r)?;
    let n = s.usize()?;
    let ell = s.usize()?;
    let n_aux = s.usize()?;
    if n != hier.n {
        return Err(LodError::BasisFile("dimension mismatch".into()));
    }
    let m = s.usize()?;
    let mut per_element = Vec::with_capacity(m);
    for _ in 0..m {
        let element = s.usize()?;
        let li = s.usize()?;
        let mut nodes = Vec::with_capacity(li);
        for _ in 0..li {
            nodes.push(s.usize()?);
        }
        let mut hat_scale = Vec::with_capacity(li);
        for _ in 0..li {
            hat_scale.push(s.f64()?);
        }
        let mut s_mat = DMatrix::zeros(li, li);
        for v in s_mat.iter_mut() {
            *v = s.f64()?;
        }
        let inv_cond = s.f64()?;
        let attempts = s.usize()?;
        per_element.push(ElementDuals {
            element,
            nodes,
            hat_scale,
            s_mat,
            inv_cond,
            attempts,
        });
    }
    let mut groups = Vec::with_capacity(3);
    for _ in 0..3 {
        let count = s.usize()?;
        let mut blocks = Vec::with_capacity(count);
        for _ in 0..count {
            blocks.push(read_block(&mut s)?);
        }
        groups.push(blocks);
    }
    let vertex_blocks = groups.pop().unwrap();
    let edge_blocks = groups.pop().unwrap();
    let element_blocks = groups.pop().unwrap();
    let basis = BlockKernelBasis {
        element_blocks,
        edge_blocks,
        vertex_blocks,
        ell,
        n,
    };
    let dual = DualNodeSet {
        per_element,
        n_aux,
    };
    Ok((hier, dual_seed, dual, basis))
}
