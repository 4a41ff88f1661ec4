use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::DMatrix;

use super::field::CellField;
use super::grid::Grid;
use crate::error::{Error, Result};
use crate::exterior::{basis, binomial, MultiIndex};
use crate::linalg::CsrMatrix;

/// Piecewise-constant coefficient on a lattice of cells that the mesh refines.
#[derive(Clone, Copy, Debug)]
pub enum Coefficients<'a> {
    Constant(&'a DMatrix<f64>),
    /// `side^d` row-major symmetric `width × width` blocks, cell-major.
    PerCell { side: usize, width: usize, data: &'a [f64] },
}

impl<'a> Coefficients<'a> {
    fn width(&self) -> usize {
        match self {
            Coefficients::Constant(m) => m.nrows(),
            Coefficients::PerCell { width, .. } => *width,
        }
    }

    fn check(&self, mesh: &Grid, degree: usize) -> Result<()> {
        let n = binomial(mesh.dim(), degree);
        if self.width() != n {
            return Err(Error::DimensionMismatch { expected: n, got: self.width() });
        }
        if let Coefficients::PerCell { side, data, .. } = self {
            if *side == 0 || mesh.side() % side != 0 {
                return Err(Error::GridMismatch(format!(
                    "mesh side {} does not refine coefficient side {side}",
                    mesh.side()
                )));
            }
            if data.len() != side.pow(mesh.dim() as u32) * n * n {
                return Err(Error::GridMismatch("coefficient data has the wrong length".into()));
            }
        }
        Ok(())
    }

    /// Coefficient block for a mesh cell.
    pub fn block(&self, mesh: &Grid, pos: &[usize]) -> &'a [f64] {
        match *self {
            Coefficients::Constant(m) => m.as_slice(),
            Coefficients::PerCell { side, width, data } => {
                let refine = mesh.side() / side;
                let c = pos.iter().fold(0, |acc, &p| acc * side + p / refine);
                &data[c * width * width..(c + 1) * width * width]
            }
        }
    }
}

/// Faces of the reference cell of one degree, as `(direction rank, offsets)`
/// with offsets in `{0,1}` along the free axes and `0` along the spanned ones.
fn local_faces(dim: usize, degree: usize) -> Vec<(usize, Vec<usize>)> {
    let mut out = Vec::new();
    for (t, dir) in basis(dim, degree).into_iter().enumerate() {
        let free: Vec<usize> = (0..dim).filter(|&a| !dir.contains(a)).collect();
        for bits in 0..1usize << free.len() {
            let mut off = vec![0; dim];
            for (k, &a) in free.iter().enumerate() {
                off[a] = bits >> k & 1;
            }
            out.push((t, off));
        }
    }
    out
}

fn local_lookup(faces: &[(usize, Vec<usize>)]) -> HashMap<(usize, Vec<usize>), usize> {
    faces.iter().cloned().enumerate().map(|(i, f)| (f, i)).collect()
}

/// Reference-cell mass between the component `I` of one face's Whitney
/// function and the component `J` of another's, at unit spacing.
fn mass_entry(dim: usize, oi: &[usize], oj: &[usize], di: MultiIndex, dj: MultiIndex) -> f64 {
    (0..dim)
        .map(|a| match (di.contains(a), dj.contains(a)) {
            (true, true) => 1.0,
            (false, false) => {
                if oi[a] == oj[a] {
                    1.0 / 3.0
                } else {
                    1.0 / 6.0
                }
            }
            _ => 0.5,
        })
        .product()
}

/// Reference coboundary from `degree`-faces to `(degree+1)`-faces of one cell.
fn local_coboundary(dim: usize, degree: usize) -> DMatrix<f64> {
    let src = local_faces(dim, degree);
    let dst = local_faces(dim, degree + 1);
    let lookup = local_lookup(&src);
    let src_dirs = basis(dim, degree);
    let dst_dirs = basis(dim, degree + 1);
    let mut m = DMatrix::zeros(dst.len(), src.len());
    for (row, (t, off)) in dst.iter().enumerate() {
        let idx = dst_dirs[*t].indices();
        for (a, &j) in idx.iter().enumerate() {
            let rest: Vec<usize> = idx.iter().copied().filter(|&k| k != j).collect();
            let rank = MultiIndex::new(dim, &rest).expect("valid").rank();
            debug_assert_eq!(src_dirs[rank].indices(), rest);
            let sign = if a % 2 == 0 { 1.0 } else { -1.0 };
            let mut upper = off.clone();
            upper[j] = 1;
            m[(row, lookup[&(rank, upper)])] += sign;
            m[(row, lookup[&(rank, off.clone())])] -= sign;
        }
    }
    m
}

/// `T_IJ` such that the cell operator is `Σ_IJ M_IJ T_IJ · h^{d−2k}`.
struct Templates {
    nloc: usize,
    mats: Vec<Vec<f64>>,
}

fn build_templates(dim: usize, form_degree: usize, derivative: bool) -> Templates {
    let faces = local_faces(dim, form_degree);
    let dirs = basis(dim, form_degree);
    let width = dirs.len();
    let d_loc = if derivative { Some(local_coboundary(dim, form_degree - 1)) } else { None };
    let mut mats = Vec::with_capacity(width * width);
    for i in 0..width {
        for j in 0..width {
            let mut e = DMatrix::zeros(faces.len(), faces.len());
            for (a, fa) in faces.iter().enumerate().filter(|(_, f)| f.0 == i) {
                for (b, fb) in faces.iter().enumerate().filter(|(_, f)| f.0 == j) {
                    e[(a, b)] = mass_entry(dim, &fa.1, &fb.1, dirs[i], dirs[j]);
                }
            }
            let t = match &d_loc {
                Some(dl) => dl.transpose() * e * dl,
                None => e,
            };
            // row-major, so that slots line up with the pattern's (row, col) order
            mats.push(t.transpose().as_slice().to_vec());
        }
    }
    let nloc = if derivative { local_faces(dim, form_degree - 1).len() } else { faces.len() };
    Templates { nloc, mats }
}

/// Sparsity pattern of a cell-local operator on `degree`-cochains, with the
/// position of every local entry inside the CSR value array.
pub struct CellPattern {
    nloc: usize,
    dofs: Vec<u32>,
    slots: Vec<u32>,
    matrix: CsrMatrix,
}

impl CellPattern {
    fn build(grid: &Grid, degree: usize) -> Self {
        let d = grid.dim();
        let layout = grid.layout(degree);
        let faces = local_faces(d, degree);
        let nloc = faces.len();
        let cells = grid.cell_count();
        let mut dofs = Vec::with_capacity(cells * nloc);
        let mut global = vec![0usize; d];
        for c in 0..cells {
            let pos = grid.cell_position(c);
            for (t, off) in &faces {
                for a in 0..d {
                    global[a] = pos[a] + off[a];
                }
                dofs.push(layout.index(*t, &global) as u32);
            }
        }
        let n = layout.len();
        let mut rows: Vec<Vec<u32>> = vec![Vec::new(); n];
        for cell in dofs.chunks(nloc) {
            for &i in cell {
                rows[i as usize].extend_from_slice(cell);
            }
        }
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::new();
        indptr.push(0);
        for row in rows.iter_mut() {
            row.sort_unstable();
            row.dedup();
            indices.extend_from_slice(row);
            indptr.push(indices.len());
        }
        drop(rows);
        let nnz = indices.len();
        let matrix = CsrMatrix::from_parts(n, n, indptr, indices, vec![0.0; nnz]);
        let mut slots = Vec::with_capacity(cells * nloc * nloc);
        for cell in dofs.chunks(nloc) {
            for &i in cell {
                let (cols, _) = matrix.row(i as usize);
                let base = matrix.indptr()[i as usize];
                for &j in cell {
                    let k = cols.binary_search(&j).expect("entry in pattern");
                    slots.push((base + k) as u32);
                }
            }
        }
        Self { nloc, dofs, slots, matrix }
    }

    pub fn dofs(&self) -> &[u32] {
        &self.dofs
    }

    pub fn local_size(&self) -> usize {
        self.nloc
    }
}

type PatternKey = (usize, usize, usize);

fn pattern(grid: &Grid, degree: usize) -> Arc<CellPattern> {
    static CACHE: OnceLock<Mutex<HashMap<PatternKey, Arc<CellPattern>>>> = OnceLock::new();
    let key = (grid.dim(), grid.side(), degree);
    let cache = CACHE.get_or_init(Default::default);
    if let Some(p) = cache.lock().unwrap().get(&key) {
        return p.clone();
    }
    let built = Arc::new(CellPattern::build(grid, degree));
    cache.lock().unwrap().entry(key).or_insert(built).clone()
}

fn templates(dim: usize, form_degree: usize, derivative: bool) -> Arc<Templates> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, usize, bool), Arc<Templates>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    cache
        .lock()
        .unwrap()
        .entry((dim, form_degree, derivative))
        .or_insert_with(|| Arc::new(build_templates(dim, form_degree, derivative)))
        .clone()
}

/// The cell-local pattern for `degree`-cochains on `grid`.
pub fn cell_pattern(grid: &Grid, degree: usize) -> Arc<CellPattern> {
    pattern(grid, degree)
}

fn assemble(coeff: &Coefficients, mesh: &Grid, form_degree: usize, derivative: bool) -> Result<CsrMatrix> {
    coeff.check(mesh, form_degree)?;
    let d = mesh.dim();
    let unknown = if derivative { form_degree - 1 } else { form_degree };
    let pat = pattern(mesh, unknown);
    let tpl = templates(d, form_degree, derivative);
    let scale = mesh.spacing().powi(d as i32 - 2 * form_degree as i32);
    let nloc = tpl.nloc;
    debug_assert_eq!(nloc, pat.nloc);
    let mut matrix = pat.matrix.clone();
    let values = matrix.values_mut();
    let mut local = vec![0.0; nloc * nloc];
    let fill = |block: &[f64], local: &mut Vec<f64>| {
        local.iter_mut().for_each(|v| *v = 0.0);
        for (k, &m) in block.iter().enumerate() {
            if m != 0.0 {
                for (l, &t) in local.iter_mut().zip(&tpl.mats[k]) {
                    *l += m * t;
                }
            }
        }
        local.iter_mut().for_each(|v| *v *= scale);
    };
    if let Coefficients::Constant(m) = coeff {
        fill(m.as_slice(), &mut local);
    }
    let mut last_block: Option<*const f64> = None;
    for c in 0..mesh.cell_count() {
        if let Coefficients::PerCell { .. } = coeff {
            let pos = mesh.cell_position(c);
            let block = coeff.block(mesh, &pos);
            if last_block != Some(block.as_ptr()) {
                fill(block, &mut local);
                last_block = Some(block.as_ptr());
            }
        }
        let slots = &pat.slots[c * nloc * nloc..(c + 1) * nloc * nloc];
        for (&s, &v) in slots.iter().zip(&local) {
            values[s as usize] += v;
        }
    }
    Ok(matrix)
}

/// Quadratic form `Q(u,u) = ∫ ⋆(du ∧ a du)` on `(degree−1)`-cochains, for
/// an energy matrix field of form degree `degree`.
pub fn assemble_energy(coeff: &Coefficients, mesh: &Grid, degree: usize) -> Result<CsrMatrix> {
    if degree == 0 || degree > mesh.dim() {
        return Err(Error::DegreeMismatch(format!("energy of degree {degree} forms")));
    }
    assemble(coeff, mesh, degree, true)
}

/// Whitney mass matrix on `degree`-cochains, weighted by `coeff`.
pub fn assemble_mass(coeff: &Coefficients, mesh: &Grid, degree: usize) -> Result<CsrMatrix> {
    if degree > mesh.dim() {
        return Err(Error::DegreeMismatch(format!("mass of degree {degree} forms")));
    }
    assemble(coeff, mesh, degree, false)
}

/// `ℓ(F) = ∫ φ_F · g` for a per-cell constant field `g` of the face degree,
/// so that `Σ_F ℓ(F) w(F) = ∫ w·g` for the Whitney form of any cochain `w`.
pub fn cell_load(field: &CellField<f64>) -> Vec<f64> {
    let grid = field.grid();
    let r = field.degree();
    let d = grid.dim();
    let pat = pattern(grid, r);
    let faces = local_faces(d, r);
    let weight = (grid.spacing() / 2.0).powi((d - r) as i32);
    let mut out = vec![0.0; grid.face_count(r)];
    for c in 0..grid.cell_count() {
        let g = field.cell(c);
        let dofs = &pat.dofs[c * faces.len()..(c + 1) * faces.len()];
        for (&dof, (t, _)) in dofs.iter().zip(&faces) {
            out[dof as usize] += g[*t] * weight;
        }
    }
    out
}
