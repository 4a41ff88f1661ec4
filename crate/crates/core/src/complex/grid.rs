use crate::error::{Error, Result};
use crate::exterior::{basis, binomial, MultiIndex};

/// Uniform cubical grid on `[0, side·spacing]^d`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid {
    dim: usize,
    side: usize,
    spacing: f64,
}

impl Grid {
    pub fn new(dim: usize, side: usize, spacing: f64) -> Result<Self> {
        if dim == 0 || dim > crate::exterior::MAX_DIM {
            return Err(Error::InvalidArgument(format!("dimension {dim} out of range")));
        }
        if side == 0 {
            return Err(Error::InvalidArgument("grid side must be positive".into()));
        }
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(Error::InvalidArgument(format!("spacing {spacing} must be positive")));
        }
        Ok(Self { dim, side, spacing })
    }

    /// The triadic cube `□_m` of side `3^m` at unit spacing.
    pub fn triadic(dim: usize, m: u32) -> Result<Self> {
        Self::new(dim, 3usize.pow(m), 1.0)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn length(&self) -> f64 {
        self.side as f64 * self.spacing
    }

    pub fn volume(&self) -> f64 {
        self.length().powi(self.dim as i32)
    }

    pub fn cell_count(&self) -> usize {
        self.side.pow(self.dim as u32)
    }

    /// `m` with `side = 3^m`, if any.
    pub fn triadic_exponent(&self) -> Option<u32> {
        let mut s = self.side;
        let mut m = 0;
        while s % 3 == 0 {
            s /= 3;
            m += 1;
        }
        (s == 1).then_some(m)
    }

    pub fn face_count(&self, degree: usize) -> usize {
        if degree > self.dim {
            return 0;
        }
        binomial(self.dim, degree)
            * (self.side + 1).pow((self.dim - degree) as u32)
            * self.side.pow(degree as u32)
    }

    pub fn layout(&self, degree: usize) -> FaceLayout {
        FaceLayout::new(self, degree)
    }

    /// Row-major linear index of a cell (axis 0 slowest).
    pub fn cell_index(&self, pos: &[usize]) -> usize {
        pos.iter().fold(0, |acc, &p| acc * self.side + p)
    }

    pub fn cell_position(&self, mut index: usize) -> Vec<usize> {
        let mut pos = vec![0; self.dim];
        for a in (0..self.dim).rev() {
            pos[a] = index % self.side;
            index /= self.side;
        }
        pos
    }

    pub fn same_shape(&self, other: &Grid) -> bool {
        self.dim == other.dim && self.side == other.side && self.spacing == other.spacing
    }
}

/// Enumeration of the faces of one degree: blocks by direction-set rank,
/// positions row-major inside each block.
///
/// A face with direction set `I` at position `pos` spans `[pos_a, pos_a + 1]`
/// (in cells) along axes `a ∈ I` and sits at vertex coordinate `pos_a` along
/// the others.
#[derive(Clone, Debug)]
pub struct FaceLayout {
    dim: usize,
    side: usize,
    degree: usize,
    dirs: Vec<MultiIndex>,
    extents: Vec<Vec<usize>>,
    offsets: Vec<usize>,
    total: usize,
}

impl FaceLayout {
    fn new(grid: &Grid, degree: usize) -> Self {
        let dim = grid.dim;
        let dirs = basis(dim, degree);
        let mut extents = Vec::with_capacity(dirs.len());
        let mut offsets = Vec::with_capacity(dirs.len() + 1);
        let mut total = 0;
        for dir in &dirs {
            let ext: Vec<usize> = (0..dim)
                .map(|a| if dir.contains(a) { grid.side } else { grid.side + 1 })
                .collect();
            offsets.push(total);
            total += ext.iter().product::<usize>();
            extents.push(ext);
        }
        offsets.push(total);
        Self { dim, side: grid.side, degree, dirs, extents, offsets, total }
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn dirs(&self) -> &[MultiIndex] {
        &self.dirs
    }

    pub fn block(&self, dir_rank: usize) -> std::ops::Range<usize> {
        self.offsets[dir_rank]..self.offsets[dir_rank + 1]
    }

    pub fn index(&self, dir_rank: usize, pos: &[usize]) -> usize {
        let ext = &self.extents[dir_rank];
        let mut idx = 0;
        for a in 0..self.dim {
            debug_assert!(pos[a] < ext[a]);
            idx = idx * ext[a] + pos[a];
        }
        self.offsets[dir_rank] + idx
    }

    /// Inverse of [`FaceLayout::index`].
    pub fn face(&self, index: usize) -> (usize, Vec<usize>) {
        let t = self.offsets.partition_point(|&o| o <= index) - 1;
        let ext = &self.extents[t];
        let mut rest = index - self.offsets[t];
        let mut pos = vec![0; self.dim];
        for a in (0..self.dim).rev() {
            pos[a] = rest % ext[a];
            rest /= ext[a];
        }
        (t, pos)
    }

    /// Whether the face lies in the boundary of the cube.
    pub fn on_boundary(&self, dir_rank: usize, pos: &[usize]) -> bool {
        let dir = self.dirs[dir_rank];
        (0..self.dim).any(|a| !dir.contains(a) && (pos[a] == 0 || pos[a] == self.side))
    }

    /// Iterate over all faces as `(index, dir_rank, pos)`.
    pub fn for_each<F: FnMut(usize, usize, &[usize])>(&self, mut f: F) {
        let mut pos = vec![0usize; self.dim];
        for t in 0..self.dirs.len() {
            let ext = &self.extents[t];
            pos.iter_mut().for_each(|p| *p = 0);
            for idx in self.block(t) {
                f(idx, t, &pos);
                for a in (0..self.dim).rev() {
                    pos[a] += 1;
                    if pos[a] < ext[a] {
                        break;
                    }
                    pos[a] = 0;
                }
            }
        }
    }
}

/// Faces of one degree that lie in the boundary of the cube.
#[derive(Clone, Debug)]
pub struct BoundaryMask {
    grid: Grid,
    degree: usize,
    flags: Vec<bool>,
}

impl BoundaryMask {
    pub fn new(grid: &Grid, degree: usize) -> Self {
        let layout = grid.layout(degree);
        let mut flags = vec![false; layout.len()];
        layout.for_each(|i, t, pos| flags[i] = layout.on_boundary(t, pos));
        Self { grid: *grid, degree, flags }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    pub fn is_boundary(&self, face: usize) -> bool {
        self.flags[face]
    }

    pub fn count(&self) -> usize {
        self.flags.iter().filter(|&&b| b).count()
    }
}

pub fn boundary_mask(grid: &Grid, degree: usize) -> BoundaryMask {
    BoundaryMask::new(grid, degree)
}
