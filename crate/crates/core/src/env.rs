use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::complex::{Coefficients, Grid};
use crate::error::{Error, Result};
use crate::exterior::{binomial, invert_energy, spectrum_bounds, EnergyMatrix};

pub const DEFAULT_LAMBDA: f64 = 0.25;

/// Single-cell law of a coefficient field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Ensemble {
    /// Every cell equals the given row-major energy matrix.
    Constant { matrix: Vec<f64> },
    /// `R diag(μ) Rᵀ` with `μᵢ` uniform on `[λ, 1/λ]` and `R` Haar orthogonal.
    IidSpd,
    /// `c₁⋆` or `c₂⋆` with probability ½ each, independently per cell.
    Checkerboard2 { c1: f64, c2: f64 },
    /// Like the checkerboard, but constant on slabs orthogonal to `axis`.
    Laminate { axis: usize, c1: f64, c2: f64 },
}

impl Ensemble {
    pub fn isotropic(scale: f64, size: usize) -> Self {
        let m = DMatrix::<f64>::identity(size, size) * scale;
        Ensemble::Constant { matrix: m.as_slice().to_vec() }
    }
}

/// Parses `constant:c`, `iid-spd`, `checkerboard2:c1,c2` and
/// `laminate:axis,c1,c2` (axis counted from 1).
impl FromStr for Ensemble {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, args) = s.split_once(':').unwrap_or((s, ""));
        let nums = || -> Result<Vec<f64>> {
            args.split(',')
                .filter(|a| !a.trim().is_empty())
                .map(|a| a.trim().parse::<f64>().map_err(|_| Error::InvalidEnsemble(format!("bad number '{a}' in '{s}'"))))
                .collect()
        };
        let arity = |v: &Vec<f64>, n: usize| {
            if v.len() == n {
                Ok(())
            } else {
                Err(Error::InvalidEnsemble(format!("'{kind}' takes {n} parameters")))
            }
        };
        match kind.trim() {
            "constant" => {
                let v = nums()?;
                arity(&v, 1)?;
                // size is fixed later by the spec's (d, r)
                Ok(Ensemble::Constant { matrix: vec![v[0]] })
            }
            "iid-spd" => {
                arity(&nums()?, 0)?;
                Ok(Ensemble::IidSpd)
            }
            "checkerboard2" => {
                let v = nums()?;
                arity(&v, 2)?;
                Ok(Ensemble::Checkerboard2 { c1: v[0], c2: v[1] })
            }
            "laminate" => {
                let v = nums()?;
                arity(&v, 3)?;
                if v[0] < 1.0 || v[0].fract() != 0.0 {
                    return Err(Error::InvalidEnsemble(format!("laminate axis {} must be a positive integer", v[0])));
                }
                Ok(Ensemble::Laminate { axis: v[0] as usize - 1, c1: v[1], c2: v[2] })
            }
            other => Err(Error::InvalidEnsemble(format!("unknown ensemble '{other}'"))),
        }
    }
}

impl fmt::Display for Ensemble {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ensemble::Constant { matrix } => {
                let n = (matrix.len() as f64).sqrt().round() as usize;
                let m = DMatrix::from_column_slice(n, n, matrix);
                if m == DMatrix::identity(n, n) * m[(0, 0)] {
                    write!(f, "constant:{}", m[(0, 0)])
                } else {
                    write!(f, "constant:{matrix:?}")
                }
            }
            Ensemble::IidSpd => write!(f, "iid-spd"),
            Ensemble::Checkerboard2 { c1, c2 } => write!(f, "checkerboard2:{c1},{c2}"),
            Ensemble::Laminate { axis, c1, c2 } => write!(f, "laminate:{},{c1},{c2}", axis + 1),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub ensemble: Ensemble,
    pub dim: usize,
    pub degree: usize,
    pub lambda: f64,
}

impl EnsembleSpec {
    /// Validates the parameters; a scalar `constant:c` is widened to `c·I`.
    pub fn new(ensemble: Ensemble, dim: usize, degree: usize, lambda: f64) -> Result<Self> {
        if dim == 0 || dim > crate::exterior::MAX_DIM || degree == 0 || degree > dim {
            return Err(Error::InvalidEnsemble(format!("unsupported (d, r) = ({dim}, {degree})")));
        }
        if !(lambda > 0.0 && lambda <= 1.0) {
            return Err(Error::InvalidEnsemble(format!("lambda {lambda} outside (0, 1]")));
        }
        let n = binomial(dim, degree);
        let in_window = |c: f64| c >= lambda - 1e-12 && c <= 1.0 / lambda + 1e-12;
        let ensemble = match ensemble {
            Ensemble::Constant { matrix } if matrix.len() == 1 => Ensemble::isotropic(matrix[0], n),
            other => other,
        };
        match &ensemble {
            Ensemble::Constant { matrix } => {
                if matrix.len() != n * n {
                    return Err(Error::InvalidEnsemble(format!("constant matrix must be {n}×{n}")));
                }
                EnergyMatrix::new(dim, degree, DMatrix::from_column_slice(n, n, matrix), lambda)
                    .map_err(|e| Error::InvalidEnsemble(e.to_string()))?;
            }
            Ensemble::IidSpd => {}
            Ensemble::Checkerboard2 { c1, c2 } | Ensemble::Laminate { c1, c2, .. } => {
                if !in_window(*c1) || !in_window(*c2) {
                    return Err(Error::InvalidEnsemble(format!(
                        "values {c1}, {c2} outside the window [{lambda}, {}]",
                        1.0 / lambda
                    )));
                }
            }
        }
        if let Ensemble::Laminate { axis, .. } = ensemble {
            if axis >= dim {
                return Err(Error::InvalidEnsemble(format!("laminate axis {} exceeds dimension {dim}", axis + 1)));
            }
        }
        Ok(Self { ensemble, dim, degree, lambda })
    }

    pub fn width(&self) -> usize {
        binomial(self.dim, self.degree)
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.ensemble, Ensemble::Constant { .. })
    }
}

/// Generator for one `(seed, sample, cell)` triple; distinct triples get
/// independent ChaCha streams.
pub fn cell_rng(seed: u64, sample: u64, cell: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&sample.to_le_bytes());
    key[16..24].copy_from_slice(b"formhom\0");
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(cell);
    rng
}

fn haar_orthogonal(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

fn draw_cell(spec: &EnsembleSpec, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let n = spec.width();
    match &spec.ensemble {
        Ensemble::Constant { matrix } => DMatrix::from_column_slice(n, n, matrix),
        Ensemble::IidSpd => {
            let lo = spec.lambda;
            let hi = 1.0 / spec.lambda;
            let mu: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..=hi)).collect();
            let r = haar_orthogonal(n, rng);
            let m = &r * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(mu)) * r.transpose();
            (&m + m.transpose()) * 0.5
        }
        Ensemble::Checkerboard2 { c1, c2 } | Ensemble::Laminate { c1, c2, .. } => {
            let c = if rng.gen::<bool>() { *c1 } else { *c2 };
            DMatrix::identity(n, n) * c
        }
    }
}

/// A sampled coefficient field: one energy matrix per unit cell of a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Environment {
    grid: Grid,
    degree: usize,
    lambda: f64,
    width: usize,
    /// Cell-major blocks, each stored column-major (equal to row-major, the
    /// blocks being symmetric).
    data: Vec<f64>,
}

impl Environment {
    pub fn from_cells(grid: &Grid, degree: usize, lambda: f64, cells: &[DMatrix<f64>]) -> Result<Self> {
        let n = binomial(grid.dim(), degree);
        if cells.len() != grid.cell_count() {
            return Err(Error::DimensionMismatch { expected: grid.cell_count(), got: cells.len() });
        }
        let mut data = Vec::with_capacity(cells.len() * n * n);
        for m in cells {
            let e = EnergyMatrix::new(grid.dim(), degree, m.clone(), lambda)?;
            data.extend_from_slice(e.matrix().as_slice());
        }
        Ok(Self { grid: *grid, degree, lambda, width: n, data })
    }

    pub fn constant(grid: &Grid, matrix: &EnergyMatrix) -> Self {
        let block = matrix.matrix().as_slice();
        let data = block.iter().copied().cycle().take(block.len() * grid.cell_count()).collect();
        Self { grid: *grid, degree: matrix.degree(), lambda: matrix.lambda(), width: matrix.size(), data }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn block(&self, cell: usize) -> &[f64] {
        let s = self.width * self.width;
        &self.data[cell * s..(cell + 1) * s]
    }

    pub fn cell(&self, cell: usize) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.width, self.width, self.block(cell))
    }

    pub fn coefficients(&self) -> Coefficients<'_> {
        Coefficients::PerCell { side: self.grid.side(), width: self.width, data: &self.data }
    }

    /// Extreme eigenvalues over all cells.
    pub fn spectrum(&self) -> (f64, f64) {
        (0..self.grid.cell_count()).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| {
            let (a, b) = spectrum_bounds(&self.cell(c));
            (lo.min(a), hi.max(b))
        })
    }

    /// Restriction to the cells of a sub-cube given in cells.
    pub fn restrict(&self, origin: &[usize], side: usize) -> Result<Self> {
        let d = self.dim();
        if origin.len() != d || origin.iter().any(|&o| o + side > self.grid.side()) || side == 0 {
            return Err(Error::GridMismatch("sub-cube outside the environment".into()));
        }
        let grid = Grid::new(d, side, self.grid.spacing())?;
        let s = self.width * self.width;
        let mut data = Vec::with_capacity(grid.cell_count() * s);
        for c in 0..grid.cell_count() {
            let pos: Vec<usize> = grid.cell_position(c).iter().zip(origin).map(|(p, o)| p + o).collect();
            data.extend_from_slice(self.block(self.grid.cell_index(&pos)));
        }
        Ok(Self { grid, data, ..*self })
    }

    /// The same cells on a grid of another spacing.
    pub fn with_spacing(&self, spacing: f64) -> Result<Self> {
        let grid = Grid::new(self.dim(), self.grid.side(), spacing)?;
        Ok(Self { grid, data: self.data.clone(), ..*self })
    }

    fn with_data(&self, degree: usize, data: Vec<f64>) -> Self {
        let width = binomial(self.dim(), degree);
        Self { grid: self.grid, degree, lambda: self.lambda, width, data }
    }
}

/// Draw sample `sample` of the ensemble on `□_m`.
pub fn sample_indexed(spec: &EnsembleSpec, m: u32, seed: u64, sample: u64) -> Result<Environment> {
    let grid = Grid::triadic(spec.dim, m)?;
    let n = spec.width();
    let mut data = Vec::with_capacity(grid.cell_count() * n * n);
    for c in 0..grid.cell_count() {
        let stream = match spec.ensemble {
            Ensemble::Laminate { axis, .. } => grid.cell_position(c)[axis] as u64,
            _ => c as u64,
        };
        let mut rng = cell_rng(seed, sample, stream);
        data.extend_from_slice(draw_cell(spec, &mut rng).as_slice());
    }
    Ok(Environment { grid, degree: spec.degree, lambda: spec.lambda, width: n, data })
}

pub fn sample(spec: &EnsembleSpec, m: u32, seed: u64) -> Result<Environment> {
    sample_indexed(spec, m, seed, 0)
}

/// Per-cell inversion `a ↦ a⁻¹`, giving an environment of degree `d − r`.
pub fn invert_env(env: &Environment) -> Result<Environment> {
    let d = env.dim();
    let r = env.degree;
    let mut data = Vec::with_capacity(env.data.len());
    for c in 0..env.grid.cell_count() {
        data.extend_from_slice(invert_energy(d, r, &env.cell(c))?.as_slice());
    }
    Ok(env.with_data(d - r, data))
}

#[derive(Serialize)]
struct Sidecar<'a> {
    spec: &'a EnsembleSpec,
    seed: u64,
    sample: u64,
    lambda: f64,
    d: usize,
    r: usize,
    m: Option<u32>,
}

/// CSV `cell_index,row,col,entry` and its JSON sidecar.
pub fn write_env_dump<W: Write, J: Write>(
    env: &Environment,
    spec: &EnsembleSpec,
    seed: u64,
    sample: u64,
    csv_out: W,
    json_out: J,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(csv_out);
    w.write_record(["cell_index", "row", "col", "entry"])?;
    for c in 0..env.grid.cell_count() {
        let m = env.cell(c);
        for i in 0..env.width {
            for j in 0..env.width {
                w.write_record(&[c.to_string(), i.to_string(), j.to_string(), format!("{:e}", m[(i, j)])])?;
            }
        }
    }
    w.flush()?;
    let side = Sidecar {
        spec,
        seed,
        sample,
        lambda: env.lambda,
        d: env.dim(),
        r: env.degree,
        m: env.grid.triadic_exponent(),
    };
    serde_json::to_writer_pretty(json_out, &side)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(e: &str, d: usize, r: usize) -> EnsembleSpec {
        EnsembleSpec::new(e.parse().unwrap(), d, r, DEFAULT_LAMBDA).unwrap()
    }

    #[test]
    fn parse_and_display_round_trip() {
        for s in ["iid-spd", "checkerboard2:1,4", "laminate:2,1,4", "constant:2"] {
            let e: Ensemble = s.parse().unwrap();
            assert_eq!(e.to_string(), s);
        }
        assert!("checkerboard2:1".parse::<Ensemble>().is_err());
        assert!("laminate:0,1,4".parse::<Ensemble>().is_err());
        assert!("gaussian".parse::<Ensemble>().is_err());
        assert!(EnsembleSpec::new("checkerboard2:1,5".parse().unwrap(), 2, 1, 0.25).is_err());
        assert!(EnsembleSpec::new("laminate:3,1,4".parse().unwrap(), 2, 1, 0.25).is_err());
        assert_eq!(spec("constant:2", 3, 1).to_owned().ensemble.to_string(), "constant:2");
    }

    #[test]
    fn constant_cells_equal() {
        let s = spec("constant:2", 2, 1);
        let env = sample(&s, 2, 3).unwrap();
        for c in 0..81 {
            assert_eq!(env.cell(c), DMatrix::identity(2, 2) * 2.0);
        }
    }

    #[test]
    fn checkerboard_fraction() {
        let s = spec("checkerboard2:1,4", 2, 1);
        for seed in 0..10 {
            let env = sample(&s, 4, seed).unwrap();
            let ones = (0..env.grid().cell_count()).filter(|&c| env.block(c)[0] == 1.0).count();
            let frac = ones as f64 / env.grid().cell_count() as f64;
            assert!((0.44..=0.56).contains(&frac), "seed {seed}: {frac}");
        }
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let s = spec("iid-spd", 3, 1);
        let a = sample_indexed(&s, 1, 9, 4).unwrap();
        let b = sample_indexed(&s, 1, 9, 4).unwrap();
        let c = sample_indexed(&s, 1, 9, 5).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn iid_spd_within_window() {
        let s = spec("iid-spd", 3, 2);
        let env = sample(&s, 2, 1).unwrap();
        let (lo, hi) = env.spectrum();
        assert!(lo >= 0.25 - 1e-12 && hi <= 4.0 + 1e-12);
        let inv = invert_env(&env).unwrap();
        assert_eq!(inv.degree(), 1);
        let (lo, hi) = inv.spectrum();
        assert!(lo >= 0.25 - 1e-12 && hi <= 4.0 + 1e-12);
        let back = invert_env(&inv).unwrap();
        for (x, y) in back.data.iter().zip(&env.data) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn invert_isotropic() {
        let s = spec("constant:2", 2, 1);
        let inv = invert_env(&sample(&s, 1, 0).unwrap()).unwrap();
        for c in 0..9 {
            assert!((inv.cell(c) - DMatrix::identity(2, 2) * 0.5).amax() < 1e-15);
        }
    }

    #[test]
    fn laminate_constant_across_slabs() {
        let s = spec("laminate:1,1,4", 2, 1);
        let env = sample(&s, 2, 5).unwrap();
        let g = *env.grid();
        for c in 0..g.cell_count() {
            let mut pos = g.cell_position(c);
            pos[1] = 0;
            assert_eq!(env.block(c), env.block(g.cell_index(&pos)));
        }
    }

    #[test]
    fn dump_has_one_row_per_entry() {
        let s = spec("iid-spd", 2, 1);
        let env = sample(&s, 1, 1).unwrap();
        let mut csv_buf = Vec::new();
        let mut json_buf = Vec::new();
        write_env_dump(&env, &s, 1, 0, &mut csv_buf, &mut json_buf).unwrap();
        assert_eq!(String::from_utf8(csv_buf).unwrap().lines().count(), 1 + 9 * 4);
        let v: serde_json::Value = serde_json::from_slice(&json_buf).unwrap();
        assert_eq!(v["m"], 1);
        assert_eq!(v["spec"]["ensemble"]["kind"], "iid-spd");
    }
}
