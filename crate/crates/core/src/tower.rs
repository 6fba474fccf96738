//! Submersive projective sequences of finite-dimensional normed spaces,
//! truncated at a user-chosen depth: levels, surjective bonding maps, threads
//! and the graded seminorms they induce.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, NormKind};

/// Default tolerance for thread coherence checks.
pub const COHERENCE_TOL: f64 = 1e-9;
/// Relative singular-value cutoff certifying surjectivity of a bonding map.
pub const RANK_TOL: f64 = 1e-10;
/// Default truncation depth (levels 0..=4).
pub const DEFAULT_DEPTH: usize = 4;

/// One finite-dimensional normed level of a tower.
#[derive(Debug, Clone, PartialEq)]
pub struct BanachLevel {
    pub index: usize,
    pub dim: usize,
    pub norm: NormKind,
}

impl BanachLevel {
    pub fn new(index: usize, dim: usize, norm: NormKind) -> Result<Self> {
        if dim == 0 {
            return Err(Error::NonPositiveInput("level dim".into()));
        }
        norm.validate(dim)?;
        Ok(BanachLevel { index, dim, norm })
    }

    pub fn euclidean(index: usize, dim: usize) -> Self {
        BanachLevel {
            index,
            dim,
            norm: NormKind::Euclidean,
        }
    }
}

/// Surjective linear map from level `to_index + 1` down to `to_index`.
#[derive(Debug, Clone, PartialEq)]
pub struct BondingMap {
    pub to_index: usize,
    /// dim(to) x dim(from) dense matrix.
    pub matrix: DMatrix<f64>,
}

impl BondingMap {
    pub fn new(to_index: usize, matrix: DMatrix<f64>) -> Self {
        BondingMap { to_index, matrix }
    }

    pub fn from_index(&self) -> usize {
        self.to_index + 1
    }
}

/// A depth-N truncation of a submersive projective sequence, with all
/// composite bondings and minimum-norm sections precomputed.
#[derive(Debug, Clone)]
pub struct Tower {
    levels: Vec<BanachLevel>,
    bondings: Vec<BondingMap>,
    /// composites[i][j - i] = lambda_i^j for j >= i (identity at j = i).
    composites: Vec<Vec<DMatrix<f64>>>,
    /// Moore-Penrose pseudoinverse of each consecutive bonding.
    sections: Vec<DMatrix<f64>>,
}

/// Validates levels and consecutive bondings, precomputes composites, and
/// certifies surjectivity of every bonding by its smallest singular value.
pub fn make_tower(levels: Vec<BanachLevel>, bondings: Vec<BondingMap>) -> Result<Tower> {
    if levels.is_empty() {
        return Err(Error::ShapeMismatch("a tower needs at least one level".into()));
    }
    if bondings.len() + 1 != levels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} levels need {} consecutive bondings, got {}",
            levels.len(),
            levels.len() - 1,
            bondings.len()
        )));
    }
    for (i, lvl) in levels.iter().enumerate() {
        if lvl.dim == 0 {
            return Err(Error::NonPositiveInput(format!("level {i} dim")));
        }
        lvl.norm.validate(lvl.dim)?;
    }
    for (i, b) in bondings.iter().enumerate() {
        if b.to_index != i {
            return Err(Error::ShapeMismatch(format!(
                "bonding {} targets level {}",
                i, b.to_index
            )));
        }
        if b.matrix.nrows() != levels[i].dim || b.matrix.ncols() != levels[i + 1].dim {
            return Err(Error::ShapeMismatch(format!(
                "bonding into level {} has shape {}x{}, expected {}x{}",
                i,
                b.matrix.nrows(),
                b.matrix.ncols(),
                levels[i].dim,
                levels[i + 1].dim
            )));
        }
        let sv = linalg::singular_values(&b.matrix);
        let top = sv.iter().fold(0.0f64, |a, &s| a.max(s));
        let smallest_of_rows = sv.iter().take(b.matrix.nrows()).fold(f64::INFINITY, |a, &s| a.min(s));
        if top == 0.0 || smallest_of_rows <= RANK_TOL * top {
            return Err(Error::NotSurjective(i));
        }
    }
    let n = levels.len();
    let mut composites = Vec::with_capacity(n);
    for i in 0..n {
        let mut row = vec![DMatrix::identity(levels[i].dim, levels[i].dim)];
        for j in (i + 1)..n {
            let prev: &DMatrix<f64> = &row[j - i - 1];
            row.push(prev * &bondings[j - 1].matrix);
        }
        composites.push(row);
    }
    let sections = bondings
        .iter()
        .map(|b| linalg::pinv(&b.matrix, 1e-12))
        .collect();
    Ok(Tower {
        levels,
        bondings,
        composites,
        sections,
    })
}

impl Tower {
    /// Truncation depth N (highest level index).
    pub fn depth(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn levels(&self) -> &[BanachLevel] {
        &self.levels
    }

    pub fn level(&self, i: usize) -> &BanachLevel {
        &self.levels[i]
    }

    pub fn dim(&self, i: usize) -> usize {
        self.levels[i].dim
    }

    pub fn bondings(&self) -> &[BondingMap] {
        &self.bondings
    }

    /// Composite bonding `lambda_i^j` for `j >= i`.
    pub fn composite(&self, i: usize, j: usize) -> &DMatrix<f64> {
        &self.composites[i][j - i]
    }

    /// Minimum-norm right inverse of the consecutive bonding into level `i`.
    pub fn section(&self, i: usize) -> &DMatrix<f64> {
        &self.sections[i]
    }

    pub fn check_index(&self, n: usize) -> Result<()> {
        if n > self.depth() {
            return Err(Error::IndexOutOfRange {
                index: n,
                depth: self.depth(),
            });
        }
        Ok(())
    }

    pub fn level_norm(&self, i: usize, v: &DVector<f64>) -> f64 {
        self.levels[i].norm.vector_norm(v)
    }

    /// Checks candidate coordinates for thread coherence; returns the verdict
    /// together with the largest consecutive defect.
    pub fn is_thread(&self, coords: &[DVector<f64>]) -> Result<(bool, f64)> {
        if coords.len() != self.levels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} coordinate blocks for {} levels",
                coords.len(),
                self.levels.len()
            )));
        }
        for (i, c) in coords.iter().enumerate() {
            if c.len() != self.levels[i].dim {
                return Err(Error::ShapeMismatch(format!(
                    "level {} coordinate has dim {}, expected {}",
                    i,
                    c.len(),
                    self.levels[i].dim
                )));
            }
        }
        let mut max_defect = 0.0f64;
        for i in 0..self.depth() {
            let defect = self.level_norm(i, &(&self.bondings[i].matrix * &coords[i + 1] - &coords[i]));
            max_defect = max_defect.max(defect);
        }
        Ok((max_defect <= COHERENCE_TOL, max_defect))
    }

    /// `nu_n`: the level-n norm of the thread's level-n coordinate.
    pub fn seminorm(&self, x: &Thread, n: usize) -> Result<f64> {
        self.check_index(n)?;
        Ok(self.level_norm(n, &x.coords[n]))
    }

    /// `nu-hat_n = max_{i <= n} nu_i`.
    pub fn hat_seminorm(&self, x: &Thread, n: usize) -> Result<f64> {
        self.check_index(n)?;
        let mut m = 0.0f64;
        for i in 0..=n {
            m = m.max(self.level_norm(i, &x.coords[i]));
        }
        Ok(m)
    }

    /// Builds a thread whose level-n coordinate is `v`: composite bondings
    /// downward, minimum-norm sections upward.
    pub fn lift(&self, n: usize, v: &DVector<f64>) -> Result<Thread> {
        self.check_index(n)?;
        if v.len() != self.levels[n].dim {
            return Err(Error::ShapeMismatch(format!(
                "lift vector has dim {}, level {} has dim {}",
                v.len(),
                n,
                self.levels[n].dim
            )));
        }
        let mut coords: Vec<DVector<f64>> = Vec::with_capacity(self.levels.len());
        for i in 0..n {
            coords.push(self.composite(i, n) * v);
        }
        coords.push(v.clone());
        for i in n..self.depth() {
            let next = &self.sections[i] * &coords[i];
            coords.push(next);
        }
        Ok(Thread { coords })
    }

    /// Zero thread.
    pub fn zero_thread(&self) -> Thread {
        Thread {
            coords: self.levels.iter().map(|l| DVector::zeros(l.dim)).collect(),
        }
    }

    /// Thread difference (levelwise).
    pub fn thread_sub(&self, a: &Thread, b: &Thread) -> Thread {
        Thread {
            coords: a
                .coords
                .iter()
                .zip(b.coords.iter())
                .map(|(x, y)| x - y)
                .collect(),
        }
    }
}

/// A bonding-coherent tuple of level vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Thread {
    pub coords: Vec<DVector<f64>>,
}

impl Thread {
    pub fn new(tower: &Tower, coords: Vec<DVector<f64>>) -> Result<Self> {
        let (ok, defect) = tower.is_thread(&coords)?;
        if !ok {
            return Err(Error::ShapeMismatch(format!(
                "coordinates are not coherent (defect {defect:.3e})"
            )));
        }
        Ok(Thread { coords })
    }

    pub fn level(&self, i: usize) -> &DVector<f64> {
        &self.coords[i]
    }
}

/// A depth-N projection tower: level i has dim `dims[i]` and the bondings drop
/// trailing coordinates. Handy in tests and fixtures.
pub fn projection_tower(dims: &[usize]) -> Tower {
    let levels = dims
        .iter()
        .enumerate()
        .map(|(i, &d)| BanachLevel::euclidean(i, d))
        .collect();
    let bondings = dims
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let mut m = DMatrix::zeros(w[0], w[1]);
            for k in 0..w[0] {
                m[(k, k)] = 1.0;
            }
            BondingMap::new(i, m)
        })
        .collect();
    make_tower(levels, bondings).expect("projection tower is always valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn projection_tower_is_valid() {
        let t = projection_tower(&[1, 2, 3]);
        assert_eq!(t.depth(), 2);
        assert_eq!(t.composite(0, 2).nrows(), 1);
    }

    #[test]
    fn zero_bonding_rejected() {
        let levels = vec![BanachLevel::euclidean(0, 2), BanachLevel::euclidean(1, 2)];
        let bondings = vec![BondingMap::new(0, DMatrix::zeros(2, 2))];
        match make_tower(levels, bondings) {
            Err(Error::NotSurjective(0)) => {}
            other => panic!("expected NotSurjective(0), got {other:?}"),
        }
    }

    #[test]
    fn row_vector_bonding_sums_coordinates() {
        let levels = vec![BanachLevel::euclidean(0, 1), BanachLevel::euclidean(1, 2)];
        let bondings = vec![BondingMap::new(0, DMatrix::from_row_slice(1, 2, &[1.0, 1.0]))];
        let t = make_tower(levels, bondings).unwrap();
        let v = DVector::from_vec(vec![2.0, 3.0]);
        assert_relative_eq!((t.composite(0, 1) * v)[0], 5.0);
    }

    #[test]
    fn bonding_count_mismatch() {
        let levels = vec![BanachLevel::euclidean(0, 1), BanachLevel::euclidean(1, 2)];
        assert!(matches!(
            make_tower(levels, vec![]),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn is_thread_accepts_coherent() {
        let t = projection_tower(&[1, 2, 3]);
        let coords = vec![
            DVector::from_vec(vec![1.0]),
            DVector::from_vec(vec![1.0, 2.0]),
            DVector::from_vec(vec![1.0, 2.0, 3.0]),
        ];
        let (ok, defect) = t.is_thread(&coords).unwrap();
        assert!(ok);
        assert_eq!(defect, 0.0);
    }

    #[test]
    fn is_thread_reports_defect() {
        let t = projection_tower(&[1, 2, 3]);
        let coords = vec![
            DVector::from_vec(vec![5.0]),
            DVector::from_vec(vec![1.0, 2.0]),
            DVector::from_vec(vec![1.0, 2.0, 3.0]),
        ];
        let (ok, defect) = t.is_thread(&coords).unwrap();
        assert!(!ok);
        assert_relative_eq!(defect, 4.0);
    }

    #[test]
    fn zero_coords_are_a_thread() {
        let t = projection_tower(&[2, 3, 4]);
        let z = t.zero_thread();
        let (ok, defect) = t.is_thread(&z.coords).unwrap();
        assert!(ok);
        assert_eq!(defect, 0.0);
    }

    #[test]
    fn seminorms_on_projection_tower() {
        let t = projection_tower(&[1, 2, 3]);
        let x = Thread::new(
            &t,
            vec![
                DVector::from_vec(vec![1.0]),
                DVector::from_vec(vec![1.0, 2.0]),
                DVector::from_vec(vec![1.0, 2.0, 3.0]),
            ],
        )
        .unwrap();
        assert_relative_eq!(t.seminorm(&x, 2).unwrap(), 14f64.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(t.hat_seminorm(&x, 2).unwrap(), 14f64.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(t.seminorm(&x, 1).unwrap(), 5f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn seminorm_index_out_of_range() {
        let t = projection_tower(&[1, 2]);
        let x = t.zero_thread();
        assert!(matches!(
            t.seminorm(&x, 5),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn lift_minimum_norm_extension() {
        let t = projection_tower(&[1, 2]);
        let th = t.lift(0, &DVector::from_vec(vec![3.0])).unwrap();
        assert_eq!(th.coords[0][0], 3.0);
        assert_relative_eq!(th.coords[1][0], 3.0, epsilon = 1e-12);
        assert_relative_eq!(th.coords[1][1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn lift_from_top_is_exact_projection() {
        let t = projection_tower(&[1, 2, 3]);
        let v = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let th = t.lift(2, &v).unwrap();
        let (ok, defect) = t.is_thread(&th.coords).unwrap();
        assert!(ok);
        assert_eq!(defect, 0.0);
        assert_eq!(th.coords[2], v);
    }

    #[test]
    fn lift_zero_is_zero() {
        let t = projection_tower(&[2, 3]);
        let th = t.lift(1, &DVector::zeros(3)).unwrap();
        assert_eq!(th, t.zero_thread());
    }
}
