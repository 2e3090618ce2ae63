//! Cube geometry: the folding map onto `[0,1]^D`, reflected images and the
//! image lattice that every kernel evaluation sums over.

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest lattice `image_lattice` is willing to materialise. Larger cutoffs
/// must go through the per-coordinate factorisation in the kernel module.
pub const MAX_LATTICE_LEN: usize = 1 << 24;

/// A point of `R^D`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AmbientPoint(Vec<f64>);

impl AmbientPoint {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::Domain("ambient point must have D >= 1 coordinates".into()));
        }
        if let Some(bad) = coords.iter().find(|c| !c.is_finite()) {
            return Err(Error::Domain(format!("non-finite coordinate {bad}")));
        }
        Ok(Self(coords))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for AmbientPoint {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// A point of the closed unit cube `[0,1]^D`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct CubePoint(Vec<f64>);

impl CubePoint {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::Domain("cube point must have D >= 1 coordinates".into()));
        }
        if let Some(bad) = coords.iter().find(|c| !(0.0..=1.0).contains(*c)) {
            return Err(Error::Domain(format!("coordinate {bad} outside [0,1]")));
        }
        Ok(Self(coords))
    }

    /// Wraps coordinates already known to lie in the cube (e.g. fold output).
    pub(crate) fn from_folded(coords: Vec<f64>) -> Self {
        debug_assert!(coords.iter().all(|c| (0.0..=1.0).contains(c)));
        Self(coords)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Euclidean distance to the cube boundary.
    pub fn boundary_distance(&self) -> f64 {
        self.0
            .iter()
            .map(|&c| c.min(1.0 - c))
            .fold(f64::INFINITY, f64::min)
    }
}

impl Deref for CubePoint {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for CubePoint {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        CubePoint::new(v)
    }
}

impl From<CubePoint> for Vec<f64> {
    fn from(p: CubePoint) -> Vec<f64> {
        p.0
    }
}

/// Integer offset `z` labelling one mirrored copy of the cube.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ImageIndex(pub Vec<i64>);

impl ImageIndex {
    pub fn zero(dim: usize) -> Self {
        Self(vec![0; dim])
    }

    pub fn sup_norm(&self) -> i64 {
        self.0.iter().map(|z| z.abs()).max().unwrap_or(0)
    }
}

/// The 2-periodic tent map. Odd integers map to 1.
#[inline]
pub fn fold_value(x: f64) -> f64 {
    let r = x.rem_euclid(2.0);
    if r <= 1.0 {
        r
    } else {
        2.0 - r
    }
}

/// Checked scalar fold.
pub fn fold_scalar(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::Domain(format!("cannot fold non-finite value {x}")));
    }
    Ok(fold_value(x))
}

/// Componentwise fold of an ambient point into the cube.
pub fn fold(x: &[f64]) -> Result<CubePoint> {
    if x.is_empty() {
        return Err(Error::Domain("cannot fold an empty point".into()));
    }
    x.iter()
        .map(|&c| fold_scalar(c))
        .collect::<Result<Vec<_>>>()
        .map(CubePoint::from_folded)
}

/// Folds a buffer in place; callers guarantee finiteness.
#[inline]
pub(crate) fn fold_in_place(x: &mut [f64]) {
    for c in x.iter_mut() {
        *c = fold_value(*c);
    }
}

/// One coordinate of `R_z(x) + z`.
#[inline]
pub fn image_coord(z: i64, x: f64) -> f64 {
    if z.rem_euclid(2) == 0 {
        x + z as f64
    } else {
        (1.0 - x) + z as f64
    }
}

/// The image `R_z(x) + z` of a cube point; folding it returns `x`.
pub fn reflect_image(z: &ImageIndex, x: &CubePoint) -> Result<AmbientPoint> {
    if z.0.len() != x.dim() {
        return Err(Error::Domain(format!(
            "image index has length {} but point has dimension {}",
            z.0.len(),
            x.dim()
        )));
    }
    let coords = z.0.iter().zip(x.iter()).map(|(&zi, &xi)| image_coord(zi, xi)).collect();
    Ok(AmbientPoint(coords))
}

/// Number of lattice points with `|z|_inf <= k_cut` in dimension `dim`, or
/// `None` on overflow.
pub fn lattice_len(dim: usize, k_cut: usize) -> Option<usize> {
    let side = k_cut.checked_mul(2)?.checked_add(1)?;
    side.checked_pow(u32::try_from(dim).ok()?)
}

/// All `z` in `Z^dim` with `|z|_inf <= k_cut`, in lexicographic order with the
/// last coordinate varying fastest.
pub fn image_lattice(dim: usize, k_cut: usize) -> Result<Vec<ImageIndex>> {
    if dim == 0 {
        return Err(Error::Domain("lattice dimension must be >= 1".into()));
    }
    let len = lattice_len(dim, k_cut)
        .filter(|&n| n <= MAX_LATTICE_LEN)
        .ok_or_else(|| {
            Error::Config(format!(
                "image lattice with D={dim}, K={k_cut} is too large; use the per-coordinate factorisation"
            ))
        })?;
    let k = k_cut as i64;
    let mut out = Vec::with_capacity(len);
    let mut z = vec![-k; dim];
    loop {
        out.push(ImageIndex(z.clone()));
        // odometer increment
        let mut i = dim;
        loop {
            if i == 0 {
                return Ok(out);
            }
            i -= 1;
            if z[i] < k {
                z[i] += 1;
                break;
            }
            z[i] = -k;
        }
    }
}
