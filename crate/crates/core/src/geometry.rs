//! NV crystallographic axis algebra.
//!
//! The four NV symmetry axes are drawn from the body diagonals of the cubic
//! lattice, `(±1, ±1, ±1)/√3`. Any three of them form a (non-orthogonal)
//! basis of R³, and the Gram-type identity `N₄N₄ᵀ = (4/3)I` holds in every
//! orthogonal coordinate frame. Field magnitudes can therefore be recovered
//! from projections alone.

use nalgebra::{Matrix3, Rotation3, Vector3, Vector4};

use crate::error::{Error, Result};

/// Tolerance used when checking that a rotation matrix is orthogonal.
pub const ORTHOGONALITY_TOL: f64 = 1e-10;

/// The four NV unit vectors and the derived projection matrices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NvBasis {
    axes: [Vector3<f64>; 4],
    n3: Matrix3<f64>,
    a_vec: Vector3<f64>,
}

impl NvBasis {
    /// The conventional choice with `n̂ᵢ·n̂ⱼ = (4/3)δᵢⱼ − 1/3`.
    pub fn canonical() -> Self {
        let s = 1.0 / 3f64.sqrt();
        let axes = [
            Vector3::new(1.0, 1.0, 1.0) * s,
            Vector3::new(1.0, -1.0, -1.0) * s,
            Vector3::new(-1.0, 1.0, -1.0) * s,
            Vector3::new(-1.0, -1.0, 1.0) * s,
        ];
        Self::from_axes(axes).expect("canonical axes are a valid NV basis")
    }

    /// Builds a basis from four explicit axes.
    ///
    /// The axes must be unit vectors with pairwise dot products of `-1/3`,
    /// which is the case for every valid NV set in any orthogonal frame.
    pub fn from_axes(axes: [Vector3<f64>; 4]) -> Result<Self> {
        for (i, ai) in axes.iter().enumerate() {
            for (j, aj) in axes.iter().enumerate() {
                let expected = if i == j { 1.0 } else { -1.0 / 3.0 };
                if (ai.dot(aj) - expected).abs() > 1e-9 {
                    return Err(Error::InvalidInput(format!(
                        "axes {i} and {j} have dot product {}, expected {expected}",
                        ai.dot(aj)
                    )));
                }
            }
        }
        let n3 = Matrix3::from_columns(&[axes[0], axes[1], axes[2]]);
        let a = n3
            .try_inverse()
            .ok_or_else(|| Error::InvalidInput("first three axes are not independent".into()))?
            * axes[3];
        // a has entries ±1 exactly up to rounding; snap to the exact value.
        let a_vec = a.map(|v| v.signum());
        if (a - a_vec).amax() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "fourth axis is not a ±1 combination of the first three: {a:?}"
            )));
        }
        Ok(Self { axes, n3, a_vec })
    }

    pub fn axes(&self) -> &[Vector3<f64>; 4] {
        &self.axes
    }

    pub fn axis(&self, i: usize) -> Vector3<f64> {
        self.axes[i]
    }

    /// `N₃`: the first three axes as columns.
    pub fn n3(&self) -> Matrix3<f64> {
        self.n3
    }

    /// `a` such that `n̂₄ = N₃ a`, every entry ±1.
    pub fn a_vec(&self) -> Vector3<f64> {
        self.a_vec
    }

    /// `N₄N₄ᵀ`, which equals `(4/3)I` for every valid basis.
    pub fn gram(&self) -> Matrix3<f64> {
        self.axes.iter().map(|a| a * a.transpose()).sum()
    }

    /// Applies an orthogonal change of frame, `n̂ᵢ → U n̂ᵢ`.
    pub fn rotate(&self, u: &Matrix3<f64>) -> Result<Self> {
        let defect = (u.transpose() * u - Matrix3::identity()).amax();
        if defect > ORTHOGONALITY_TOL {
            return Err(Error::InvalidInput(format!(
                "rotation is not orthogonal (max |UᵀU - I| = {defect:e})"
            )));
        }
        let axes = self.axes.map(|a| u * a);
        Ok(Self {
            axes,
            n3: u * self.n3,
            a_vec: self.a_vec,
        })
    }

    /// Projections of `b` onto all four axes, `p₄ = N₄ᵀB`.
    pub fn project(&self, b: &Vector3<f64>) -> Vector4<f64> {
        Vector4::new(
            self.axes[0].dot(b),
            self.axes[1].dot(b),
            self.axes[2].dot(b),
            self.axes[3].dot(b),
        )
    }
}

/// Rotation-free convenience for [`NvBasis::canonical`].
pub fn canonical_basis() -> NvBasis {
    NvBasis::canonical()
}

pub fn rotate_basis(basis: &NvBasis, u: &Matrix3<f64>) -> Result<NvBasis> {
    basis.rotate(u)
}

pub fn project(b: &Vector3<f64>, basis: &NvBasis) -> Vector4<f64> {
    basis.project(b)
}

/// Field magnitude from all four projections, `‖B‖² = (3/4)‖p₄‖²`.
pub fn magnitude_from_four(p: &Vector4<f64>) -> f64 {
    (0.75 * p.norm_squared()).sqrt()
}

/// Field magnitude from three absolute projections sorted in descending
/// order. The unmeasured fourth axis is assumed to carry the smallest
/// projection, in which case `|p₄| = ||p₁| − |p₂| − |p₃||`.
///
/// Signs of the inputs are ignored. At an exact tie between the third and
/// fourth projections the reconstruction is ambiguous in the same way the
/// ordering argument is; the formula stays continuous there.
pub fn magnitude_from_three(p: &Vector3<f64>) -> Result<f64> {
    let a = p.map(f64::abs);
    if !a.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidInput("non-finite projection".into()));
    }
    let slack = 1e-12 * a.amax();
    if a[0] + slack < a[1] || a[1] + slack < a[2] {
        return Err(Error::InvalidInput(format!(
            "projections must be sorted by descending magnitude, got {:?}",
            [a[0], a[1], a[2]]
        )));
    }
    let p4 = a[0] - a[1] - a[2];
    Ok((0.75 * (a.norm_squared() + p4 * p4)).sqrt())
}

/// The 24 proper rotations that map the set of NV axis lines onto itself
/// (the rotation group of the cube), expressed in the canonical diamond frame.
pub fn cubic_rotation_group() -> Vec<Matrix3<f64>> {
    let mut out = Vec::with_capacity(24);
    let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    for perm in perms {
        for signs in 0..8u8 {
            let mut m = Matrix3::zeros();
            for (row, &col) in perm.iter().enumerate() {
                m[(row, col)] = if signs & (1 << row) != 0 { -1.0 } else { 1.0 };
            }
            if m.determinant() > 0.0 {
                out.push(m);
            }
        }
    }
    out
}

/// Rotation matrix from a rotation vector (axis times angle).
pub fn rotation_from_vector(r: &Vector3<f64>) -> Matrix3<f64> {
    Rotation3::new(*r).into_inner()
}
