//! Lattice boxes, permutations of their sites, and displacement energies.
//!
//! The model lives on the box `[[1, N]]^d`: the `N^d` integer points whose
//! coordinates all lie in `1..=N`. A configuration is a permutation `π` of
//! those sites, weighted by the energy
//!
//! ```text
//!     H(π) = Σ_x |x − π(x)|            (Euclidean norm)
//! ```
//!
//! so that larger total displacement means smaller Boltzmann weight. This
//! module owns the shared vocabulary — sites, site ordering, permutations,
//! energies, cycle structure — that every other module builds on.
//!
//! Site ordering is row-major and is part of the public contract: matrices
//! and covariances built elsewhere index sites in exactly this order, which
//! is what makes cross-module comparisons reproducible bit-for-bit.

use std::fmt;

use thiserror::Error;

/// Largest supported dimension. Experiments run in d ∈ {1, 2, 3}; fixed-size
/// coordinate arrays keep site storage dense and allocation-free.
pub const MAX_DIM: usize = 3;

/// Errors from lattice / permutation construction and use.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum LatticeError {
    /// Dimension outside `1..=MAX_DIM`.
    #[error("dimension {0} unsupported (must be 1..={MAX_DIM})")]
    BadDimension(usize),
    /// Side length must be positive.
    #[error("side length must be positive")]
    BadSide,
    /// Mapping length does not match the box's site count.
    #[error("mapping has length {found}, expected {expected}")]
    LengthMismatch { expected: usize, found: usize },
    /// Mapping is not a bijection of `{0, …, n−1}`.
    #[error("mapping is not a permutation: index {0} repeated or out of range")]
    NotBijective(usize),
    /// Text form of a permutation failed to parse.
    #[error("cannot parse permutation entry {0:?}")]
    Parse(String),
}

/// A point of the box, padded to `MAX_DIM` coordinates.
///
/// Unused trailing coordinates are fixed at 1, so distances between sites of
/// the same box are unaffected by the padding.
pub type Site = [i64; MAX_DIM];

/// The size-`N` lattice box `[[1, N]]^d` with its sites in row-major order.
///
/// Row-major means the *last* coordinate varies fastest: for d=2, N=2 the
/// order is (1,1), (1,2), (2,1), (2,2). The site list is precomputed once;
/// all operations after construction are pure reads, so a `LatticeBox` can be
/// shared freely across threads.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatticeBox {
    dim: usize,
    side: usize,
    sites: Vec<Site>,
}

impl LatticeBox {
    /// Build the box `[[1, N]]^d`.
    pub fn new(dim: usize, side: usize) -> Result<Self, LatticeError> {
        if dim == 0 || dim > MAX_DIM {
            return Err(LatticeError::BadDimension(dim));
        }
        if side == 0 {
            return Err(LatticeError::BadSide);
        }
        let n_sites = side.pow(dim as u32);
        let mut sites = Vec::with_capacity(n_sites);
        for idx in 0..n_sites {
            sites.push(Self::coords_of(idx, dim, side));
        }
        Ok(Self { dim, side, sites })
    }

    fn coords_of(idx: usize, dim: usize, side: usize) -> Site {
        let mut coords: Site = [1; MAX_DIM];
        let mut rem = idx;
        // Row-major: last coordinate varies fastest.
        for k in (0..dim).rev() {
            coords[k] = (rem % side) as i64 + 1;
            rem /= side;
        }
        coords
    }

    /// Dimension d.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Side length N.
    pub fn side(&self) -> usize {
        self.side
    }

    /// Number of sites `N^d`.
    pub fn n_sites(&self) -> usize {
        self.sites.len()
    }

    /// All sites in row-major order.
    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    /// Coordinates of the site with the given row-major index.
    pub fn site(&self, idx: usize) -> Site {
        self.sites[idx]
    }

    /// Euclidean distance between two sites, by index.
    ///
    /// Uses hypot-style chaining for d ≥ 2 so the result is correctly rounded
    /// even when compared against exact rational targets in tests.
    pub fn distance(&self, a: usize, b: usize) -> f64 {
        site_distance(self.sites[a], self.sites[b])
    }
}

/// Euclidean distance between two (padded) sites.
pub fn site_distance(a: Site, b: Site) -> f64 {
    let dx = (a[0] - b[0]) as f64;
    let dy = (a[1] - b[1]) as f64;
    let dz = (a[2] - b[2]) as f64;
    // hypot is exact for the zero components of lower-dimensional boxes, so
    // d=1 pays nothing for the padding.
    dx.hypot(dy).hypot(dz)
}

/// A permutation of box sites, stored as the dense image sequence
/// `mapping[i] = π(i)` over row-major site indices.
///
/// Dense storage beats maps at every size this crate targets (`N^d` up to a
/// few thousand). The mapping is validated to be a bijection on construction
/// and is immutable afterwards.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Permutation {
    mapping: Vec<usize>,
}

impl Permutation {
    /// The identity permutation on `n` sites.
    pub fn identity(n: usize) -> Self {
        Self {
            mapping: (0..n).collect(),
        }
    }

    /// Validate and wrap an image sequence.
    pub fn from_mapping(mapping: Vec<usize>) -> Result<Self, LatticeError> {
        let n = mapping.len();
        let mut seen = vec![false; n];
        for &img in &mapping {
            if img >= n {
                return Err(LatticeError::NotBijective(img));
            }
            if seen[img] {
                return Err(LatticeError::NotBijective(img));
            }
            seen[img] = true;
        }
        Ok(Self { mapping })
    }

    /// Number of sites.
    pub fn len(&self) -> usize {
        self.mapping.len()
    }

    /// True when the permutation acts on zero sites (degenerate but legal).
    pub fn is_empty(&self) -> bool {
        self.mapping.is_empty()
    }

    /// Image of site `i`.
    pub fn image(&self, i: usize) -> usize {
        self.mapping[i]
    }

    /// The raw image sequence.
    pub fn mapping(&self) -> &[usize] {
        &self.mapping
    }

    /// The inverse permutation.
    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.mapping.len()];
        for (i, &img) in self.mapping.iter().enumerate() {
            inv[img] = i;
        }
        Self { mapping: inv }
    }

    /// Swap the images of sites `i` and `j` (a transposition move on the
    /// permutation, used by the Metropolis sampler).
    pub fn swap_images(&mut self, i: usize, j: usize) {
        self.mapping.swap(i, j);
    }

    /// Cycle lengths of the permutation, sorted descending; they sum to the
    /// number of sites.
    pub fn cycle_lengths(&self) -> Vec<usize> {
        let n = self.mapping.len();
        let mut visited = vec![false; n];
        let mut lengths = Vec::new();
        for start in 0..n {
            if visited[start] {
                continue;
            }
            let mut len = 0;
            let mut cur = start;
            while !visited[cur] {
                visited[cur] = true;
                len += 1;
                cur = self.mapping[cur];
            }
            lengths.push(len);
        }
        lengths.sort_unstable_by(|a, b| b.cmp(a));
        lengths
    }

    /// Length of the longest cycle.
    pub fn longest_cycle(&self) -> usize {
        self.cycle_lengths().first().copied().unwrap_or(0)
    }

    /// Parse the one-line fixture form: comma-separated 0-based indices.
    pub fn from_line(line: &str) -> Result<Self, LatticeError> {
        let mapping = line
            .trim()
            .split(',')
            .map(|tok| {
                tok.trim()
                    .parse::<usize>()
                    .map_err(|_| LatticeError::Parse(tok.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_mapping(mapping)
    }
}

/// One-line fixture form: comma-separated 0-based image indices.
impl fmt::Display for Permutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, img) in self.mapping.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{img}")?;
        }
        Ok(())
    }
}

/// Model parameters: a box together with the inverse temperature β ≥ 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub lattice: LatticeBox,
    pub beta: f64,
}

impl ModelParams {
    /// Validate β (finite, nonnegative) and bundle it with the box.
    pub fn new(lattice: LatticeBox, beta: f64) -> Result<Self, LatticeError> {
        if !beta.is_finite() || beta < 0.0 {
            return Err(LatticeError::Parse(format!("beta {beta} invalid")));
        }
        Ok(Self { lattice, beta })
    }
}

/// Check that a permutation acts on exactly the sites of the box.
fn check_compatible(lattice: &LatticeBox, perm: &Permutation) -> Result<(), LatticeError> {
    if perm.len() != lattice.n_sites() {
        return Err(LatticeError::LengthMismatch {
            expected: lattice.n_sites(),
            found: perm.len(),
        });
    }
    Ok(())
}

/// Total displacement energy `H(π) = Σ_x |x − π(x)|`.
///
/// Zero exactly for the identity; strictly positive otherwise. The sum is
/// taken in row-major site order, so `energy` equals the sum of
/// [`displacement_profile`] exactly in floating point.
pub fn energy(lattice: &LatticeBox, perm: &Permutation) -> Result<f64, LatticeError> {
    check_compatible(lattice, perm)?;
    Ok((0..perm.len())
        .map(|i| lattice.distance(i, perm.image(i)))
        .sum())
}

/// Per-site displacements `|x − π(x)|` in row-major site order.
pub fn displacement_profile(
    lattice: &LatticeBox,
    perm: &Permutation,
) -> Result<Vec<f64>, LatticeError> {
    check_compatible(lattice, perm)?;
    Ok((0..perm.len())
        .map(|i| lattice.distance(i, perm.image(i)))
        .collect())
}
