//! Integer lattice geometry: ℓ₁ balls and spheres in Z^d and the discrete
//! torus T_n^d.
//!
//! Ball enumerations are sorted by `(ℓ₁ norm, lexicographic coordinates)`, so
//! index 0 is always the origin and every consumer (certificates, CSV output,
//! sampling order) sees the same site order on every run.

use std::collections::HashMap;
use std::fmt;
use std::ops::{Add, Neg, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LatticeError {
    #[error("dimension must be at least {min}, got {got}")]
    Dimension { min: usize, got: usize },
    #[error("torus side length must be at least 2, got {0}")]
    SideTooSmall(usize),
    #[error("radius must be non-negative, got {0}")]
    NegativeRadius(i64),
    #[error("lattice size overflows a 64-bit counter ({what})")]
    Overflow { what: &'static str },
    #[error("site has {got} coordinates, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// A point of Z^d (or of the torus, with coordinates reduced mod n).
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Site(pub Vec<i64>);

impl Site {
    pub fn new(coords: impl Into<Vec<i64>>) -> Self {
        Site(coords.into())
    }

    pub fn origin(d: usize) -> Self {
        Site(vec![0; d])
    }

    /// `sign · e_axis` in dimension `d`.
    pub fn unit(d: usize, axis: usize, sign: i64) -> Self {
        let mut c = vec![0; d];
        c[axis] = sign;
        Site(c)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[i64] {
        &self.0
    }

    pub fn norm(&self) -> u64 {
        l1_norm(self)
    }

    pub fn is_origin(&self) -> bool {
        self.0.iter().all(|&c| c == 0)
    }

    /// Returns a copy with `delta` added to coordinate `axis`.
    pub fn shifted(&self, axis: usize, delta: i64) -> Self {
        let mut c = self.0.clone();
        c[axis] += delta;
        Site(c)
    }

    pub fn distance(&self, other: &Site) -> u64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).unsigned_abs())
            .sum()
    }
}

impl fmt::Debug for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl Add for &Site {
    type Output = Site;
    fn add(self, rhs: &Site) -> Site {
        Site(self.0.iter().zip(&rhs.0).map(|(a, b)| a + b).collect())
    }
}

impl Sub for &Site {
    type Output = Site;
    fn sub(self, rhs: &Site) -> Site {
        Site(self.0.iter().zip(&rhs.0).map(|(a, b)| a - b).collect())
    }
}

impl Neg for &Site {
    type Output = Site;
    fn neg(self) -> Site {
        Site(self.0.iter().map(|a| -a).collect())
    }
}

/// Sum of absolute coordinates.
pub fn l1_norm(x: &Site) -> u64 {
    x.0.iter().map(|c| c.unsigned_abs()).sum()
}

/// Number of lattice points of ℓ₁ norm at most `t` in Z^d, with overflow
/// checking: Σ_k 2^k C(d,k) C(t,k).
pub fn ball_size(d: usize, t: u32) -> Result<u64, LatticeError> {
    let overflow = LatticeError::Overflow { what: "ball size" };
    let mut total: u64 = 0;
    for k in 0..=d.min(t as usize) {
        let term = binomial(d as u64, k as u64)
            .and_then(|a| a.checked_mul(binomial(t as u64, k as u64)?))
            .and_then(|a| a.checked_mul(1u64.checked_shl(k as u32)?))
            .ok_or(overflow.clone())?;
        total = total.checked_add(term).ok_or(overflow.clone())?;
    }
    Ok(total)
}

/// Exact binomial coefficient, `None` on overflow. `C(n,k) = 0` for `k > n`.
pub fn binomial(n: u64, k: u64) -> Option<u64> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return None;
        }
    }
    Some(acc as u64)
}

/// The ball B_t^d with a deterministic enumeration and a reverse index.
#[derive(Clone, Debug)]
pub struct BallIndex {
    d: usize,
    t: u32,
    sites: Vec<Site>,
    norms: Vec<u32>,
    index_of: HashMap<Site, usize>,
}

impl BallIndex {
    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn radius(&self) -> u32 {
        self.t
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn site(&self, index: usize) -> &Site {
        &self.sites[index]
    }

    /// ℓ₁ norm of the site at `index`.
    pub fn norm_of(&self, index: usize) -> u32 {
        self.norms[index]
    }

    pub fn index_of(&self, site: &Site) -> Option<usize> {
        self.index_of.get(site).copied()
    }

    /// Indices of the sites with norm exactly `k`; contiguous because of the
    /// enumeration order.
    pub fn layer_range(&self, k: u32) -> std::ops::Range<usize> {
        let start = self.norms.partition_point(|&n| n < k);
        let end = self.norms.partition_point(|&n| n <= k);
        start..end
    }
}

/// All sites of ℓ₁ norm at most `t`, sorted by `(norm, coords)`.
pub fn enumerate_ball(d: usize, t: u32) -> Result<BallIndex, LatticeError> {
    if d == 0 {
        return Err(LatticeError::Dimension { min: 1, got: 0 });
    }
    let expected = ball_size(d, t)?;
    let mut sites = Vec::with_capacity(expected as usize);
    let mut coords = vec![0i64; d];
    fill_ball(&mut coords, 0, t as i64, &mut sites);
    sites.sort_by(|a, b| (a.norm(), &a.0).cmp(&(b.norm(), &b.0)));
    debug_assert_eq!(sites.len() as u64, expected);
    let norms = sites.iter().map(|s| s.norm() as u32).collect();
    let index_of = sites
        .iter()
        .enumerate()
        .map(|(i, s)| (s.clone(), i))
        .collect();
    Ok(BallIndex {
        d,
        t,
        sites,
        norms,
        index_of,
    })
}

fn fill_ball(coords: &mut Vec<i64>, axis: usize, budget: i64, out: &mut Vec<Site>) {
    if axis == coords.len() {
        out.push(Site(coords.clone()));
        return;
    }
    for c in -budget..=budget {
        coords[axis] = c;
        fill_ball(coords, axis + 1, budget - c.abs(), out);
    }
    coords[axis] = 0;
}

/// Sites of norm exactly `t`, in ball order.
pub fn enumerate_sphere(d: usize, t: u32) -> Result<Vec<Site>, LatticeError> {
    let ball = enumerate_ball(d, t)?;
    let range = ball.layer_range(t);
    Ok(ball.sites[range].to_vec())
}

/// Nonzero offsets of norm at most `2t + 1`: the dependency neighbourhood of a
/// site for the time-`t` uninfected indicator, minus the site itself.
pub fn dependency_offsets(d: usize, t: u32) -> Result<Vec<Site>, LatticeError> {
    let ball = enumerate_ball(d, 2 * t + 1)?;
    Ok(ball.sites.into_iter().skip(1).collect())
}

/// The discrete torus (Z/nZ)^d.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TorusSpec {
    d: usize,
    n: usize,
}

impl TorusSpec {
    pub fn new(d: usize, n: usize) -> Result<Self, LatticeError> {
        if d < 2 {
            return Err(LatticeError::Dimension { min: 2, got: d });
        }
        if n < 2 {
            return Err(LatticeError::SideTooSmall(n));
        }
        let spec = TorusSpec { d, n };
        spec.volume()?;
        Ok(spec)
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn side(&self) -> usize {
        self.n
    }

    /// n^d, checked.
    pub fn volume(&self) -> Result<u64, LatticeError> {
        (0..self.d).try_fold(1u64, |acc, _| {
            acc.checked_mul(self.n as u64)
                .ok_or(LatticeError::Overflow { what: "torus volume" })
        })
    }

    /// Reduces every coordinate into `0..n`.
    pub fn reduce(&self, x: &Site) -> Site {
        let n = self.n as i64;
        Site(x.0.iter().map(|c| c.rem_euclid(n)).collect())
    }

    /// Row-major index with axis 0 most significant, so index order is the
    /// lexicographic order of reduced coordinates.
    pub fn index_of(&self, x: &Site) -> usize {
        let n = self.n as i64;
        x.0.iter()
            .fold(0usize, |acc, &c| acc * self.n + c.rem_euclid(n) as usize)
    }

    pub fn site_at(&self, mut index: usize) -> Site {
        let mut c = vec![0i64; self.d];
        for axis in (0..self.d).rev() {
            c[axis] = (index % self.n) as i64;
            index /= self.n;
        }
        Site(c)
    }

    /// Shortest-path distance on the torus.
    pub fn distance(&self, x: &Site, y: &Site) -> u64 {
        let n = self.n as i64;
        x.0.iter()
            .zip(&y.0)
            .map(|(a, b)| {
                let diff = (a - b).rem_euclid(n);
                diff.min(n - diff) as u64
            })
            .sum()
    }
}

/// A neighbour of a torus site. On an n = 2 torus `x + e_i = x − e_i`, so the
/// two are merged and `multiplicity` is 2.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TorusNeighbor {
    pub site: Site,
    pub multiplicity: u8,
}

/// The 2d neighbours `x ± e_i` with wraparound, in axis order (`+` before `−`).
pub fn torus_neighbors(spec: &TorusSpec, x: &Site) -> Result<Vec<TorusNeighbor>, LatticeError> {
    if x.dim() != spec.d {
        return Err(LatticeError::DimensionMismatch {
            expected: spec.d,
            got: x.dim(),
        });
    }
    let x = spec.reduce(x);
    let mut out: Vec<TorusNeighbor> = Vec::with_capacity(2 * spec.d);
    for axis in 0..spec.d {
        for sign in [1, -1] {
            let y = spec.reduce(&x.shifted(axis, sign));
            match out.iter_mut().find(|nb| nb.site == y) {
                Some(nb) => nb.multiplicity += 1,
                None => out.push(TorusNeighbor {
                    site: y,
                    multiplicity: 1,
                }),
            }
        }
    }
    Ok(out)
}
