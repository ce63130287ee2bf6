//! Strata lattices of the group norm `R(w) = sum_g ||w_g||`.
//!
//! Primal strata are products of `{0}` / `H_g \ {0}` and are identified by
//! the set of nonzero components. Dual strata live in the product of unit
//! balls and are products of `int B` / `S` (open ball / sphere); they are
//! identified by the set of sphere components. The transfer map `J_R`
//! (union of relative interiors of subdifferentials over a stratum) sends
//! `H_g \ {0}` to `S` and `{0}` to `int B` componentwise, and `J_{R*}` is its
//! inverse.
//!
//! The order `M <= M'` means `M ⊂ cl M'`. For primal strata this is
//! inclusion of nonzero sets; since `cl int B = B ⊃ S` and `cl S = S`, for
//! dual strata it is reverse inclusion of sphere sets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::DualCoefficients;
use crate::parallel::Parallelism;
use crate::support::{support_of, GroupSet};

/// Largest `G` accepted by [`verify_lattice`].
pub const MAX_LATTICE_GROUPS: usize = 16;
/// Largest `G` for which the partial-order axioms are checked over triples.
pub const MAX_AXIOM_GROUPS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PrimalPiece {
    Zero,
    Nonzero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DualPiece {
    Interior,
    Sphere,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PrimalStratum {
    nonzero: GroupSet,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DualStratum {
    sphere: GroupSet,
}

impl PrimalStratum {
    pub fn from_nonzero(nonzero: GroupSet) -> Self {
        Self { nonzero }
    }

    pub fn from_pattern(pattern: &[PrimalPiece]) -> Self {
        Self {
            nonzero: GroupSet::from_indices(
                pattern.len(),
                pattern
                    .iter()
                    .enumerate()
                    .filter(|(_, p)| **p == PrimalPiece::Nonzero)
                    .map(|(g, _)| g),
            ),
        }
    }

    pub fn n_groups(&self) -> usize {
        self.nonzero.n_groups()
    }

    pub fn nonzero(&self) -> &GroupSet {
        &self.nonzero
    }

    pub fn pattern(&self) -> Vec<PrimalPiece> {
        (0..self.n_groups())
            .map(|g| {
                if self.nonzero.contains(g) {
                    PrimalPiece::Nonzero
                } else {
                    PrimalPiece::Zero
                }
            })
            .collect()
    }
}

impl DualStratum {
    pub fn from_sphere(sphere: GroupSet) -> Self {
        Self { sphere }
    }

    pub fn from_pattern(pattern: &[DualPiece]) -> Self {
        Self {
            sphere: GroupSet::from_indices(
                pattern.len(),
                pattern
                    .iter()
                    .enumerate()
                    .filter(|(_, p)| **p == DualPiece::Sphere)
                    .map(|(g, _)| g),
            ),
        }
    }

    pub fn n_groups(&self) -> usize {
        self.sphere.n_groups()
    }

    pub fn sphere(&self) -> &GroupSet {
        &self.sphere
    }

    pub fn pattern(&self) -> Vec<DualPiece> {
        (0..self.n_groups())
            .map(|g| {
                if self.sphere.contains(g) {
                    DualPiece::Sphere
                } else {
                    DualPiece::Interior
                }
            })
            .collect()
    }
}

/// The unique primal stratum containing `w = X^* alpha`.
pub fn primal_stratum_of(alpha: &DualCoefficients) -> PrimalStratum {
    PrimalStratum::from_nonzero(support_of(alpha))
}

/// Dual stratum of `eta` given its per-group norms (already divided by
/// lambda): `Sphere` iff the norm reaches `1 - eps_rel`.
pub fn dual_stratum_of(certificate_norms: &[f64], eps_rel: f64) -> Result<DualStratum> {
    let mut sphere = GroupSet::empty(certificate_norms.len());
    for (g, &n) in certificate_norms.iter().enumerate() {
        if !(n >= 0.0) {
            return Err(Error::invalid(format!(
                "certificate norm {n} of group {g} is not >= 0"
            )));
        }
        if n > 1.0 + eps_rel {
            return Err(Error::DualInfeasible { group: g, norm: n });
        }
        if n >= 1.0 - eps_rel {
            sphere.insert(g);
        }
    }
    Ok(DualStratum::from_sphere(sphere))
}

/// `J_R`: `Nonzero -> Sphere`, `Zero -> Interior`.
pub fn transfer_jr(s: &PrimalStratum) -> DualStratum {
    DualStratum::from_sphere(s.nonzero.clone())
}

/// `J_{R*}`: `Sphere -> Nonzero`, `Interior -> Zero`.
pub fn transfer_jr_star(s: &DualStratum) -> PrimalStratum {
    PrimalStratum::from_nonzero(s.sphere.clone())
}

/// The partial order `M <= M'` (`M ⊂ cl M'`) on one side of the lattice.
pub trait StratumOrder {
    fn leq(&self, other: &Self) -> Result<bool>;
}

fn check_same_len(a: usize, b: usize) -> Result<()> {
    Error::check_dim("stratum comparison", a, b)
}

impl StratumOrder for PrimalStratum {
    fn leq(&self, other: &Self) -> Result<bool> {
        check_same_len(self.n_groups(), other.n_groups())?;
        Ok(self.nonzero.is_subset(&other.nonzero))
    }
}

impl StratumOrder for DualStratum {
    fn leq(&self, other: &Self) -> Result<bool> {
        check_same_len(self.n_groups(), other.n_groups())?;
        Ok(other.sphere.is_subset(&self.sphere))
    }
}

pub fn stratum_leq<S: StratumOrder>(a: &S, b: &S) -> Result<bool> {
    a.leq(b)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LatticeFailure {
    /// `J_{R*}(J_R(s)) != s`.
    NotLeftInverse(PrimalStratum),
    /// `J_R(J_{R*}(d)) != d`.
    NotRightInverse(DualStratum),
    /// Two primal strata share an image.
    NotInjective(PrimalStratum, PrimalStratum),
    /// `a <= b` and `J_R(b) <= J_R(a)` disagree.
    NotDecreasing(PrimalStratum, PrimalStratum),
    NotReflexive(String),
    NotAntisymmetric(String),
    NotTransitive(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LatticeVerdict {
    Pass { strata: usize, pairs: u64 },
    Fail(LatticeFailure),
}

impl LatticeVerdict {
    pub fn passed(&self) -> bool {
        matches!(self, LatticeVerdict::Pass { .. })
    }
}

/// Exhaustive check of mirror-stratifiability for `G` groups using the
/// crate's transfer maps.
pub fn verify_lattice(groups: usize) -> Result<LatticeVerdict> {
    verify_lattice_with(
        groups,
        transfer_jr,
        transfer_jr_star,
        Parallelism::default(),
    )
}

/// Same as [`verify_lattice`] with caller-supplied transfer maps.
pub fn verify_lattice_with<F, B>(
    groups: usize,
    forward: F,
    backward: B,
    par: Parallelism,
) -> Result<LatticeVerdict>
where
    F: Fn(&PrimalStratum) -> DualStratum + Sync + Send,
    B: Fn(&DualStratum) -> PrimalStratum + Sync + Send,
{
    if groups == 0 || groups > MAX_LATTICE_GROUPS {
        return Err(Error::invalid(format!(
            "lattice verification needs 1 <= G <= {MAX_LATTICE_GROUPS}, got {groups}"
        )));
    }
    let count = 1usize << groups;
    let primal: Vec<PrimalStratum> = (0..count)
        .map(|mask| PrimalStratum::from_nonzero(GroupSet::from_mask(groups, mask as u64)))
        .collect();
    let dual: Vec<DualStratum> = (0..count)
        .map(|mask| DualStratum::from_sphere(GroupSet::from_mask(groups, mask as u64)))
        .collect();
    let images: Vec<DualStratum> = primal.iter().map(&forward).collect();

    // inverse in both directions
    for (s, img) in primal.iter().zip(&images) {
        if backward(img) != *s {
            return Ok(LatticeVerdict::Fail(LatticeFailure::NotLeftInverse(
                s.clone(),
            )));
        }
    }
    for d in &dual {
        if forward(&backward(d)) != *d {
            return Ok(LatticeVerdict::Fail(LatticeFailure::NotRightInverse(
                d.clone(),
            )));
        }
    }
    // injectivity (with equal cardinalities this is bijectivity)
    let mut seen = std::collections::HashMap::with_capacity(count);
    for (s, img) in primal.iter().zip(&images) {
        if let Some(prev) = seen.insert(img.clone(), s.clone()) {
            return Ok(LatticeVerdict::Fail(LatticeFailure::NotInjective(
                prev,
                s.clone(),
            )));
        }
    }

    // order reversal over all pairs, one row per worker item
    let rows = par.map(count, |i| -> Result<Option<(usize, usize)>> {
        for j in 0..count {
            let primal_le = primal[i].leq(&primal[j])?;
            let dual_ge = images[j].leq(&images[i])?;
            if primal_le != dual_ge {
                return Ok(Some((i, j)));
            }
        }
        Ok(None)
    });
    for row in rows {
        if let Some((i, j)) = row? {
            return Ok(LatticeVerdict::Fail(LatticeFailure::NotDecreasing(
                primal[i].clone(),
                primal[j].clone(),
            )));
        }
    }

    if groups <= MAX_AXIOM_GROUPS {
        if let Some(f) = check_partial_order(&primal, par)? {
            return Ok(LatticeVerdict::Fail(f));
        }
        if let Some(f) = check_partial_order(&dual, par)? {
            return Ok(LatticeVerdict::Fail(f));
        }
    }
    Ok(LatticeVerdict::Pass {
        strata: count,
        pairs: (count as u64) * (count as u64),
    })
}

fn check_partial_order<S>(items: &[S], par: Parallelism) -> Result<Option<LatticeFailure>>
where
    S: StratumOrder + std::fmt::Debug + PartialEq + Sync,
{
    let n = items.len();
    let leq: Vec<Vec<bool>> = par
        .map(n, |i| {
            items
                .iter()
                .map(|b| items[i].leq(b))
                .collect::<Result<Vec<_>>>()
        })
        .into_iter()
        .collect::<Result<_>>()?;
    for i in 0..n {
        if !leq[i][i] {
            return Ok(Some(LatticeFailure::NotReflexive(format!(
                "{:?}",
                items[i]
            ))));
        }
        for j in 0..n {
            if i != j && leq[i][j] && leq[j][i] {
                return Ok(Some(LatticeFailure::NotAntisymmetric(format!(
                    "{:?} / {:?}",
                    items[i], items[j]
                ))));
            }
        }
    }
    let bad = par.map(n, |i| {
        for j in (0..n).filter(|&j| leq[i][j]) {
            for k in (0..n).filter(|&k| leq[j][k]) {
                if !leq[i][k] {
                    return Some((i, j, k));
                }
            }
        }
        None
    });
    Ok(bad.into_iter().flatten().next().map(|(i, j, k)| {
        LatticeFailure::NotTransitive(format!(
            "{:?} <= {:?} <= {:?}",
            items[i], items[j], items[k]
        ))
    }))
}

/// Lattice form of the identification statement on a run: from some
/// iteration on, `M(ref) <= M(w^n) <= J_{R*}(M*(eta_ref))`. Returns the first
/// iteration from which this holds on every later iterate, or `None`.
pub fn identification_onset(
    trace: &crate::solver::SolveTrace,
    reference: &PrimalStratum,
    reference_dual: &DualStratum,
) -> Result<Option<usize>> {
    let upper = transfer_jr_star(reference_dual);
    let mut onset = None;
    for (start, support) in &trace.support_changes {
        let s = PrimalStratum::from_nonzero(support.clone());
        let ok = reference.leq(&s)? && s.leq(&upper)?;
        match (ok, onset) {
            (true, None) => onset = Some(*start),
            (false, _) => onset = None,
            _ => {}
        }
    }
    Ok(onset)
}
