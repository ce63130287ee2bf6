//! Group supports, extended supports, dual certificates and the
//! qualification condition, plus the sandwich check on solver traces.
//!
//! Groups are stored 0-based. Display and serialized forms use 1-based
//! labels `1..=G`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{residual, residual_group_norms, DualCoefficients, ProblemInstance};
use crate::solver::SolveTrace;

/// Default relative band for the extended support and the (QC) test.
pub const DEFAULT_EPS_REL: f64 = 1e-4;

/// Subset of the group labels `0..G`, as a bitset.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct GroupSet {
    len: usize,
    words: Vec<u64>,
}

impl GroupSet {
    pub fn empty(n_groups: usize) -> Self {
        Self {
            len: n_groups,
            words: vec![0; n_groups.div_ceil(64)],
        }
    }

    pub fn full(n_groups: usize) -> Self {
        let mut s = Self::empty(n_groups);
        for g in 0..n_groups {
            s.insert(g);
        }
        s
    }

    pub fn from_indices(n_groups: usize, indices: impl IntoIterator<Item = usize>) -> Self {
        let mut s = Self::empty(n_groups);
        for g in indices {
            s.insert(g);
        }
        s
    }

    /// Low `n_groups` bits of `mask` (n_groups <= 64).
    pub fn from_mask(n_groups: usize, mask: u64) -> Self {
        assert!(n_groups <= 64, "mask form supports at most 64 groups");
        let mut s = Self::empty(n_groups);
        if n_groups > 0 {
            let keep = if n_groups == 64 {
                u64::MAX
            } else {
                (1u64 << n_groups) - 1
            };
            s.words[0] = mask & keep;
        }
        s
    }

    pub fn n_groups(&self) -> usize {
        self.len
    }

    pub fn insert(&mut self, g: usize) {
        assert!(g < self.len, "group {g} out of range 0..{}", self.len);
        self.words[g / 64] |= 1 << (g % 64);
    }

    pub fn remove(&mut self, g: usize) {
        assert!(g < self.len, "group {g} out of range 0..{}", self.len);
        self.words[g / 64] &= !(1 << (g % 64));
    }

    pub fn contains(&self, g: usize) -> bool {
        g < self.len && self.words[g / 64] & (1 << (g % 64)) != 0
    }

    pub fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn is_subset(&self, other: &GroupSet) -> bool {
        self.len == other.len
            && self
                .words
                .iter()
                .zip(&other.words)
                .all(|(a, b)| a & !b == 0)
    }

    pub fn complement(&self) -> GroupSet {
        let mut out = GroupSet::full(self.len);
        for (o, w) in out.words.iter_mut().zip(&self.words) {
            *o &= !w;
        }
        out
    }

    /// 0-based members in increasing order.
    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len).filter(move |&g| self.contains(g))
    }

    /// 1-based labels in increasing order.
    pub fn labels(&self) -> Vec<usize> {
        self.iter().map(|g| g + 1).collect()
    }
}

impl fmt::Display for GroupSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, g) in self.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{}", g + 1)?;
        }
        write!(f, "}}")
    }
}

impl fmt::Debug for GroupSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GroupSet({self} of {})", self.len)
    }
}

/// Support, extended support and certificate norms at one coefficient
/// matrix (normally an approximate solution).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportReport {
    #[serde(with = "labels")]
    pub support: GroupSet,
    #[serde(with = "labels")]
    pub extended_support: GroupSet,
    /// `||X_g^*(X w - y)|| / lambda` per group.
    pub certificate_norms: Vec<f64>,
    pub qc_holds: bool,
    /// `1 - max_{g not in support} certificate_norms[g]`, or 1 for a full support.
    pub qc_margin: f64,
    pub eps_rel: f64,
}

impl SupportReport {
    /// Flat `key=value` lines.
    pub fn to_key_values(&self) -> String {
        let norms = self
            .certificate_norms
            .iter()
            .map(|v| format!("{v}"))
            .collect::<Vec<_>>()
            .join(",");
        format!(
            "support={}\nsupport_size={}\nextended_support={}\nextended_support_size={}\n\
             certificate_norms={}\nqc_holds={}\nqc_margin={}\neps_rel={}\n",
            self.support,
            self.support.count(),
            self.extended_support,
            self.extended_support.count(),
            norms,
            self.qc_holds,
            self.qc_margin,
            self.eps_rel,
        )
    }
}

/// `{g : alpha_g != 0}`, read exactly (thresholded groups are literal zeros).
pub fn support_of(alpha: &DualCoefficients) -> GroupSet {
    GroupSet::from_indices(
        alpha.n_groups(),
        (0..alpha.n_groups()).filter(|&g| !alpha.is_group_zero(g)),
    )
}

/// `||X_g^*(X w - y)|| / lambda` for every group.
pub fn certificate_norms(alpha: &DualCoefficients, problem: &ProblemInstance) -> Result<Vec<f64>> {
    let r = residual(alpha, problem.gram(), problem.responses())?;
    let lambda = problem.effective_lambda();
    Ok(residual_group_norms(problem.gram(), r.as_slice())
        .into_iter()
        .map(|n| n / lambda)
        .collect())
}

/// Groups whose certificate norm reaches `1 - eps_rel`.
pub fn extended_support(
    alpha: &DualCoefficients,
    problem: &ProblemInstance,
    eps_rel: f64,
) -> Result<GroupSet> {
    let norms = certificate_norms(alpha, problem)?;
    Ok(extended_from_norms(&norms, eps_rel))
}

fn extended_from_norms(norms: &[f64], eps_rel: f64) -> GroupSet {
    GroupSet::from_indices(
        norms.len(),
        norms
            .iter()
            .enumerate()
            .filter(|(_, &n)| n >= 1.0 - eps_rel)
            .map(|(g, _)| g),
    )
}

pub fn qualification_check(
    alpha: &DualCoefficients,
    problem: &ProblemInstance,
    eps_rel: f64,
) -> Result<SupportReport> {
    let norms = certificate_norms(alpha, problem)?;
    Ok(report_from_parts(support_of(alpha), norms, eps_rel))
}

/// Builds a report from a support and certificate norms computed elsewhere
/// (e.g. by an oracle working in explicit coordinates).
pub fn report_from_parts(
    support: GroupSet,
    certificate_norms: Vec<f64>,
    eps_rel: f64,
) -> SupportReport {
    let extended = extended_from_norms(&certificate_norms, eps_rel);
    let worst_outside = certificate_norms
        .iter()
        .enumerate()
        .filter(|(g, _)| !support.contains(*g))
        .map(|(_, &n)| n)
        .fold(f64::NEG_INFINITY, f64::max);
    let qc_margin = if worst_outside.is_finite() {
        1.0 - worst_outside
    } else {
        1.0
    };
    SupportReport {
        support,
        extended_support: extended,
        certificate_norms,
        qc_holds: qc_margin > eps_rel,
        qc_margin,
        eps_rel,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "verdict", content = "iteration")]
pub enum SandwichVerdict {
    Pass,
    /// First iteration `n >= burn_in` violating `supp(ref) ⊆ supp(w^n) ⊆ esupp(ref)`.
    Fail(usize),
}

impl SandwichVerdict {
    pub fn passed(&self) -> bool {
        matches!(self, SandwichVerdict::Pass)
    }
}

/// Checks `reference.support ⊆ supp(w^n) ⊆ reference.extended_support` for
/// every iteration `n >= burn_in` of the trace. The trace's support change
/// log covers every iteration regardless of the recording stride.
pub fn sandwich_check(
    trace: &SolveTrace,
    reference: &SupportReport,
    burn_in: usize,
) -> Result<SandwichVerdict> {
    if burn_in > trace.iters_run {
        return Err(Error::invalid(format!(
            "burn_in {burn_in} beyond trace length {}",
            trace.iters_run
        )));
    }
    let inside =
        |s: &GroupSet| reference.support.is_subset(s) && s.is_subset(&reference.extended_support);
    let changes = &trace.support_changes;
    for (i, (start, support)) in changes.iter().enumerate() {
        let end = changes.get(i + 1).map_or(trace.iters_run + 1, |(n, _)| *n);
        // the segment [start, end) holds this support
        if end <= burn_in {
            continue;
        }
        if !inside(support) {
            return Ok(SandwichVerdict::Fail((*start).max(burn_in)));
        }
    }
    Ok(SandwichVerdict::Pass)
}

mod labels {
    use super::GroupSet;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Repr {
        n_groups: usize,
        labels: Vec<usize>,
    }

    pub fn serialize<S: Serializer>(set: &GroupSet, s: S) -> Result<S::Ok, S::Error> {
        Repr {
            n_groups: set.n_groups(),
            labels: set.labels(),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<GroupSet, D::Error> {
        let r = Repr::deserialize(d)?;
        if let Some(&bad) = r.labels.iter().find(|&&l| l == 0 || l > r.n_groups) {
            return Err(serde::de::Error::custom(format!(
                "group label {bad} out of range"
            )));
        }
        Ok(GroupSet::from_indices(
            r.n_groups,
            r.labels.iter().map(|l| l - 1),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Dataset, GramBlocks, LambdaConvention};
    use nalgebra::DMatrix;

    fn scalar_example() -> ProblemInstance {
        let ds = Dataset::from_rows(&[vec![1.0]], &[1.0]).unwrap();
        let gram =
            GramBlocks::from_blocks(vec![DMatrix::from_element(1, 1, 1.0)], Some(vec![1]), 1.01)
                .unwrap();
        ProblemInstance::new(ds, gram, 1.0, LambdaConvention::Raw).unwrap()
    }

    fn orthonormal(y: [f64; 2]) -> ProblemInstance {
        let ds = Dataset::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]], &y).unwrap();
        let e1 = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let e2 = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]);
        let gram = GramBlocks::from_blocks(vec![e1, e2], Some(vec![1, 1]), 1.01).unwrap();
        ProblemInstance::new(ds, gram, 1.0, LambdaConvention::Raw).unwrap()
    }

    fn orthonormal_solution() -> DualCoefficients {
        DualCoefficients::from_matrix(DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0])).unwrap()
    }

    #[test]
    fn group_set_basics() {
        let s = GroupSet::from_indices(70, [0, 3, 65]);
        assert_eq!(s.count(), 3);
        assert!(s.contains(65) && !s.contains(64));
        assert_eq!(s.labels(), vec![1, 4, 66]);
        assert_eq!(s.to_string(), "{1,4,66}");
        assert!(s.is_subset(&GroupSet::full(70)));
        assert!(!GroupSet::full(70).is_subset(&s));
        assert_eq!(s.complement().count(), 67);
        assert_eq!(
            GroupSet::from_mask(4, 0b1111_0101),
            GroupSet::from_indices(4, [0, 2])
        );
    }

    #[test]
    fn support_of_zero_is_empty() {
        assert!(support_of(&DualCoefficients::zeros(3, 4)).is_empty());
    }

    #[test]
    fn scalar_example_reference() {
        let p = scalar_example();
        let zero = p.zero_coefficients();
        let esupp = extended_support(&zero, &p, DEFAULT_EPS_REL).unwrap();
        assert_eq!(esupp.labels(), vec![1]);
        let report = qualification_check(&zero, &p, DEFAULT_EPS_REL).unwrap();
        assert!(report.support.is_empty());
        assert!(!report.qc_holds);
        assert_eq!(report.qc_margin, 0.0);
        assert_eq!(report.certificate_norms, vec![1.0]);
    }

    #[test]
    fn zero_responses_give_empty_extended_support() {
        let p = orthonormal([0.0, 0.0]);
        let zero = p.zero_coefficients();
        assert!(extended_support(&zero, &p, DEFAULT_EPS_REL)
            .unwrap()
            .is_empty());
        let report = qualification_check(&zero, &p, DEFAULT_EPS_REL).unwrap();
        assert!(report.qc_holds);
        assert_eq!(report.qc_margin, 1.0);
    }

    #[test]
    fn orthonormal_design_report() {
        let p = orthonormal([3.0, 0.5]);
        let report = qualification_check(&orthonormal_solution(), &p, DEFAULT_EPS_REL).unwrap();
        assert_eq!(report.certificate_norms, vec![1.0, 0.5]);
        assert_eq!(report.support.labels(), vec![1]);
        assert_eq!(report.extended_support, report.support);
        assert!(report.qc_holds);
        assert_eq!(report.qc_margin, 0.5);
    }

    #[test]
    fn full_support_has_unit_margin() {
        let r = report_from_parts(GroupSet::full(3), vec![1.0, 1.0, 1.0], 1e-4);
        assert_eq!(r.qc_margin, 1.0);
        assert!(r.qc_holds);
    }

    #[test]
    fn key_value_report_format() {
        let p = scalar_example();
        let text = qualification_check(&p.zero_coefficients(), &p, DEFAULT_EPS_REL)
            .unwrap()
            .to_key_values();
        assert!(text.contains("support={}\n"));
        assert!(text.contains("extended_support={1}\n"));
        assert!(text.contains("qc_margin=0\n"));
    }

    #[test]
    fn report_serde_uses_labels() {
        let p = orthonormal([3.0, 0.5]);
        let report = qualification_check(&orthonormal_solution(), &p, DEFAULT_EPS_REL).unwrap();
        let json = serde_json::to_string(&report).unwrap();
        assert!(json.contains("\"labels\":[1]"));
        let back: SupportReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
    }

    fn trace_with(changes: Vec<(usize, GroupSet)>, iters_run: usize) -> SolveTrace {
        SolveTrace {
            support_changes: changes,
            iters_run,
            ..SolveTrace::default()
        }
    }

    #[test]
    fn sandwich_reports_first_violation_after_burn_in() {
        let g = 3;
        let reference =
            report_from_parts(GroupSet::from_indices(g, [0]), vec![1.0, 1.0, 0.2], 1e-4);
        let trace = trace_with(
            vec![
                (0, GroupSet::empty(g)),
                (1, GroupSet::full(g)),
                (5, GroupSet::from_indices(g, [0, 1])),
                (9, GroupSet::from_indices(g, [0])),
            ],
            20,
        );
        assert_eq!(
            sandwich_check(&trace, &reference, 0).unwrap(),
            SandwichVerdict::Fail(0)
        );
        assert_eq!(
            sandwich_check(&trace, &reference, 3).unwrap(),
            SandwichVerdict::Fail(3)
        );
        assert_eq!(
            sandwich_check(&trace, &reference, 5).unwrap(),
            SandwichVerdict::Pass
        );
        assert_eq!(
            sandwich_check(&trace, &reference, 20).unwrap(),
            SandwichVerdict::Pass
        );
        assert!(sandwich_check(&trace, &reference, 21).is_err());
    }

    #[test]
    fn sandwich_of_zero_trace_passes() {
        let trace = trace_with(vec![(0, GroupSet::empty(2))], 10);
        let reference = report_from_parts(GroupSet::empty(2), vec![0.1, 0.3], 1e-4);
        assert!(sandwich_check(&trace, &reference, 0).unwrap().passed());
    }
}
