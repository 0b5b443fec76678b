//! Fisher-information bookkeeping and optimal-experimental-design view
//! selection.
//!
//! The Gauss–Newton information matrix `H = JᵀJ` is kept either as its main
//! diagonal or as one dense block per Gaussian. Every functional evaluates the
//! regularized matrix `H̃ = H + λ·I`, where `λ` is the prior information.
//!
//! The uncertainty functionals act on the spectrum of `Σ = H̃⁻¹` (size `l`):
//!
//! | functional | value |
//! |---|---|
//! | T | `(1/l)·Σₖ λₖ(Σ)` |
//! | A | `((1/l)·tr H̃)⁻¹` |
//! | D | `exp((1/l)·Σₖ log λₖ(Σ))` |
//! | E | `max` (or `min`) `λₖ(Σ)` |
//!
//! FisherRF scores a candidate by `tr(Jᵢᵀ Jᵢ · H̃₋⁻¹)` (higher is better);
//! the others by the uncertainty left after adding the candidate (lower is
//! better).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradients::{view_jacobian, ViewJacobian};
use crate::linalg::{eigvals_sym, Cholesky, SymMatrix};
use crate::scene::{CameraView, ParamLayout, ParamMask, Scene};

/// Default prior information `λ`.
pub const DEFAULT_LAMBDA_PRIOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Approximation {
    #[serde(rename = "simple")]
    SimpleDiagonal,
    #[serde(rename = "block")]
    BlockDiagonal,
}

impl Approximation {
    pub fn name(self) -> &'static str {
        match self {
            Approximation::SimpleDiagonal => "simple",
            Approximation::BlockDiagonal => "block",
        }
    }
}

impl fmt::Display for Approximation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Approximation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simple" => Ok(Approximation::SimpleDiagonal),
            "block" => Ok(Approximation::BlockDiagonal),
            _ => Err(Error::InvalidInput(format!("unknown approximation {s:?}; expected simple or block"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EVariant {
    Min,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum UncertaintyFunctional {
    T,
    A,
    D,
    E(EVariant),
    FisherRf,
}

impl UncertaintyFunctional {
    /// Default E variant: the largest covariance eigenvalue.
    pub const E_MAX: UncertaintyFunctional = UncertaintyFunctional::E(EVariant::Max);

    pub fn name(self) -> &'static str {
        match self {
            UncertaintyFunctional::T => "T",
            UncertaintyFunctional::A => "A",
            UncertaintyFunctional::D => "D",
            UncertaintyFunctional::E(EVariant::Max) => "E-max",
            UncertaintyFunctional::E(EVariant::Min) => "E-min",
            UncertaintyFunctional::FisherRf => "FisherRF",
        }
    }

    /// Whether a larger candidate score is better.
    pub fn maximizes(self) -> bool {
        self == UncertaintyFunctional::FisherRf
    }
}

impl fmt::Display for UncertaintyFunctional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for UncertaintyFunctional {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "t" => Ok(UncertaintyFunctional::T),
            "a" => Ok(UncertaintyFunctional::A),
            "d" => Ok(UncertaintyFunctional::D),
            "e" | "e-max" => Ok(UncertaintyFunctional::E_MAX),
            "e-min" => Ok(UncertaintyFunctional::E(EVariant::Min)),
            "fisherrf" => Ok(UncertaintyFunctional::FisherRf),
            _ => Err(Error::InvalidInput(format!(
                "unknown functional {s:?}; expected one of t, a, d, e, e-min, fisherrf"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Storage {
    Diagonal(Vec<f64>),
    Blocks(Vec<SymMatrix>),
}

/// Approximate information matrix over a masked parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct HessianApprox {
    layout: ParamLayout,
    lambda_prior: f64,
    storage: Storage,
}

impl HessianApprox {
    /// Zero information (only the `λ` prior).
    pub fn prior(kind: Approximation, layout: ParamLayout, lambda_prior: f64) -> Result<Self> {
        if layout.mask.is_empty() {
            return Err(Error::EmptyMask);
        }
        if !(lambda_prior > 0.0) || !lambda_prior.is_finite() {
            return Err(Error::InvalidInput(format!("lambda_prior must be positive, got {lambda_prior}")));
        }
        let storage = match kind {
            Approximation::SimpleDiagonal => Storage::Diagonal(vec![0.0; layout.len()]),
            Approximation::BlockDiagonal => {
                Storage::Blocks(vec![SymMatrix::zeros(layout.per_gaussian); layout.n_gaussians])
            }
        };
        Ok(HessianApprox {
            layout,
            lambda_prior,
            storage,
        })
    }

    pub fn for_scene(kind: Approximation, scene: &Scene, mask: ParamMask, lambda_prior: f64) -> Result<Self> {
        Self::prior(kind, ParamLayout::for_scene(scene, mask), lambda_prior)
    }

    pub fn kind(&self) -> Approximation {
        match self.storage {
            Storage::Diagonal(_) => Approximation::SimpleDiagonal,
            Storage::Blocks(_) => Approximation::BlockDiagonal,
        }
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn mask(&self) -> ParamMask {
        self.layout.mask
    }

    pub fn lambda_prior(&self) -> f64 {
        self.lambda_prior
    }

    /// Number of parameters `l`.
    pub fn param_count(&self) -> usize {
        self.layout.len()
    }

    /// Main diagonal of the unregularized matrix.
    pub fn diagonal(&self) -> Vec<f64> {
        match &self.storage {
            Storage::Diagonal(d) => d.clone(),
            Storage::Blocks(b) => b.iter().flat_map(SymMatrix::diagonal).collect(),
        }
    }

    pub fn blocks(&self) -> Option<&[SymMatrix]> {
        match &self.storage {
            Storage::Blocks(b) => Some(b),
            Storage::Diagonal(_) => None,
        }
    }

    /// Same information with a different prior.
    pub fn with_lambda(mut self, lambda_prior: f64) -> Result<Self> {
        if !(lambda_prior > 0.0) {
            return Err(Error::InvalidInput(format!("lambda_prior must be positive, got {lambda_prior}")));
        }
        self.lambda_prior = lambda_prior;
        Ok(self)
    }

    /// Number of independent units (parameters or blocks).
    fn units(&self) -> usize {
        match &self.storage {
            Storage::Diagonal(d) => d.len(),
            Storage::Blocks(b) => b.len(),
        }
    }

    fn check_layout(&self, other: &ParamLayout) -> Result<()> {
        if self.layout != *other {
            return Err(Error::MaskMismatch(format!(
                "hessian layout {:?} vs jacobian layout {:?}",
                self.layout, other
            )));
        }
        Ok(())
    }

    /// Adds a view's information in place.
    pub fn accumulate(&mut self, vj: &ViewJacobian) -> Result<()> {
        self.check_layout(&vj.layout)?;
        let info = ViewInformation::from_jacobian(vj, self.kind());
        self.add_information(&info)
    }

    pub fn add_information(&mut self, info: &ViewInformation) -> Result<()> {
        self.apply(info, 1.0)
    }

    /// Removes a previously added view's information.
    pub fn subtract_information(&mut self, info: &ViewInformation) -> Result<()> {
        self.apply(info, -1.0)
    }

    fn apply(&mut self, info: &ViewInformation, sign: f64) -> Result<()> {
        self.check_layout(&info.layout)?;
        match (&mut self.storage, &info.data) {
            (Storage::Diagonal(d), InfoData::Diagonal(entries)) => {
                for &(k, v) in entries {
                    d[k] += sign * v;
                    if d[k] < 0.0 {
                        d[k] = 0.0;
                    }
                }
            }
            (Storage::Blocks(blocks), InfoData::Blocks(entries)) => {
                for (g, b) in entries {
                    if sign > 0.0 {
                        blocks[*g].add_matrix(b);
                    } else {
                        blocks[*g].sub_matrix(b);
                    }
                }
            }
            _ => {
                return Err(Error::InvalidInput(format!(
                    "cannot combine {} hessian with {} information",
                    self.kind(),
                    info.kind()
                )))
            }
        }
        Ok(())
    }

    /// Regularized block `b + λI` of unit `u` (block storage only).
    fn regularized_block(&self, u: usize, extra: Option<&SymMatrix>) -> SymMatrix {
        let Storage::Blocks(blocks) = &self.storage else {
            unreachable!("block access on diagonal storage")
        };
        let mut m = blocks[u].clone();
        if let Some(e) = extra {
            m.add_matrix(e);
        }
        m.add_diagonal(self.lambda_prior);
        m
    }
}

/// `H + JᵀJ` for one view, as a new value.
pub fn accumulate_hessian(h: &HessianApprox, vj: &ViewJacobian) -> Result<HessianApprox> {
    let mut out = h.clone();
    out.accumulate(vj)?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
enum InfoData {
    /// `(flat index, Σ rows entry²)`, ascending, touched indices only.
    Diagonal(Vec<(usize, f64)>),
    /// `(gaussian, within-Gaussian JᵀJ block)`, ascending.
    Blocks(Vec<(usize, SymMatrix)>),
}

/// One view's `JᵀJ` in approximated (diagonal or block) form, restricted to
/// the parameters it touches.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewInformation {
    pub view_id: String,
    layout: ParamLayout,
    data: InfoData,
}

impl ViewInformation {
    pub fn from_jacobian(vj: &ViewJacobian, kind: Approximation) -> Self {
        let layout = vj.layout;
        let data = match kind {
            Approximation::SimpleDiagonal => {
                let mut dense = vec![0.0; layout.len()];
                let mut touched = vec![false; layout.len()];
                for row in &vj.rows {
                    for &(k, v) in &row.entries {
                        dense[k] += v * v;
                        touched[k] = true;
                    }
                }
                InfoData::Diagonal(
                    dense
                        .into_iter()
                        .enumerate()
                        .filter(|&(k, _)| touched[k])
                        .collect(),
                )
            }
            Approximation::BlockDiagonal => {
                let p = layout.per_gaussian;
                let mut blocks: BTreeMap<usize, SymMatrix> = BTreeMap::new();
                let mut idx = Vec::with_capacity(p);
                let mut vals = Vec::with_capacity(p);
                for row in &vj.rows {
                    let mut start = 0;
                    while start < row.entries.len() {
                        let g = row.entries[start].0 / p;
                        let mut end = start;
                        idx.clear();
                        vals.clear();
                        while end < row.entries.len() && row.entries[end].0 / p == g {
                            idx.push(row.entries[end].0 % p);
                            vals.push(row.entries[end].1);
                            end += 1;
                        }
                        blocks.entry(g).or_insert_with(|| SymMatrix::zeros(p)).add_outer(&idx, &vals);
                        start = end;
                    }
                }
                InfoData::Blocks(blocks.into_iter().collect())
            }
        };
        ViewInformation {
            view_id: vj.view_id.clone(),
            layout,
            data,
        }
    }

    pub fn kind(&self) -> Approximation {
        match self.data {
            InfoData::Diagonal(_) => Approximation::SimpleDiagonal,
            InfoData::Blocks(_) => Approximation::BlockDiagonal,
        }
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn is_empty(&self) -> bool {
        match &self.data {
            InfoData::Diagonal(d) => d.is_empty(),
            InfoData::Blocks(b) => b.is_empty(),
        }
    }

    /// Multiplies the information by `s` (rows scaled by `√s`).
    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        match &mut out.data {
            InfoData::Diagonal(d) => d.iter_mut().for_each(|e| e.1 *= s),
            InfoData::Blocks(b) => {
                for (_, m) in b.iter_mut() {
                    let n = m.dim();
                    for i in 0..n {
                        for j in i..n {
                            let v = m.get(i, j);
                            m.set(i, j, v * s);
                        }
                    }
                }
            }
        }
        out
    }

    fn touched_units(&self) -> Vec<usize> {
        match &self.data {
            InfoData::Diagonal(d) => d.iter().map(|e| e.0).collect(),
            InfoData::Blocks(b) => b.iter().map(|e| e.0).collect(),
        }
    }
}

/// Per-unit statistic of the regularized matrix consumed by a functional.
fn unit_stat(f: UncertaintyFunctional, m: &SymMatrix) -> Result<f64> {
    Ok(match f {
        UncertaintyFunctional::T => Cholesky::new(m)?.inverse().trace(),
        UncertaintyFunctional::A => m.trace(),
        UncertaintyFunctional::D => Cholesky::new(m)?.logdet(),
        UncertaintyFunctional::E(EVariant::Max) => {
            let ev = eigvals_sym(m)?;
            if ev[0] <= 0.0 {
                return Err(Error::NotSpd { index: 0, pivot: ev[0] });
            }
            ev[0]
        }
        UncertaintyFunctional::E(EVariant::Min) => *eigvals_sym(m)?.last().expect("non-empty block"),
        UncertaintyFunctional::FisherRf => unreachable!("FisherRF has no state functional"),
    })
}

fn scalar_stat(f: UncertaintyFunctional, h: f64) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::NotSpd { index: 0, pivot: h });
    }
    Ok(match f {
        UncertaintyFunctional::T => 1.0 / h,
        UncertaintyFunctional::A | UncertaintyFunctional::E(_) => h,
        UncertaintyFunctional::D => h.ln(),
        UncertaintyFunctional::FisherRf => unreachable!("FisherRF has no state functional"),
    })
}

/// Folds per-unit statistics into the functional value.
fn aggregate(f: UncertaintyFunctional, l: usize, stats: impl Iterator<Item = f64>) -> f64 {
    let l = l as f64;
    match f {
        UncertaintyFunctional::T => stats.sum::<f64>() / l,
        UncertaintyFunctional::A => l / stats.sum::<f64>(),
        UncertaintyFunctional::D => (-stats.sum::<f64>() / l).exp(),
        UncertaintyFunctional::E(EVariant::Max) => 1.0 / stats.fold(f64::INFINITY, f64::min),
        UncertaintyFunctional::E(EVariant::Min) => 1.0 / stats.fold(f64::NEG_INFINITY, f64::max),
        UncertaintyFunctional::FisherRf => unreachable!("FisherRF has no state functional"),
    }
}

fn state_functional(f: UncertaintyFunctional) -> Result<()> {
    if f == UncertaintyFunctional::FisherRf {
        return Err(Error::InvalidInput(
            "FisherRF scores candidates; it has no uncertainty value for a state".into(),
        ));
    }
    Ok(())
}

/// Uncertainty of the regularized information matrix under `f`.
pub fn uncertainty(h: &HessianApprox, f: UncertaintyFunctional) -> Result<f64> {
    state_functional(f)?;
    let stats = (0..h.units()).map(|u| stat_of(h, f, u, None)).collect::<Result<Vec<_>>>()?;
    Ok(aggregate(f, h.param_count(), stats.into_iter()))
}

/// Functional value of a single regularized information matrix `H̃`.
pub fn functional_value(f: UncertaintyFunctional, h_tilde: &SymMatrix) -> Result<f64> {
    state_functional(f)?;
    Ok(aggregate(f, h_tilde.dim(), std::iter::once(unit_stat(f, h_tilde)?)))
}

fn stat_of(h: &HessianApprox, f: UncertaintyFunctional, u: usize, extra: Option<&SymMatrix>) -> Result<f64> {
    match &h.storage {
        Storage::Diagonal(d) => scalar_stat(f, d[u] + h.lambda_prior),
        Storage::Blocks(_) => unit_stat(f, &h.regularized_block(u, extra)),
    }
}

/// Cached per-unit quantities of a fixed prior, so that many candidates can
/// be scored while only recomputing the units each candidate touches.
struct ScoreCache {
    f: UncertaintyFunctional,
    /// Per-unit statistic (state functionals).
    stats: Vec<f64>,
    /// Per-block `(B + λI)⁻¹` (FisherRF, block storage).
    inverses: Vec<SymMatrix>,
}

impl ScoreCache {
    fn new(h: &HessianApprox, f: UncertaintyFunctional) -> Result<Self> {
        let mut cache = ScoreCache {
            f,
            stats: Vec::new(),
            inverses: Vec::new(),
        };
        let all: Vec<usize> = (0..h.units()).collect();
        if f == UncertaintyFunctional::FisherRf {
            if let Storage::Blocks(_) = h.storage {
                cache.inverses = vec![SymMatrix::zeros(0); h.units()];
            }
        } else {
            cache.stats = vec![0.0; h.units()];
        }
        cache.refresh(h, &all)?;
        Ok(cache)
    }

    fn refresh(&mut self, h: &HessianApprox, units: &[usize]) -> Result<()> {
        if self.f == UncertaintyFunctional::FisherRf {
            if let Storage::Blocks(_) = h.storage {
                let inv = units
                    .par_iter()
                    .map(|&u| Ok(Cholesky::new(&h.regularized_block(u, None))?.inverse()))
                    .collect::<Result<Vec<_>>>()?;
                for (&u, m) in units.iter().zip(inv) {
                    self.inverses[u] = m;
                }
            }
            return Ok(());
        }
        let vals = units
            .par_iter()
            .map(|&u| stat_of(h, self.f, u, None))
            .collect::<Result<Vec<_>>>()?;
        for (&u, v) in units.iter().zip(vals) {
            self.stats[u] = v;
        }
        Ok(())
    }

    fn score(&self, h: &HessianApprox, info: &ViewInformation) -> Result<f64> {
        h.check_layout(&info.layout)?;
        if info.kind() != h.kind() {
            return Err(Error::InvalidInput("approximation kind mismatch".into()));
        }
        if self.f == UncertaintyFunctional::FisherRf {
            return Ok(match (&h.storage, &info.data) {
                (Storage::Diagonal(d), InfoData::Diagonal(entries)) => {
                    entries.iter().map(|&(k, v)| v / (d[k] + h.lambda_prior)).sum()
                }
                (Storage::Blocks(_), InfoData::Blocks(entries)) => {
                    entries.iter().map(|(g, b)| b.trace_product(&self.inverses[*g])).sum()
                }
                _ => unreachable!("kinds checked above"),
            });
        }
        let overrides: Vec<(usize, f64)> = match (&h.storage, &info.data) {
            (Storage::Diagonal(d), InfoData::Diagonal(entries)) => entries
                .iter()
                .map(|&(k, v)| Ok((k, scalar_stat(self.f, (d[k] + v) + h.lambda_prior)?)))
                .collect::<Result<_>>()?,
            (Storage::Blocks(_), InfoData::Blocks(entries)) => entries
                .iter()
                .map(|(g, b)| Ok((*g, unit_stat(self.f, &h.regularized_block(*g, Some(b)))?)))
                .collect::<Result<_>>()?,
            _ => unreachable!("kinds checked above"),
        };
        let mut next = overrides.iter().peekable();
        let stats = self.stats.iter().enumerate().map(|(u, &s)| match next.peek() {
            Some(&&(ou, v)) if ou == u => {
                next.next();
                v
            }
            _ => s,
        });
        Ok(aggregate(self.f, h.param_count(), stats))
    }
}

/// Candidate score: the uncertainty after adding the view (T/A/D/E, lower is
/// better) or the FisherRF information gain (higher is better).
pub fn score_candidate(h_prior: &HessianApprox, vj: &ViewJacobian, f: UncertaintyFunctional) -> Result<f64> {
    h_prior.check_layout(&vj.layout)?;
    let info = ViewInformation::from_jacobian(vj, h_prior.kind());
    ScoreCache::new(h_prior, f)?.score(h_prior, &info)
}

/// Scores every candidate against `h` (pure; evaluated in parallel).
pub fn score_all(
    h: &HessianApprox,
    candidates: &BTreeMap<String, ViewInformation>,
    f: UncertaintyFunctional,
) -> Result<BTreeMap<String, f64>> {
    let cache = ScoreCache::new(h, f)?;
    score_with(&cache, h, candidates)
}

fn score_with(
    cache: &ScoreCache,
    h: &HessianApprox,
    candidates: &BTreeMap<String, ViewInformation>,
) -> Result<BTreeMap<String, f64>> {
    let items: Vec<(&String, &ViewInformation)> = candidates.iter().collect();
    let scores = items
        .par_iter()
        .map(|(id, info)| Ok(((*id).clone(), cache.score(h, info)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(scores.into_iter().collect())
}

/// Best id under `f`; ties go to the lexicographically smallest id and NaN
/// scores never win.
pub fn best_of(scores: &BTreeMap<String, f64>, f: UncertaintyFunctional) -> Option<String> {
    let mut best: Option<(&String, f64)> = None;
    for (id, &s) in scores {
        if s.is_nan() {
            continue;
        }
        let better = match best {
            None => true,
            Some((_, b)) => {
                if f.maximizes() {
                    s > b
                } else {
                    s < b
                }
            }
        };
        if better {
            best = Some((id, s));
        }
    }
    best.map(|(id, _)| id.clone())
        .or_else(|| scores.keys().next().cloned())
}

/// Information for each candidate Jacobian under `kind`.
pub fn informations(
    candidates: &BTreeMap<String, ViewJacobian>,
    kind: Approximation,
) -> BTreeMap<String, ViewInformation> {
    let items: Vec<(&String, &ViewJacobian)> = candidates.iter().collect();
    items
        .par_iter()
        .map(|(id, vj)| ((*id).clone(), ViewInformation::from_jacobian(vj, kind)))
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}

/// The candidate that most reduces uncertainty (or, for FisherRF, carries the
/// most information).
pub fn select_next_view(
    h_prior: &HessianApprox,
    candidates: &BTreeMap<String, ViewJacobian>,
    f: UncertaintyFunctional,
) -> Result<String> {
    if candidates.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    for vj in candidates.values() {
        h_prior.check_layout(&vj.layout)?;
    }
    let infos = informations(candidates, h_prior.kind());
    let scores = score_all(h_prior, &infos, f)?;
    Ok(best_of(&scores, f).expect("non-empty candidates"))
}

/// One greedy round: the pick and every remaining candidate's score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRound {
    pub picked: String,
    pub scores: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub functional: String,
    pub approximation: String,
    pub chosen: Vec<String>,
    pub rounds: Vec<SelectionRound>,
}

impl SelectionReport {
    pub fn new(f: UncertaintyFunctional, kind: Approximation) -> Self {
        SelectionReport {
            functional: f.name().to_string(),
            approximation: approximation_label(f, kind).to_string(),
            chosen: Vec::new(),
            rounds: Vec::new(),
        }
    }

    /// Winning score of each round.
    pub fn winning_scores(&self) -> Vec<f64> {
        self.rounds.iter().map(|r| r.scores[&r.picked]).collect()
    }
}

/// FisherRF with blocks is an extension beyond its original diagonal form and
/// is labelled as such.
fn approximation_label(f: UncertaintyFunctional, kind: Approximation) -> &'static str {
    match (f, kind) {
        (UncertaintyFunctional::FisherRf, Approximation::BlockDiagonal) => "block-extension",
        (_, k) => k.name(),
    }
}

/// Greedy batch selection over precomputed candidate information.
pub fn select_batch_info(
    h_prior: &HessianApprox,
    mut candidates: BTreeMap<String, ViewInformation>,
    f: UncertaintyFunctional,
    k: usize,
) -> Result<(SelectionReport, HessianApprox)> {
    if k > candidates.len() {
        return Err(Error::TooManyRequested {
            requested: k,
            available: candidates.len(),
        });
    }
    let mut h = h_prior.clone();
    let mut report = SelectionReport::new(f, h.kind());
    if k == 0 {
        return Ok((report, h));
    }
    let mut cache = ScoreCache::new(&h, f)?;
    for round in 0..k {
        let scores = score_with(&cache, &h, &candidates)?;
        let picked = best_of(&scores, f).ok_or(Error::EmptyCandidates)?;
        let info = candidates.remove(&picked).expect("picked from candidates");
        h.add_information(&info)?;
        if round + 1 < k {
            cache.refresh(&h, &info.touched_units())?;
        }
        report.chosen.push(picked.clone());
        report.rounds.push(SelectionRound { picked, scores });
    }
    Ok((report, h))
}

/// `k` rounds of greedy selection; after every pick the winner's information
/// is added and the winner leaves the pool.
pub fn select_batch(
    h_prior: &HessianApprox,
    candidates: &BTreeMap<String, ViewJacobian>,
    f: UncertaintyFunctional,
    k: usize,
) -> Result<SelectionReport> {
    if k > candidates.len() {
        return Err(Error::TooManyRequested {
            requested: k,
            available: candidates.len(),
        });
    }
    for vj in candidates.values() {
        h_prior.check_layout(&vj.layout)?;
    }
    let infos = informations(candidates, h_prior.kind());
    select_batch_info(h_prior, infos, f, k).map(|(r, _)| r)
}

/// Greedy removal: starting from every candidate, repeatedly drops the view
/// whose removal hurts least until `keep` remain. Each round's `picked` is the
/// removed view and its scores are the per-view removal scores; `chosen`
/// lists the survivors in id order.
pub fn prune_batch_info(
    h_prior: &HessianApprox,
    mut candidates: BTreeMap<String, ViewInformation>,
    f: UncertaintyFunctional,
    keep: usize,
) -> Result<SelectionReport> {
    if keep > candidates.len() {
        return Err(Error::TooManyRequested {
            requested: keep,
            available: candidates.len(),
        });
    }
    let mut h = h_prior.clone();
    for info in candidates.values() {
        h.add_information(info)?;
    }
    let mut report = SelectionReport::new(f, h.kind());
    while candidates.len() > keep {
        let items: Vec<(&String, &ViewInformation)> = candidates.iter().collect();
        let scores: BTreeMap<String, f64> = items
            .par_iter()
            .map(|(id, info)| {
                let mut without = h.clone();
                without.subtract_information(info)?;
                let s = if f == UncertaintyFunctional::FisherRf {
                    ScoreCache::new(&without, f)?.score(&without, info)?
                } else {
                    uncertainty(&without, f)?
                };
                Ok(((*id).clone(), s))
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .collect();
        // Remove the least useful view: lowest information gain for FisherRF,
        // lowest remaining uncertainty otherwise.
        let removed = best_of(&scores, UncertaintyFunctional::T).ok_or(Error::EmptyCandidates)?;
        let info = candidates.remove(&removed).expect("removed from candidates");
        h.subtract_information(&info)?;
        report.rounds.push(SelectionRound { picked: removed, scores });
    }
    report.chosen = candidates.keys().cloned().collect();
    Ok(report)
}

pub fn prune_batch(
    h_prior: &HessianApprox,
    candidates: &BTreeMap<String, ViewJacobian>,
    f: UncertaintyFunctional,
    keep: usize,
) -> Result<SelectionReport> {
    for vj in candidates.values() {
        h_prior.check_layout(&vj.layout)?;
    }
    prune_batch_info(h_prior, informations(candidates, h_prior.kind()), f, keep)
}

/// Information of one view at the current scene.
pub fn view_information(scene: &Scene, cam: &CameraView, mask: ParamMask, kind: Approximation) -> ViewInformation {
    ViewInformation::from_jacobian(&view_jacobian(scene, cam, mask), kind)
}

/// Information for many views, computed in parallel; each Jacobian is
/// dropped as soon as it has been reduced.
pub fn view_informations(
    scene: &Scene,
    views: &[&CameraView],
    mask: ParamMask,
    kind: Approximation,
) -> BTreeMap<String, ViewInformation> {
    views
        .par_iter()
        .map(|cam| (cam.id.clone(), view_information(scene, cam, mask, kind)))
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}

/// Keyframe selection against a fixed, pre-trained scene: start from the
/// prior-only information and greedily pick `k` views without replacement.
pub fn select_keyframes(
    scene: &Scene,
    views: &[CameraView],
    f: UncertaintyFunctional,
    kind: Approximation,
    mask: ParamMask,
    lambda_prior: f64,
    k: usize,
) -> Result<SelectionReport> {
    let ids: BTreeSet<&str> = views.iter().map(|v| v.id.as_str()).collect();
    if ids.len() != views.len() {
        return Err(Error::InvalidInput("duplicate view ids in keyframe pool".into()));
    }
    if k > views.len() {
        return Err(Error::TooManyRequested {
            requested: k,
            available: views.len(),
        });
    }
    let h = HessianApprox::for_scene(kind, scene, mask, lambda_prior)?;
    let refs: Vec<&CameraView> = views.iter().collect();
    let infos = view_informations(scene, &refs, mask, kind);
    select_batch_info(&h, infos, f, k).map(|(r, _)| r)
}
