//! Sparsification analysis: how well an information ranking of candidate
//! views predicts their actual reconstruction error.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use splat_oed_core::dataset::{Dataset, Split};
use splat_oed_core::info::score_all;
use splat_oed_core::info::view_informations;
use splat_oed_core::metrics::psnr;
use splat_oed_core::render::render;
use splat_oed_core::Scene;

use crate::error::{HarnessError, Result};
use crate::experiment::{training_hessian, ExperimentOptions};
use crate::schedule::Method;

pub const MIN_CANDIDATES: usize = 20;
pub const ORACLE: &str = "oracle";
pub const RANDOM: &str = "random";

/// Cumulative mean PSNR of one ordering at one decile (1..=10).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub method: String,
    pub decile: usize,
    pub cum_psnr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsificationResult {
    /// Candidate PSNR at the trained scene.
    pub psnr: BTreeMap<String, f64>,
    /// Most-informative-first ordering per method (plus oracle and random).
    pub orderings: BTreeMap<String, Vec<String>>,
    /// Spearman rank correlation of each method's ranking with the oracle's.
    pub spearman: BTreeMap<String, f64>,
    pub curve: Vec<CurvePoint>,
}

/// Average ranks (1-based) with ties sharing their mean rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation (Pearson correlation of average ranks).
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    if va == 0.0 || vb == 0.0 {
        0.0
    } else {
        cov / (va * vb).sqrt()
    }
}

/// Cumulative mean at each decile of `values` taken in order.
pub fn decile_curve(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    (1..=10)
        .map(|d| {
            let m = (d * n).div_ceil(10).max(1);
            values[..m].iter().sum::<f64>() / m as f64
        })
        .collect()
}

fn ordering_by_key(ids: &[String], key: &[f64]) -> Vec<String> {
    let mut idx: Vec<usize> = (0..ids.len()).collect();
    idx.sort_by(|&a, &b| key[a].total_cmp(&key[b]).then(ids[a].cmp(&ids[b])));
    idx.into_iter().map(|i| ids[i].clone()).collect()
}

/// Ranks the candidate views (train split minus `train_views`) with every
/// method against the information of `train_views` at `trained`, and compares
/// each ranking with the oracle that sorts by actual PSNR, worst first.
pub fn run_sparsification(
    ds: &Dataset,
    trained: &Scene,
    train_views: &[String],
    methods: &[Method],
    seed: u64,
    opts: &ExperimentOptions,
) -> Result<SparsificationResult> {
    let ids: Vec<String> = ds
        .ids(Split::Train)
        .into_iter()
        .filter(|id| !train_views.contains(id))
        .collect();
    if ids.len() < MIN_CANDIDATES {
        return Err(HarnessError::InsufficientViews {
            what: "sparsification candidate",
            needed: MIN_CANDIDATES,
            available: ids.len(),
        });
    }
    let psnrs = ids
        .par_iter()
        .map(|id| Ok(psnr(&render(trained, ds.camera(id)?), ds.image(id)?)?))
        .collect::<Result<Vec<f64>>>()?;

    let mut keys: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    keys.insert(ORACLE.into(), psnrs.clone());
    let mut random: Vec<usize> = (0..ids.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random.shuffle(&mut rng);
    let mut random_key = vec![0.0; ids.len()];
    for (pos, &i) in random.iter().enumerate() {
        random_key[i] = pos as f64;
    }
    keys.insert(RANDOM.into(), random_key);

    let cams = ids.iter().map(|id| ds.camera(id)).collect::<splat_oed_core::Result<Vec<_>>>()?;
    for m in methods {
        let Method::Oed {
            functional,
            approximation,
        } = *m
        else {
            continue;
        };
        let h = training_hessian(ds, trained, train_views, approximation, opts.mask, opts.lambda_prior)?;
        let infos = view_informations(trained, &cams, opts.mask, approximation);
        let scores = score_all(&h, &infos, functional)?;
        let sign = if functional.maximizes() { -1.0 } else { 1.0 };
        keys.insert(m.to_string(), ids.iter().map(|id| sign * scores[id]).collect());
    }

    let mut result = SparsificationResult {
        psnr: ids.iter().cloned().zip(psnrs.iter().copied()).collect(),
        orderings: BTreeMap::new(),
        spearman: BTreeMap::new(),
        curve: Vec::new(),
    };
    let mut ascending = psnrs.clone();
    ascending.sort_by(f64::total_cmp);
    let overall = ascending.iter().sum::<f64>() / ascending.len() as f64;
    for (name, key) in &keys {
        let order = ordering_by_key(&ids, key);
        let ordered_psnr: Vec<f64> = order.iter().map(|id| result.psnr[id]).collect();
        let mut curve = decile_curve(&ordered_psnr);
        // The full-set mean is summed in one canonical (ascending) order.
        curve[9] = overall;
        for (d, v) in curve.into_iter().enumerate() {
            result.curve.push(CurvePoint {
                method: name.clone(),
                decile: d + 1,
                cum_psnr: v,
            });
        }
        result.spearman.insert(name.clone(), spearman(key, &psnrs));
        result.orderings.insert(name.clone(), order);
    }
    Ok(result)
}
