use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envgen::{UrlKind, UrlUniverse};
use crate::error::{CoreError, Result};
use crate::persona::{build_persona, McModel, PersonaSpec};
use crate::rng::derive_seed;
use crate::selector::Obfuscator;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptivenessConfig {
    /// Indices into the model's user types.
    pub types: Vec<usize>,
    pub personas_per_type: usize,
    pub persona: PersonaSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptivenessMatrix {
    pub approach: String,
    pub types: Vec<usize>,
    pub matrix: Vec<Vec<f64>>,
    pub mean_off_diagonal: f64,
}

/// Euclidean distance between two probability vectors scaled by `1/√2`,
/// so disjoint one-hot vectors sit at exactly 1.
pub fn distribution_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(CoreError::InvalidInput(format!("distributions of length {} and {}", p.len(), q.len())));
    }
    let sq: f64 = p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((sq.sqrt() / std::f64::consts::SQRT_2).min(1.0))
}

/// Pairwise distance matrix and its mean off-diagonal entry.
pub fn distance_matrix(distributions: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, f64)> {
    let k = distributions.len();
    if k < 2 {
        return Err(CoreError::InvalidInput("adaptiveness needs at least two persona types".into()));
    }
    let mut m = vec![vec![0.0; k]; k];
    let mut total = 0.0;
    for i in 0..k {
        for j in i + 1..k {
            let d = distribution_distance(&distributions[i], &distributions[j])?;
            m[i][j] = d;
            m[j][i] = d;
            total += 2.0 * d;
        }
    }
    Ok((m, total / (k * (k - 1)) as f64))
}

/// Normalized histogram of obfuscation subcategories per persona type.
pub fn selection_distributions(
    selector: &dyn Obfuscator,
    universe: &UrlUniverse,
    model: &McModel,
    config: &AdaptivenessConfig,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if !selector.selects_intents() {
        return Err(CoreError::InvalidInput(format!("`{}` does not select intent subcategories", selector.name())));
    }
    let spec = PersonaSpec { alpha: selector.forced_alpha().unwrap_or(config.persona.alpha), ..config.persona };
    let subcategories = universe.subcategory_count();
    config
        .types
        .par_iter()
        .map(|&ty| {
            let mut counts = vec![0.0; subcategories];
            for p in 0..config.personas_per_type {
                let pseed = derive_seed(seed, "adapt", ((ty as u64) << 32) | p as u64);
                let mut session = selector.session();
                let persona = build_persona(model, universe, &spec, ty, session.as_mut(), pseed)?;
                for url in persona.obfuscation_ids() {
                    if let UrlKind::Intent { subcategory } = universe.kind(url) {
                        counts[usize::from(subcategory)] += 1.0;
                    }
                }
            }
            let total: f64 = counts.iter().sum();
            if total == 0.0 {
                return Err(CoreError::InvalidInput(format!("no obfuscation selections for user type {ty}")));
            }
            Ok(counts.into_iter().map(|c| c / total).collect())
        })
        .collect()
}

pub fn adaptiveness(
    selector: &dyn Obfuscator,
    universe: &UrlUniverse,
    model: &McModel,
    config: &AdaptivenessConfig,
    seed: u64,
) -> Result<AdaptivenessMatrix> {
    if config.types.len() < 2 {
        return Err(CoreError::InvalidInput("adaptiveness needs at least two persona types".into()));
    }
    let dists = selection_distributions(selector, universe, model, config, seed)?;
    let (matrix, mean_off_diagonal) = distance_matrix(&dists)?;
    Ok(AdaptivenessMatrix { approach: selector.name().to_string(), types: config.types.clone(), matrix, mean_off_diagonal })
}
