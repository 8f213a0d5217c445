use std::path::Path;

use obfusim_nn::Tensor;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::rng::{stream, SimRng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UrlId(pub u32);

impl UrlId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "pool", rename_all = "kebab-case")]
pub enum UrlKind {
    User { category: u16 },
    Intent { subcategory: u16 },
    Ad,
    Trackthis,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UniverseConfig {
    pub dim: usize,
    pub user_categories: usize,
    pub urls_per_category: usize,
    pub intent_subcategories: usize,
    pub urls_per_subcategory: usize,
    pub ad_urls: usize,
    pub ad_clusters: usize,
    pub trackthis_urls: usize,
    pub trackthis_sets: usize,
    /// Norm of the isotropic noise added to a prototype before normalizing.
    pub noise_scale: f64,
    /// Weight of the parent user-category prototype in each intent prototype.
    pub intent_parent_weight: f64,
}

impl Default for UniverseConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl UniverseConfig {
    pub fn desk() -> Self {
        Self { dim: 32, ..Self::paper() }
    }

    pub fn paper() -> Self {
        Self {
            dim: 300,
            user_categories: 16,
            urls_per_category: 100,
            intent_subcategories: 193,
            urls_per_subcategory: 10,
            ad_urls: 2000,
            ad_clusters: 20,
            trackthis_urls: 400,
            trackthis_sets: 4,
            noise_scale: 0.3,
            intent_parent_weight: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(CoreError::Config(format!("embedding dimension must be at least 2, got {}", self.dim)));
        }
        let counts = [
            ("user_categories", self.user_categories),
            ("urls_per_category", self.urls_per_category),
            ("intent_subcategories", self.intent_subcategories),
            ("urls_per_subcategory", self.urls_per_subcategory),
            ("ad_urls", self.ad_urls),
            ("ad_clusters", self.ad_clusters),
            ("trackthis_urls", self.trackthis_urls),
            ("trackthis_sets", self.trackthis_sets),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(CoreError::Config(format!("{name} must be at least 1")));
        }
        if self.user_categories > usize::from(u16::MAX) || self.intent_subcategories > usize::from(u16::MAX) {
            return Err(CoreError::Config("category counts must fit in 16 bits".into()));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(CoreError::Config("noise_scale must be finite and nonnegative".into()));
        }
        if !(0.0..=1.0).contains(&self.intent_parent_weight) {
            return Err(CoreError::Config("intent_parent_weight must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

pub(crate) fn normalize(v: &mut [f64]) {
    let n = obfusim_nn::l2_norm(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

pub(crate) fn random_unit<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    normalize(&mut v);
    v
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = obfusim_nn::l2_norm(a);
    let nb = obfusim_nn::l2_norm(b);
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        obfusim_nn::dot(a, b) / (na * nb)
    }
}

/// Draws unit-norm page embeddings around per-group prototypes.
#[derive(Clone, Debug)]
pub struct SyntheticEmbedder {
    pub noise_scale: f64,
}

impl SyntheticEmbedder {
    pub fn embed<R: Rng + ?Sized>(&self, prototype: &[f64], rng: &mut R) -> Vec<f64> {
        let per_coord = self.noise_scale / (prototype.len() as f64).sqrt();
        let mut v: Vec<f64> = prototype
            .iter()
            .map(|p| p + per_coord * rng.sample::<f64, _>(StandardNormal))
            .collect();
        normalize(&mut v);
        v
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UrlUniverse {
    config: UniverseConfig,
    seed: u64,
    kinds: Vec<UrlKind>,
    embeddings: Vec<f64>,
    user_prototypes: Vec<Vec<f64>>,
    intent_prototypes: Vec<Vec<f64>>,
    intent_parents: Vec<u16>,
    #[serde(skip)]
    index: PoolIndex,
}

#[derive(Clone, Debug, Default, PartialEq)]
struct PoolIndex {
    user: Vec<Vec<UrlId>>,
    intent: Vec<Vec<UrlId>>,
    ad: Vec<UrlId>,
    trackthis: Vec<UrlId>,
}

impl PoolIndex {
    fn build(config: &UniverseConfig, kinds: &[UrlKind]) -> Result<Self> {
        let mut index = PoolIndex {
            user: vec![Vec::new(); config.user_categories],
            intent: vec![Vec::new(); config.intent_subcategories],
            ..Default::default()
        };
        for (i, kind) in kinds.iter().enumerate() {
            let id = UrlId(i as u32);
            match *kind {
                UrlKind::User { category } => index
                    .user
                    .get_mut(usize::from(category))
                    .ok_or_else(|| CoreError::InvalidInput(format!("url {i}: category {category} out of range")))?
                    .push(id),
                UrlKind::Intent { subcategory } => index
                    .intent
                    .get_mut(usize::from(subcategory))
                    .ok_or_else(|| CoreError::InvalidInput(format!("url {i}: subcategory {subcategory} out of range")))?
                    .push(id),
                UrlKind::Ad => index.ad.push(id),
                UrlKind::Trackthis => index.trackthis.push(id),
            }
        }
        if index.user.iter().chain(index.intent.iter()).any(Vec::is_empty) || index.ad.is_empty() || index.trackthis.is_empty() {
            return Err(CoreError::InvalidInput("every pool and category needs at least one url".into()));
        }
        Ok(index)
    }
}

impl UrlUniverse {
    pub fn build(config: &UniverseConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let d = config.dim;
        let mut proto_rng = stream(seed, "universe/prototypes", 0);
        let user_prototypes: Vec<Vec<f64>> = (0..config.user_categories).map(|_| random_unit(d, &mut proto_rng)).collect();
        let rho = config.intent_parent_weight;
        let mut intent_parents = Vec::with_capacity(config.intent_subcategories);
        let intent_prototypes: Vec<Vec<f64>> = (0..config.intent_subcategories)
            .map(|j| {
                let parent = j % config.user_categories;
                intent_parents.push(parent as u16);
                let own = random_unit(d, &mut proto_rng);
                let mut v: Vec<f64> = own
                    .iter()
                    .zip(&user_prototypes[parent])
                    .map(|(o, p)| rho * p + (1.0 - rho * rho).sqrt() * o)
                    .collect();
                normalize(&mut v);
                v
            })
            .collect();
        let ad_protos: Vec<Vec<f64>> = (0..config.ad_clusters).map(|_| random_unit(d, &mut proto_rng)).collect();
        let tt_protos: Vec<Vec<f64>> = (0..config.trackthis_sets).map(|_| random_unit(d, &mut proto_rng)).collect();

        let embedder = SyntheticEmbedder { noise_scale: config.noise_scale };
        let mut rng = stream(seed, "universe/embeddings", 0);
        let mut kinds = Vec::new();
        let mut embeddings = Vec::new();
        let mut push = |kind: UrlKind, proto: &[f64], rng: &mut SimRng| {
            kinds.push(kind);
            embeddings.extend(embedder.embed(proto, rng));
        };
        for (c, proto) in user_prototypes.iter().enumerate() {
            for _ in 0..config.urls_per_category {
                push(UrlKind::User { category: c as u16 }, proto, &mut rng);
            }
        }
        for (j, proto) in intent_prototypes.iter().enumerate() {
            for _ in 0..config.urls_per_subcategory {
                push(UrlKind::Intent { subcategory: j as u16 }, proto, &mut rng);
            }
        }
        for i in 0..config.ad_urls {
            push(UrlKind::Ad, &ad_protos[i % config.ad_clusters], &mut rng);
        }
        for i in 0..config.trackthis_urls {
            push(UrlKind::Trackthis, &tt_protos[i * config.trackthis_sets / config.trackthis_urls], &mut rng);
        }
        let index = PoolIndex::build(config, &kinds)?;
        Ok(Self { config: config.clone(), seed, kinds, embeddings, user_prototypes, intent_prototypes, intent_parents, index })
    }

    pub fn config(&self) -> &UniverseConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    pub fn kind(&self, id: UrlId) -> UrlKind {
        self.kinds[id.index()]
    }

    pub fn embedding(&self, id: UrlId) -> &[f64] {
        let d = self.config.dim;
        &self.embeddings[id.index() * d..(id.index() + 1) * d]
    }

    pub fn user_category_count(&self) -> usize {
        self.index.user.len()
    }

    pub fn subcategory_count(&self) -> usize {
        self.index.intent.len()
    }

    pub fn user_urls(&self, category: usize) -> &[UrlId] {
        &self.index.user[category]
    }

    pub fn intent_urls(&self, subcategory: usize) -> &[UrlId] {
        &self.index.intent[subcategory]
    }

    pub fn ad_pool(&self) -> &[UrlId] {
        &self.index.ad
    }

    pub fn trackthis_pool(&self) -> &[UrlId] {
        &self.index.trackthis
    }

    pub fn user_url_count(&self) -> usize {
        self.index.user.iter().map(Vec::len).sum()
    }

    pub fn intent_url_count(&self) -> usize {
        self.index.intent.iter().map(Vec::len).sum()
    }

    pub fn user_prototype(&self, category: usize) -> &[f64] {
        &self.user_prototypes[category]
    }

    pub fn intent_prototype(&self, subcategory: usize) -> &[f64] {
        &self.intent_prototypes[subcategory]
    }

    pub fn intent_parent(&self, subcategory: usize) -> usize {
        usize::from(self.intent_parents[subcategory])
    }

    /// The `w × d` matrix of the last `w` embeddings in `ids`, zero-padded at
    /// the oldest rows when fewer than `w` ids are given.
    pub fn window(&self, ids: &[UrlId], w: usize) -> Tensor {
        let d = self.config.dim;
        let mut data = vec![0.0; w * d];
        let take = ids.len().min(w);
        let pad = w - take;
        for (r, id) in ids[ids.len() - take..].iter().enumerate() {
            data[(pad + r) * d..(pad + r + 1) * d].copy_from_slice(self.embedding(*id));
        }
        Tensor::from_vec(&[w, d], data).expect("window shape is consistent by construction")
    }

    /// Replaces the embedding of every listed url, e.g. with text-derived vectors.
    pub fn set_embeddings(&mut self, replacements: &[(UrlId, Vec<f64>)]) -> Result<()> {
        let d = self.config.dim;
        for (id, v) in replacements {
            if id.index() >= self.kinds.len() {
                return Err(CoreError::InvalidInput(format!("url id {} out of range", id.0)));
            }
            if v.len() != d {
                return Err(CoreError::InvalidInput(format!("embedding for url {} has dim {}, expected {d}", id.0, v.len())));
            }
            self.embeddings[id.index() * d..(id.index() + 1) * d].copy_from_slice(v);
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut universe: UrlUniverse = serde_json::from_str(text)?;
        universe.config.validate()?;
        if universe.embeddings.len() != universe.kinds.len() * universe.config.dim {
            return Err(CoreError::InvalidInput("embedding table does not match url count".into()));
        }
        if universe.intent_parents.len() != universe.config.intent_subcategories
            || universe.intent_prototypes.len() != universe.config.intent_subcategories
            || universe.user_prototypes.len() != universe.config.user_categories
        {
            return Err(CoreError::InvalidInput("prototype tables do not match category counts".into()));
        }
        universe.index = PoolIndex::build(&universe.config, &universe.kinds)?;
        Ok(universe)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> UniverseConfig {
        UniverseConfig {
            dim: 8,
            user_categories: 2,
            urls_per_category: 3,
            intent_subcategories: 4,
            urls_per_subcategory: 2,
            ad_urls: 5,
            ad_clusters: 2,
            trackthis_urls: 4,
            trackthis_sets: 2,
            ..UniverseConfig::desk()
        }
    }

    #[test]
    fn desk_defaults_have_expected_pool_sizes() {
        let u = UrlUniverse::build(&UniverseConfig::desk(), 1).unwrap();
        assert_eq!(u.user_url_count(), 1600);
        assert_eq!(u.intent_url_count(), 1930);
        assert_eq!(u.ad_pool().len(), 2000);
        assert_eq!(u.trackthis_pool().len(), 400);
        assert_eq!(u.subcategory_count(), 193);
        assert_eq!(u.len(), 1600 + 1930 + 2400);
    }

    #[test]
    fn small_counts() {
        let u = UrlUniverse::build(&tiny(), 3).unwrap();
        assert_eq!(u.user_url_count(), 6);
        assert!(u.user_urls(1).iter().all(|id| u.kind(*id) == UrlKind::User { category: 1 }));
    }

    #[test]
    fn dimension_below_two_is_rejected() {
        let cfg = UniverseConfig { dim: 1, ..tiny() };
        assert!(matches!(UrlUniverse::build(&cfg, 0), Err(CoreError::Config(_))));
    }

    #[test]
    fn deterministic_and_unit_norm() {
        let a = UrlUniverse::build(&tiny(), 9).unwrap();
        let b = UrlUniverse::build(&tiny(), 9).unwrap();
        let c = UrlUniverse::build(&tiny(), 10).unwrap();
        assert_eq!(a.embeddings, b.embeddings);
        assert_ne!(a.embeddings, c.embeddings);
        for i in 0..a.len() {
            let n = obfusim_nn::l2_norm(a.embedding(UrlId(i as u32)));
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn window_pads_oldest_rows() {
        let u = UrlUniverse::build(&tiny(), 2).unwrap();
        let ids = [UrlId(0), UrlId(4)];
        let w = u.window(&ids, 4);
        assert_eq!(w.shape(), &[4, 8]);
        assert!(w.row(0).iter().chain(w.row(1)).all(|x| *x == 0.0));
        assert_eq!(w.row(2), u.embedding(UrlId(0)));
        assert_eq!(w.row(3), u.embedding(UrlId(4)));
        let long: Vec<UrlId> = (0..7).map(UrlId).collect();
        assert_eq!(u.window(&long, 3).row(0), u.embedding(UrlId(4)));
    }

    #[test]
    fn json_round_trip_is_exact() {
        let u = UrlUniverse::build(&tiny(), 5).unwrap();
        let back = UrlUniverse::from_json(&u.to_json().unwrap()).unwrap();
        assert_eq!(u, back);
    }
}
