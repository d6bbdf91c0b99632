//! Oracle encoders standing in for the segmentation and region-context models.
//!
//! Every category owns one standard basis vector of the object space; every
//! category or tag target owns one basis vector of the context space.
//! Observations add isotropic Gaussian noise whose scale shrinks as
//! `noise / √area`, so larger views are more reliable.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbedKind {
    Category,
    Context,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    /// Sorted category names; index = object-space basis vector.
    pub categories: Vec<String>,
    /// Sorted category names and tag targets; index = context-space basis vector.
    pub context: Vec<String>,
    pub embedding_dim: usize,
    pub context_dim: usize,
}

impl Vocabulary {
    /// Names are sorted and deduplicated; basis index follows sorted order.
    pub fn new(mut categories: Vec<String>, mut context: Vec<String>, embedding_dim: usize, context_dim: usize) -> Result<Self> {
        categories.sort();
        categories.dedup();
        context.sort();
        context.dedup();
        if categories.len() > embedding_dim {
            return Err(Error::Spec(format!(
                "{} categories do not fit embedding_dim {embedding_dim}",
                categories.len()
            )));
        }
        if context.len() > context_dim {
            return Err(Error::Spec(format!(
                "{} context words do not fit context_dim {context_dim}",
                context.len()
            )));
        }
        Ok(Self {
            categories,
            context,
            embedding_dim,
            context_dim,
        })
    }

    pub fn category_index(&self, name: &str) -> Result<usize> {
        self.categories
            .binary_search_by(|c| c.as_str().cmp(name))
            .map_err(|_| Error::InvalidArgument(format!("unknown category {name:?}")))
    }

    pub fn context_index(&self, name: &str) -> Result<usize> {
        self.context
            .binary_search_by(|c| c.as_str().cmp(name))
            .map_err(|_| Error::InvalidArgument(format!("unknown context word {name:?}")))
    }

    pub fn category_vector(&self, name: &str) -> Result<Vec<f32>> {
        let mut v = vec![0.0; self.embedding_dim];
        v[self.category_index(name)?] = 1.0;
        Ok(v)
    }

    /// Normalized mean of the context basis vectors of `words`.
    pub fn context_vector<S: AsRef<str>>(&self, words: &[S]) -> Result<Vec<f32>> {
        if words.is_empty() {
            return Err(Error::InvalidArgument("empty context word set".into()));
        }
        let mut v = vec![0.0f64; self.context_dim];
        for w in words {
            v[self.context_index(w.as_ref())?] += 1.0;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        Ok(v.into_iter().map(|x| (x / norm) as f32).collect())
    }
}

/// Noisy oracle embedding. For `Category`, `names` holds one category; for
/// `Context`, the object's category followed by its tag targets.
pub fn oracle_embed<S: AsRef<str>>(
    vocab: &Vocabulary,
    kind: EmbedKind,
    names: &[S],
    noise: f64,
    area_proxy: f64,
    seed: u64,
) -> Result<Vec<f32>> {
    if !(noise >= 0.0) || !noise.is_finite() {
        return Err(Error::InvalidArgument(format!("noise must be non-negative, got {noise}")));
    }
    if !(area_proxy > 0.0) {
        return Err(Error::InvalidArgument(format!("area proxy must be positive, got {area_proxy}")));
    }
    let mut v = match kind {
        EmbedKind::Category => {
            let [name] = names else {
                return Err(Error::InvalidArgument("category embedding takes exactly one name".into()));
            };
            vocab.category_vector(name.as_ref())?
        }
        EmbedKind::Context => vocab.context_vector(names)?,
    };
    if noise > 0.0 {
        let sigma = noise / area_proxy.sqrt();
        let normal = Normal::new(0.0, sigma).expect("finite sigma");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for x in v.iter_mut() {
            *x += normal.sample(&mut rng) as f32;
        }
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::query::cosine;

    fn vocab() -> Vocabulary {
        Vocabulary::new(
            vec!["chair".into(), "table".into()],
            vec!["chair".into(), "door".into(), "table".into(), "window".into()],
            8,
            8,
        )
        .unwrap()
    }

    #[test]
    fn noiseless_embeddings_are_exact() {
        let v = vocab();
        let e = oracle_embed(&v, EmbedKind::Category, &["chair"], 0.0, 1.0, 0).unwrap();
        assert_eq!(cosine(&e, &v.category_vector("chair").unwrap()), Some(1.0));
        let t = oracle_embed(&v, EmbedKind::Category, &["table"], 0.0, 1.0, 0).unwrap();
        assert_eq!(cosine(&e, &t), Some(0.0));
        let c = oracle_embed(&v, EmbedKind::Context, &["chair", "window"], 0.0, 1.0, 0).unwrap();
        let h = std::f32::consts::FRAC_1_SQRT_2;
        assert_eq!(c, vec![h, 0.0, 0.0, h, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn unknown_names_fail() {
        let v = vocab();
        assert!(oracle_embed(&v, EmbedKind::Category, &["sofa"], 0.0, 1.0, 0).is_err());
        assert!(oracle_embed(&v, EmbedKind::Context, &["chair", "lamp"], 0.0, 1.0, 0).is_err());
        assert!(Vocabulary::new(vec!["a".into(), "b".into()], vec![], 1, 1).is_err());
    }

    #[test]
    fn larger_area_means_closer_to_truth() {
        let v = vocab();
        let truth = v.category_vector("chair").unwrap();
        let mean_cos = |area: f64| {
            (0..1000u64)
                .map(|s| {
                    let e = oracle_embed(&v, EmbedKind::Category, &["chair"], 0.5, area, s).unwrap();
                    cosine(&e, &truth).unwrap()
                })
                .sum::<f64>()
                / 1000.0
        };
        let (small, mid, large) = (mean_cos(0.5), mean_cos(2.0), mean_cos(8.0));
        assert!(small < mid && mid < large, "{small} {mid} {large}");
    }
}
