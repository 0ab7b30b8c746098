//! The fixed environment shared by every stage: catalog, templates, embeddings,
//! lexicon and simulator constants.

use serde::{Deserialize, Serialize};

use crate::dialogue::{Catalog, TemplateSet};
use crate::embedding::{EmbeddingTable, DEFAULT_DIM};
use crate::error::{Error, Result};
use crate::signals::Lexicon;
use crate::user_sim::{SimConfig, NEGATIVE_REPLIES, OPENERS, POSITIVE_REPLIES};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub catalog_size: usize,
    pub embedding_dim: usize,
    /// Seeds the catalog and the hash embeddings; independent of the run seed.
    pub world_seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            catalog_size: 100,
            embedding_dim: DEFAULT_DIM,
            world_seed: 2024,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.catalog_size == 0 {
            return Err(Error::Config("world.catalog_size must be positive".into()));
        }
        if self.embedding_dim == 0 {
            return Err(Error::Config("world.embedding_dim must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct World {
    pub catalog: Catalog,
    pub templates: TemplateSet,
    pub table: EmbeddingTable,
    pub lexicon: Lexicon,
    pub sim: SimConfig,
    /// Words a simulated user may use to describe what they want.
    pub hint_vocab: Vec<String>,
}

impl World {
    pub fn build(cfg: &WorldConfig, sim: &SimConfig) -> Result<Self> {
        cfg.validate()?;
        let catalog = Catalog::synthetic(cfg.catalog_size, cfg.world_seed)?;
        Self::from_parts(catalog, TemplateSet::standard(), sim.clone(), cfg.embedding_dim, cfg.world_seed)
    }

    pub fn from_parts(
        catalog: Catalog,
        templates: TemplateSet,
        sim: SimConfig,
        dim: usize,
        seed: u64,
    ) -> Result<Self> {
        sim.validate()?;
        let lexicon = Lexicon::standard();
        let hint_vocab = catalog.title_vocabulary();
        let mut vocab: Vec<String> = hint_vocab.clone();
        vocab.extend(templates.vocabulary().map(str::to_string));
        vocab.extend(lexicon.words().map(str::to_string));
        for phrase in OPENERS.iter().chain(POSITIVE_REPLIES).chain(NEGATIVE_REPLIES) {
            vocab.extend(phrase.split_whitespace().map(str::to_string));
        }
        let table = EmbeddingTable::new(dim, seed)?
            .with_vocabulary(vocab.iter().map(String::as_str))
            .with_items(catalog.items().iter().map(|i| i.title_tokens.as_slice()))?;
        Ok(Self {
            catalog,
            templates,
            table,
            lexicon,
            sim,
            hint_vocab,
        })
    }

    pub fn dim(&self) -> usize {
        self.table.dim()
    }

    pub fn item_vector(&self, item_id: usize) -> Result<&[f64]> {
        let item = self.catalog.get(item_id)?;
        self.table.item_vector(item.embedding_id)
    }
}
