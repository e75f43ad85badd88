//! Categorical design options: base metals, supports, promoters and
//! preparation methods.

use std::path::Path;

use serde::{Deserialize, Serialize};

pub const DEFAULT_CATALOG: &str = include_str!("../../../catalog.toml");

#[derive(Debug, thiserror::Error)]
pub enum CatalogError {
    #[error("catalog parse error: {0}")]
    Parse(String),
    #[error("duplicate id `{id}` in {group}")]
    Duplicate { group: &'static str, id: String },
    #[error("cannot read catalog {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub id: String,
    pub label: String,
    pub name: String,
}

impl CatalogEntry {
    fn matches(&self, key: &str) -> bool {
        self.id.eq_ignore_ascii_case(key) || self.label == key || self.name.eq_ignore_ascii_case(key)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    BaseMetal,
    Support,
    Promoter,
    PrepMethod,
}

impl Group {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::BaseMetal => "base_metals",
            Self::Support => "supports",
            Self::Promoter => "promoters",
            Self::PrepMethod => "prep_methods",
        }
    }

    /// Prefix of this group's slots in a model feature schema.
    pub fn feature_prefix(self) -> &'static str {
        match self {
            Self::BaseMetal => "metal",
            Self::Support => "support",
            Self::Promoter => "promoter",
            Self::PrepMethod => "prep",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Catalog {
    pub base_metals: Vec<CatalogEntry>,
    pub supports: Vec<CatalogEntry>,
    pub promoters: Vec<CatalogEntry>,
    pub prep_methods: Vec<CatalogEntry>,
}

impl Catalog {
    pub fn parse(text: &str) -> Result<Self, CatalogError> {
        let cat: Catalog = toml::from_str(text).map_err(|e| CatalogError::Parse(e.to_string()))?;
        for group in [Group::BaseMetal, Group::Support, Group::Promoter, Group::PrepMethod] {
            let entries = cat.group(group);
            for (i, e) in entries.iter().enumerate() {
                if entries[..i].iter().any(|o| o.id == e.id) {
                    return Err(CatalogError::Duplicate { group: group.as_str(), id: e.id.clone() });
                }
            }
        }
        Ok(cat)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CatalogError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| CatalogError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text)
    }

    pub fn group(&self, group: Group) -> &[CatalogEntry] {
        match group {
            Group::BaseMetal => &self.base_metals,
            Group::Support => &self.supports,
            Group::Promoter => &self.promoters,
            Group::PrepMethod => &self.prep_methods,
        }
    }

    /// Finds an entry by id, label or name.
    pub fn find(&self, group: Group, key: &str) -> Option<&CatalogEntry> {
        let entries = self.group(group);
        entries.iter().find(|e| e.id == key).or_else(|| entries.iter().find(|e| e.matches(key)))
    }
}

impl Default for Catalog {
    fn default() -> Self {
        Self::parse(DEFAULT_CATALOG).expect("built-in catalog parses")
    }
}
