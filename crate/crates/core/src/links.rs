//! Link observations shared by the crawler, link providers and datasets.

use serde::{Deserialize, Serialize};

use crate::site::{SiteKey, Url};

/// Which provider produced a record, and when.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ProviderTag {
    pub name: String,
    pub retrieved_at: u64,
}

impl ProviderTag {
    pub fn new(name: impl Into<String>, retrieved_at: u64) -> Self {
        let name = name.into();
        assert!(!name.is_empty(), "provider name must be non-empty");
        ProviderTag { name, retrieved_at }
    }
}

/// One directed site-to-site link observation.
///
/// `source`/`target` are site keys as reduced by the provider; alias
/// canonicalization and self-link removal happen at dataset assembly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkRecord {
    pub source: SiteKey,
    pub target: SiteKey,
    pub provider: ProviderTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_url: Option<Url>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_url: Option<Url>,
}

impl LinkRecord {
    pub fn pair(&self) -> (&SiteKey, &SiteKey) {
        (&self.source, &self.target)
    }

    pub fn is_self_link(&self) -> bool {
        self.source == self.target
    }
}
