use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub id: u32,
    pub name: String,
}

/// Ordered set of classes. Id 0 is reserved for background / unlabeled and
/// never appears in a catalog.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassCatalog {
    entries: Vec<ClassEntry>,
}

impl ClassCatalog {
    pub fn new(entries: Vec<ClassEntry>) -> Result<Self> {
        for (i, e) in entries.iter().enumerate() {
            if e.id == 0 {
                return Err(Error::InvalidCatalog(format!("class {:?} uses reserved id 0", e.name)));
            }
            if e.name.is_empty() {
                return Err(Error::InvalidCatalog(format!("class {} has an empty name", e.id)));
            }
            for other in &entries[..i] {
                if other.id == e.id {
                    return Err(Error::InvalidCatalog(format!("duplicate class id {}", e.id)));
                }
                if other.name == e.name {
                    return Err(Error::InvalidCatalog(format!("duplicate class name {:?}", e.name)));
                }
            }
        }
        Ok(Self { entries })
    }

    /// Catalog with ids 1..=n in the order of `names`.
    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        Self::new(
            names
                .iter()
                .enumerate()
                .map(|(i, n)| ClassEntry {
                    id: i as u32 + 1,
                    name: n.as_ref().to_string(),
                })
                .collect(),
        )
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ClassEntry] {
        &self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.entries.iter().map(|e| e.id)
    }

    /// Dense position of `class_id` in the catalog.
    pub fn index_of(&self, class_id: u32) -> Option<usize> {
        self.entries.iter().position(|e| e.id == class_id)
    }

    pub fn id_at(&self, index: usize) -> u32 {
        self.entries[index].id
    }

    pub fn id_by_name(&self, name: &str) -> Option<u32> {
        self.entries.iter().find(|e| e.name == name).map(|e| e.id)
    }

    pub fn name_of(&self, class_id: u32) -> Option<&str> {
        self.entries.iter().find(|e| e.id == class_id).map(|e| e.name.as_str())
    }
}
