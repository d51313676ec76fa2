//! Compact interned representation of a rating dataset.
//!
//! String keys from the source tables are interned into dense `u32` indices
//! once at load time; every analysis pass after that works on the integer
//! form. The pools can resolve indices back to the original keys for export.

use std::collections::HashMap;

use crate::ingest::RatingRecord;

/// Interner mapping opaque string keys to dense indices.
#[derive(Debug, Default, Clone)]
pub struct KeyPool {
    names: Vec<String>,
    index: HashMap<String, u32>,
}

impl KeyPool {
    pub fn new() -> Self {
        Self::default()
    }

    /// Intern `name`, returning its stable index. Indices are assigned in
    /// first-encounter order.
    pub fn intern(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(name.to_owned());
        self.index.insert(name.to_owned(), id);
        id
    }

    pub fn get(&self, name: &str) -> Option<u32> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: u32) -> &str {
        &self.names[id as usize]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Indices paired with their keys, in interning order.
    pub fn iter(&self) -> impl Iterator<Item = (u32, &str)> {
        self.names
            .iter()
            .enumerate()
            .map(|(i, n)| (i as u32, n.as_str()))
    }
}

/// One rating in interned form.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rating {
    pub user: u32,
    pub business: u32,
    pub stars: u8,
}

/// The full analysis rating set with its key pools.
#[derive(Debug, Default, Clone)]
pub struct RatingTable {
    pub users: KeyPool,
    pub businesses: KeyPool,
    pub ratings: Vec<Rating>,
}

impl RatingTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: &RatingRecord) {
        let user = self.users.intern(&record.user_id);
        let business = self.businesses.intern(&record.business_id);
        self.ratings.push(Rating {
            user,
            business,
            stars: record.stars,
        });
    }

    pub fn from_records<I>(records: I) -> Self
    where
        I: IntoIterator,
        I::Item: std::borrow::Borrow<RatingRecord>,
    {
        use std::borrow::Borrow;
        let mut table = Self::new();
        for r in records {
            table.push(r.borrow());
        }
        table
    }

    pub fn len(&self) -> usize {
        self.ratings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ratings.is_empty()
    }

    /// Resolve a rating back to its string-keyed form.
    pub fn record(&self, rating: &Rating) -> RatingRecord {
        RatingRecord {
            user_id: self.users.name(rating.user).to_owned(),
            business_id: self.businesses.name(rating.business).to_owned(),
            stars: rating.stars,
        }
    }
}
