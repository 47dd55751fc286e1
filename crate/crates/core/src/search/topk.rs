use std::collections::BTreeSet;

use serde::Serialize;

use super::Scored;

/// Best designs, sorted by metric (then smaller area, then tuple), unique
/// by design tuple.
#[derive(Debug, Clone, Serialize)]
pub struct TopK {
    pub k: usize,
    pub entries: Vec<Scored>,
}

impl TopK {
    pub fn from_designs(k: usize, designs: impl IntoIterator<Item = Scored>) -> Self {
        let mut all: Vec<Scored> = designs.into_iter().collect();
        all.sort_by(Scored::cmp_rank);
        let mut seen = BTreeSet::new();
        let entries = all
            .into_iter()
            .filter(|s| seen.insert(s.design.tuple()))
            .take(k)
            .collect();
        Self { k, entries }
    }

    pub fn best(&self) -> Option<&Scored> {
        self.entries.first()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
