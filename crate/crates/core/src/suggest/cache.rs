use indexmap::IndexMap;

use super::CompletionTrie;

pub const CACHE_CAPACITY: usize = 64;
pub const CACHE_KEY_CHARS: usize = 200;

/// The last [`CACHE_KEY_CHARS`] characters of the code before the query point.
pub fn cache_key(preceding: &str) -> &str {
    match preceding.char_indices().rev().nth(CACHE_KEY_CHARS - 1) {
        Some((i, _)) => &preceding[i..],
        None => preceding,
    }
}

/// Least-recently-used map from preceding code to completion tries.
#[derive(Debug, Clone)]
pub struct SuggestionCache {
    capacity: usize,
    entries: IndexMap<String, CompletionTrie>,
}

impl Default for SuggestionCache {
    fn default() -> Self {
        SuggestionCache::new(CACHE_CAPACITY)
    }
}

impl SuggestionCache {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "cache capacity must be positive");
        SuggestionCache {
            capacity,
            entries: IndexMap::with_capacity(capacity + 1),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&mut self, preceding: &str) -> Option<&CompletionTrie> {
        let index = self.entries.get_index_of(cache_key(preceding))?;
        let last = self.entries.len() - 1;
        self.entries.move_index(index, last);
        self.entries.get_index(last).map(|(_, t)| t)
    }

    pub fn insert(&mut self, preceding: &str, trie: CompletionTrie) {
        let key = cache_key(preceding).to_string();
        self.entries.shift_remove(&key);
        self.entries.insert(key, trie);
        if self.entries.len() > self.capacity {
            self.entries.shift_remove_index(0);
        }
    }
}
