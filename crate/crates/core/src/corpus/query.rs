use super::{ItemRecord, QueryRecord};

/// Terms dropped when turning category names into query tokens.
pub const STOP_TERMS: &[&str] = &["&", "and", "by", "for", "in", "of", "on", "or", "the", "to", "with"];

/// Lowercased category terms along the path, stop terms removed, first
/// occurrence kept.
pub fn query_terms(category_path: &[String]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for name in category_path {
        for term in name.split_whitespace() {
            let term = term.to_lowercase();
            if STOP_TERMS.contains(&term.as_str()) || out.contains(&term) {
                continue;
            }
            out.push(term);
        }
    }
    out
}

/// Query issued for a clicked item, built from its category path.
pub fn derive_query_from_categories(item: &ItemRecord, query_id: u64) -> QueryRecord {
    QueryRecord {
        query_id,
        tokens: query_terms(&item.category_path),
        source_category_path: item.category_path.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(p: &[&str]) -> Vec<String> {
        p.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn single_level() {
        assert_eq!(query_terms(&path(&["Books"])), vec!["books"]);
    }

    #[test]
    fn multi_level_dedup_in_order() {
        assert_eq!(
            query_terms(&path(&["Kindle Store", "Kindle eBooks", "Mystery"])),
            vec!["kindle", "store", "ebooks", "mystery"]
        );
    }

    #[test]
    fn repeated_level_collapses() {
        assert_eq!(query_terms(&path(&["A", "A"])), vec!["a"]);
    }

    #[test]
    fn stop_terms_removed() {
        assert_eq!(query_terms(&path(&["Home & Kitchen", "Tools for the Garden"])), vec!["home", "kitchen", "tools", "garden"]);
    }

    #[test]
    fn derived_query_keeps_source_path() {
        let item = ItemRecord { item_id: 3, category_path: path(&["Books", "Mystery"]), description_tokens: vec!["x".into()] };
        let q = derive_query_from_categories(&item, 7);
        assert_eq!(q.query_id, 7);
        assert_eq!(q.tokens, vec!["books", "mystery"]);
        assert_eq!(q.source_category_path, item.category_path);
    }
}
