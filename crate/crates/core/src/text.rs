//! Small text helpers shared by retrieval, attention and parsing.

/// Lowercased alphanumeric tokens.
pub fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// True when `word` names `category`, allowing simple plurals (`ball`/`balls`, `box`/`boxes`).
pub fn names_category(word: &str, category: &str) -> bool {
    word == category
        || word
            .strip_suffix('s')
            .is_some_and(|w| w == category || w.strip_suffix('e') == Some(category))
}

/// Entity ids written as `[id]` inside free text, in order of appearance.
pub fn bracketed_ids(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find('[') {
        let after = &rest[start + 1..];
        match after.find(']') {
            Some(end) => {
                let inner = &after[..end];
                if !inner.is_empty() && !inner.contains(char::is_whitespace) {
                    out.push(inner.to_string());
                }
                rest = &after[end + 1..];
            }
            None => break,
        }
    }
    out
}
