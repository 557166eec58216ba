/// Lowercased word tokens. Any character that is not alphanumeric
/// (whitespace, punctuation, symbols) separates tokens and is discarded.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}
