use std::sync::OnceLock;

use regex::Regex;

use super::stopwords::is_stopword;

fn strip_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)(?:https?://|www\.)\S*|@\w+").expect("static regex"))
}

/// Bag-of-words tokenizer used ahead of topic modelling.
///
/// URLs and `@mentions` are removed first, then the lowercased text is split
/// on runs of non-alphanumeric characters. Stopwords, single-character tokens
/// and pure numbers are dropped. Hashtag words survive (`#guns` -> `guns`).
pub fn tokenize(text: &str) -> Vec<String> {
    let stripped = strip_pattern().replace_all(text, " ");
    let lowered = stripped.to_lowercase();
    lowered
        .split(|c: char| !c.is_alphanumeric())
        .filter(|tok| keep(tok))
        .map(str::to_owned)
        .collect()
}

fn keep(tok: &str) -> bool {
    let mut chars = tok.chars();
    match (chars.next(), chars.next()) {
        (None, _) | (Some(_), None) => return false,
        _ => {}
    }
    if tok.chars().all(char::is_numeric) {
        return false;
    }
    !is_stopword(tok)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn spec_examples() {
        assert_eq!(tokenize("Gun violence, in short"), ["gun", "violence", "short"]);
        assert!(tokenize("").is_empty());
        assert!(tokenize("http://x.co @user RT").is_empty());
    }

    #[test]
    fn drops_numbers_and_single_chars_keeps_hashtags() {
        assert_eq!(
            tokenize("#SemST 2016 x y #Climate42 www.example.org/foo"),
            ["semst", "climate42"]
        );
    }

    #[test]
    fn unicode_words_survive() {
        assert_eq!(tokenize("Café naïve Über"), ["café", "naïve", "über"]);
    }

    proptest! {
        #[test]
        fn idempotent_on_own_output(text in "[a-zA-Z0-9 @#:/.,'éÜ_-]{0,80}") {
            let once = tokenize(&text);
            let twice = tokenize(&once.join(" "));
            prop_assert_eq!(once, twice);
        }
    }
}
