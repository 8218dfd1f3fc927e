//! Deterministic minimal tokenizer: lowercase, split on runs of
//! non-alphanumeric characters, drop empties. No stemming, no stop words.

use alloc::string::String;
use alloc::vec::Vec;

/// Split `text` into lowercase tokens on maximal runs of non-alphanumeric
/// characters. Pure function; an empty result is allowed and the caller
/// decides whether the document is admissible.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            for lc in ch.to_lowercase() {
                current.push(lc);
            }
        } else if !current.is_empty() {
            tokens.push(core::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn basic_split_and_lowercase() {
        assert_eq!(tokenize("Great product!!"), vec!["great", "product"]);
    }

    #[test]
    fn empty_input() {
        assert!(tokenize("").is_empty());
    }

    #[test]
    fn punctuation_runs_split_once() {
        // hand-applied rule: digits count as alphanumeric, "A+" loses the '+'
        assert_eq!(tokenize("5-star, A+ value"), vec!["5", "star", "a", "value"]);
    }

    #[test]
    fn only_punctuation_yields_nothing() {
        assert!(tokenize("?!... --- ***").is_empty());
    }

    #[test]
    fn unicode_words_survive() {
        assert_eq!(tokenize("Très bon"), vec!["très", "bon"]);
    }

    #[test]
    fn deterministic() {
        let a = tokenize("Some Repeated INPUT, twice.");
        let b = tokenize("Some Repeated INPUT, twice.");
        assert_eq!(a, b);
    }
}
