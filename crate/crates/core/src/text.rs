//! Small text utilities shared by prompts, grounding and metrics.

/// Estimates how many model tokens a piece of text occupies.
pub trait TokenEstimator: Send + Sync {
    fn estimate(&self, text: &str) -> usize;
}

/// `ceil(chars / 4)`, counted in Unicode scalar values.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CharEstimator;

impl TokenEstimator for CharEstimator {
    fn estimate(&self, text: &str) -> usize {
        text.chars().count().div_ceil(4)
    }
}

/// Splits an identifier into its camelCase / snake_case words.
///
/// Word boundaries are underscores, hyphens, whitespace, a lower-to-upper
/// transition (`growthPer` -> `growth`, `Per`), and the last capital of an
/// acronym run followed by a lowercase letter (`ALDProcess` -> `ALD`,
/// `Process`). Case is preserved; callers lowercase if they need to.
pub fn split_identifier(ident: &str) -> Vec<String> {
    let mut words = Vec::new();
    let mut current = String::new();
    let chars: Vec<char> = ident.chars().collect();

    for (i, &c) in chars.iter().enumerate() {
        if c == '_' || c == '-' || c.is_whitespace() {
            if !current.is_empty() {
                words.push(std::mem::take(&mut current));
            }
            continue;
        }
        if c.is_uppercase() && !current.is_empty() {
            let prev = chars[i - 1];
            let next_is_lower = chars.get(i + 1).is_some_and(|n| n.is_lowercase());
            if prev.is_lowercase() || prev.is_ascii_digit() || (prev.is_uppercase() && next_is_lower) {
                words.push(std::mem::take(&mut current));
            }
        }
        current.push(c);
    }
    if !current.is_empty() {
        words.push(current);
    }
    words
}

/// Lowercased alphanumeric word tokens, splitting on everything else.
pub fn word_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn estimator_rounds_up() {
        let est = CharEstimator;
        assert_eq!(est.estimate(""), 0);
        assert_eq!(est.estimate("a"), 1);
        assert_eq!(est.estimate("abcd"), 1);
        assert_eq!(est.estimate("abcde"), 2);
        assert_eq!(est.estimate("ééééé"), 2);
    }

    #[test]
    fn splits_camel_and_snake() {
        assert_eq!(split_identifier("growthPerCycle"), ["growth", "Per", "Cycle"]);
        assert_eq!(split_identifier("film_thickness"), ["film", "thickness"]);
        assert_eq!(split_identifier("ALDProcess"), ["ALD", "Process"]);
        assert_eq!(split_identifier("temperature"), ["temperature"]);
        assert_eq!(split_identifier("__x__"), ["x"]);
        assert!(split_identifier("").is_empty());
    }

    #[test]
    fn word_tokens_lowercase() {
        assert_eq!(word_tokens("Film thickness, in nm."), ["film", "thickness", "in", "nm"]);
    }
}
