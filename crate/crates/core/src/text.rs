//! Small tokenization helpers shared by the lexicon, reorderer and agents.

/// Lowercased word tokens. Words are maximal runs of alphanumerics and
/// inner apostrophes; everything else separates.
pub fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '\'' || c == '\u{2019}'))
        .map(|w| w.trim_matches(|c| c == '\'' || c == '\u{2019}'))
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase().replace('\u{2019}', "'"))
        .collect()
}

/// Number of (possibly overlapping) occurrences of `phrase` as a contiguous
/// run of whole tokens.
pub fn count_phrase(tokens: &[String], phrase: &[String]) -> usize {
    if phrase.is_empty() || phrase.len() > tokens.len() {
        return 0;
    }
    tokens.windows(phrase.len()).filter(|w| *w == phrase).count()
}

pub fn contains_phrase(tokens: &[String], phrase: &[String]) -> bool {
    count_phrase(tokens, phrase) > 0
}

/// Tokens for corpus statistics: lowercase, punctuation removed, whitespace split.
/// Apostrophes are dropped inside words ("don't" -> "dont"); every other
/// punctuation character acts as a separator.
pub fn stat_tokens(text: &str) -> Vec<String> {
    let cleaned: String = text
        .chars()
        .filter(|c| *c != '\'' && *c != '\u{2019}')
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    cleaned.split_whitespace().map(|w| w.to_lowercase()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn words_split_on_punctuation() {
        assert_eq!(words("Turn LEFT, then stop."), vec!["turn", "left", "then", "stop"]);
        assert_eq!(words("you're at the u-turn"), vec!["you're", "at", "the", "u", "turn"]);
        assert!(words("  ...  ").is_empty());
    }

    #[test]
    fn phrase_counting() {
        let t = words("the pool table and the table");
        assert_eq!(count_phrase(&t, &words("table")), 2);
        assert_eq!(count_phrase(&t, &words("pool table")), 1);
        assert_eq!(count_phrase(&t, &words("tab")), 0);
    }

    #[test]
    fn stat_tokens_strip_punctuation() {
        assert_eq!(stat_tokens("Don't go-left!"), vec!["dont", "go", "left"]);
    }
}
