use std::collections::HashSet;
use std::sync::OnceLock;

const STOPWORDS_EN: &str = include_str!("stopwords_en.txt");

pub fn stopwords() -> &'static HashSet<&'static str> {
    static SET: OnceLock<HashSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| {
        STOPWORDS_EN
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .collect()
    })
}

pub fn is_stopword(token: &str) -> bool {
    stopwords().contains(token)
}

fn is_url(token: &str) -> bool {
    token.starts_with("http://") || token.starts_with("https://") || token.starts_with("www.")
}

/// Clean a raw post into word tokens.
///
/// Lowercases, drops URLs, `#hashtags` and `@mentions`, strips every
/// non-alphanumeric character from the remaining whitespace tokens, then
/// drops empty tokens and stop words. Idempotent.
pub fn preprocess(raw: &str) -> Vec<String> {
    let lowered = raw.to_lowercase();
    lowered
        .split_whitespace()
        .filter(|t| !(is_url(t) || t.starts_with('#') || t.starts_with('@')))
        .filter_map(|t| {
            let stripped: String = t.chars().filter(|c| c.is_alphanumeric()).collect();
            // Lowercase again: stripping can expose a char whose lowercase
            // form differs (e.g. a decomposed capital left after removal).
            let stripped = stripped.to_lowercase();
            let stripped: String = stripped.chars().filter(|c| c.is_alphanumeric()).collect();
            (!stripped.is_empty() && !is_stopword(&stripped)).then_some(stripped)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cleans_tweet() {
        assert_eq!(
            preprocess("Check THIS out!! http://t.co/x #gross @user"),
            vec!["check"]
        );
    }

    #[test]
    fn empty_input() {
        assert!(preprocess("").is_empty());
        assert!(preprocess("   \t\n").is_empty());
        assert!(preprocess("!!! ... ?").is_empty());
    }

    #[test]
    fn strips_inner_punctuation_and_contractions() {
        assert_eq!(preprocess("Don't stop-believing, WWW.site.com"), vec!["stopbelieving"]);
        assert_eq!(preprocess("https://a.b www.x.y http: ok"), vec!["http", "ok"]);
    }

    #[test]
    fn stopword_file_is_normalized() {
        for w in stopwords() {
            assert_eq!(preprocess(w), Vec::<String>::new(), "{w}");
            assert!(w.chars().all(|c| c.is_alphanumeric() && !c.is_uppercase()));
        }
        assert!(stopwords().len() > 150);
    }

    fn fuzz_text() -> impl Strategy<Value = String> {
        let piece = prop_oneof![
            "[a-zA-Z]{1,8}",
            "[#@][a-zA-Z0-9_]{0,6}",
            "https?://[a-z./]{1,10}",
            "[!?.,;:'\"()\\-]{1,3}",
            Just("THIS".to_string()),
            Just("the".to_string()),
            Just("Don't".to_string()),
            "\\PC{1,4}",
        ];
        prop::collection::vec(piece, 0..12).prop_map(|v| v.join(" "))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn idempotent_and_clean(s in fuzz_text()) {
            let once = preprocess(&s);
            let twice = preprocess(&once.join(" "));
            prop_assert_eq!(&once, &twice);
            for t in &once {
                prop_assert!(!t.is_empty());
                prop_assert!(t.chars().all(char::is_alphanumeric));
                prop_assert!(!is_stopword(t));
                prop_assert!(!is_url(t) && !t.starts_with('#') && !t.starts_with('@'));
            }
        }
    }
}
