//! The closed synthetic grammar: word pools and sentence templates.
//!
//! Everything renderable is whitespace-delimited and drawn from fixed pools,
//! so the vocabulary is closed and passage spans are exact by construction.

/// Names acting as fact subjects.
pub const ENTITIES: [&str; 24] = [
    "alder", "briar", "cedar", "dahlia", "elm", "fern", "hazel", "iris", "juniper", "laurel",
    "maple", "nettle", "oak", "poppy", "quince", "rowan", "sage", "tansy", "thistle", "violet",
    "willow", "yarrow", "aspen", "clover",
];

/// Objects a fact can be about.
pub const OBJECTS: [&str; 24] = [
    "lantern", "compass", "ledger", "locket", "flute", "banner", "chisel", "goblet", "saddle",
    "quill", "mirror", "kettle", "anchor", "tapestry", "sundial", "gavel", "prism", "abacus",
    "scroll", "thimble", "bugle", "crucible", "hourglass", "medallion",
];

/// Locations serving as answers.
pub const LOCATIONS: [&str; 24] = [
    "attic", "cellar", "barn", "chapel", "tower", "vault", "grove", "meadow", "harbor", "quarry",
    "mill", "forge", "library", "stable", "orchard", "lighthouse", "cavern", "courtyard",
    "granary", "belfry", "workshop", "greenhouse", "pantry", "wharf",
];

/// Function words appearing in templates, cues and questions.
pub const TEMPLATE_WORDS: [&str; 27] = [
    "based", "on", "the", "following", "passages", ",", "answer", "question", ".", ":", "?",
    "keeps", "in", "where", "what", "is", "secret", "word", "gave", "to", "hides", "every",
    "gift", "from", "did", "end", "up",
];

pub const EOS: &str = "<eos>";
pub const PASSAGES_OPEN: &str = "<passages>";
pub const PASSAGES_CLOSE: &str = "</passages>";
pub const PASSAGE_MARK: &str = "<p>";

/// Marker and control tokens; they sit outside every passage span.
pub const SPECIALS: [&str; 4] = [EOS, PASSAGES_OPEN, PASSAGES_CLOSE, PASSAGE_MARK];

/// "based on the following passages , answer the question ."
pub const INSTRUCTION: [&str; 10] =
    ["based", "on", "the", "following", "passages", ",", "answer", "the", "question", "."];

pub const QUESTION_CUE: [&str; 2] = ["question", ":"];
pub const ANSWER_CUE: [&str; 2] = ["answer", ":"];

/// "<entity> keeps the <object> in the <location> ."
pub fn fact_sentence(entity: &str, object: &str, location: &str) -> Vec<String> {
    vec![
        entity.into(),
        "keeps".into(),
        "the".into(),
        object.into(),
        "in".into(),
        "the".into(),
        location.into(),
        ".".into(),
    ]
}

/// "where is the <object> ?"
pub fn fact_question(object: &str) -> Vec<String> {
    vec!["where".into(), "is".into(), "the".into(), object.into(), "?".into()]
}

/// "the secret word is <word> ."
pub fn needle_sentence(word: &str) -> Vec<String> {
    vec!["the".into(), "secret".into(), "word".into(), "is".into(), word.into(), ".".into()]
}

/// "what is the secret word ?"
pub fn needle_question() -> Vec<String> {
    vec!["what".into(), "is".into(), "the".into(), "secret".into(), "word".into(), "?".into()]
}

/// "<giver> gave the <object> to <receiver> ."
pub fn give_sentence(giver: &str, object: &str, receiver: &str) -> Vec<String> {
    vec![
        giver.into(),
        "gave".into(),
        "the".into(),
        object.into(),
        "to".into(),
        receiver.into(),
        ".".into(),
    ]
}

/// "<entity> hides every gift in the <location> ."
pub fn hide_sentence(entity: &str, location: &str) -> Vec<String> {
    vec![
        entity.into(),
        "hides".into(),
        "every".into(),
        "gift".into(),
        "in".into(),
        "the".into(),
        location.into(),
        ".".into(),
    ]
}

/// "where did the <object> from <giver> end up ?"
pub fn chain_question(object: &str, giver: &str) -> Vec<String> {
    vec![
        "where".into(),
        "did".into(),
        "the".into(),
        object.into(),
        "from".into(),
        giver.into(),
        "end".into(),
        "up".into(),
        "?".into(),
    ]
}
