//! Fixed word lists, operation templates and the vocabulary derived from them.

use std::collections::HashMap;
use std::sync::OnceLock;

use crate::toymodel::EOS;

pub const EOS_TOKEN: &str = "<eos>";
pub const UNK_TOKEN: &str = "<unk>";
/// Separates an input from the expected continuation.
pub const SEP_TOKEN: &str = "=>";
pub const UNK: u32 = 1;
pub const SEP: u32 = 2;

/// Placeholder variable names used in intents and code.
pub const VARIABLES: &[&str] = &[
    "alpha", "beta", "gamma", "delta", "epsilon", "zeta", "eta", "theta", "iota", "kappa", "lam", "mu",
    "nu", "xi", "omicron", "rho", "sigma", "tau", "upsilon", "phi", "chi", "psi", "omega", "foo", "bar",
    "baz", "qux", "quux", "corge", "grault", "garply", "waldo", "fred", "plugh", "xyzzy", "thud",
];

/// Names the generated code assigns its result to.
pub const RESULT_NAMES: &[&str] = &[
    "res", "out", "ret", "val", "tot", "cnt", "num", "flag", "ans", "tmp", "acc", "rv", "agg", "got", "dst", "y",
];

/// Fresh identifiers used by rename-based rewrites.
pub const FRESH_NAMES: &[&str] = &["v0", "v1", "v2", "v3", "v4", "v5", "v6", "v7", "v8", "v9"];

/// Interchangeable word pairs; a rewrite swaps every listed word for its partner.
pub const SYNONYMS: &[(&str, &str)] = &[
    ("reverse", "invert"),
    ("sort", "order"),
    ("get", "fetch"),
    ("length", "size"),
    ("convert", "cast"),
    ("value", "variable"),
    ("integer", "int"),
    ("string", "text"),
    ("find", "compute"),
    ("maximum", "largest"),
    ("minimum", "smallest"),
    ("sum", "total"),
    ("elements", "entries"),
    ("count", "tally"),
    ("occurrences", "instances"),
    ("join", "concatenate"),
    ("strings", "words"),
    ("list", "array"),
    ("split", "break"),
    ("open", "load"),
    ("file", "path"),
    ("reading", "input"),
    ("check", "test"),
    ("copy", "duplicate"),
    ("uppercase", "capitalize"),
    ("lowercase", "downcase"),
    ("strip", "trim"),
    ("whitespace", "spaces"),
    ("keys", "labels"),
    ("dictionary", "mapping"),
    ("absolute", "abs"),
    ("round", "approximate"),
    ("append", "push"),
    ("multiply", "scale"),
    ("number", "quantity"),
    ("empty", "blank"),
];

/// Words that never change under rewriting.
pub const FUNCTION_WORDS: &[&str] =
    &["the", "of", "in", "to", "with", "on", "by", "from", "is", "if", "a", "an", "it", ",", "for", "given", "please"];

/// One code operation: an intent split into a verb phrase, an object phrase
/// and a trailing phrase, plus equivalent code expressions.
///
/// Intents come in two clause orders:
/// `"{verb} {object} {tail}"` and `"given {object} , {verb} it {tail}"`.
#[derive(Debug, Clone, Copy)]
pub struct OpTemplate {
    pub verb: &'static str,
    pub object: &'static str,
    pub tail: &'static str,
    pub exprs: &'static [&'static str],
}

pub const OPS: &[OpTemplate] = &[
    OpTemplate { verb: "reverse", object: "the list {a}", tail: "", exprs: &["{a} [ : : -1 ]", "reversed ( {a} )"] },
    OpTemplate { verb: "sort", object: "the list {a}", tail: "", exprs: &["sorted ( {a} )"] },
    OpTemplate { verb: "get the length of", object: "the list {a}", tail: "", exprs: &["len ( {a} )"] },
    OpTemplate { verb: "convert", object: "the value {a}", tail: "to an integer", exprs: &["int ( {a} )"] },
    OpTemplate { verb: "convert", object: "the value {a}", tail: "to a string", exprs: &["str ( {a} )"] },
    OpTemplate { verb: "find the maximum of", object: "the list {a}", tail: "", exprs: &["max ( {a} )"] },
    OpTemplate { verb: "find the minimum of", object: "the list {a}", tail: "", exprs: &["min ( {a} )"] },
    OpTemplate { verb: "sum the elements of", object: "the list {a}", tail: "", exprs: &["sum ( {a} )"] },
    OpTemplate { verb: "count occurrences of {b} in", object: "the list {a}", tail: "", exprs: &["{a} . count ( {b} )"] },
    OpTemplate { verb: "join the strings in", object: "the list {a}", tail: "with {b}", exprs: &["{b} . join ( {a} )"] },
    OpTemplate { verb: "split", object: "the string {a}", tail: "on {b}", exprs: &["{a} . split ( {b} )"] },
    OpTemplate { verb: "open", object: "the file {a}", tail: "for reading", exprs: &["open ( {a} , 'r' )", "open ( {a} )"] },
    OpTemplate { verb: "check if {b} is in", object: "the list {a}", tail: "", exprs: &["{b} in {a}"] },
    OpTemplate { verb: "copy", object: "the list {a}", tail: "", exprs: &["{a} . copy ( )", "list ( {a} )", "{a} [ : ]"] },
    OpTemplate { verb: "uppercase", object: "the string {a}", tail: "", exprs: &["{a} . upper ( )"] },
    OpTemplate { verb: "lowercase", object: "the string {a}", tail: "", exprs: &["{a} . lower ( )"] },
    OpTemplate { verb: "strip whitespace from", object: "the string {a}", tail: "", exprs: &["{a} . strip ( )"] },
    OpTemplate { verb: "get the keys of", object: "the dictionary {a}", tail: "", exprs: &["{a} . keys ( )"] },
    OpTemplate { verb: "get the value of {b} from", object: "the dictionary {a}", tail: "", exprs: &["{a} [ {b} ]", "{a} . get ( {b} )"] },
    OpTemplate { verb: "check if", object: "the list {a}", tail: "is empty", exprs: &["not {a}"] },
    OpTemplate { verb: "get the absolute value of", object: "the number {a}", tail: "", exprs: &["abs ( {a} )"] },
    OpTemplate { verb: "round", object: "the number {a}", tail: "", exprs: &["round ( {a} )"] },
    OpTemplate { verb: "append {b} to", object: "the list {a}", tail: "", exprs: &["{a} + [ {b} ]"] },
    OpTemplate { verb: "multiply", object: "the number {a}", tail: "by {b}", exprs: &["{a} * {b}"] },
];

/// Tokens of generated code.
pub const CODE_TOKENS: &[&str] = &[
    "=", "[", "]", ":", "-1", "(", ")", ".", "'r'", "*", "+", "sorted", "reversed", "len", "str", "max", "min",
    "count", "join", "split", "upper", "lower", "strip", "keys", "get", "not", "abs", "in", "copy", "open",
    "round", "list", "int", "sum",
];

impl OpTemplate {
    pub fn uses_b(&self) -> bool {
        self.verb.contains("{b}") || self.tail.contains("{b}")
    }
}

/// Word-level vocabulary over the fixed lexicon.
#[derive(Debug)]
pub struct Vocab {
    words: Vec<&'static str>,
    index: HashMap<&'static str, u32>,
}

impl Vocab {
    /// The vocabulary shared by the generator, the model and the harness.
    pub fn standard() -> &'static Vocab {
        static VOCAB: OnceLock<Vocab> = OnceLock::new();
        VOCAB.get_or_init(|| {
            let mut words: Vec<&'static str> = vec![EOS_TOKEN, UNK_TOKEN, SEP_TOKEN];
            let mut push = |w: &'static str| {
                if !words.contains(&w) {
                    words.push(w);
                }
            };
            for op in OPS {
                for phrase in [op.verb, op.object, op.tail] {
                    phrase.split_whitespace().filter(|w| !w.starts_with('{')).for_each(&mut push);
                }
            }
            SYNONYMS.iter().for_each(|(a, b)| {
                push(a);
                push(b);
            });
            FUNCTION_WORDS.iter().for_each(|w| push(w));
            CODE_TOKENS.iter().for_each(|w| push(w));
            VARIABLES.iter().chain(RESULT_NAMES).chain(FRESH_NAMES).for_each(|w| push(w));
            let index = words.iter().enumerate().map(|(i, w)| (*w, i as u32)).collect();
            Vocab { words, index }
        })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> u32 {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn word(&self, id: u32) -> &str {
        self.words.get(id as usize).copied().unwrap_or(UNK_TOKEN)
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        text.split_whitespace().map(|w| self.id(w)).collect()
    }

    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter().map(|&i| self.word(i)).collect::<Vec<_>>().join(" ")
    }

    /// Prompt tokens: the text followed by the separator.
    pub fn prompt(&self, text: &str) -> Vec<u32> {
        let mut ids = self.encode(text);
        ids.push(SEP);
        ids
    }

    /// Target tokens: the text followed by end-of-sequence.
    pub fn target(&self, text: &str) -> Vec<u32> {
        let mut ids = self.encode(text);
        ids.push(EOS);
        ids
    }
}

pub fn is_identifier(word: &str) -> bool {
    VARIABLES.contains(&word) || RESULT_NAMES.contains(&word) || FRESH_NAMES.contains(&word)
}
