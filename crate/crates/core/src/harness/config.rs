use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{usage, Error, Result};
use crate::toymodel::{DecodeMode, KeyMode};

/// Registered editing techniques. `Identity` leaves the model untouched and
/// serves as a baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditorKind {
    Identity,
    Grace,
    Agrace,
    AgraceWoCl,
    AgraceWoMean,
    Ftl,
    Rome,
}

impl EditorKind {
    pub const ALL: [EditorKind; 7] = [
        EditorKind::Identity,
        EditorKind::Grace,
        EditorKind::Agrace,
        EditorKind::AgraceWoCl,
        EditorKind::AgraceWoMean,
        EditorKind::Ftl,
        EditorKind::Rome,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EditorKind::Identity => "identity",
            EditorKind::Grace => "grace",
            EditorKind::Agrace => "agrace",
            EditorKind::AgraceWoCl => "agrace_wo_cl",
            EditorKind::AgraceWoMean => "agrace_wo_mean",
            EditorKind::Ftl => "ftl",
            EditorKind::Rome => "rome",
        }
    }

    /// Key pooling for codebook editors, `None` for the rest.
    pub fn key_mode(self) -> Option<KeyMode> {
        match self {
            EditorKind::Grace | EditorKind::AgraceWoMean => Some(KeyMode::Last),
            EditorKind::Agrace | EditorKind::AgraceWoCl => Some(KeyMode::Mean),
            _ => None,
        }
    }

    pub fn needs_encoder(self) -> bool {
        matches!(self, EditorKind::Agrace | EditorKind::AgraceWoMean)
    }
}

impl fmt::Display for EditorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EditorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            let known: Vec<_> = Self::ALL.iter().map(|k| k.name()).collect();
            Error::Usage(format!("unknown editor {s:?}; expected one of {}", known.join(", ")))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Every edit starts from the pristine model.
    #[default]
    ResetPerEdit,
    /// Edits accumulate in instance order.
    Sequential,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::ResetPerEdit => "reset_per_edit",
            Protocol::Sequential => "sequential",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reset_per_edit" => Ok(Protocol::ResetPerEdit),
            "sequential" => Ok(Protocol::Sequential),
            _ => usage(format!("unknown protocol {s:?}; expected reset_per_edit or sequential")),
        }
    }
}

/// `greedy` or `topk:K`.
pub fn parse_decode_mode(s: &str) -> Result<DecodeMode> {
    if s == "greedy" {
        return Ok(DecodeMode::Greedy);
    }
    match s.strip_prefix("topk:").map(str::parse::<usize>) {
        Some(Ok(k)) if k > 0 => Ok(DecodeMode::TopK { k }),
        _ => usage(format!("bad decode mode {s:?}; expected greedy or topk:K")),
    }
}

pub fn decode_mode_name(mode: DecodeMode) -> String {
    match mode {
        DecodeMode::Greedy => "greedy".into(),
        DecodeMode::TopK { k } => format!("topk:{k}"),
    }
}

/// Everything an `edit-eval` run needs. Stored on disk as `key = value`
/// lines; `#` starts a comment line.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub model: PathBuf,
    pub benchmark: PathBuf,
    pub editor: EditorKind,
    pub protocol: Protocol,
    pub seed: u64,
    /// Key encoder checkpoint, required by `agrace` and `agrace_wo_mean`.
    pub encoder: Option<PathBuf>,
    /// Corpus whose inputs estimate the key covariance for `rome`.
    pub cov_corpus: Option<PathBuf>,
    /// Overrides the editor's default layer.
    pub edit_layer: Option<usize>,
    /// Tokens decoded for effectiveness, generalization and specificity.
    pub max_new_tokens: usize,
    /// Tokens sampled per fluency probe.
    pub fluency_tokens: usize,
    pub fluency_top_k: usize,
    /// Decoding used for the three accuracy axes.
    pub decode: DecodeMode,
    /// Evaluate only the first `limit` instances.
    pub limit: Option<usize>,
}

const KEYS: &[&str] = &[
    "model",
    "benchmark",
    "editor",
    "protocol",
    "seed",
    "encoder",
    "cov_corpus",
    "edit_layer",
    "max_new_tokens",
    "fluency_tokens",
    "fluency_top_k",
    "decode",
    "limit",
];

impl ExperimentConfig {
    pub fn new(model: impl Into<PathBuf>, benchmark: impl Into<PathBuf>, editor: EditorKind) -> Self {
        Self {
            model: model.into(),
            benchmark: benchmark.into(),
            editor,
            protocol: Protocol::ResetPerEdit,
            seed: 0,
            encoder: None,
            cov_corpus: None,
            edit_layer: None,
            max_new_tokens: 16,
            fluency_tokens: 64,
            fluency_top_k: 5,
            decode: DecodeMode::Greedy,
            limit: None,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |message: String| Error::Parse { line: i + 1, message };
            let (k, v) = line.split_once('=').ok_or_else(|| parse_err(format!("expected key = value, got {line:?}")))?;
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.contains(&k) {
                return Err(parse_err(format!("unknown key {k:?}")));
            }
            if kv.insert(k.to_string(), (i + 1, v.to_string())).is_some() {
                return Err(parse_err(format!("duplicate key {k:?}")));
            }
        }
        let required = |k: &str| match kv.get(k) {
            Some((_, v)) => Ok(v.clone()),
            None => usage(format!("config is missing {k}")),
        };
        let mut cfg = Self::new(required("model")?, required("benchmark")?, required("editor")?.parse()?);
        for (k, (line, v)) in &kv {
            let bad = |e: String| Error::Parse { line: *line, message: format!("{k}: {e}") };
            let num = |v: &str| v.parse::<u64>().map_err(|e| bad(e.to_string()));
            match k.as_str() {
                "protocol" => cfg.protocol = v.parse()?,
                "seed" => cfg.seed = num(v)?,
                "encoder" => cfg.encoder = Some(v.into()),
                "cov_corpus" => cfg.cov_corpus = Some(v.into()),
                "edit_layer" => cfg.edit_layer = Some(num(v)? as usize),
                "max_new_tokens" => cfg.max_new_tokens = num(v)? as usize,
                "fluency_tokens" => cfg.fluency_tokens = num(v)? as usize,
                "fluency_top_k" => cfg.fluency_top_k = num(v)? as usize,
                "decode" => cfg.decode = parse_decode_mode(v)?,
                "limit" => cfg.limit = Some(num(v)? as usize),
                _ => {}
            }
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut lines = vec![
            format!("model = {}", self.model.display()),
            format!("benchmark = {}", self.benchmark.display()),
            format!("editor = {}", self.editor),
            format!("protocol = {}", self.protocol),
            format!("seed = {}", self.seed),
        ];
        if let Some(p) = &self.encoder {
            lines.push(format!("encoder = {}", p.display()));
        }
        if let Some(p) = &self.cov_corpus {
            lines.push(format!("cov_corpus = {}", p.display()));
        }
        if let Some(l) = self.edit_layer {
            lines.push(format!("edit_layer = {l}"));
        }
        lines.push(format!("max_new_tokens = {}", self.max_new_tokens));
        lines.push(format!("fluency_tokens = {}", self.fluency_tokens));
        lines.push(format!("fluency_top_k = {}", self.fluency_top_k));
        lines.push(format!("decode = {}", decode_mode_name(self.decode)));
        if let Some(l) = self.limit {
            lines.push(format!("limit = {l}"));
        }
        lines.join("\n") + "\n"
    }

    /// Checks that referenced files exist and that the editor has what it needs.
    pub fn validate(&self) -> Result<()> {
        for (what, p) in [("model", Some(&self.model)), ("benchmark", Some(&self.benchmark))]
            .into_iter()
            .chain([("encoder", self.encoder.as_ref()), ("cov_corpus", self.cov_corpus.as_ref())])
        {
            if let Some(p) = p {
                if !p.exists() {
                    return usage(format!("{what} file {} does not exist", p.display()));
                }
            }
        }
        if self.editor.needs_encoder() && self.encoder.is_none() {
            return usage(format!("editor {} needs an encoder checkpoint", self.editor));
        }
        if self.fluency_tokens < 3 {
            return usage("fluency needs at least 3 sampled tokens");
        }
        if self.fluency_top_k == 0 {
            return usage("fluency_top_k must be positive");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn editor_names_round_trip() {
        for k in EditorKind::ALL {
            assert_eq!(k.name().parse::<EditorKind>().unwrap(), k);
        }
        assert!("memit".parse::<EditorKind>().is_err());
    }

    #[test]
    fn config_text_round_trips() {
        let mut cfg = ExperimentConfig::new("m.json", "b.jsonl", EditorKind::Agrace);
        cfg.encoder = Some("e.json".into());
        cfg.protocol = Protocol::Sequential;
        cfg.edit_layer = Some(1);
        cfg.decode = DecodeMode::TopK { k: 3 };
        cfg.limit = Some(10);
        assert_eq!(ExperimentConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn parse_rejects_unknown_and_duplicate_keys() {
        let base = "model = m\nbenchmark = b\neditor = grace\n";
        assert!(ExperimentConfig::parse(base).is_ok());
        match ExperimentConfig::parse(&format!("{base}# note\nbogus = 1\n")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 5),
            other => panic!("{other:?}"),
        }
        assert!(ExperimentConfig::parse(&format!("{base}seed = 1\nseed = 2\n")).is_err());
        assert!(ExperimentConfig::parse("model = m\neditor = grace\n").is_err());
        assert!(ExperimentConfig::parse(&format!("{base}seed = x\n")).is_err());
    }

    #[test]
    fn decode_modes() {
        assert_eq!(parse_decode_mode("greedy").unwrap(), DecodeMode::Greedy);
        assert_eq!(parse_decode_mode("topk:5").unwrap(), DecodeMode::TopK { k: 5 });
        assert!(parse_decode_mode("topk:0").is_err());
        assert!(parse_decode_mode("beam").is_err());
    }
}
