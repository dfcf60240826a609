//! Standard / alternative / supplementary classification of queried functions.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::profile::ProtocolProfile;
use crate::signatures::{name_of, FunctionSig, Resolution};

pub const DEFAULT_CLASSIFIER_RULES: &str = include_str!("../data/classifier_rules.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallClass {
    StandardBalance,
    AlternativeBalance,
    Supplementary,
    Unrelated,
}

impl CallClass {
    pub fn label(self) -> &'static str {
        match self {
            CallClass::StandardBalance => "standard_balance",
            CallClass::AlternativeBalance => "alternative_balance",
            CallClass::Supplementary => "supplementary",
            CallClass::Unrelated => "unrelated",
        }
    }
}

impl fmt::Display for CallClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MethodClass {
    pub signature: FunctionSig,
    pub class: CallClass,
    pub matched_rule: Option<String>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RulesError {
    #[error("line {line}: unknown section [{name}]")]
    UnknownSection { line: usize, name: String },
    #[error("line {line}: entry outside any section")]
    NoSection { line: usize },
    #[error("section [{0}] is empty")]
    EmptySection(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassifierRules {
    /// Canonical signatures counted as standard balance queries.
    pub standard: BTreeSet<String>,
    /// Lowercased function names that are never alternative balance functions.
    pub exclusions: BTreeSet<String>,
    pub prefix_terms: Vec<String>,
    pub suffix_terms: Vec<String>,
}

impl Default for ClassifierRules {
    fn default() -> Self {
        ClassifierRules::parse(DEFAULT_CLASSIFIER_RULES).expect("bundled classifier rules parse")
    }
}

impl ClassifierRules {
    pub fn parse(text: &str) -> Result<Self, RulesError> {
        #[derive(Clone, Copy)]
        enum Section {
            Standard,
            Exclusions,
            Prefix,
            Suffix,
        }
        let mut rules = ClassifierRules {
            standard: BTreeSet::new(),
            exclusions: BTreeSet::new(),
            prefix_terms: Vec::new(),
            suffix_terms: Vec::new(),
        };
        let mut section = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = Some(match name.trim() {
                    "standard" => Section::Standard,
                    "exclusions" => Section::Exclusions,
                    "prefix_terms" => Section::Prefix,
                    "suffix_terms" => Section::Suffix,
                    other => return Err(RulesError::UnknownSection { line: i + 1, name: other.to_string() }),
                });
                continue;
            }
            match section.ok_or(RulesError::NoSection { line: i + 1 })? {
                Section::Standard => {
                    rules.standard.insert(line.to_string());
                }
                Section::Exclusions => {
                    rules.exclusions.insert(line.to_ascii_lowercase());
                }
                Section::Prefix => rules.prefix_terms.push(line.to_ascii_lowercase()),
                Section::Suffix => rules.suffix_terms.push(line.to_ascii_lowercase()),
            }
        }
        if rules.standard.is_empty() {
            return Err(RulesError::EmptySection("standard"));
        }
        Ok(rules)
    }

    /// Classifies one canonical signature. Returns the class and the rule that
    /// fired.
    pub fn classify_signature(&self, canonical: &str) -> (CallClass, String) {
        if self.standard.contains(canonical) {
            return (CallClass::StandardBalance, "standard".into());
        }
        let name = name_of(canonical).to_ascii_lowercase();
        if self.exclusions.contains(&name) {
            return (CallClass::Supplementary, format!("exclusion:{}", name_of(canonical)));
        }
        if name.contains("balance") {
            return (CallClass::AlternativeBalance, "term:balance".into());
        }
        if let Some((p, s)) = self.term_pair(&name) {
            return (CallClass::AlternativeBalance, format!("terms:{p}+{s}"));
        }
        (CallClass::Unrelated, "none".into())
    }

    /// First (prefix, suffix) pair occurring in `name` at non-overlapping
    /// positions.
    fn term_pair(&self, name: &str) -> Option<(&str, &str)> {
        let spans =
            |term: &str| -> Vec<(usize, usize)> { name.match_indices(term).map(|(i, t)| (i, i + t.len())).collect() };
        for p in &self.prefix_terms {
            let ps = spans(p);
            if ps.is_empty() {
                continue;
            }
            for s in &self.suffix_terms {
                let disjoint = spans(s).iter().any(|&(a, b)| ps.iter().any(|&(c, d)| b <= c || d <= a));
                if disjoint {
                    return Some((p, s));
                }
            }
        }
        None
    }

    pub fn classify_method(&self, sig: &FunctionSig) -> MethodClass {
        let (class, rule) = match sig.resolution {
            Resolution::Unknown => (CallClass::Unrelated, "unresolved".to_string()),
            Resolution::Ambiguous => {
                // Never standard; keep a class only if every candidate agrees.
                let classes: BTreeSet<CallClass> = sig
                    .candidates
                    .iter()
                    .map(|c| match self.classify_signature(c).0 {
                        CallClass::StandardBalance => CallClass::Unrelated,
                        other => other,
                    })
                    .collect();
                match classes.iter().next() {
                    Some(&only) if classes.len() == 1 => (only, "ambiguous".to_string()),
                    _ => (CallClass::Unrelated, "ambiguous".to_string()),
                }
            }
            Resolution::LocalDb | Resolution::RemoteDirectory => self.classify_signature(&sig.canonical_signature),
        };
        MethodClass { signature: sig.clone(), class, matched_rule: Some(rule) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReviewItem {
    pub signature: String,
    pub total_count: u64,
    pub protocol_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusClassification {
    /// Class call counts per protocol.
    pub per_protocol: BTreeMap<String, BTreeMap<CallClass, u64>>,
    pub methods: BTreeMap<String, MethodClass>,
    pub alternative_functions: BTreeSet<String>,
    /// Among protocols issuing any balance query, the share issuing only
    /// standard ones.
    pub standard_only_share: f64,
    /// Unrelated functions called by at least `review_min_protocols`
    /// protocols, most frequent first, for manual review.
    pub review_queue: Vec<ReviewItem>,
}

pub fn classify_corpus(
    profiles: &[ProtocolProfile],
    rules: &ClassifierRules,
    review_min_protocols: usize,
) -> CorpusClassification {
    let mut methods: BTreeMap<String, MethodClass> = BTreeMap::new();
    let mut per_protocol = BTreeMap::new();
    let mut unrelated: BTreeMap<String, (u64, usize)> = BTreeMap::new();
    let (mut balance_users, mut standard_only) = (0usize, 0usize);
    for p in profiles {
        let mut hist: BTreeMap<CallClass, u64> = BTreeMap::new();
        for (key, &count) in &p.method_histogram {
            let class = methods
                .entry(key.clone())
                .or_insert_with(|| match p.signatures.get(key) {
                    Some(sig) => rules.classify_method(sig),
                    None => MethodClass {
                        signature: FunctionSig::from_canonical(key),
                        class: rules.classify_signature(key).0,
                        matched_rule: Some(rules.classify_signature(key).1),
                    },
                })
                .class;
            *hist.entry(class).or_default() += count;
            if class == CallClass::Unrelated {
                let e = unrelated.entry(key.clone()).or_default();
                e.0 += count;
                e.1 += 1;
            }
        }
        let std = hist.get(&CallClass::StandardBalance).copied().unwrap_or(0);
        let alt = hist.get(&CallClass::AlternativeBalance).copied().unwrap_or(0);
        if std + alt > 0 {
            balance_users += 1;
            if alt == 0 {
                standard_only += 1;
            }
        }
        per_protocol.insert(p.protocol_id.clone(), hist);
    }
    let alternative_functions =
        methods.iter().filter(|(_, m)| m.class == CallClass::AlternativeBalance).map(|(k, _)| k.clone()).collect();
    let mut review_queue: Vec<ReviewItem> = unrelated
        .into_iter()
        .filter(|(_, (_, protocols))| *protocols >= review_min_protocols)
        .map(|(signature, (total_count, protocol_count))| ReviewItem { signature, total_count, protocol_count })
        .collect();
    review_queue.sort_by(|a, b| {
        b.total_count
            .cmp(&a.total_count)
            .then(b.protocol_count.cmp(&a.protocol_count))
            .then(a.signature.cmp(&b.signature))
    });
    CorpusClassification {
        per_protocol,
        methods,
        alternative_functions,
        standard_only_share: if balance_users == 0 { f64::NAN } else { standard_only as f64 / balance_users as f64 },
        review_queue,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
#[error("no standard balance calls in snapshot; ratio undefined")]
pub struct UndefinedRatio;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AltRatio {
    pub alternative_calls: u64,
    pub standard_calls: u64,
    /// Alternative calls as a share of all balance calls.
    pub ratio: f64,
}

/// Share of alternative balance calls among all balance calls at one
/// snapshot, skipping protocols that used external hosts or raised errors.
pub fn alt_ratio(profiles: &[ProtocolProfile], rules: &ClassifierRules) -> Result<AltRatio, UndefinedRatio> {
    let (mut alternative_calls, mut standard_calls) = (0u64, 0u64);
    let mut memo: BTreeMap<&str, CallClass> = BTreeMap::new();
    for p in profiles.iter().filter(|p| !p.is_flagged()) {
        for (key, &count) in &p.method_histogram {
            let class = *memo.entry(key.as_str()).or_insert_with(|| match p.signatures.get(key) {
                Some(sig) => rules.classify_method(sig).class,
                None => rules.classify_signature(key).0,
            });
            match class {
                CallClass::StandardBalance => standard_calls += count,
                CallClass::AlternativeBalance => alternative_calls += count,
                _ => {}
            }
        }
    }
    if standard_calls == 0 {
        return Err(UndefinedRatio);
    }
    Ok(AltRatio {
        alternative_calls,
        standard_calls,
        ratio: alternative_calls as f64 / (alternative_calls + standard_calls) as f64,
    })
}
