//! Seven-way token categorization and the plain/derivative split.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::primitives::Address;

pub const DEFAULT_CURATED_LISTS: &str = include_str!("../data/curated_lists.txt");
pub const DEFAULT_DERIVATIVE_RULES: &str = include_str!("../data/derivative_rules.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenCategory {
    EthWeth,
    Wbtc,
    StableNcb,
    StableCryptoBacked,
    Governance,
    Derivative,
    Other,
}

impl TokenCategory {
    pub const ALL: [TokenCategory; 7] = [
        TokenCategory::EthWeth,
        TokenCategory::Wbtc,
        TokenCategory::StableNcb,
        TokenCategory::StableCryptoBacked,
        TokenCategory::Governance,
        TokenCategory::Derivative,
        TokenCategory::Other,
    ];

    pub fn label(self) -> &'static str {
        match self {
            TokenCategory::EthWeth => "eth_weth",
            TokenCategory::Wbtc => "wbtc",
            TokenCategory::StableNcb => "stable_ncb",
            TokenCategory::StableCryptoBacked => "stable_crypto_backed",
            TokenCategory::Governance => "governance",
            TokenCategory::Derivative => "derivative",
            TokenCategory::Other => "other",
        }
    }
}

impl fmt::Display for TokenCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for TokenCategory {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TokenCategory::ALL.into_iter().find(|c| c.label() == s).ok_or_else(|| format!("unknown token category {s:?}"))
    }
}

/// Whether wBTC counts as a plain asset when computing redeemable value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PlainPolicy {
    pub wbtc_plain: bool,
}

/// Plain tokens are the native asset, NCB stablecoins and governance tokens;
/// wBTC according to the policy.
pub fn is_plain(cat: TokenCategory, policy: PlainPolicy) -> bool {
    match cat {
        TokenCategory::EthWeth | TokenCategory::StableNcb | TokenCategory::Governance => true,
        TokenCategory::Wbtc => policy.wbtc_plain,
        TokenCategory::StableCryptoBacked | TokenCategory::Derivative | TokenCategory::Other => false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleField {
    Symbol,
    Name,
    Any,
}

#[derive(Debug, Clone)]
pub struct NameRule {
    pub category: TokenCategory,
    pub field: RuleField,
    pub pattern: Regex,
}

impl NameRule {
    fn matches(&self, meta: &TokenLabel) -> bool {
        match self.field {
            RuleField::Symbol => self.pattern.is_match(&meta.symbol),
            RuleField::Name => self.pattern.is_match(&meta.name),
            RuleField::Any => self.pattern.is_match(&meta.symbol) || self.pattern.is_match(&meta.name),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenLabel {
    pub symbol: String,
    pub name: String,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ListError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("{address} appears in both [{first}] and [{second}]")]
    Conflict { address: Address, first: &'static str, second: &'static str },
    #[error("section [{0}] needs exactly one address")]
    Single(&'static str),
}

#[derive(Debug, Clone)]
pub struct CuratedLists {
    pub weth: Address,
    pub wbtc: Address,
    pub ncb_stables: BTreeSet<Address>,
    pub cb_stables: BTreeSet<Address>,
    pub governance: BTreeSet<Address>,
    pub derivative_name_rules: Vec<NameRule>,
}

impl CuratedLists {
    pub fn standard() -> Self {
        CuratedLists::parse(DEFAULT_CURATED_LISTS, DEFAULT_DERIVATIVE_RULES).expect("bundled lists are valid")
    }

    pub fn parse(lists: &str, rules: &str) -> Result<Self, ListError> {
        const SECTIONS: [&str; 5] = ["weth", "wbtc", "ncb_stables", "cb_stables", "governance"];
        let mut sets: [BTreeSet<Address>; 5] = Default::default();
        let mut current: Option<usize> = None;
        for (i, raw) in lists.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            let syntax = |message: String| ListError::Syntax { line: i + 1, message };
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                current = Some(
                    SECTIONS
                        .iter()
                        .position(|s| *s == name.trim())
                        .ok_or_else(|| syntax(format!("unknown section [{name}]")))?,
                );
                continue;
            }
            let idx = current.ok_or_else(|| syntax("address outside any section".into()))?;
            if line.chars().any(|c| c.is_ascii_uppercase()) {
                return Err(syntax(format!("address {line} must be lowercase")));
            }
            let addr: Address = line.parse().map_err(|e| syntax(format!("{e}")))?;
            sets[idx].insert(addr);
        }
        for a in 0..SECTIONS.len() {
            for b in a + 1..SECTIONS.len() {
                if let Some(address) = sets[a].intersection(&sets[b]).next() {
                    return Err(ListError::Conflict { address: *address, first: SECTIONS[a], second: SECTIONS[b] });
                }
            }
        }
        let single = |i: usize| -> Result<Address, ListError> {
            match sets[i].len() {
                1 => Ok(*sets[i].iter().next().expect("one element")),
                _ => Err(ListError::Single(SECTIONS[i])),
            }
        };
        let (weth, wbtc) = (single(0)?, single(1)?);
        let [_, _, ncb_stables, cb_stables, governance] = sets;
        Ok(CuratedLists { weth, wbtc, ncb_stables, cb_stables, governance, derivative_name_rules: parse_rules(rules)? })
    }
}

fn parse_rules(text: &str) -> Result<Vec<NameRule>, ListError> {
    let mut rules = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let syntax = |message: String| ListError::Syntax { line: i + 1, message };
        let (tag, pattern) = line.split_once(char::is_whitespace).ok_or_else(|| syntax("missing regex".into()))?;
        let (cat, field) = match tag.split_once(':') {
            Some((c, "symbol")) => (c, RuleField::Symbol),
            Some((c, "name")) => (c, RuleField::Name),
            Some((_, f)) => return Err(syntax(format!("unknown field {f:?}"))),
            None => (tag, RuleField::Any),
        };
        let category: TokenCategory = cat.parse().map_err(syntax)?;
        let pattern = Regex::new(pattern.trim()).map_err(|e| syntax(e.to_string()))?;
        rules.push(NameRule { category, field, pattern });
    }
    Ok(rules)
}

/// Category of a token (`None` is the native asset). Curated lists take
/// precedence over every name rule.
pub fn categorize(token: Option<Address>, meta: &TokenLabel, lists: &CuratedLists) -> TokenCategory {
    let Some(token) = token else {
        return TokenCategory::EthWeth;
    };
    if token == lists.weth {
        return TokenCategory::EthWeth;
    }
    if token == lists.wbtc {
        return TokenCategory::Wbtc;
    }
    if lists.ncb_stables.contains(&token) {
        return TokenCategory::StableNcb;
    }
    if lists.cb_stables.contains(&token) {
        return TokenCategory::StableCryptoBacked;
    }
    if lists.governance.contains(&token) || meta.name.to_lowercase().contains("governance") {
        return TokenCategory::Governance;
    }
    lists.derivative_name_rules.iter().find(|r| r.matches(meta)).map_or(TokenCategory::Other, |r| r.category)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn label(symbol: &str, name: &str) -> TokenLabel {
        TokenLabel { symbol: symbol.into(), name: name.into() }
    }

    fn addr(s: &str) -> Option<Address> {
        Some(s.parse().unwrap())
    }

    #[test]
    fn curated_and_rule_examples() {
        let l = CuratedLists::standard();
        let weth = addr("0xc02aaa39b223fe8d0a0e5c4f27ead9083c756cc2");
        assert_eq!(categorize(weth, &label("WETH", "Wrapped Ether"), &l), TokenCategory::EthWeth);
        assert_eq!(categorize(None, &TokenLabel::default(), &l), TokenCategory::EthWeth);
        let dai = addr("0x6b175474e89094c44da98b954eedeac495271d0f");
        assert_eq!(categorize(dai, &label("DAI", "Dai Stablecoin"), &l), TokenCategory::StableCryptoBacked);
        let usdc = addr("0xa0b86991c6218b36c1d19d4a2e9eb0ce3606eb48");
        assert_eq!(categorize(usdc, &label("USDC", "USD Coin"), &l), TokenCategory::StableNcb);
        let x = Some(Address([0x42; 20]));
        assert_eq!(categorize(x, &label("UNI-V2 LP", "Uniswap V2"), &l), TokenCategory::Derivative);
        assert_eq!(categorize(x, &label("cDAI", "Compound Dai"), &l), TokenCategory::Derivative);
        assert_eq!(categorize(x, &label("CDAI", "Some Coin"), &l), TokenCategory::Other);
        assert_eq!(categorize(x, &label("aWETH", "Aave interest bearing WETH"), &l), TokenCategory::Derivative);
        assert_eq!(categorize(x, &label("stETH", "Liquid staked Ether 2.0"), &l), TokenCategory::Derivative);
        assert_eq!(categorize(x, &label("BPOOL", "Balancer Pool"), &l), TokenCategory::Derivative);
        assert_eq!(categorize(x, &label("XYZ", "XYZ Governance Token"), &l), TokenCategory::Governance);
        assert_eq!(categorize(x, &label("PEPE", "Pepe"), &l), TokenCategory::Other);
    }

    #[test]
    fn curated_list_wins_over_rules() {
        let l = CuratedLists::standard();
        let susd = addr("0x57ab1ec28d129707052df4df418d58a2d46d5f51");
        // The sToken rule would match "sUSD", but the curated list decides.
        assert_eq!(categorize(susd, &label("sUSD", "Synth sUSD"), &l), TokenCategory::StableCryptoBacked);
        let uni = addr("0x1f9840a85d5af5bf1d1762f925bdaddc4201f984");
        assert_eq!(categorize(uni, &label("UNI-V2 LP", "Uniswap Pool"), &l), TokenCategory::Governance);
    }

    #[test]
    fn plain_split() {
        let no = PlainPolicy::default();
        let yes = PlainPolicy { wbtc_plain: true };
        assert!(is_plain(TokenCategory::Governance, no));
        assert!(is_plain(TokenCategory::EthWeth, no));
        assert!(is_plain(TokenCategory::StableNcb, no));
        assert!(!is_plain(TokenCategory::Derivative, no));
        assert!(!is_plain(TokenCategory::StableCryptoBacked, no));
        assert!(!is_plain(TokenCategory::Other, yes));
        assert!(!is_plain(TokenCategory::Wbtc, no));
        assert!(is_plain(TokenCategory::Wbtc, yes));
    }

    #[test]
    fn overlapping_lists_are_rejected() {
        let a = "0x1111111111111111111111111111111111111111";
        let text = format!("[weth]\n{a}\n[wbtc]\n0x2222222222222222222222222222222222222222\n[governance]\n{a}\n");
        assert_eq!(
            CuratedLists::parse(&text, "").unwrap_err(),
            ListError::Conflict { address: a.parse().unwrap(), first: "weth", second: "governance" }
        );
        assert!(matches!(CuratedLists::parse("[weth]\n0xABCD", ""), Err(ListError::Syntax { line: 2, .. })));
        assert!(matches!(CuratedLists::parse("[stuff]\n", ""), Err(ListError::Syntax { line: 1, .. })));
        assert_eq!(CuratedLists::parse("[weth]\n", "").unwrap_err(), ListError::Single("weth"));
        let lists = format!("[weth]\n{a}\n[wbtc]\n0x2222222222222222222222222222222222222222\n");
        assert!(matches!(CuratedLists::parse(&lists, "bogus x"), Err(ListError::Syntax { line: 1, .. })));
        assert!(matches!(CuratedLists::parse(&lists, "derivative ("), Err(ListError::Syntax { .. })));
    }

    proptest! {
        #[test]
        fn categorization_is_exclusive_and_stable(symbol in "[A-Za-z0-9 -]{0,12}", name in "[A-Za-z ]{0,20}", n in 0u8..255) {
            let l = CuratedLists::standard();
            let token = Some(Address([n; 20]));
            let meta = label(&symbol, &name);
            let c = categorize(token, &meta, &l);
            prop_assert_eq!(c, categorize(token, &meta, &l));
            for curated in l.governance.iter().chain(&l.ncb_stables).chain(&l.cb_stables) {
                let got = categorize(Some(*curated), &meta, &l);
                prop_assert!(matches!(got, TokenCategory::Governance | TokenCategory::StableNcb | TokenCategory::StableCryptoBacked));
            }
        }
    }
}
