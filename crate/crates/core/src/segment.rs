//! Punctuation-aware block segmentation.
//!
//! The dynamic-programming strategy picks, among all ways of cutting the
//! token sequence into blocks of at most `max_block_tokens` tokens, a cut set
//! maximizing the summed weight of its split points. A split directly after a
//! punctuation token earns that mark's weight; any other split earns nothing,
//! so unpunctuated runs longer than the cap are force-split.

use std::collections::BTreeMap;
use std::ops::Range;

use crate::error::{Error, Result};
use crate::tokenize::{tokenize, Token};

/// Relative tolerance used when comparing split-weight totals.
const SCORE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentationStrategy {
    DynamicProgramming,
    FixedLength(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationConfig {
    pub max_block_tokens: usize,
    pub max_blocks: usize,
    pub punctuation_weights: BTreeMap<char, f64>,
    pub strategy: SegmentationStrategy,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        Self {
            max_block_tokens: 63,
            max_blocks: 20,
            punctuation_weights: default_punctuation_weights(),
            strategy: SegmentationStrategy::DynamicProgramming,
        }
    }
}

/// Sentence-final marks weigh 3, clause marks 2, commas 1.
pub fn default_punctuation_weights() -> BTreeMap<char, f64> {
    let mut w = BTreeMap::new();
    for c in ['.', '!', '?', '。', '！', '？'] {
        w.insert(c, 3.0);
    }
    for c in [';', ':', '；', '：'] {
        w.insert(c, 2.0);
    }
    for c in [',', '，'] {
        w.insert(c, 1.0);
    }
    w
}

impl SegmentationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_block_tokens == 0 {
            return Err(Error::config(
                "segmentation.max_block_tokens",
                "must be >= 1",
            ));
        }
        if self.max_blocks == 0 {
            return Err(Error::config("segmentation.max_blocks", "must be >= 1"));
        }
        if let SegmentationStrategy::FixedLength(0) = self.strategy {
            return Err(Error::config("segmentation.fixed_length", "must be >= 1"));
        }
        for (c, w) in &self.punctuation_weights {
            if !(w.is_finite() && *w >= 0.0) {
                return Err(Error::config(
                    format!("segmentation.punctuation_weights.{c}"),
                    "must be a finite nonnegative number",
                ));
            }
        }
        Ok(())
    }

    /// Weight earned by a split placed directly after `token`.
    pub fn split_weight(&self, token: &Token) -> f64 {
        token
            .punct_char()
            .and_then(|c| self.punctuation_weights.get(&c).copied())
            .unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub index: usize,
    pub tokens: Vec<Token>,
    /// Exact substring of the source document.
    pub text: String,
    pub token_count: usize,
}

impl Block {
    /// Byte offset one past the block's last token in the source document.
    pub fn text_end(&self) -> usize {
        self.tokens.last().map_or(0, |t| t.end)
    }
}

/// Split `document` into blocks. The `max_blocks` cap is not applied here; see
/// [`truncate_blocks`].
pub fn segment(document: &str, config: &SegmentationConfig) -> Result<Vec<Block>> {
    config.validate()?;
    let tokenized = tokenize(document);
    let ranges = segment_tokens(&tokenized.tokens, config);
    Ok(ranges
        .into_iter()
        .enumerate()
        .map(|(index, r)| {
            let tokens = tokenized.tokens[r].to_vec();
            let text = document[tokens[0].start..tokens[tokens.len() - 1].end].to_string();
            Block {
                index,
                token_count: tokens.len(),
                tokens,
                text,
            }
        })
        .collect())
}

/// Block boundaries over a token sequence, as half-open token index ranges.
pub fn segment_tokens(tokens: &[Token], config: &SegmentationConfig) -> Vec<Range<usize>> {
    match config.strategy {
        SegmentationStrategy::FixedLength(len) => fixed_length(tokens.len(), len),
        SegmentationStrategy::DynamicProgramming => {
            let weights: Vec<f64> = tokens.iter().map(|t| config.split_weight(t)).collect();
            best_split(&weights, config.max_block_tokens)
        }
    }
}

fn fixed_length(n: usize, len: usize) -> Vec<Range<usize>> {
    let len = len.max(1);
    (0..n).step_by(len).map(|s| s..(s + len).min(n)).collect()
}

#[derive(Clone, Copy)]
struct Best {
    score: f64,
    blocks: usize,
    next: usize,
}

/// `after_weights[i]` is the weight of a split placed right after token `i`.
///
/// Ties on total weight prefer fewer blocks, then longer leading blocks.
pub fn best_split(after_weights: &[f64], max_len: usize) -> Vec<Range<usize>> {
    let n = after_weights.len();
    if n == 0 {
        return Vec::new();
    }
    let max_len = max_len.max(1);
    // best[i]: optimal segmentation of the suffix starting at token i.
    let mut best = vec![
        Best {
            score: 0.0,
            blocks: 0,
            next: n,
        };
        n + 1
    ];
    for i in (0..n).rev() {
        let mut cur: Option<Best> = None;
        let hi = (i + max_len).min(n);
        for j in (i + 1..=hi).rev() {
            let gain = if j < n { after_weights[j - 1] } else { 0.0 };
            let cand = Best {
                score: gain + best[j].score,
                blocks: 1 + best[j].blocks,
                next: j,
            };
            cur = Some(match cur {
                None => cand,
                Some(c) if better(&cand, &c) => cand,
                Some(c) => c,
            });
        }
        best[i] = cur.expect("at least one block end candidate");
    }
    let mut out = Vec::with_capacity(best[0].blocks);
    let mut i = 0;
    while i < n {
        let j = best[i].next;
        out.push(i..j);
        i = j;
    }
    out
}

fn better(a: &Best, b: &Best) -> bool {
    let tol = SCORE_EPS * a.score.abs().max(b.score.abs()).max(1.0);
    if a.score > b.score + tol {
        return true;
    }
    if b.score > a.score + tol {
        return false;
    }
    a.blocks < b.blocks
}

/// Total split weight of a segmentation.
pub fn split_weight_total(after_weights: &[f64], blocks: &[Range<usize>]) -> f64 {
    let n = after_weights.len();
    blocks
        .iter()
        .filter(|r| r.end < n)
        .map(|r| after_weights[r.end - 1])
        .sum()
}

/// The first `n` blocks, in order.
pub fn truncate_blocks(mut blocks: Vec<Block>, n: usize) -> Vec<Block> {
    blocks.truncate(n);
    blocks
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(l: usize) -> SegmentationConfig {
        SegmentationConfig {
            max_block_tokens: l,
            ..Default::default()
        }
    }

    fn block_texts(blocks: &[Block]) -> Vec<String> {
        blocks.iter().map(|b| b.text.clone()).collect()
    }

    #[test]
    fn splits_after_period() {
        let mut c = cfg(3);
        c.punctuation_weights = BTreeMap::from([('.', 3.0)]);
        let blocks = segment("a b. c d", &c).unwrap();
        assert_eq!(block_texts(&blocks), vec!["a b.", "c d"]);
        assert_eq!(blocks[0].token_count, 3);
        assert_eq!(blocks[1].index, 1);
    }

    #[test]
    fn single_block_when_it_fits() {
        let blocks = segment("one two three four!", &cfg(63)).unwrap();
        assert_eq!(blocks.len(), 1);
        assert_eq!(blocks[0].token_count, 5);
    }

    #[test]
    fn every_weighted_mark_earns_a_split() {
        let blocks = segment("a, b c. d e", &cfg(5)).unwrap();
        assert_eq!(block_texts(&blocks), vec!["a,", "b c.", "d e"]);
    }

    #[test]
    fn zero_weight_marks_do_not_split() {
        let mut c = cfg(63);
        c.punctuation_weights = BTreeMap::from([('.', 3.0)]);
        let blocks = segment("a, b c. d e", &c).unwrap();
        assert_eq!(block_texts(&blocks), vec!["a, b c.", "d e"]);
    }

    #[test]
    fn force_split_without_punctuation() {
        let blocks = segment("a b c d e f g", &cfg(3)).unwrap();
        assert_eq!(block_texts(&blocks), vec!["a b c", "d e f", "g"]);
    }

    #[test]
    fn fixed_length_chunks() {
        let mut c = cfg(63);
        c.strategy = SegmentationStrategy::FixedLength(4);
        let blocks = segment("a b c d e f g h i j", &c).unwrap();
        let sizes: Vec<_> = blocks.iter().map(|b| b.token_count).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
    }

    #[test]
    fn empty_document() {
        assert!(segment("", &cfg(5)).unwrap().is_empty());
        assert!(segment("   ", &cfg(5)).unwrap().is_empty());
    }

    #[test]
    fn truncation() {
        let blocks = segment(&"w. ".repeat(25), &cfg(2)).unwrap();
        assert_eq!(blocks.len(), 25);
        let kept = truncate_blocks(blocks.clone(), 20);
        assert_eq!(kept.len(), 20);
        assert_eq!(kept[..], blocks[..20]);
        assert_eq!(truncate_blocks(blocks[..5].to_vec(), 20).len(), 5);
        assert!(truncate_blocks(Vec::new(), 20).is_empty());
    }

    #[test]
    fn invalid_config() {
        assert!(segment("a", &cfg(0)).is_err());
        let mut c = cfg(3);
        c.punctuation_weights.insert('.', -1.0);
        assert!(matches!(segment("a", &c), Err(Error::InvalidConfig { .. })));
    }

    #[test]
    fn chinese_text_segments() {
        let blocks = segment("你好世界。今天天气很好，我们出去玩吧！", &cfg(6)).unwrap();
        assert_eq!(blocks[0].text, "你好世界。");
        assert!(blocks.iter().all(|b| b.token_count <= 6));
    }

    proptest! {
        #[test]
        fn blocks_cover_document(words in proptest::collection::vec("[a-z]{1,4}[.,;]?", 0..60), l in 1usize..10) {
            let doc = words.join(" ");
            let blocks = segment(&doc, &cfg(l)).unwrap();
            let tokens = tokenize(&doc);
            let total: usize = blocks.iter().map(|b| b.token_count).sum();
            prop_assert_eq!(total, tokens.len());
            let mut rebuilt = tokens.separators[0].clone();
            let mut t = 0;
            for b in &blocks {
                prop_assert!(b.token_count >= 1 && b.token_count <= l);
                if t > 0 { rebuilt.push_str(&tokens.separators[t]); }
                rebuilt.push_str(&b.text);
                t += b.token_count;
            }
            rebuilt.push_str(tokens.separators.last().unwrap());
            prop_assert_eq!(rebuilt, doc.clone());
            prop_assert_eq!(segment(&doc, &cfg(l)).unwrap(), blocks);
        }
    }
}
