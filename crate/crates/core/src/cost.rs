//! Blockwise vs whole-document embedding cost comparison.
//!
//! Blockwise encoding runs one pass per retained block; the whole-document
//! alternative encodes the same retained text in a single pass. Cost is
//! modeled as the sum of squared pass lengths and also measured in wall time.

use std::time::Instant;

use serde::Serialize;

use crate::corpus::CorpusRecord;
use crate::embed::{embedding_cost, Embedder, EmbedderKind, InputFormat};
use crate::error::Result;
use crate::segment::{segment, truncate_blocks, SegmentationConfig};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct PassCost {
    pub passes: u64,
    pub tokens: u64,
    pub modeled_cost: u64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct CostComparison {
    pub documents: u64,
    pub blockwise: PassCost,
    pub whole_document: PassCost,
    /// `blockwise.modeled_cost / whole_document.modeled_cost`, 0 when empty.
    pub modeled_ratio: f64,
}

/// Modeled cost of `blocks` blocks of `tokens` tokens relative to one pass
/// over all of them.
pub fn modeled_block_ratio(blocks: u64, tokens: u64) -> f64 {
    let blockwise = blocks * embedding_cost(tokens);
    let whole = embedding_cost(blocks * tokens);
    if whole == 0 {
        0.0
    } else {
        blockwise as f64 / whole as f64
    }
}

pub fn compare_costs(
    records: &[CorpusRecord],
    segmentation: &SegmentationConfig,
    format: &InputFormat,
    embedder: &dyn Embedder,
) -> Result<CostComparison> {
    let mut out = CostComparison::default();
    for rec in records {
        let text = rec.full_text();
        let blocks = truncate_blocks(segment(&text, segmentation)?, segmentation.max_blocks);
        if blocks.is_empty() {
            continue;
        }
        out.documents += 1;
        let block_inputs: Vec<String> = blocks
            .iter()
            .map(|b| format.format(&b.text, EmbedderKind::Passage))
            .collect();
        let covered = &text[blocks[0].tokens[0].start..blocks[blocks.len() - 1].text_end()];
        let whole_input = vec![format.format(covered, EmbedderKind::Passage)];

        let t = Instant::now();
        for input in &block_inputs {
            embedder.embed(std::slice::from_ref(input), EmbedderKind::Passage)?;
        }
        out.blockwise.wall_seconds += t.elapsed().as_secs_f64();
        let t = Instant::now();
        embedder.embed(&whole_input, EmbedderKind::Passage)?;
        out.whole_document.wall_seconds += t.elapsed().as_secs_f64();

        let total: u64 = blocks.iter().map(|b| b.token_count as u64).sum();
        out.blockwise.passes += blocks.len() as u64;
        out.blockwise.tokens += total;
        out.blockwise.modeled_cost += blocks
            .iter()
            .map(|b| embedding_cost(b.token_count as u64))
            .sum::<u64>();
        out.whole_document.passes += 1;
        out.whole_document.tokens += total;
        out.whole_document.modeled_cost += embedding_cost(total);
    }
    if out.whole_document.modeled_cost > 0 {
        out.modeled_ratio =
            out.blockwise.modeled_cost as f64 / out.whole_document.modeled_cost as f64;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::{HashEmbedder, QuadraticCostEmbedder};

    #[test]
    fn twenty_blocks_cost_five_percent() {
        assert_eq!(modeled_block_ratio(20, 63), 0.05);
        assert_eq!(modeled_block_ratio(0, 63), 0.0);
    }

    #[test]
    fn fixture_ratio() {
        let words: Vec<String> = (0..1260).map(|i| format!("w{}", i % 97)).collect();
        let rec = CorpusRecord {
            doc_id: "d".into(),
            text: words.join(" "),
            title: None,
        };
        let e = QuadraticCostEmbedder::new(HashEmbedder::new(8, 1));
        let r = compare_costs(
            &[rec],
            &SegmentationConfig::default(),
            &InputFormat::default(),
            &e,
        )
        .unwrap();
        assert_eq!(r.blockwise.passes, 20);
        assert_eq!(r.blockwise.tokens, 1260);
        assert_eq!(r.blockwise.modeled_cost, 79_380);
        assert_eq!(r.whole_document.modeled_cost, 1_587_600);
        assert_eq!(r.modeled_ratio, 0.05);
    }

    #[test]
    fn empty_corpus() {
        let e = HashEmbedder::new(8, 1);
        let r = compare_costs(
            &[],
            &SegmentationConfig::default(),
            &InputFormat::default(),
            &e,
        )
        .unwrap();
        assert_eq!(r, CostComparison::default());
    }
}
