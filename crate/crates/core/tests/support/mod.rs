// SPDX-License-Identifier: MIT OR Apache-2.0

#![allow(dead_code)]

pub mod reference;

use ppscope_core::suite::{render_prompt, shipped_suite, word_level_vocab, PromptItem};
use ppscope_core::tokenizer::Vocab;
use ppscope_core::toy::random_model;
use ppscope_core::Model;

/// Shipped suite, its word-level vocabulary, and the first `n` prompts
/// encoded.
pub fn suite_prompts(n: usize) -> (Vec<PromptItem>, Vocab, Vec<Vec<u32>>) {
    let items = shipped_suite();
    let vocab = word_level_vocab(&items).unwrap();
    let toks = items
        .iter()
        .take(n)
        .map(|it| vocab.encode(&render_prompt(it)))
        .collect();
    (items, vocab, toks)
}

pub fn toy(seed: u64, vocab: &Vocab) -> Model {
    random_model(seed, vocab.len())
}

pub fn max_abs_diff(a: &[f32], b: &[f32]) -> f32 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f32::max)
}
