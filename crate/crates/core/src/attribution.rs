// SPDX-License-Identifier: MIT OR Apache-2.0

//! Direct logit attribution of the attribute-minus-instrument logit
//! difference.
//!
//! Every component writes additively into the residual stream, and with the
//! final-norm scale frozen at its realized value the map from residual to
//! pre-softcap logits is linear. The direct effect of a component with
//! residual contribution `c` at the readout position is therefore
//!
//! ```text
//! frozen_norm(c) · (u_attribute − u_instrument)
//! ```
//!
//! where `u_t` is the unembedding direction of token `t`. Positive values
//! push toward the attribute, negative toward the instrument. The embedding,
//! all heads, all MLP neurons and (when present) the attention output biases
//! together account for the full pre-softcap logit difference.
//!
//! The unembedding rows are not centered: a shift shared by every row
//! cancels in the difference.

use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::model::{ActivationCache, ForwardOutput, Model};
use crate::suite::{render_prompt, PromptItem};
use crate::tensor::{dot, matvec};
use crate::tokenizer::Vocab;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetPair {
    pub instrument: u32,
    pub attribute: u32,
}

impl TargetPair {
    pub fn new(instrument: u32, attribute: u32) -> Self {
        Self {
            instrument,
            attribute,
        }
    }

    pub fn swapped(self) -> Self {
        Self {
            instrument: self.attribute,
            attribute: self.instrument,
        }
    }

    /// First tokens of the item's two candidates as they would follow its
    /// rendered prompt.
    pub fn for_item(vocab: &Vocab, item: &PromptItem) -> Result<Self> {
        let prompt = render_prompt(item);
        Ok(Self {
            instrument: vocab.first_token_id(item.instrument(), &prompt)?.id,
            attribute: vocab.first_token_id(item.attribute(), &prompt)?.id,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapKind {
    Heads,
    Neurons,
}

impl MapKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MapKind::Heads => "heads",
            MapKind::Neurons => "neurons",
        }
    }
}

/// `layers × units` grid of signed logit-difference contributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionMap {
    pub kind: MapKind,
    pub n_layers: usize,
    pub n_units: usize,
    /// Layer-major values.
    pub values: Vec<f32>,
    /// Attributed position; `None` for maps averaged over prompts of
    /// different lengths.
    pub position: Option<usize>,
}

impl AttributionMap {
    pub fn zeros(kind: MapKind, n_layers: usize, n_units: usize) -> Self {
        Self {
            kind,
            n_layers,
            n_units,
            values: vec![0.0; n_layers * n_units],
            position: None,
        }
    }

    /// Empty map shaped for `cfg`.
    pub fn for_config(kind: MapKind, cfg: &ModelConfig) -> Self {
        let units = match kind {
            MapKind::Heads => cfg.n_heads,
            MapKind::Neurons => cfg.d_mlp,
        };
        Self::zeros(kind, cfg.n_layers, units)
    }

    #[inline]
    pub fn get(&self, layer: usize, unit: usize) -> f32 {
        self.values[layer * self.n_units + unit]
    }

    pub fn layer(&self, layer: usize) -> &[f32] {
        &self.values[layer * self.n_units..(layer + 1) * self.n_units]
    }

    pub fn total(&self) -> f32 {
        let mut acc = 0.0f32;
        for v in &self.values {
            acc += v;
        }
        acc
    }

    /// `(layer, unit)` with the most negative value (strongest push toward
    /// the instrument). Earliest entry wins ties.
    pub fn most_negative(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v < self.values[best] {
                best = i;
            }
        }
        (best / self.n_units, best % self.n_units)
    }

    /// All entries ordered by decreasing absolute value (stable).
    pub fn ranked_by_magnitude(&self) -> Vec<(usize, usize, f32)> {
        let mut entries: Vec<(usize, usize, f32)> = self
            .values
            .iter()
            .enumerate()
            .map(|(i, &v)| (i / self.n_units, i % self.n_units, v))
            .collect();
        entries.sort_by(|a, b| b.2.abs().total_cmp(&a.2.abs()));
        entries
    }

    fn rows<'a>(&'a self, prompt_id: Option<&'a str>) -> impl Iterator<Item = AttributionRow> + 'a {
        (0..self.n_layers).flat_map(move |layer| {
            (0..self.n_units).map(move |unit| AttributionRow {
                layer,
                unit,
                value: self.get(layer, unit),
                kind: self.kind,
                prompt_id: prompt_id.map(str::to_string),
            })
        })
    }
}

/// Where and how a logit difference is read out.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Readout {
    pub position: usize,
    /// Final-norm scale treated as a constant.
    pub scale: f32,
}

impl Readout {
    /// Last position of the cached sequence with its realized scale.
    pub fn last(cache: &ActivationCache) -> Self {
        let position = cache.seq_len() - 1;
        Self {
            position,
            scale: cache.final_scale[position],
        }
    }

    pub fn at(cache: &ActivationCache, position: usize) -> Result<Self> {
        let scale = *cache.final_scale.get(position).ok_or_else(|| {
            Error::Attribution(format!(
                "position {position} outside a cached sequence of {}",
                cache.seq_len()
            ))
        })?;
        Ok(Self { position, scale })
    }
}

fn check(model: &Model, cache: &ActivationCache, pair: TargetPair, readout: Readout) -> Result<()> {
    let cfg = model.config();
    let consistent = cache.n_layers() == cfg.n_layers
        && cache.z.iter().all(|l| l.len() == cfg.n_heads)
        && cache.mlp_act.iter().all(|a| a.cols() == cfg.d_mlp)
        && cache.embed.cols() == cfg.d_model;
    if !consistent {
        return Err(Error::Attribution(
            "activation cache does not match the model config".into(),
        ));
    }
    if readout.position >= cache.seq_len() {
        return Err(Error::Attribution(format!(
            "position {} outside a cached sequence of {}",
            readout.position,
            cache.seq_len()
        )));
    }
    for id in [pair.instrument, pair.attribute] {
        if id as usize >= cfg.vocab_size {
            return Err(Error::TokenOutOfRange {
                id,
                vocab_size: cfg.vocab_size,
            });
        }
    }
    Ok(())
}

/// Residual-space readout direction: the vector `w` with
/// `frozen_norm(c) · Δu == c · w` for every residual vector `c`.
pub fn readout_direction(model: &Model, pair: TargetPair, scale: f32) -> Vec<f32> {
    let w = model.weights();
    let u_attr = w.unembed_column(pair.attribute as usize);
    let u_instr = w.unembed_column(pair.instrument as usize);
    let dir: Vec<f32> = u_attr
        .iter()
        .zip(&u_instr)
        .zip(&w.final_norm)
        .map(|((a, i), g)| (a - i) * g * scale)
        .collect();
    match model.config().norm_kind {
        crate::config::NormKind::Rms => dir,
        // Centering is self-adjoint: (c - mean c)·d == c·(d - mean d).
        crate::config::NormKind::Layernorm => {
            let mu = crate::tensor::mean(&dir);
            dir.iter().map(|d| d - mu).collect()
        }
    }
}

/// Head map at the last cached position.
pub fn head_attribution(
    model: &Model,
    cache: &ActivationCache,
    pair: TargetPair,
) -> Result<AttributionMap> {
    head_attribution_at(model, cache, pair, Readout::last(cache))
}

pub fn head_attribution_at(
    model: &Model,
    cache: &ActivationCache,
    pair: TargetPair,
    readout: Readout,
) -> Result<AttributionMap> {
    check(model, cache, pair, readout)?;
    let cfg = model.config();
    let dir = readout_direction(model, pair, readout.scale);
    let mut map = AttributionMap::for_config(MapKind::Heads, cfg);
    map.position = Some(readout.position);
    for (layer, lw) in model.weights().layers.iter().enumerate() {
        // W_O · dir, one d_head block per head.
        let through_o = matvec(&lw.w_o, &dir)?;
        for head in 0..cfg.n_heads {
            let z = cache.z[layer][head].row(readout.position);
            let block = &through_o[head * cfg.d_head..(head + 1) * cfg.d_head];
            map.values[layer * cfg.n_heads + head] = dot(z, block);
        }
    }
    Ok(map)
}

/// Neuron map at the last cached position.
pub fn mlp_attribution(
    model: &Model,
    cache: &ActivationCache,
    pair: TargetPair,
) -> Result<AttributionMap> {
    mlp_attribution_at(model, cache, pair, Readout::last(cache))
}

pub fn mlp_attribution_at(
    model: &Model,
    cache: &ActivationCache,
    pair: TargetPair,
    readout: Readout,
) -> Result<AttributionMap> {
    check(model, cache, pair, readout)?;
    let cfg = model.config();
    let dir = readout_direction(model, pair, readout.scale);
    let mut map = AttributionMap::for_config(MapKind::Neurons, cfg);
    map.position = Some(readout.position);
    for (layer, lw) in model.weights().layers.iter().enumerate() {
        let through_out = matvec(&lw.w_out, &dir)?;
        let act = cache.mlp_act[layer].row(readout.position);
        for (i, (&a, &d)) in act.iter().zip(&through_out).enumerate() {
            map.values[layer * cfg.d_mlp + i] = a * d;
        }
    }
    Ok(map)
}

/// Direct effect of the token + positional embedding at the last position.
pub fn embedding_attribution(
    model: &Model,
    cache: &ActivationCache,
    pair: TargetPair,
) -> Result<f32> {
    embedding_attribution_at(model, cache, pair, Readout::last(cache))
}

pub fn embedding_attribution_at(
    model: &Model,
    cache: &ActivationCache,
    pair: TargetPair,
    readout: Readout,
) -> Result<f32> {
    check(model, cache, pair, readout)?;
    let dir = readout_direction(model, pair, readout.scale);
    Ok(dot(cache.embed.row(readout.position), &dir))
}

/// Direct effect of the attention output biases summed over layers; zero
/// for models without attention biases.
pub fn bias_attribution(model: &Model, cache: &ActivationCache, pair: TargetPair) -> Result<f32> {
    bias_attribution_at(model, cache, pair, Readout::last(cache))
}

pub fn bias_attribution_at(
    model: &Model,
    cache: &ActivationCache,
    pair: TargetPair,
    readout: Readout,
) -> Result<f32> {
    check(model, cache, pair, readout)?;
    let dir = readout_direction(model, pair, readout.scale);
    let mut acc = 0.0f32;
    for lw in &model.weights().layers {
        if let Some(b) = &lw.b_o {
            acc += dot(b, &dir);
        }
    }
    Ok(acc)
}

/// Pre-softcap `logit(attribute) − logit(instrument)` at `position`.
pub fn logit_difference(output: &ForwardOutput, pair: TargetPair, position: usize) -> f32 {
    let row = output.pre_softcap_logits().row(position);
    row[pair.attribute as usize] - row[pair.instrument as usize]
}

/// Elementwise mean of same-shaped maps.
pub fn aggregate_maps(maps: &[AttributionMap]) -> Result<AttributionMap> {
    let first = maps
        .first()
        .ok_or_else(|| Error::Attribution("cannot aggregate an empty list of maps".into()))?;
    for m in maps {
        if m.kind != first.kind || m.n_layers != first.n_layers || m.n_units != first.n_units {
            return Err(Error::Attribution(format!(
                "cannot aggregate a {} {}x{} map with a {} {}x{} map",
                first.kind.as_str(),
                first.n_layers,
                first.n_units,
                m.kind.as_str(),
                m.n_layers,
                m.n_units
            )));
        }
    }
    let n = maps.len() as f32;
    let mut out = AttributionMap::zeros(first.kind, first.n_layers, first.n_units);
    for m in maps {
        for (o, v) in out.values.iter_mut().zip(&m.values) {
            *o += v;
        }
    }
    for o in &mut out.values {
        *o /= n;
    }
    out.position = first
        .position
        .filter(|p| maps.iter().all(|m| m.position == Some(*p)));
    Ok(out)
}

/// Full decomposition of one prompt's logit difference.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptAttribution {
    pub pair: TargetPair,
    pub heads: AttributionMap,
    pub neurons: AttributionMap,
    pub embedding: f32,
    pub bias: f32,
    /// Pre-softcap logit difference from the forward pass.
    pub logit_diff: f32,
}

impl PromptAttribution {
    /// Sum of every component's direct effect.
    pub fn reconstructed(&self) -> f32 {
        self.embedding + self.bias + self.heads.total() + self.neurons.total()
    }
}

/// Runs an uninstrumented forward on `tokens` and decomposes the logit
/// difference at the last position.
pub fn attribute_tokens(
    model: &Model,
    tokens: &[u32],
    pair: TargetPair,
) -> Result<PromptAttribution> {
    let out = model.forward(tokens, &[])?;
    let readout = Readout::last(&out.cache);
    Ok(PromptAttribution {
        pair,
        heads: head_attribution_at(model, &out.cache, pair, readout)?,
        neurons: mlp_attribution_at(model, &out.cache, pair, readout)?,
        embedding: embedding_attribution_at(model, &out.cache, pair, readout)?,
        bias: bias_attribution_at(model, &out.cache, pair, readout)?,
        logit_diff: logit_difference(&out, pair, readout.position),
    })
}

/// Renders and encodes `item`, then decomposes its logit difference.
pub fn attribute_item(
    model: &Model,
    vocab: &Vocab,
    item: &PromptItem,
) -> Result<PromptAttribution> {
    let pair = TargetPair::for_item(vocab, item)?;
    let tokens = vocab.encode(&render_prompt(item));
    attribute_tokens(model, &tokens, pair)
}

/// One output row of an attribution report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionRow {
    pub layer: usize,
    pub unit: usize,
    pub value: f32,
    pub kind: MapKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_id: Option<String>,
}

/// Rows for per-prompt maps, tagged with their prompt ids.
pub fn report_rows<'a>(
    maps: impl IntoIterator<Item = (&'a str, &'a AttributionMap)>,
) -> Vec<AttributionRow> {
    maps.into_iter()
        .flat_map(|(id, m)| m.rows(Some(id)).collect::<Vec<_>>())
        .collect()
}

/// Rows for an aggregated map (no prompt id column).
pub fn aggregate_rows(map: &AttributionMap) -> Vec<AttributionRow> {
    map.rows(None).collect()
}

/// CSV with columns `layer,unit,value,kind[,prompt_id]`.
pub fn rows_to_csv(rows: &[AttributionRow]) -> Result<String> {
    let with_id = rows.first().is_some_and(|r| r.prompt_id.is_some());
    let mut w = csv::Writer::from_writer(Vec::new());
    if with_id {
        w.write_record(["layer", "unit", "value", "kind", "prompt_id"])?;
    } else {
        w.write_record(["layer", "unit", "value", "kind"])?;
    }
    for r in rows {
        let mut rec = vec![
            r.layer.to_string(),
            r.unit.to_string(),
            r.value.to_string(),
            r.kind.as_str().to_string(),
        ];
        if with_id {
            rec.push(r.prompt_id.clone().unwrap_or_default());
        }
        w.write_record(&rec)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::io("<csv>", e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn rows_to_json(rows: &[AttributionRow]) -> String {
    serde_json::to_string_pretty(rows).expect("rows serialize") + "\n"
}
