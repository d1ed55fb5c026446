// SPDX-License-Identifier: MIT OR Apache-2.0

//! `ppscope`: attribution maps, head steering and prompt-suite evaluation
//! from the command line.
//!
//! Every subcommand computes all of its outputs in memory first and writes
//! them together with a `manifest.json`; any failure exits with status 2
//! and leaves no new files behind.

mod error;
mod manifest;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use ppscope_core::attribution::{
    aggregate_maps, aggregate_rows, attribute_item, report_rows, rows_to_csv, rows_to_json,
    AttributionMap, PromptAttribution,
};
use ppscope_core::container;
use ppscope_core::intervention::sweep;
use ppscope_core::suite::{
    evaluate, load_suite, render_prompt_with, shipped_suite, shipped_suite_json, suite_to_json,
    EvalOptions, RenderOptions,
};
use ppscope_core::toy::copy_head_fixture;
use ppscope_core::{HeadRef, Model, PromptItem, Vocab};

use error::CliError;
use manifest::{InputRecord, InterventionRecord, RunManifest};
use output::Staged;

#[derive(Debug, Parser)]
#[command(
    name = "ppscope",
    version,
    about = "Head attribution and value steering for prepositional-phrase completions"
)]
struct Cli {
    /// Worker threads for per-prompt parallelism (results do not depend on it).
    #[arg(long, global = true, env = "PPSCOPE_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Per-prompt and suite-averaged head (and optionally neuron) attribution maps.
    Attribute(AttributeArgs),
    /// Evaluate the suite with one head's value vectors scaled by a single alpha.
    Steer(SteerArgs),
    /// Evaluate the suite for a list of alphas on one head.
    Sweep(SteerArgs),
    /// Evaluate the suite without intervention.
    Eval(EvalArgs),
    /// Write every rendered prompt, one per line.
    Render(RenderArgs),
    /// Write the hand-wired copy-head demo model, config, vocabulary and suite.
    Toy(ToyArgs),
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// Weight container.
    #[arg(long)]
    model: PathBuf,
    /// Model config JSON.
    #[arg(long)]
    config: PathBuf,
    /// Vocabulary JSON.
    #[arg(long)]
    vocab: PathBuf,
}

#[derive(Debug, Args)]
struct SuiteArgs {
    /// Suite file (JSON or .csv); defaults to the bundled 100-item suite.
    #[arg(long)]
    suite: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct GenArgs {
    /// Greedy generation budget per prompt.
    #[arg(long, default_value_t = 4)]
    max_new_tokens: usize,
    /// Use "an" before vowel-initial nouns in the context sentences.
    #[arg(long)]
    article_heuristic: bool,
}

#[derive(Debug, Args)]
struct AttributeArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    suite: SuiteArgs,
    /// Also write MLP neuron maps.
    #[arg(long)]
    mlp: bool,
}

#[derive(Debug, Args)]
struct SteerArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    suite: SuiteArgs,
    #[command(flatten)]
    gen: GenArgs,
    #[arg(long)]
    layer: usize,
    #[arg(long)]
    head: usize,
    /// Scale factor(s); repeat the flag or give a comma-separated list.
    #[arg(
        long = "alpha",
        alias = "alphas",
        required = true,
        value_delimiter = ',',
        allow_hyphen_values = true
    )]
    alphas: Vec<f32>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    suite: SuiteArgs,
    #[command(flatten)]
    gen: GenArgs,
}

#[derive(Debug, Args)]
struct RenderArgs {
    #[command(flatten)]
    suite: SuiteArgs,
    #[arg(long)]
    article_heuristic: bool,
}

#[derive(Debug, Args)]
struct ToyArgs {
    #[arg(long)]
    suite: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    /// Seed for the noise in the non-designated weights.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

struct LoadedSuite {
    items: Vec<PromptItem>,
    record: InputRecord,
}

fn load_suite_arg(path: Option<&Path>) -> Result<LoadedSuite, CliError> {
    match path {
        Some(p) => Ok(LoadedSuite {
            items: load_suite(p)?,
            record: InputRecord::from_file(p)?,
        }),
        None => Ok(LoadedSuite {
            items: shipped_suite(),
            record: InputRecord::shipped(shipped_suite_json().as_bytes()),
        }),
    }
}

struct Loaded {
    model: Model,
    vocab: Vocab,
}

fn load_model(args: &ModelArgs, manifest: &mut RunManifest) -> Result<Loaded, CliError> {
    let vocab = Vocab::load(&args.vocab)?;
    let model = Model::load(&args.model, &args.config)?;
    if vocab.len() > model.config().vocab_size {
        return Err(CliError::Usage(format!(
            "vocabulary has {} entries but the model only {}",
            vocab.len(),
            model.config().vocab_size
        )));
    }
    manifest
        .inputs
        .insert("model", InputRecord::from_file(&args.model)?);
    manifest
        .inputs
        .insert("config", InputRecord::from_file(&args.config)?);
    manifest
        .inputs
        .insert("vocab", InputRecord::from_file(&args.vocab)?);
    Ok(Loaded { model, vocab })
}

fn eval_options(gen: &GenArgs) -> Result<EvalOptions, CliError> {
    if gen.max_new_tokens == 0 {
        return Err(CliError::Usage(
            "--max-new-tokens must be at least 1".into(),
        ));
    }
    Ok(EvalOptions {
        max_new_tokens: gen.max_new_tokens,
        render: RenderOptions {
            article_heuristic: gen.article_heuristic,
        },
    })
}

fn map_outputs(
    staged: &mut Staged,
    stem: &str,
    per_prompt: &[(&str, &AttributionMap)],
) -> Result<(), CliError> {
    let maps: Vec<AttributionMap> = per_prompt.iter().map(|(_, m)| (*m).clone()).collect();
    let mean = aggregate_maps(&maps)?;
    let rows = report_rows(per_prompt.iter().copied());
    staged.add(format!("{stem}.csv"), rows_to_csv(&rows)?)?;
    staged.add(format!("{stem}.json"), rows_to_json(&rows))?;
    let agg = aggregate_rows(&mean);
    staged.add(format!("{stem}_mean.csv"), rows_to_csv(&agg)?)?;
    staged.add(format!("{stem}_mean.json"), rows_to_json(&agg))?;
    Ok(())
}

fn cmd_attribute(args: &AttributeArgs) -> Result<Staged, CliError> {
    let mut manifest = RunManifest::new("attribute");
    let suite = load_suite_arg(args.suite.suite.as_deref())?;
    let loaded = load_model(&args.model, &mut manifest)?;
    manifest.inputs.insert("suite", suite.record);
    manifest.option("mlp", args.mlp);
    manifest.option("position", "last prompt token");

    let results: Vec<PromptAttribution> = suite
        .items
        .par_iter()
        .map(|item| attribute_item(&loaded.model, &loaded.vocab, item))
        .collect::<Result<_, _>>()?;

    let mut staged = Staged::default();
    let heads: Vec<(&str, &AttributionMap)> = suite
        .items
        .iter()
        .zip(&results)
        .map(|(it, r)| (it.id.as_str(), &r.heads))
        .collect();
    map_outputs(&mut staged, "heads", &heads)?;
    if args.mlp {
        let neurons: Vec<(&str, &AttributionMap)> = suite
            .items
            .iter()
            .zip(&results)
            .map(|(it, r)| (it.id.as_str(), &r.neurons))
            .collect();
        map_outputs(&mut staged, "neurons", &neurons)?;
    }

    let mean = aggregate_maps(&results.iter().map(|r| r.heads.clone()).collect::<Vec<_>>())?;
    println!("strongest heads (suite mean, negative favours the instrument):");
    for (l, h, v) in mean.ranked_by_magnitude().into_iter().take(5) {
        println!("  {} {v:+.6}", HeadRef::new(l, h));
    }
    manifest.stage_into(&mut staged)?;
    Ok(staged)
}

fn alpha_file(alpha: f32) -> String {
    format!("eval_alpha_{alpha}.json")
}

fn cmd_sweep(args: &SteerArgs, name: &'static str) -> Result<Staged, CliError> {
    if name == "steer" && args.alphas.len() != 1 {
        return Err(CliError::Usage(format!(
            "steer takes exactly one --alpha, got {}; use sweep for several",
            args.alphas.len()
        )));
    }
    let mut seen = Vec::new();
    for &a in &args.alphas {
        if seen.contains(&a.to_bits()) {
            return Err(CliError::Usage(format!("alpha {a} given twice")));
        }
        seen.push(a.to_bits());
    }
    let mut manifest = RunManifest::new(name);
    let suite = load_suite_arg(args.suite.suite.as_deref())?;
    let loaded = load_model(&args.model, &mut manifest)?;
    manifest.inputs.insert("suite", suite.record);
    let opts = eval_options(&args.gen)?;
    manifest.option("max_new_tokens", opts.max_new_tokens);
    manifest.option("article_heuristic", opts.render.article_heuristic);
    let target = HeadRef::new(args.layer, args.head);
    target.check(loaded.model.config())?;
    manifest.intervention = Some(InterventionRecord {
        layer: args.layer,
        head: args.head,
        site: "value",
        alphas: args.alphas.clone(),
    });

    let result = sweep(
        &loaded.model,
        &loaded.vocab,
        &suite.items,
        target,
        &args.alphas,
        &opts,
    )?;
    let mut staged = Staged::default();
    staged.add("eval_baseline.json", result.baseline.to_json() + "\n")?;
    for run in &result.runs {
        staged.add(
            alpha_file(run.alpha.expect("sweep runs carry alpha")),
            run.to_json() + "\n",
        )?;
    }
    staged.add("curve.csv", result.curve_csv())?;
    print!("{}", result.curve_csv());
    manifest.stage_into(&mut staged)?;
    Ok(staged)
}

fn cmd_eval(args: &EvalArgs) -> Result<Staged, CliError> {
    let mut manifest = RunManifest::new("eval");
    let suite = load_suite_arg(args.suite.suite.as_deref())?;
    let loaded = load_model(&args.model, &mut manifest)?;
    manifest.inputs.insert("suite", suite.record);
    let opts = eval_options(&args.gen)?;
    manifest.option("max_new_tokens", opts.max_new_tokens);
    manifest.option("article_heuristic", opts.render.article_heuristic);
    let result = evaluate(&loaded.model, &loaded.vocab, &suite.items, &[], &opts)?;
    let p = result.proportions;
    println!(
        "instrument {:.4}  attribute {:.4}  other {:.4}  (n = {})",
        p.instrument, p.attribute, p.other, result.n
    );
    let mut staged = Staged::default();
    staged.add("eval.json", result.to_json() + "\n")?;
    manifest.stage_into(&mut staged)?;
    Ok(staged)
}

fn cmd_render(args: &RenderArgs) -> Result<Staged, CliError> {
    let mut manifest = RunManifest::new("render");
    let suite = load_suite_arg(args.suite.suite.as_deref())?;
    manifest.inputs.insert("suite", suite.record);
    manifest.option("article_heuristic", args.article_heuristic);
    let opts = RenderOptions {
        article_heuristic: args.article_heuristic,
    };
    let mut text = String::new();
    for item in &suite.items {
        text.push_str(&render_prompt_with(item, opts));
        text.push('\n');
    }
    let mut staged = Staged::default();
    staged.add("prompts.txt", text)?;
    manifest.stage_into(&mut staged)?;
    Ok(staged)
}

fn cmd_toy(args: &ToyArgs) -> Result<Staged, CliError> {
    let mut manifest = RunManifest::new("toy");
    let suite = load_suite_arg(args.suite.as_deref())?;
    manifest.inputs.insert("suite", suite.record);
    manifest.option("seed", args.seed);
    let fx = copy_head_fixture(&suite.items, args.seed)?;
    manifest.option("copy_head", fx.copy_head.to_string());
    let mut staged = Staged::default();
    staged.add(
        "model.ppsc",
        container::to_bytes(&fx.model.weights().to_tensor_map())?,
    )?;
    staged.add("config.json", fx.model.config().to_json() + "\n")?;
    staged.add("vocab.json", fx.vocab.to_json() + "\n")?;
    staged.add("suite.json", suite_to_json(&suite.items) + "\n")?;
    println!("copy head: {}", fx.copy_head);
    manifest.stage_into(&mut staged)?;
    Ok(staged)
}

fn run(cli: Cli) -> Result<Vec<PathBuf>, CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    let (staged, out_dir) = match &cli.command {
        Command::Attribute(a) => (cmd_attribute(a)?, &a.suite.out_dir),
        Command::Steer(a) => (cmd_sweep(a, "steer")?, &a.suite.out_dir),
        Command::Sweep(a) => (cmd_sweep(a, "sweep")?, &a.suite.out_dir),
        Command::Eval(a) => (cmd_eval(a)?, &a.suite.out_dir),
        Command::Render(a) => (cmd_render(a)?, &a.suite.out_dir),
        Command::Toy(a) => (cmd_toy(a)?, &a.out_dir),
    };
    staged.commit(out_dir)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(paths) => {
            for p in paths {
                log::info!("wrote {}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn alphas_accept_lists_and_repeats() {
        let cli = Cli::try_parse_from([
            "ppscope",
            "sweep",
            "--model",
            "m",
            "--config",
            "c",
            "--vocab",
            "v",
            "--out-dir",
            "o",
            "--layer",
            "0",
            "--head",
            "2",
            "--alpha",
            "-5,-4",
            "--alpha",
            "-3",
        ])
        .unwrap();
        let Command::Sweep(a) = cli.command else {
            panic!()
        };
        assert_eq!(a.alphas, vec![-5.0, -4.0, -3.0]);
    }

    #[test]
    fn alpha_file_names() {
        assert_eq!(alpha_file(-5.0), "eval_alpha_-5.json");
        assert_eq!(alpha_file(0.5), "eval_alpha_0.5.json");
    }
}
