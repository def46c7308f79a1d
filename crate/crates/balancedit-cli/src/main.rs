//! Command-line pipeline: generate a world and edit suite, pretrain the
//! backbone, apply edits into a codebook, and score the result. Every
//! command takes the same config file; individual flags override it, and
//! the effective config is embedded in each output for provenance.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use balancedit::backbone::{pretrain, BackboneModel};
use balancedit::codebook::{explain, Codebook, DistanceFn};
use balancedit::config::{load_config, RunConfig};
use balancedit::editor::{apply_edit, EditRequest, NegativeAnchor};
use balancedit::eval::{
    dump_keys, eval_case, export_csv, run_ablations, run_eval, sweep_alpha, CaseRecord,
    EditedSystem, EditorKind, EvalReport, Protocol,
};
use balancedit::worldgen::{
    generate_edit_suite, generate_world, read_suite, read_world, write_suite, write_world,
};

#[derive(Parser)]
#[command(
    name = "balancedit",
    about = "Codebook-based model editing on a toy multimodal transformer",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every command. A flag beats the config file; the config
/// file beats the built-in defaults.
#[derive(Args, Clone)]
struct Common {
    /// JSON run config; missing fields take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed override; re-derives world/model/suite seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, env = "BALANCEDIT_OUT", default_value = ".")]
    out: PathBuf,
    /// Radius mix override.
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Key distance metric: euclidean or cosine.
    #[arg(long, global = true)]
    distance: Option<String>,
    /// Negative anchor: black, white, or random.
    #[arg(long, global = true)]
    negative: Option<String>,
    /// Editable block override.
    #[arg(long, global = true)]
    layer: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic world and edit suite files.
    Worldgen {
        #[command(flatten)]
        common: Common,
        /// Number of edit cases (default: config harness.n_edit_cases).
        #[arg(long)]
        cases: Option<usize>,
    },
    /// Pretrain the backbone on a world file and write a checkpoint.
    Pretrain {
        #[command(flatten)]
        common: Common,
        /// World file from `worldgen` (default: <out>/world.jsonl).
        #[arg(long)]
        world: Option<PathBuf>,
        /// Training epochs override.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Apply suite edits into a codebook.
    Edit {
        #[command(flatten)]
        common: Common,
        /// Backbone checkpoint (default: <out>/model.ckpt).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Edit suite (default: <out>/suite.jsonl).
        #[arg(long)]
        suite: Option<PathBuf>,
        /// Editor kind: balancedit or fixed_radius.
        #[arg(long)]
        editor: Option<String>,
        /// Radius for the fixed_radius editor.
        #[arg(long)]
        fixed_radius: Option<f64>,
        /// Apply only the first N edits.
        #[arg(long)]
        sequential: Option<usize>,
    },
    /// Score an editor over a suite.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        suite: Option<PathBuf>,
        /// Editor kind: balancedit, ft, or fixed_radius.
        #[arg(long, default_value = "balancedit")]
        editor: String,
        /// Codebook built by `edit`; required for codebook editors.
        #[arg(long)]
        codebook: Option<PathBuf>,
        #[arg(long)]
        fixed_radius: Option<f64>,
    },
    /// Independent-protocol alpha sweep, optionally plus ablations.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        suite: Option<PathBuf>,
        /// Also run the distance/anchor/layer ablation matrix.
        #[arg(long)]
        ablations: bool,
    },
    /// Explain how one suite case routes through a codebook.
    Inspect {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        codebook: Option<PathBuf>,
        #[arg(long)]
        suite: Option<PathBuf>,
        /// Case id to explain.
        #[arg(long)]
        case: u64,
    },
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run() -> Result<()> {
    match Cli::parse().command {
        Command::Worldgen { common, cases } => cmd_worldgen(&common, cases),
        Command::Pretrain {
            common,
            world,
            epochs,
        } => cmd_pretrain(&common, world, epochs),
        Command::Edit {
            common,
            checkpoint,
            suite,
            editor,
            fixed_radius,
            sequential,
        } => cmd_edit(&common, checkpoint, suite, editor, fixed_radius, sequential),
        Command::Eval {
            common,
            checkpoint,
            suite,
            editor,
            codebook,
            fixed_radius,
        } => cmd_eval(&common, checkpoint, suite, &editor, codebook, fixed_radius),
        Command::Sweep {
            common,
            checkpoint,
            suite,
            ablations,
        } => cmd_sweep(&common, checkpoint, suite, ablations),
        Command::Inspect {
            common,
            checkpoint,
            codebook,
            suite,
            case,
        } => cmd_inspect(&common, checkpoint, codebook, suite, case),
    }
}

/// Config file -> flag overrides -> validation.
fn effective_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => load_config(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
        cfg.apply_global_seed();
    }
    if let Some(alpha) = common.alpha {
        cfg.editor.alpha = alpha;
    }
    if let Some(d) = &common.distance {
        cfg.editor.distance_fn = match d.as_str() {
            "euclidean" => DistanceFn::Euclidean,
            "cosine" => DistanceFn::Cosine,
            other => bail!("unknown distance `{other}` (expected euclidean or cosine)"),
        };
    }
    if let Some(n) = &common.negative {
        cfg.editor.negative_anchor = match n.as_str() {
            "black" => NegativeAnchor::Black,
            "white" => NegativeAnchor::White,
            "random" => NegativeAnchor::RandomPair,
            other => bail!("unknown negative anchor `{other}` (expected black, white, or random)"),
        };
    }
    if let Some(layer) = common.layer {
        if layer >= cfg.model.n_layers {
            bail!(
                "--layer {layer} out of range; the model has {} blocks",
                cfg.model.n_layers
            );
        }
        cfg.model.editable_layer = layer;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_editor_kind(s: &str) -> Result<EditorKind> {
    match s {
        "balancedit" => Ok(EditorKind::Balancedit),
        "ft" => Ok(EditorKind::Ft),
        "fixed_radius" => Ok(EditorKind::FixedRadius),
        other => bail!("unknown editor `{other}` (expected balancedit, ft, or fixed_radius)"),
    }
}

fn out_path(common: &Common, name: &str) -> PathBuf {
    common.out.join(name)
}

fn default_artifact(explicit: Option<PathBuf>, common: &Common, name: &str) -> PathBuf {
    explicit.unwrap_or_else(|| out_path(common, name))
}

fn load_checkpoint(path: &Path, cfg: &RunConfig) -> Result<BackboneModel> {
    let mut model = BackboneModel::load(path)
        .with_context(|| format!("loading checkpoint {}", path.display()))?;
    // The editable layer is an editing-time choice, not a training-time
    // property; the flag-adjusted config wins over the stored one.
    model.config.editable_layer = cfg.model.editable_layer;
    Ok(model)
}

fn write_report(
    common: &Common,
    cfg: &RunConfig,
    reports: &[EvalReport],
    json_name: &str,
    csv_name: &str,
) -> Result<()> {
    #[derive(serde::Serialize)]
    struct ReportFile<'a> {
        config: &'a RunConfig,
        reports: &'a [EvalReport],
    }
    let mut json = serde_json::to_string_pretty(&ReportFile {
        config: cfg,
        reports,
    })?;
    json.push('\n');
    fs::write(out_path(common, json_name), json)?;
    fs::write(out_path(common, csv_name), export_csv(reports))?;
    Ok(())
}

fn cmd_worldgen(common: &Common, cases: Option<usize>) -> Result<()> {
    let cfg = effective_config(common)?;
    let n_cases = cases.unwrap_or(cfg.harness.n_edit_cases);
    let (world, _) = generate_world(&cfg.world)?;
    let suite = generate_edit_suite(&world, n_cases, cfg.suite_seed(), &cfg.harness.scope_mix)?;

    fs::create_dir_all(&common.out)?;
    let world_path = out_path(common, "world.jsonl");
    let suite_path = out_path(common, "suite.jsonl");
    write_world(&world, &world_path)?;
    write_suite(&suite, &suite_path)?;
    println!(
        "world: {} entities, vocab {} -> {}",
        world.n_entities(),
        world.vocab.len(),
        world_path.display()
    );
    println!("suite: {} cases -> {}", suite.cases.len(), suite_path.display());
    Ok(())
}

fn cmd_pretrain(common: &Common, world: Option<PathBuf>, epochs: Option<usize>) -> Result<()> {
    let cfg = effective_config(common)?;
    let world_path = default_artifact(world, common, "world.jsonl");
    let (_, data) = read_world(&world_path)?;
    let epochs = epochs.unwrap_or(cfg.harness.pretrain_epochs);

    let mut model = BackboneModel::new(cfg.model.clone())?;
    let log = pretrain(
        &mut model,
        &data.train,
        &data.holdout,
        epochs,
        cfg.harness.pretrain_lr,
        cfg.model.seed,
    )?;

    fs::create_dir_all(&common.out)?;
    let ckpt = out_path(common, "model.ckpt");
    model.save(&ckpt)?;

    #[derive(serde::Serialize)]
    struct PretrainReport<'a> {
        config: &'a RunConfig,
        epochs: usize,
        final_epoch_loss: Option<f64>,
        holdout_accuracy: f64,
        reached_target: bool,
    }
    let mut report = serde_json::to_string_pretty(&PretrainReport {
        config: &cfg,
        epochs,
        final_epoch_loss: log.epoch_losses.last().copied(),
        holdout_accuracy: log.holdout_accuracy,
        reached_target: log.reached_target,
    })?;
    report.push('\n');
    fs::write(out_path(common, "pretrain_log.json"), report)?;

    println!(
        "checkpoint: holdout accuracy {:.4} after {} epochs -> {}",
        log.holdout_accuracy,
        epochs,
        ckpt.display()
    );
    if !log.reached_target {
        println!("warning: holdout accuracy below the 0.95 target");
    }
    Ok(())
}

fn cmd_edit(
    common: &Common,
    checkpoint: Option<PathBuf>,
    suite: Option<PathBuf>,
    editor: Option<String>,
    fixed_radius: Option<f64>,
    sequential: Option<usize>,
) -> Result<()> {
    let mut cfg = effective_config(common)?;
    if let Some(r) = fixed_radius {
        cfg.editor.fixed_radius = Some(r);
    }
    if let Some(kind) = &editor {
        match parse_editor_kind(kind)? {
            EditorKind::Balancedit => cfg.editor.fixed_radius = None,
            EditorKind::FixedRadius if cfg.editor.fixed_radius.is_none() => {
                bail!("the fixed_radius editor needs --fixed-radius")
            }
            EditorKind::FixedRadius => {}
            EditorKind::Ft => bail!("`edit` builds codebooks; the ft baseline has none (use `eval --editor ft`)"),
        }
    }
    cfg.editor.validate()?;

    let model = load_checkpoint(&default_artifact(checkpoint, common, "model.ckpt"), &cfg)?;
    let suite = read_suite(&default_artifact(suite, common, "suite.jsonl"))?;
    let n = sequential.unwrap_or(suite.cases.len()).min(suite.cases.len());

    let mut cb = Codebook::new(cfg.editor.distance_fn, cfg.editor.alpha)?;
    let mut outcomes = Vec::with_capacity(n);
    for case in &suite.cases[..n] {
        let request = EditRequest::from_case(case);
        outcomes.push(apply_edit(&model, &mut cb, &request, &cfg.editor)?);
    }

    fs::create_dir_all(&common.out)?;
    let cb_path = out_path(common, "codebook.bin");
    cb.save(&cb_path)?;
    balancedit::editor::write_edit_log(&outcomes, &out_path(common, "edit_log.jsonl"))?;
    fs::write(out_path(common, "keys.csv"), dump_keys(&cb))?;

    let unconverged = outcomes.iter().filter(|o| !o.converged).count();
    println!(
        "codebook: {} entries, mean radius {:.4} -> {}",
        cb.len(),
        cb.mean_radius(),
        cb_path.display()
    );
    if unconverged > 0 {
        println!("warning: {unconverged} edits did not converge");
    }
    Ok(())
}

fn cmd_eval(
    common: &Common,
    checkpoint: Option<PathBuf>,
    suite: Option<PathBuf>,
    editor: &str,
    codebook: Option<PathBuf>,
    fixed_radius: Option<f64>,
) -> Result<()> {
    let mut cfg = effective_config(common)?;
    if let Some(r) = fixed_radius {
        cfg.editor.fixed_radius = Some(r);
    }
    let kind = parse_editor_kind(editor)?;

    let model = load_checkpoint(&default_artifact(checkpoint, common, "model.ckpt"), &cfg)?;
    let suite = read_suite(&default_artifact(suite, common, "suite.jsonl"))?;

    fs::create_dir_all(&common.out)?;
    let report = match kind {
        EditorKind::Balancedit | EditorKind::FixedRadius => {
            let cb_path = codebook
                .ok_or_else(|| anyhow::anyhow!("missing artifact: --codebook is required for the {kind} editor (build one with `edit`)"))?;
            let cb = Codebook::load(&cb_path)
                .with_context(|| format!("loading codebook {}", cb_path.display()))?;
            cb.ensure_metric(cfg.editor.distance_fn)?;
            score_codebook(&model, &suite, &cb, kind, &cfg)?
        }
        EditorKind::Ft => {
            cfg.editor.fixed_radius = None;
            run_eval(&model, &suite, EditorKind::Ft, &cfg.editor)?.report
        }
    };

    write_report(common, &cfg, std::slice::from_ref(&report), "report.json", "report.csv")?;
    println!(
        "{}: acc {:.2} t_gen {:.2} i_gen {:.2} loc {:.2} hm {:.2}",
        report.editor, report.acc, report.t_gen, report.i_gen, report.loc, report.hm
    );
    Ok(())
}

/// Scores a prebuilt codebook over the suite: the codebook's accumulated
/// state is taken as-is for every case.
fn score_codebook(
    model: &BackboneModel,
    suite: &balancedit::worldgen::EditSuite,
    cb: &Codebook,
    kind: EditorKind,
    cfg: &RunConfig,
) -> Result<EvalReport> {
    let system = EditedSystem::Routed {
        model,
        codebook: cb,
    };
    let mut cases: Vec<CaseRecord> = Vec::with_capacity(suite.cases.len());
    for case in &suite.cases {
        cases.push(eval_case(model, &system, case)?);
    }
    let n = cases.len() as f64;
    let pct = |f: &dyn Fn(&CaseRecord) -> f64| cases.iter().map(f).sum::<f64>() / n * 100.0;
    let (acc, t_gen, t_gen_reserved, i_gen, loc) = (
        pct(&|c| c.acc),
        pct(&|c| c.t_gen),
        pct(&|c| c.t_gen_reserved),
        pct(&|c| c.i_gen),
        pct(&|c| c.loc),
    );
    Ok(EvalReport {
        editor: kind,
        protocol: Protocol::Sequential,
        editor_config: cfg.editor.clone(),
        n_cases: cases.len(),
        acc,
        t_gen,
        t_gen_reserved,
        i_gen,
        loc,
        hm: balancedit::eval::harmonic_mean(t_gen, i_gen, loc),
        mean_radius: Some(cb.mean_radius()),
        wall_time: None,
        cases,
    })
}

fn cmd_sweep(
    common: &Common,
    checkpoint: Option<PathBuf>,
    suite: Option<PathBuf>,
    ablations: bool,
) -> Result<()> {
    let cfg = effective_config(common)?;
    let model = load_checkpoint(&default_artifact(checkpoint, common, "model.ckpt"), &cfg)?;
    let suite = read_suite(&default_artifact(suite, common, "suite.jsonl"))?;

    let alphas: Vec<f64> = match common.alpha {
        Some(a) => vec![a],
        None => cfg.harness.alpha_grid.clone(),
    };
    let runs = sweep_alpha(&model, &suite, &alphas, &cfg.editor)?;
    let mut reports: Vec<EvalReport> = runs.into_iter().map(|r| r.report).collect();

    if ablations {
        for ab in run_ablations(&model, &suite, &cfg.editor)? {
            reports.push(ab.run.report);
        }
    }

    fs::create_dir_all(&common.out)?;
    write_report(common, &cfg, &reports, "sweep.json", "sweep.csv")?;
    for r in &reports {
        println!(
            "{} alpha {:.2}: acc {:.2} t_gen {:.2} i_gen {:.2} loc {:.2} hm {:.2} mean_radius {}",
            r.editor,
            r.editor_config.alpha,
            r.acc,
            r.t_gen,
            r.i_gen,
            r.loc,
            r.hm,
            r.mean_radius.map(|v| format!("{v:.4}")).unwrap_or_default()
        );
    }
    Ok(())
}

fn cmd_inspect(
    common: &Common,
    checkpoint: Option<PathBuf>,
    codebook: Option<PathBuf>,
    suite: Option<PathBuf>,
    case_id: u64,
) -> Result<()> {
    let cfg = effective_config(common)?;
    let model = load_checkpoint(&default_artifact(checkpoint, common, "model.ckpt"), &cfg)?;
    let cb_path = default_artifact(codebook, common, "codebook.bin");
    let cb = Codebook::load(&cb_path)
        .with_context(|| format!("loading codebook {}", cb_path.display()))?;
    let suite = read_suite(&default_artifact(suite, common, "suite.jsonl"))?;

    let case = suite
        .cases
        .iter()
        .find(|c| c.case_id == case_id)
        .ok_or_else(|| anyhow::anyhow!("case {case_id} not in the suite"))?;

    println!("case {}: \"{}\"", case.case_id, case.prompt_text);
    println!("  edited answer: {} -> {}", case.y_old_text, case.y_new_text);
    let explanation = explain(&model, &case.image, &case.prompt, &cb)?;
    println!("{explanation}");
    Ok(())
}
