//! Subcommand implementations.

use std::path::{Path, PathBuf};

use anyhow::{Context as _, Result};
use clap::Args;
use log::info;
use serde::Serialize;

use rolfor_core::gamedata::{generate_synthetic, load_sequences, save_sequences, SynthConfig, TrajectorySequence};
use rolfor_core::metrics::{metrics_csv, MetricsRow};
use rolfor_core::perturb::PerturbSpec;
use rolfor_core::rolegcn::AdjacencyConfig;
use rolfor_core::trainer::{
    assignment_for, evaluate, gradient_probe, history_csv, probe_csv, train, Checkpoint, EvalReport,
    ExperimentConfig, Variant,
};

use crate::manifest::{digest, RunManifest};
use crate::svg::{self, Series};

/// Bad flags or missing inputs; exits with status 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Output directory plus the manifest of the current invocation.
pub struct Session {
    pub out_dir: PathBuf,
    pub manifest: Option<RunManifest>,
}

impl Session {
    pub fn new(out_dir: PathBuf) -> Self {
        Self { out_dir, manifest: None }
    }

    fn begin(&mut self, command: &str, config: &impl Serialize, config_digest: &str) -> Result<()> {
        let value = serde_json::to_value(config)?;
        let m = RunManifest::begin(&self.out_dir, command, value, config_digest.to_string())?;
        info!("run {} ({command}), manifest {}", m.run_id, m.path().display());
        self.manifest = Some(m);
        Ok(())
    }

    /// Path for output `name`, recorded in the manifest.
    fn output(&mut self, name: &Path) -> Result<PathBuf> {
        let path = self.out_dir.join(name);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        if let Some(m) = &mut self.manifest {
            m.record(&path);
        }
        Ok(path)
    }

    fn write(&mut self, name: impl AsRef<Path>, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
        let path = self.output(name.as_ref())?;
        std::fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        info!("wrote {}", path.display());
        Ok(path)
    }
}

fn read_input(path: &Path) -> Result<Vec<u8>> {
    if !path.is_file() {
        return Err(usage(format!("input file {} does not exist", path.display())));
    }
    std::fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| usage(format!("invalid {what} `{s}`"))))
        .collect()
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Number of sequences.
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub pass_probability: Option<f64>,
    #[arg(long)]
    pub defender_gain: Option<f64>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    /// Output file, relative to the output directory.
    #[arg(long, default_value = "sequences.jsonl")]
    pub out: PathBuf,
}

pub fn cmd_gen(args: GenArgs, session: &mut Session) -> Result<()> {
    let defaults = SynthConfig::default();
    let config = SynthConfig {
        n_sequences: args.n,
        seed: args.seed,
        pass_probability: args.pass_probability.unwrap_or(defaults.pass_probability),
        defender_gain: args.defender_gain.unwrap_or(defaults.defender_gain),
        noise_sigma: args.noise_sigma.unwrap_or(defaults.noise_sigma),
    };
    config.validate().map_err(|e| usage(e.to_string()))?;
    let key = serde_json::to_vec(&config)?;
    session.begin("gen", &config, &digest([b"gen".as_slice(), &key]))?;
    let seqs = generate_synthetic(&config)?;
    let path = session.output(&args.out)?;
    save_sequences(&seqs, &path)?;
    info!("wrote {} sequences to {}", seqs.len(), path.display());
    Ok(())
}

/// Experiment config file plus flag overrides; flags win.
#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// TOML experiment config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// none, oracle(<ordering>), eucl_dist_est, e2e or e2e_finetune.
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Soft-rank regularization.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Adjacency variant, 1 to 8.
    #[arg(long)]
    pub adjacency: Option<u8>,
    #[arg(long)]
    pub train_data: Option<PathBuf>,
    #[arg(long)]
    pub eval_data: Option<PathBuf>,
    /// Checkpoint to start from; required for e2e_finetune.
    #[arg(long)]
    pub init: Option<PathBuf>,
}

impl ExperimentArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(path) if !path.is_file() => {
                return Err(usage(format!("config file {} does not exist", path.display())))
            }
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = &self.variant {
            c.variant = v.parse()?;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.epochs {
            c.epochs = v;
        }
        if let Some(v) = self.learning_rate {
            c.learning_rate = v;
        }
        if let Some(v) = self.batch_size {
            c.batch_size = v;
        }
        if let Some(v) = self.epsilon {
            c.epsilon = v;
        }
        if let Some(v) = self.adjacency {
            c.adjacency = AdjacencyConfig::variant(v);
        }
        for (flag, slot) in [
            (&self.train_data, &mut c.train_data),
            (&self.eval_data, &mut c.eval_data),
            (&self.init, &mut c.init),
        ] {
            if flag.is_some() {
                slot.clone_from(flag);
            }
        }
        c.validate_paths()?;
        Ok(c)
    }
}

/// Inputs of an experiment, read once so their contents enter the digest.
struct ExperimentInputs {
    train: (PathBuf, Vec<u8>),
    eval: Option<(PathBuf, Vec<u8>)>,
    init: Option<Vec<u8>>,
}

impl ExperimentInputs {
    fn read(config: &ExperimentConfig) -> Result<Self> {
        let train = config
            .train_data
            .clone()
            .ok_or_else(|| usage("no training data: pass --train-data or set train_data in the config"))?;
        let train_bytes = read_input(&train)?;
        let eval = match &config.eval_data {
            Some(p) => Some((p.clone(), read_input(p)?)),
            None => None,
        };
        let init = config.init.as_deref().map(read_input).transpose()?;
        Ok(Self {
            train: (train, train_bytes),
            eval,
            init,
        })
    }

    /// Digest of the config without paths, and of every input's contents.
    fn digest(&self, command: &str, config: &ExperimentConfig) -> Result<String> {
        let key = serde_json::to_vec(&ExperimentConfig {
            train_data: None,
            eval_data: None,
            init: None,
            ..config.clone()
        })?;
        let empty: &[u8] = &[];
        Ok(digest([
            command.as_bytes(),
            &key,
            &self.train.1,
            self.eval.as_ref().map_or(empty, |e| &e.1),
            self.init.as_deref().unwrap_or(empty),
        ]))
    }

    fn load(&self) -> Result<(Vec<TrajectorySequence>, Option<Vec<TrajectorySequence>>)> {
        let train = load_sequences(&self.train.0)?;
        let eval = self.eval.as_ref().map(|e| load_sequences(&e.0)).transpose()?;
        Ok((train, eval))
    }
}

fn metrics_row(run_id: &str, variant: String, config: &ExperimentConfig, report: &EvalReport) -> MetricsRow {
    let ordering = config.variant.ordering_label();
    MetricsRow {
        run_id: run_id.to_string(),
        variant,
        ordering: if report.label == "clean" {
            ordering.to_string()
        } else {
            format!("{ordering}/{}", report.label)
        },
        ade: report.errors.ade,
        fde: report.errors.fde,
        topk: report.topk,
        seed: config.seed,
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub experiment: ExperimentArgs,
}

pub fn cmd_train(args: TrainArgs, session: &mut Session) -> Result<()> {
    let config = args.experiment.resolve()?;
    let inputs = ExperimentInputs::read(&config)?;
    let run_id = inputs.digest("train", &config)?;
    session.begin("train", &config, &run_id)?;
    let (train_seqs, eval_seqs) = inputs.load()?;
    let init = match &config.init {
        Some(p) => Some(Checkpoint::load(p)?),
        None => None,
    };
    info!(
        "training {} on {} sequences for {} epochs",
        config.variant,
        train_seqs.len(),
        config.epochs
    );
    let outcome = train(&config, &train_seqs, init.as_ref())?;
    if let Some(last) = outcome.history.last() {
        info!("final train loss {:.5}", last.train_loss);
    }
    let path = session.output(Path::new("checkpoint.bin"))?;
    outcome.checkpoint.save(&path)?;
    info!("wrote {}", path.display());
    session.write("history.csv", history_csv(&outcome.history))?;
    if let Some(r) = &outcome.pretrain {
        let report = serde_json::json!({
            "heldout_mse": r.heldout_mse,
            "heldout_topk": r.heldout_topk,
            "fit_sequences": r.fit_sequences,
            "heldout_sequences": r.heldout_sequences,
            "loss_history": r.loss_history,
        });
        session.write("pretrain.json", serde_json::to_string_pretty(&report)? + "\n")?;
    }
    let eval_seqs = eval_seqs.as_deref().unwrap_or(&train_seqs);
    let model = outcome.checkpoint.model()?;
    let report = evaluate(&model, &config, eval_seqs, None)?;
    info!("ADE {:.4} FDE {:.4}", report.errors.ade, report.errors.fde);
    let row = metrics_row(&run_id, config.variant.family().to_string(), &config, &report);
    session.write("metrics.csv", metrics_csv(&[row]))?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Sequences to evaluate on; defaults to the checkpoint's eval_data.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Comma-separated perturbations, each a kind or `kind+kind`.
    #[arg(long)]
    pub perturb: Option<String>,
    /// Seed of the perturbation draws; defaults to the checkpoint's seed.
    #[arg(long)]
    pub perturb_seed: Option<u64>,
    #[arg(long, default_value = "metrics.csv")]
    pub out: PathBuf,
}

fn load_checkpoint(path: &Path) -> Result<(Checkpoint, Vec<u8>)> {
    let bytes = read_input(path)?;
    let c = Checkpoint::from_bytes(&bytes).with_context(|| format!("loading {}", path.display()))?;
    Ok((c, bytes))
}

fn data_path(flag: Option<PathBuf>, checkpoint: &Checkpoint) -> Result<PathBuf> {
    flag.or_else(|| checkpoint.config.eval_data.clone())
        .ok_or_else(|| usage("no evaluation data: pass --data"))
}

pub fn cmd_eval(args: EvalArgs, session: &mut Session) -> Result<()> {
    let (checkpoint, ckpt_bytes) = load_checkpoint(&args.checkpoint)?;
    let config = checkpoint.config.clone();
    let data = data_path(args.data, &checkpoint)?;
    let data_bytes = read_input(&data)?;
    let seed = args.perturb_seed.unwrap_or(config.seed);
    let perturb_text = args.perturb.unwrap_or_default();
    let specs = perturb_text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| PerturbSpec::parse(s, seed))
        .collect::<rolfor_core::Result<Vec<_>>>()?;
    let run_id = digest([
        b"eval".as_slice(),
        &ckpt_bytes,
        &data_bytes,
        perturb_text.as_bytes(),
        &seed.to_le_bytes(),
    ]);
    let snapshot = serde_json::json!({
        "checkpoint": args.checkpoint,
        "data": data,
        "perturb": specs.iter().map(PerturbSpec::label).collect::<Vec<_>>(),
        "perturb_seed": seed,
        "model": config,
    });
    session.begin("eval", &snapshot, &run_id)?;
    let seqs = load_sequences(&data)?;
    let model = checkpoint.model()?;
    let family = config.variant.family().to_string();
    let mut rows = Vec::with_capacity(specs.len() + 1);
    for spec in std::iter::once(None).chain(specs.iter().map(Some)) {
        let report = evaluate(&model, &config, &seqs, spec)?;
        info!("{}: ADE {:.4} FDE {:.4} top-10 {:.3}", report.label, report.errors.ade, report.errors.fde, report.topk[3]);
        rows.push(metrics_row(&run_id, family.clone(), &config, &report));
    }
    session.write(&args.out, metrics_csv(&rows))?;
    Ok(())
}

pub const DEFAULT_EPSILONS: &str = "1e-6,1e-3,1e-2,1e-1,1,10,100,1e3,1e4,1e5,1e6";

#[derive(Debug, Args)]
pub struct ProbeArgs {
    /// An e2e or e2e_finetune checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Number of leading sequences in the probe batch.
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value = DEFAULT_EPSILONS)]
    pub epsilons: String,
    /// Output stem; `.csv` and `.svg` are appended.
    #[arg(long, default_value = "gradprobe")]
    pub out: String,
}

pub fn cmd_gradprobe(args: ProbeArgs, session: &mut Session) -> Result<()> {
    let (checkpoint, ckpt_bytes) = load_checkpoint(&args.checkpoint)?;
    let data = data_path(args.data, &checkpoint)?;
    let data_bytes = read_input(&data)?;
    let epsilons: Vec<f64> = parse_list(&args.epsilons, "epsilon")?;
    if epsilons.is_empty() || epsilons.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
        return Err(usage("epsilons must be positive"));
    }
    if args.batch == 0 {
        return Err(usage("--batch must be at least 1"));
    }
    let run_id = digest([
        b"gradprobe".as_slice(),
        &ckpt_bytes,
        &data_bytes,
        args.epsilons.as_bytes(),
        &(args.batch as u64).to_le_bytes(),
    ]);
    let snapshot = serde_json::json!({
        "checkpoint": args.checkpoint,
        "data": data,
        "batch": args.batch,
        "epsilons": epsilons,
    });
    session.begin("gradprobe", &snapshot, &run_id)?;
    let seqs = load_sequences(&data)?;
    let batch = &seqs[..args.batch.min(seqs.len())];
    let rows = gradient_probe(&checkpoint, batch, &epsilons)?;
    for r in &rows {
        info!(
            "eps {:e}: ordernn {:.3e} gcn {:.3e} pooled {:.3}",
            r.epsilon, r.ordernn_grad_norm, r.gcn_grad_norm, r.pooled_fraction
        );
    }
    session.write(format!("{}.csv", args.out), probe_csv(&rows))?;
    let plot = svg::log_log_plot(
        "Gradient norm vs soft-rank regularization",
        "epsilon",
        "gradient norm",
        &[
            Series {
                name: "ordernn",
                colour: "#d62728",
                points: rows.iter().map(|r| (r.epsilon, r.ordernn_grad_norm)).collect(),
            },
            Series {
                name: "gcn",
                colour: "#1f77b4",
                points: rows.iter().map(|r| (r.epsilon, r.gcn_grad_norm)).collect(),
            },
        ],
    );
    session.write(format!("{}.svg", args.out), plot)?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub experiment: ExperimentArgs,
    #[arg(long, default_value = "0,1,2")]
    pub seeds: String,
    #[arg(long, default_value = "1,2,3,4,5,6,7,8")]
    pub variants: String,
    #[arg(long, default_value = "ablation.csv")]
    pub out: PathBuf,
}

pub fn cmd_ablate_adjacency(args: AblateArgs, session: &mut Session) -> Result<()> {
    let base = args.experiment.resolve()?;
    if !matches!(base.variant, Variant::Oracle(_)) {
        return Err(usage(format!(
            "the adjacency ablation trains oracle orderings, got variant {}",
            base.variant
        )));
    }
    let seeds: Vec<u64> = parse_list(&args.seeds, "seed")?;
    let variants: Vec<u8> = parse_list(&args.variants, "adjacency variant")?;
    if seeds.is_empty() || variants.is_empty() {
        return Err(usage("need at least one seed and one adjacency variant"));
    }
    for &v in &variants {
        AdjacencyConfig::variant(v).validate()?;
    }
    let inputs = ExperimentInputs::read(&base)?;
    let base_id = inputs.digest("ablate-adjacency", &base)?;
    let snapshot = serde_json::json!({ "base": base, "seeds": seeds, "variants": variants });
    session.begin("ablate-adjacency", &snapshot, &base_id)?;
    let (train_seqs, eval_seqs) = inputs.load()?;
    let eval_seqs = eval_seqs.as_deref().unwrap_or(&train_seqs);
    let mut rows = Vec::new();
    for &v in &variants {
        for &seed in &seeds {
            let config = ExperimentConfig {
                adjacency: AdjacencyConfig::variant(v),
                seed,
                ..base.clone()
            };
            let outcome = train(&config, &train_seqs, None)?;
            let report = evaluate(&outcome.checkpoint.model()?, &config, eval_seqs, None)?;
            info!("adjacency {v} seed {seed}: ADE {:.4} FDE {:.4}", report.errors.ade, report.errors.fde);
            let run_id = digest([base_id.as_bytes(), &[v], &seed.to_le_bytes()]);
            rows.push(metrics_row(&run_id, format!("adjacency_{v}"), &config, &report));
        }
    }
    session.write(&args.out, metrics_csv(&rows))?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Position of the sequence in the file.
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    /// Select by id instead of position.
    #[arg(long)]
    pub sequence_id: Option<String>,
    /// Adds the model's predicted futures.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "plot.svg")]
    pub out: PathBuf,
}

pub fn cmd_plot(args: PlotArgs, session: &mut Session) -> Result<()> {
    let data_bytes = read_input(&args.data)?;
    let checkpoint = args.checkpoint.as_deref().map(load_checkpoint).transpose()?;
    let empty: &[u8] = &[];
    let run_id = digest([
        b"plot".as_slice(),
        &data_bytes,
        checkpoint.as_ref().map_or(empty, |c| &c.1),
        args.sequence_id.as_deref().unwrap_or("").as_bytes(),
        &(args.index as u64).to_le_bytes(),
    ]);
    let snapshot = serde_json::json!({
        "data": args.data,
        "index": args.index,
        "sequence_id": args.sequence_id,
        "checkpoint": args.checkpoint,
    });
    session.begin("plot", &snapshot, &run_id)?;
    let seqs = load_sequences(&args.data)?;
    let seq = match &args.sequence_id {
        Some(id) => seqs
            .iter()
            .find(|s| &s.sequence_id == id)
            .ok_or_else(|| usage(format!("no sequence `{id}` in {}", args.data.display())))?,
        None => seqs.get(args.index).ok_or_else(|| {
            usage(format!("index {} out of range for {} sequences", args.index, seqs.len()))
        })?,
    };
    let prediction = match &checkpoint {
        Some((c, _)) => {
            let model = c.model()?;
            let assignment = assignment_for(&c.config, &model, seq)?;
            Some(model.forward(&seq.observed(), &assignment)?.prediction)
        }
        None => None,
    };
    session.write(&args.out, svg::court_plot(seq, prediction.as_ref()))?;
    Ok(())
}
