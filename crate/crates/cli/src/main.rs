use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::Rng;

use fedfoa::config::{Mode, RunConfig};
use fedfoa::data::seeded_rng;
use fedfoa::eval::{linear_probe, prepare_data, run_experiment, trace_accuracy_correlation, ProbeConfig};
use fedfoa::export::{
    export_embeddings, export_heatmap_data, read_record_log, write_metrics_csv, write_metrics_ndjson,
    write_probe_csv, write_record_log,
};
use fedfoa::federation::{comm_cost, fedfoa_loss_terms, BankView, CommMode, MemoryBank};
use fedfoa::linalg::{procrustes_align, qr_decompose, thin_svd, Matrix};
use fedfoa::ssl::{contrastive_loss, gradient_check, ArchSpec, EncoderModel, SslError};
use fedfoa::{ClientId, CorrelationRecord};

#[derive(Parser)]
#[command(name = "fedfoa", version, about = "Federated feature-correlation alignment simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train all clients and write metrics, record log, probes and checkpoints.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Linear-probe a saved encoder checkpoint.
    Probe {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Pairwise R-distance table from a record log.
    Heatmap {
        /// record_log.ndjson written by `train`.
        #[arg(long)]
        log: PathBuf,
        /// Comma-separated rounds.
        #[arg(long, value_delimiter = ',', required = true)]
        rounds: Vec<u32>,
        /// Output CSV; stdout if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export projection embeddings of a test-set subsample.
    Embed {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 500)]
        count: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Self-test of the numerical kernels.
    Check {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Per-client upload bytes per round.
    Commcost {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// Config file in `key = value` format.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Override any config key, e.g. `--set rounds=10`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self, require_seed: bool) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .with_context(|| format!("--set expects KEY=VALUE, got `{kv}`"))?;
            cfg.set(k.trim(), v.trim())?;
        }
        if let Some(mode) = self.mode {
            cfg.mode = mode;
        }
        if let Some(lambda) = self.lambda {
            cfg.lambda = lambda;
        }
        match self.seed {
            Some(seed) => cfg.seed = seed,
            None if require_seed => bail!("--seed is required"),
            None => {}
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("cannot create {}", path.display()))?,
    ))
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn load_checkpoint(path: &Path) -> Result<EncoderModel> {
    let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(EncoderModel::from_checkpoint(&bytes)?)
}

fn train(cfg: &RunConfig, out: &Path) -> Result<()> {
    fs::create_dir_all(out.join("checkpoints"))
        .with_context(|| format!("cannot create {}", out.display()))?;
    fs::write(out.join("config.txt"), cfg.to_text())?;
    let data = prepare_data(cfg)?;
    let outcome = run_experiment(cfg, &data)?;

    write_metrics_csv(&outcome.history, create(&out.join("metrics.csv"))?)?;
    write_metrics_ndjson(&outcome.history, create(&out.join("metrics.ndjson"))?)?;
    write_record_log(outcome.simulator.record_log(), create(&out.join("record_log.ndjson"))?)?;
    write_probe_csv(&outcome.checkpoints, create(&out.join("probes.csv"))?)?;
    for (i, client) in outcome.simulator.clients().iter().enumerate() {
        fs::write(
            out.join("checkpoints").join(format!("client_{i}.ckpt")),
            client.model().to_checkpoint(),
        )?;
    }

    if let Some(last) = outcome.history.last() {
        println!(
            "mode {} seed {} rounds {} mean trace {:.4}",
            cfg.mode,
            cfg.seed,
            last.round,
            last.mean_trace()
        );
    }
    if let Some(acc) = outcome.final_accuracy() {
        println!("final mean probe accuracy {acc:.4}");
    }
    if let Ok(rho) = trace_accuracy_correlation(&outcome.checkpoints) {
        println!("trace/accuracy spearman {rho:.4}");
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn probe(cfg: &RunConfig, checkpoint: &Path) -> Result<()> {
    let encoder = load_checkpoint(checkpoint)?;
    let data = prepare_data(cfg)?;
    let acc = linear_probe(&encoder, &data.train, &data.test, &ProbeConfig::from_run(cfg))?;
    println!("{acc:.6}");
    Ok(())
}

fn gaussian(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

struct Suite {
    name: &'static str,
    passed: usize,
    total: usize,
}

impl Suite {
    fn new(name: &'static str) -> Self {
        Self { name, passed: 0, total: 0 }
    }

    fn record(&mut self, ok: bool) {
        self.total += 1;
        self.passed += ok as usize;
    }
}

fn check(seed: u64) -> Result<bool> {
    let mut rng = seeded_rng(seed, 0xc4ec);
    let mut suites = Vec::new();

    let mut qr = Suite::new("qr");
    for _ in 0..100 {
        let n = rng.gen_range(2..=16);
        let m = rng.gen_range(n..=64);
        let a = gaussian(m, n, &mut rng);
        let f = qr_decompose(&a)?;
        let recon = f.q.matmul(&f.r)?.sub(&a)?.frobenius_norm() / a.frobenius_norm();
        let ok = recon <= 1e-8
            && f.q.orthonormality_error() <= 1e-8
            && f.r.is_upper_triangular()
            && f.r.diagonal().iter().all(|&d| d >= 0.0);
        qr.record(ok);
    }
    suites.push(qr);

    let mut svd = Suite::new("svd");
    for _ in 0..50 {
        let a = gaussian(rng.gen_range(1..=32), rng.gen_range(1..=32), &mut rng);
        let s = thin_svd(&a)?;
        let recon = s.reconstruct().sub(&a)?.frobenius_norm() / a.frobenius_norm();
        let sorted = s.sigma.windows(2).all(|w| w[0] >= w[1]);
        svd.record(
            recon <= 1e-7
                && s.u.orthonormality_error() <= 1e-7
                && s.v.orthonormality_error() <= 1e-7
                && sorted,
        );
    }
    suites.push(svd);

    let mut proc = Suite::new("procrustes");
    for _ in 0..20 {
        let z = gaussian(16, 4, &mut rng);
        let r = gaussian(4, 4, &mut rng);
        let best = procrustes_align(&z, &r)?;
        let mut ok = best.q_star.orthonormality_error() <= 1e-8;
        for _ in 0..500 {
            let cand = qr_decompose(&gaussian(16, 4, &mut rng))?.q;
            let res = z.sub(&cand.matmul(&r)?)?.frobenius_norm();
            ok &= best.residual <= res + 1e-9;
        }
        proc.record(ok);
    }
    suites.push(proc);

    let mut grad = Suite::new("gradient");
    for trial in 0..5u32 {
        let arch = ArchSpec::new("check", vec![6, 5]);
        let model = EncoderModel::init(&arch, 4, 3, &mut rng);
        let batch = gaussian(8, 4, &mut rng);
        let peer_z = gaussian(8, 3, &mut rng).scale(3.0);
        let peer_r = qr_decompose(&peer_z)?.r;
        let mut bank = MemoryBank::new();
        bank.commit(vec![CorrelationRecord::new(ClientId(1), trial, peer_r, 1)?])?;
        let view: BankView = bank.view(trial + 1);
        let report = gradient_check(&model, &batch, |z| {
            let (lc, mut g) = contrastive_loss(z, 0.5)?;
            let r_own = qr_decompose(z)?.r;
            let terms = fedfoa_loss_terms(
                z,
                &r_own,
                &view,
                ClientId(0),
                0.01,
                fedfoa::ssl::ResidualForm::Squared,
            )
            .map_err(|e| SslError::Shape(e.to_string()))?;
            g = g.add(&terms.grad)?;
            Ok((lc + terms.loss, g))
        })?;
        grad.record(report.max_rel_error <= 1e-4);
    }
    suites.push(grad);

    let mut all = true;
    for s in &suites {
        let ok = s.passed == s.total;
        all &= ok;
        println!(
            "{:<11} {}/{} {}",
            s.name,
            s.passed,
            s.total,
            if ok { "ok" } else { "FAILED" }
        );
    }
    Ok(all)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train { cfg, out } => train(&cfg.resolve(true)?, &out)?,
        Command::Probe { cfg, checkpoint } => probe(&cfg.resolve(false)?, &checkpoint)?,
        Command::Heatmap { log, rounds, out } => {
            let file = File::open(&log).with_context(|| format!("cannot open {}", log.display()))?;
            let records = read_record_log(BufReader::new(file))?;
            let mut w = output(out.as_deref())?;
            export_heatmap_data(&records, &rounds, &mut w)?;
            w.flush()?;
        }
        Command::Embed {
            cfg,
            checkpoint,
            count,
            out,
        } => {
            let cfg = cfg.resolve(false)?;
            let encoder = load_checkpoint(&checkpoint)?;
            let data = prepare_data(&cfg)?;
            let mut w = output(out.as_deref())?;
            export_embeddings(&encoder, &data.test, count, cfg.seed, &mut w)?;
            w.flush()?;
        }
        Command::Check { seed } => return check(seed),
        Command::Commcost { cfg } => {
            let cfg = cfg.resolve(false)?;
            println!("round-wise {} bytes", comm_cost(&cfg, CommMode::RoundWise));
            println!("batch-wise {} bytes", comm_cost(&cfg, CommMode::BatchWise));
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
