use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context, Result};
use blisslab::bliss::{
    decode_public_key, decode_secret_key, encode_public_key, encode_secret_key,
    encode_signed_corpus, write_transcript, BlissParams, KeyPair, PublicKey, SignOptions,
    SignedMessage, Signer,
};
use blisslab::campaign::{
    collect_profiling_traces, observe_victim, profiling_rng, run_attack, score_observations,
    train_classifiers, victim_key, Classifiers, ObserveOptions,
};
use blisslab::leakage::{
    emit_random, read_archive, write_archive, LeakPoint, SignatureTraces, TraceArchive,
};
use blisslab::learn::{decode_model, encode_model, ClassifierModel, Dataset};
use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use blisslab_cli::config::{self, ExperimentConfig};
use blisslab_cli::report::Report;

/// Failure classes, each with its own exit code.
#[derive(Debug)]
enum Failure {
    Config(anyhow::Error),
    MissingInput(PathBuf),
    BadInput(anyhow::Error),
    RecoveryFailed(String),
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(e) => write!(f, "configuration error: {e:#}"),
            Failure::MissingInput(p) => write!(f, "missing input file {}", p.display()),
            Failure::BadInput(e) => write!(f, "malformed input: {e:#}"),
            Failure::RecoveryFailed(m) => write!(f, "key recovery failed: {m}"),
        }
    }
}

impl std::error::Error for Failure {}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::MissingInput(_) => 3,
            Failure::BadInput(_) => 4,
            Failure::RecoveryFailed(_) => 5,
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "blisslab",
    version,
    about = "Side-channel key recovery experiments on a simulated BLISS signer"
)]
struct Cli {
    /// TOML config file; tables or dotted keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Parameter set: bliss1 or toy64.
    #[arg(long, global = true)]
    params: Option<String>,
    #[arg(long = "seed.keygen", global = true)]
    seed_keygen: Option<u64>,
    #[arg(long = "seed.signing", global = true)]
    seed_signing: Option<u64>,
    #[arg(long = "seed.leakage", global = true)]
    seed_leakage: Option<u64>,
    #[arg(long = "seed.training", global = true)]
    seed_training: Option<u64>,
    /// Attack number: 1 (least squares), 2 (kernel), 3 (likelihood).
    #[arg(long, global = true)]
    attack: Option<u8>,
    #[arg(long, global = true)]
    signatures: Option<usize>,
    /// Output directory for artifacts and reports.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Any config setting as `key=value`; applied last.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the victim key pair.
    Keygen,
    /// Sign random messages with the victim key.
    Sign {
        /// Also write every signing attempt's internals as logfmt.
        #[arg(long)]
        transcripts: bool,
    },
    /// Collect labelled profiling traces on the clone device.
    Tracegen,
    /// Train the four leak classifiers from the profiling archives.
    Train,
    /// Score the trained classifiers on fresh held-out traces.
    Eval,
    /// Observe the victim signing and run the selected attack.
    Attack,
    /// Profile, observe the victim and attack, in one run.
    E2e,
    /// Print the resolved configuration.
    Config,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Keygen => "keygen",
            Command::Sign { .. } => "sign",
            Command::Tracegen => "tracegen",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Attack => "attack",
            Command::E2e => "e2e",
            Command::Config => "config",
        }
    }
}

fn resolve(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text =
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            config::load(&text, &path.display().to_string())?
        }
        None => ExperimentConfig::default(),
    };
    let flags: [(&str, Option<String>); 9] = [
        ("params", cli.params.clone()),
        ("seed.keygen", cli.seed_keygen.map(|v| v.to_string())),
        ("seed.signing", cli.seed_signing.map(|v| v.to_string())),
        ("seed.leakage", cli.seed_leakage.map(|v| v.to_string())),
        ("seed.training", cli.seed_training.map(|v| v.to_string())),
        ("attack", cli.attack.map(|v| v.to_string())),
        ("signatures", cli.signatures.map(|v| v.to_string())),
        ("out", cli.out.as_ref().map(|p| p.display().to_string())),
        ("", None),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            cfg.set(k, &v)?;
        }
    }
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| anyhow!("--set expects KEY=VALUE, got {kv:?}"))?;
        cfg.set(k.trim(), v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn read_input(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Failure::MissingInput(path.to_path_buf()).into()
        } else {
            anyhow!(e).context(format!("reading {}", path.display()))
        }
    })
}

fn bad_input(path: &Path, e: impl std::fmt::Display) -> anyhow::Error {
    Failure::BadInput(anyhow!("{}: {e}", path.display())).into()
}

fn write_output(path: &Path, data: &[u8]) -> Result<()> {
    fs::write(path, data).with_context(|| format!("writing {}", path.display()))
}

fn public_key_path(out: &Path) -> PathBuf {
    out.join("victim.pk")
}

fn secret_key_path(out: &Path) -> PathBuf {
    out.join("victim.sk")
}

fn archive_path(out: &Path, point: LeakPoint) -> PathBuf {
    out.join(format!("profile-{}.sctr", point.name()))
}

fn model_path(out: &Path, point: LeakPoint) -> PathBuf {
    out.join(format!("model-{}.blmd", point.name()))
}

fn load_keys(out: &Path) -> Result<KeyPair> {
    let path = secret_key_path(out);
    decode_secret_key(&read_input(&path)?).map_err(|e| bad_input(&path, e))
}

fn load_public_key(out: &Path) -> Result<PublicKey> {
    let path = public_key_path(out);
    decode_public_key(&read_input(&path)?).map_err(|e| bad_input(&path, e))
}

fn load_models(out: &Path) -> Result<Classifiers> {
    let load = |point| -> Result<ClassifierModel> {
        let path = model_path(out, point);
        decode_model(&read_input(&path)?).map_err(|e| bad_input(&path, e))
    };
    Ok(Classifiers {
        cdt_x: load(LeakPoint::CdtX)?,
        yu_zero: load(LeakPoint::YuZero)?,
        sign_a: load(LeakPoint::SignA)?,
        sign_b: load(LeakPoint::SignB)?,
    })
}

fn save_models(out: &Path, models: &Classifiers) -> Result<()> {
    for point in LeakPoint::ALL {
        write_output(&model_path(out, point), &encode_model(models.get(point)))?;
    }
    Ok(())
}

fn save_keys(out: &Path, keys: &KeyPair, params: &BlissParams) -> Result<()> {
    write_output(&secret_key_path(out), &encode_secret_key(keys, params.d))?;
    write_output(
        &public_key_path(out),
        &encode_public_key(&keys.pk, params.d),
    )
}

fn check_key_params(keys: &KeyPair, params: &BlissParams, path: &Path) -> Result<()> {
    if keys.pk.a1.len() != params.n() {
        return Err(bad_input(
            path,
            format!(
                "key has n = {}, parameter set {} has n = {}",
                keys.pk.a1.len(),
                params.name,
                params.n()
            ),
        ));
    }
    Ok(())
}

fn cmd_keygen(cfg: &ExperimentConfig, report: &mut Report) -> Result<()> {
    let params = cfg.bliss_params()?;
    let keys = victim_key(&params, cfg.seed_keygen)?;
    save_keys(&cfg.out, &keys, &params)?;
    report.fact("n", params.n());
    report.fact("public_key", public_key_path(&cfg.out).display());
    report.fact("secret_key", secret_key_path(&cfg.out).display());
    Ok(())
}

fn signer(cfg: &ExperimentConfig, params: &BlissParams) -> Result<Signer> {
    let masking_shares = (cfg.masking_shares > 1).then_some(cfg.masking_shares);
    Ok(Signer::new(params.clone(), SignOptions { masking_shares })?)
}

fn cmd_sign(cfg: &ExperimentConfig, transcripts: bool, report: &mut Report) -> Result<()> {
    let params = cfg.bliss_params()?;
    let keys = load_keys(&cfg.out)?;
    check_key_params(&keys, &params, &secret_key_path(&cfg.out))?;
    let signer = signer(cfg, &params)?;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed_signing);
    let mut log = if transcripts {
        let path = cfg.out.join("transcripts.log");
        Some(BufWriter::new(
            fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?,
        ))
    } else {
        None
    };
    let mut entries = Vec::with_capacity(cfg.signatures);
    let mut restarts = 0;
    for i in 0..cfg.signatures {
        let message = format!("message {i}").into_bytes();
        let (signature, t) = signer.sign(&message, &keys, &mut rng)?;
        restarts += t.restarts();
        if let Some(w) = log.as_mut() {
            write_transcript(w, i, &t)?;
        }
        entries.push(SignedMessage { message, signature });
    }
    if let Some(mut w) = log {
        w.flush()?;
    }
    let path = cfg.out.join("corpus.blsc");
    write_output(
        &path,
        &encode_signed_corpus(&entries, params.ring.q(), params.d),
    )?;
    report.fact("signatures", entries.len());
    report.fact("restarts", restarts);
    report.fact("corpus", path.display());
    Ok(())
}

fn cmd_tracegen(cfg: &ExperimentConfig, report: &mut Report) -> Result<()> {
    let params = cfg.bliss_params()?;
    let profiles = cfg.profiles()?;
    let opts = cfg.profiling_options();
    let pools = collect_profiling_traces(&params, &profiles, &opts, &mut profiling_rng(opts.seed))?;
    for point in LeakPoint::ALL {
        let archive = TraceArchive {
            point,
            trace_len: profiles.get(point).trace_len,
            traces: pools.get(point).to_vec(),
        };
        let path = archive_path(&cfg.out, point);
        write_archive(&path, &archive).with_context(|| format!("writing {}", path.display()))?;
        let positives = archive.traces.iter().filter(|t| t.label != 0).count();
        report.fact(format!("{}.traces", point.name()), archive.traces.len());
        report.fact(format!("{}.nonzero_labels", point.name()), positives);
    }
    Ok(())
}

fn load_archives(cfg: &ExperimentConfig) -> Result<SignatureTraces> {
    let mut pools = SignatureTraces::default();
    for point in LeakPoint::ALL {
        let path = archive_path(&cfg.out, point);
        read_input(&path)?;
        let archive = read_archive(&path).map_err(|e| bad_input(&path, e))?;
        if archive.point != point {
            return Err(bad_input(&path, format!("holds {} traces", archive.point)));
        }
        let slot = match point {
            LeakPoint::CdtX => &mut pools.cdt_x,
            LeakPoint::YuZero => &mut pools.yu_zero,
            LeakPoint::SignA => &mut pools.sign_a,
            LeakPoint::SignB => &mut pools.sign_b,
        };
        *slot = archive.traces;
    }
    Ok(pools)
}

fn cmd_train(cfg: &ExperimentConfig, report: &mut Report) -> Result<()> {
    let profiles = cfg.profiles()?;
    let pools = load_archives(cfg)?;
    let (models, reports) = train_classifiers(&pools, &profiles, &cfg.profiling_options())?;
    save_models(&cfg.out, &models)?;
    for (point, r) in reports {
        report.fact(format!("{}.epochs", point.name()), r.epochs());
        report.fact(format!("{}.best_epoch", point.name()), r.best_epoch);
        let best = r.val_loss.get(r.best_epoch).copied().unwrap_or(f64::NAN);
        report.fact(format!("{}.val_loss", point.name()), format!("{best:.6}"));
    }
    Ok(())
}

fn cmd_eval(cfg: &ExperimentConfig, report: &mut Report) -> Result<()> {
    let profiles = cfg.profiles()?;
    let models = load_models(&cfg.out)?;
    for point in LeakPoint::ALL {
        let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed_leakage);
        rng.set_stream(100 + point.code() as u64);
        let count = if point == LeakPoint::YuZero {
            cfg.eval_traces_yu_zero
        } else {
            cfg.eval_traces
        };
        let ds = Dataset::from_traces(&emit_random(profiles.get(point), count, &mut rng));
        let m = models.get(point).evaluate(&ds)?;
        let name = point.name();
        report.fact(format!("{name}.traces"), count);
        report.fact(format!("{name}.accuracy"), format!("{:.6}", m.accuracy));
        report.fact(
            format!("{name}.trivial_accuracy"),
            format!("{:.6}", m.majority_baseline()),
        );
        if let Some(v) = m.false_positive_rate {
            report.fact(format!("{name}.false_positive_rate"), format!("{v:.3e}"));
        }
        if let Some(v) = m.false_negative_rate {
            report.fact(format!("{name}.false_negative_rate"), format!("{v:.3e}"));
        }
    }
    Ok(())
}

/// Device-B simulation plus the attack. The secret key only drives the
/// simulated signer and the final comparison; the attack itself sees the
/// public key, the signatures and the classifier outputs.
fn attack_victim(
    cfg: &ExperimentConfig,
    params: &BlissParams,
    victim: &KeyPair,
    pk: &PublicKey,
    models: &Classifiers,
    report: &mut Report,
) -> Result<()> {
    let kind = cfg.attack_kind()?;
    let profiles = cfg.profiles()?;
    let mut observe = ObserveOptions::for_attack(kind);
    observe.masking_shares = (cfg.masking_shares > 1).then_some(cfg.masking_shares);
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed_signing);
    let start = Instant::now();
    let observations = observe_victim(
        params,
        victim,
        &profiles,
        models,
        cfg.signatures,
        observe,
        &mut rng,
    )?;
    report.seconds("observe", start.elapsed().as_secs_f64());
    let score = score_observations(&observations, observe);
    report.fact("attack", kind.number());
    report.fact("signatures", observations.len());
    if observe.draws {
        report.fact(
            "observed.yu_flagged",
            score.yu_true_positive + score.yu_false_positive,
        );
        report.fact("observed.yu_false_positives", score.yu_false_positive);
        report.fact("observed.yu_false_negatives", score.yu_false_negative);
        report.fact("observed.x_errors", score.x_errors);
        report.fact("observed.a_errors", score.a_errors);
    }
    if observe.sign_flip {
        report.fact("observed.b_errors", score.b_errors);
    }
    let mut attack_rng = ChaCha20Rng::seed_from_u64(cfg.seed_signing);
    attack_rng.set_stream(1);
    let outcome = run_attack(
        kind,
        params,
        pk,
        &observations,
        &cfg.attacks,
        &mut attack_rng,
    );
    for (k, v) in &outcome.facts {
        report.fact(k.clone(), v);
    }
    report.seconds("attack", outcome.seconds);
    let matches = outcome.recovered.as_deref() == Some(victim.sk.s1.coeffs());
    report.fact("key_recovered", outcome.success());
    report.fact("matches_victim_key", matches);
    report.success = outcome.success() && matches;
    report.fact(
        "result",
        if report.success {
            "key recovered"
        } else {
            "key not recovered"
        },
    );
    match outcome.error {
        Some(e) => Err(Failure::RecoveryFailed(e).into()),
        None if !matches => {
            Err(Failure::RecoveryFailed("validated key differs from the victim key".into()).into())
        }
        None => Ok(()),
    }
}

fn cmd_attack(cfg: &ExperimentConfig, report: &mut Report) -> Result<()> {
    let params = cfg.bliss_params()?;
    let victim = load_keys(&cfg.out)?;
    check_key_params(&victim, &params, &secret_key_path(&cfg.out))?;
    let pk = load_public_key(&cfg.out)?;
    let models = load_models(&cfg.out)?;
    attack_victim(cfg, &params, &victim, &pk, &models, report)
}

fn cmd_e2e(cfg: &ExperimentConfig, report: &mut Report) -> Result<()> {
    let params = cfg.bliss_params()?;
    let profiles = cfg.profiles()?;
    let opts = cfg.profiling_options();
    let start = Instant::now();
    let pools = collect_profiling_traces(&params, &profiles, &opts, &mut profiling_rng(opts.seed))?;
    report.seconds("profiling_traces", start.elapsed().as_secs_f64());
    let start = Instant::now();
    let (models, reports) = train_classifiers(&pools, &profiles, &opts)?;
    drop(pools);
    report.seconds("training", start.elapsed().as_secs_f64());
    for (point, r) in reports {
        report.fact(format!("{}.epochs", point.name()), r.epochs());
    }
    save_models(&cfg.out, &models)?;
    let victim = victim_key(&params, cfg.seed_keygen)?;
    save_keys(&cfg.out, &victim, &params)?;
    attack_victim(cfg, &params, &victim, &victim.pk, &models, report)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = resolve(&cli).map_err(Failure::Config)?;
    if let Command::Config = cli.command {
        for (k, v) in cfg.resolved() {
            println!("{k} = {v:?}");
        }
        return Ok(());
    }
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    let mut report = Report::new(cli.command.name(), cfg.resolved());
    let start = Instant::now();
    let result = match &cli.command {
        Command::Keygen => cmd_keygen(&cfg, &mut report),
        Command::Sign { transcripts } => cmd_sign(&cfg, *transcripts, &mut report),
        Command::Tracegen => cmd_tracegen(&cfg, &mut report),
        Command::Train => cmd_train(&cfg, &mut report),
        Command::Eval => cmd_eval(&cfg, &mut report),
        Command::Attack => cmd_attack(&cfg, &mut report),
        Command::E2e => cmd_e2e(&cfg, &mut report),
        Command::Config => unreachable!("handled above"),
    };
    report.seconds("total", start.elapsed().as_secs_f64());
    if let Err(e) = &result {
        report.success = false;
        report.fact("error", format!("{e:#}"));
    }
    // A report is written even for failed runs that got this far.
    if !matches!(&result, Err(e) if e.downcast_ref::<Failure>().is_some_and(|f| matches!(f, Failure::MissingInput(_) | Failure::BadInput(_))))
    {
        report.emit(&cfg.out)?;
    }
    result
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<Failure>().map_or(1, Failure::code);
            ExitCode::from(code)
        }
    }
}
