use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};

use relcomp::compose::{compose, BilinearOperator, ConstraintMode};
use relcomp::embedding::{
    correlation_report, load_embeddings, standardize, EmbeddingMatrix, TextFormat,
    DEFAULT_HISTOGRAM_BINS,
};
use relcomp::evaluation::{
    eval_bats_holdout, eval_maxdiff, eval_sat, load_sat, load_semeval, EvalReport, OovPolicy,
};
use relcomp::theorem_lab::{run_manifest, Distribution, ManifestConfig};
use relcomp::training::{
    load_groups, train_with, BenchmarkScores, NegativeStrategy, TrainingConfig,
};

use crate::settings::Settings;
use crate::{Cli, CliError, Command, EmbeddingArgs, OperatorArgs};

type CliResult<T = ()> = Result<T, CliError>;

pub fn run(cli: Cli) -> CliResult {
    let name = match &cli.command {
        Command::Correlate(_) => "correlate",
        Command::Train(_) => "train",
        Command::Eval(_) => "eval",
        Command::Verify(_) => "verify",
        Command::Compose(_) => "compose",
    };
    let mut s = Settings::load(name, cli.config.as_deref())?;
    let threads = s.value("threads", cli.threads, 0usize)?;
    if threads > 0 {
        // Only fails if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    match cli.command {
        Command::Correlate(a) => correlate(s, a),
        Command::Train(a) => train(s, cli.seed, a),
        Command::Eval(a) => eval(s, cli.seed, a),
        Command::Verify(a) => verify(s, cli.seed, a),
        Command::Compose(a) => compose_pair(s, a),
    }
}

fn existing(path: PathBuf) -> CliResult<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(CliError::Input(format!(
            "{}: no such file or directory",
            path.display()
        )))
    }
}

fn prepare_out_dir(s: Settings, out_dir: &Path) -> CliResult {
    let echo = s.finish()?;
    fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Input(format!("{}: {e}", out_dir.display())))?;
    let text = serde_json::to_string_pretty(&Value::Object(echo)).expect("echo serializes");
    write(out_dir, "config_echo.json", text + "\n")
}

fn write(dir: &Path, name: &str, contents: impl AsRef<[u8]>) -> CliResult {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report serializes") + "\n"
}

/// Settings shared by every command that reads embeddings.
struct Input {
    path: PathBuf,
    format: TextFormat,
    standardize: bool,
}

fn input_settings(
    s: &mut Settings,
    a: EmbeddingArgs,
    standardize_default: bool,
) -> CliResult<Input> {
    Ok(Input {
        path: existing(s.required("embeddings", a.embeddings)?)?,
        format: s.value("format", a.format, TextFormat::NoHeader)?,
        standardize: s.value("standardize", a.standardize, standardize_default)?,
    })
}

fn load_input(input: &Input) -> CliResult<EmbeddingMatrix> {
    let e = load_embeddings(&input.path, input.format)?;
    log::info!("loaded {} words, d = {}", e.len(), e.dim());
    if input.standardize {
        Ok(standardize(&e)?.0)
    } else {
        Ok(e)
    }
}

enum OperatorSource {
    File(PathBuf),
    PairDiff,
}

fn operator_settings(s: &mut Settings, a: OperatorArgs) -> CliResult<OperatorSource> {
    let path = s.optional("operator", a.operator)?;
    let pairdiff = s.value("pairdiff", a.pairdiff, false)?;
    match (path, pairdiff) {
        (Some(_), true) => Err(CliError::Input(
            "give either --operator or --pairdiff, not both".into(),
        )),
        (Some(p), false) => Ok(OperatorSource::File(existing(p)?)),
        (None, true) => Ok(OperatorSource::PairDiff),
        (None, false) => Err(CliError::Input(
            "an operator is required: --operator FILE or --pairdiff".into(),
        )),
    }
}

fn load_operator(src: &OperatorSource, e: &EmbeddingMatrix) -> CliResult<BilinearOperator> {
    let op = match src {
        OperatorSource::PairDiff => BilinearOperator::pairdiff(e.dim()),
        OperatorSource::File(p) => BilinearOperator::load(p)?,
    };
    if op.dim() != e.dim() {
        return Err(CliError::Input(format!(
            "dimension mismatch: operator has d = {}, embeddings have d = {}",
            op.dim(),
            e.dim()
        )));
    }
    Ok(op)
}

fn correlate(mut s: Settings, a: crate::CorrelateArgs) -> CliResult {
    let input = input_settings(&mut s, a.input, false)?;
    let bins = s.value("bins", a.bins, DEFAULT_HISTOGRAM_BINS)?;
    let include_matrix = s.value("include_matrix", a.include_matrix, false)?;
    let out_dir: PathBuf = s.required("out_dir", a.out_dir)?;
    prepare_out_dir(s, &out_dir)?;

    let e = load_input(&input)?;
    let report = correlation_report(&e, bins)?;
    let summary = report.summary(include_matrix);
    write(&out_dir, "correlation_summary.json", to_json(&summary))?;
    let mut csv = Vec::new();
    report.write_histogram_csv(&mut csv)?;
    write(&out_dir, "correlation_histogram.csv", csv)?;
    println!(
        "mean_abs_offdiag\t{}\nsd_offdiag\t{}",
        summary.mean_abs_offdiag, summary.sd_offdiag
    );
    Ok(())
}

fn train(mut s: Settings, seed: Option<u64>, a: crate::TrainArgs) -> CliResult {
    let input = input_settings(&mut s, a.input, true)?;
    let groups_path = existing(s.required("groups", a.groups)?)?;
    let out_dir: PathBuf = s.required("out_dir", a.out_dir)?;
    let d = TrainingConfig::default();
    let cfg = TrainingConfig {
        learning_rate: s.value("learning_rate", a.learning_rate, d.learning_rate)?,
        epochs: s.value("epochs", a.epochs, d.epochs)?,
        lambda_a: s.value("lambda_a", a.lambda_a, d.lambda_a)?,
        negatives_per_pair: s.value(
            "negatives_per_pair",
            a.negatives_per_pair,
            d.negatives_per_pair,
        )?,
        negative_strategy: s.value::<NegativeStrategy>(
            "negative_strategy",
            a.negative_strategy,
            d.negative_strategy,
        )?,
        candidate_pool: s.value("candidate_pool", a.candidate_pool, d.candidate_pool)?,
        max_positives_per_group: s
            .optional("max_positives_per_group", a.max_positives_per_group)?,
        seed: s.value("seed", seed, d.seed)?,
        init_range: (
            s.value("init_lo", a.init_lo, d.init_range.0)?,
            s.value("init_hi", a.init_hi, d.init_range.1)?,
        ),
        adagrad_epsilon: s.value("adagrad_epsilon", a.adagrad_epsilon, d.adagrad_epsilon)?,
        batch_size: s.value("batch_size", a.batch_size, d.batch_size)?,
        mode: s.value::<ConstraintMode>("mode", a.mode, d.mode)?,
        allow_unstandardized: s.value("allow_unstandardized", a.allow_unstandardized, false)?,
        record_timing: s.value("record_timing", a.record_timing, false)?,
    };
    cfg.validate()?;
    let sat_path = s.optional("sat", a.sat)?.map(existing).transpose()?;
    let semeval_path = s
        .optional("semeval", a.semeval)?
        .map(existing)
        .transpose()?;
    let oov = s.value("oov", a.oov, OovPolicy::Skip)?;
    prepare_out_dir(s, &out_dir)?;

    let e = load_input(&input)?;
    let groups = load_groups(&groups_path)?;
    let sat = sat_path.map(load_sat).transpose()?;
    let semeval = semeval_path.map(load_semeval).transpose()?;

    let (op, trace) = train_with(&e, &groups, &cfg, |epoch, op| {
        let score = |r: relcomp::Result<EvalReport>| match r {
            Ok(r) => Some(r.score),
            Err(err) => {
                log::warn!("epoch {epoch}: evaluation failed: {err}");
                None
            }
        };
        BenchmarkScores {
            sat_acc: sat.as_ref().and_then(|q| score(eval_sat(op, &e, q, oov))),
            maxdiff_acc: semeval
                .as_ref()
                .and_then(|r| score(eval_maxdiff(op, &e, r, oov))),
        }
    })?;

    op.save(out_dir.join("operator.json"))?;
    let mut csv = Vec::new();
    trace.write_csv(&mut csv)?;
    write(&out_dir, "trace.csv", csv)?;
    let summary = json!({
        "operator_digest": op.digest(),
        "n_positive": trace.n_positive,
        "n_negative": trace.n_negative,
        "skipped_pairs": trace.skipped_pairs,
        "initial": trace.initial,
        "final": trace.records.last(),
    });
    write(&out_dir, "train_summary.json", to_json(&summary))?;
    if let Some(last) = trace.records.last() {
        println!(
            "epoch {}\tloss {}\tfrob_A {}\tp {}\tq {}",
            last.epoch, last.loss, last.frob_a, last.p, last.q
        );
    }
    Ok(())
}

fn eval(mut s: Settings, seed: Option<u64>, a: crate::EvalArgs) -> CliResult {
    let input = input_settings(&mut s, a.input, true)?;
    let source = operator_settings(&mut s, a.operator)?;
    let sat_path = s.optional("sat", a.sat)?.map(existing).transpose()?;
    let semeval_path = s
        .optional("semeval", a.semeval)?
        .map(existing)
        .transpose()?;
    let bats_path = s.optional("bats", a.bats)?.map(existing).transpose()?;
    let folds = s.value("folds", a.folds, 5usize)?;
    let oov = s.value("oov", a.oov, OovPolicy::Skip)?;
    let seed = s.value("seed", seed, 0u64)?;
    let out_dir: PathBuf = s.required("out_dir", a.out_dir)?;
    if sat_path.is_none() && semeval_path.is_none() && bats_path.is_none() {
        return Err(CliError::Input(
            "nothing to evaluate: give --sat, --semeval and/or --bats".into(),
        ));
    }
    prepare_out_dir(s, &out_dir)?;

    let e = load_input(&input)?;
    let op = load_operator(&source, &e)?;
    let mut reports = Vec::new();
    if let Some(p) = sat_path {
        reports.push(("eval_sat.json", eval_sat(&op, &e, &load_sat(p)?, oov)?));
    }
    if let Some(p) = semeval_path {
        reports.push((
            "eval_maxdiff.json",
            eval_maxdiff(&op, &e, &load_semeval(p)?, oov)?,
        ));
    }
    if let Some(p) = bats_path {
        let groups = load_groups(p)?;
        reports.push((
            "eval_bats.json",
            eval_bats_holdout(&op, &e, &groups, folds, seed)?,
        ));
    }

    let mut tsv = String::from(EvalReport::tsv_header());
    tsv.push('\n');
    for (file, report) in &reports {
        write(&out_dir, file, to_json(report))?;
        tsv.push_str(&report.tsv_summary());
        tsv.push('\n');
    }
    write(&out_dir, "eval_summary.tsv", &tsv)?;
    print!("{tsv}");
    Ok(())
}

fn verify(mut s: Settings, seed: Option<u64>, a: crate::VerifyArgs) -> CliResult {
    let d = ManifestConfig::default();
    let cfg = ManifestConfig {
        seed: s.value("seed", seed, d.seed)?,
        theorem1_d: s.value("theorem1_d", a.theorem1_d, d.theorem1_d)?,
        theorem1_n: s.value("theorem1_n", a.theorem1_n, d.theorem1_n)?,
        theorem1_operators: s.value(
            "theorem1_operators",
            a.theorem1_operators,
            d.theorem1_operators,
        )?,
        theorem1_a_scale: s.value("theorem1_a_scale", a.theorem1_a_scale, d.theorem1_a_scale)?,
        distributions: s.list::<Distribution>(
            "distributions",
            a.distributions,
            "standard-normal,rademacher",
        )?,
        zero_d: s.value("zero_d", a.zero_d, d.zero_d)?,
        zero_n: s.value("zero_n", a.zero_n, d.zero_n)?,
        closed_form_d: s.value("closed_form_d", a.closed_form_d, d.closed_form_d)?,
        closed_form_n: s.value("closed_form_n", a.closed_form_n, d.closed_form_n)?,
        closed_form_draws: s.value(
            "closed_form_draws",
            a.closed_form_draws,
            d.closed_form_draws,
        )?,
        closed_form_tolerance_se: s.value(
            "closed_form_tolerance_se",
            a.closed_form_tolerance_se,
            d.closed_form_tolerance_se,
        )?,
        coupling_d: s.value("coupling_d", a.coupling_d, d.coupling_d)?,
        coupling_n: s.value("coupling_n", a.coupling_n, d.coupling_n)?,
        correlation_m: s.value("correlation_m", a.correlation_m, d.correlation_m)?,
        correlation_d: s.value("correlation_d", a.correlation_d, d.correlation_d)?,
        moments_m: s.value("moments_m", a.moments_m, d.moments_m)?,
        moments_d: s.value("moments_d", a.moments_d, d.moments_d)?,
        moments_mean_tolerance: d.moments_mean_tolerance,
        moments_var_tolerance: d.moments_var_tolerance,
        strict: s.value("strict", a.strict, false)?,
    };
    let out_dir: PathBuf = s.required("out_dir", a.out_dir)?;
    prepare_out_dir(s, &out_dir)?;

    let manifest = run_manifest(&cfg)?;
    write(&out_dir, "verify_manifest.json", to_json(&manifest))?;
    for c in &manifest.checks {
        let status = match (c.informational, c.pass) {
            (true, _) => "INFO",
            (false, true) => "PASS",
            (false, false) => "FAIL",
        };
        println!(
            "{status}\t{}\testimate={}\tstd_error={}",
            c.check,
            c.estimate.map_or("-".into(), |v| v.to_string()),
            c.std_error.map_or("-".into(), |v| v.to_string())
        );
    }
    for (check, warning) in manifest.warnings() {
        eprintln!("warning: {check}: {warning}");
    }
    if manifest.pass {
        Ok(())
    } else {
        let failed: Vec<&str> = manifest.failures().map(|c| c.check.as_str()).collect();
        Err(CliError::VerificationFailed(failed.join(", ")))
    }
}

fn compose_pair(mut s: Settings, a: crate::ComposeArgs) -> CliResult {
    let input = input_settings(&mut s, a.input, true)?;
    let source = operator_settings(&mut s, a.operator)?;
    let head: String = s.required("head", a.head)?;
    let tail: String = s.required("tail", a.tail)?;
    let out_dir: Option<PathBuf> = s.optional("out_dir", a.out_dir)?;
    match &out_dir {
        Some(dir) => prepare_out_dir(s, dir)?,
        None => {
            s.finish()?;
        }
    }

    let e = load_input(&input)?;
    let op = load_operator(&source, &e)?;
    let r = compose(&op, e.lookup(&head)?, e.lookup(&tail)?)?;
    let mut out = Map::new();
    out.insert("head".into(), head.into());
    out.insert("tail".into(), tail.into());
    out.insert("operator_digest".into(), op.digest().into());
    out.insert("norm".into(), r.norm_sq().sqrt().into());
    out.insert(
        "relation".into(),
        serde_json::to_value(&r).expect("vector serializes"),
    );
    let text = to_json(&Value::Object(out));
    if let Some(dir) = &out_dir {
        write(dir, "relation.json", &text)?;
    }
    print!("{text}");
    Ok(())
}
