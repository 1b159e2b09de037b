//! `sshiba` command-line front end.
//!
//! Exit codes: 0 success, 2 bad input (parse, domain, shape, unknown view,
//! I/O), 3 numerical failure, 4 usage. Errors are printed to stderr as a
//! single `Class: message` line.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use sshiba::evaluation::{auc_multiclass_balanced, auc_multilabel_balanced, masked_rmse};
use sshiba::io::{
    load_dataset, load_model, load_view, save_model, write_matrix_csv, DatasetManifest, Role,
};
use sshiba::model::ViewLatent;
use sshiba::predictive::{predict, PredictionRequest, PredictionResult, ViewInput, ViewPrediction};
use sshiba::{fit, Error, Hyperparameters, ModelState, ViewData};

#[derive(Parser, Debug)]
#[command(
    name = "sshiba",
    version,
    about = "Bayesian inter-battery factor analysis"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a model on every view of a manifest.
    Fit(FitArgs),
    /// Predict target views from the input views of a manifest.
    Predict(PredictArgs),
    /// Write the training views with missing cells filled in.
    Impute(ModelArgs),
    /// Rank features by relevance 1/⟨γ_d⟩.
    Relevance(RelevanceArgs),
    /// Export loadings ordered by 1/⟨α_k⟩ and the feature masks ⟨γ⟩, plus
    /// held-out metrics when a manifest with target views is given.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct FitArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Model file; the fit report goes to `<out>.report.json`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    k_init: usize,
    #[arg(long, default_value_t = 10)]
    restarts: usize,
    #[arg(long, default_value_t = 50_000)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-6)]
    prune_threshold: f64,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Disable the per-feature relevance prior on every view.
    #[arg(long)]
    no_feature_selection: bool,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// Views with role `input` are observed.
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Views to predict; defaults to the manifest views with role `target`.
    #[arg(long = "target")]
    targets: Vec<String>,
}

#[derive(Args, Debug)]
struct ModelArgs {
    #[arg(long)]
    model: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[arg(long)]
    model: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Held-out data: targets are predicted from the input views and scored
    /// into `metrics.csv`.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RelevanceArgs {
    #[arg(long)]
    model: PathBuf,
    /// Output CSV file.
    #[arg(long)]
    out: PathBuf,
    /// Restrict to one view.
    #[arg(long)]
    view: Option<String>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 4 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}: {}", e.class(), e);
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_numeric() {
        3
    } else {
        2
    }
}

fn run(command: Command) -> sshiba::Result<()> {
    match command {
        Command::Fit(a) => run_fit(a),
        Command::Predict(a) => run_predict(a),
        Command::Impute(a) => run_impute(a),
        Command::Relevance(a) => run_relevance(a),
        Command::Report(a) => run_report(a),
    }
}

fn run_fit(a: FitArgs) -> sshiba::Result<()> {
    let mut manifest = DatasetManifest::from_path(&a.manifest)?;
    if a.no_feature_selection {
        for v in &mut manifest.views {
            v.feature_selection = Some(false);
        }
    }
    let data = load_dataset(&manifest)?;
    let hp = Hyperparameters {
        k_init: a.k_init,
        restarts: a.restarts,
        max_iters: a.max_iter,
        prune_threshold: a.prune_threshold,
        convergence_rel_tol: a.tol,
        seed: a.seed,
        ..Hyperparameters::default()
    };
    let (state, report) = fit(&data, &hp)?;
    save_model(&state, &a.out)?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    fs::write(sidecar(&a.out, "report.json"), json + "\n")?;
    Ok(())
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

fn run_predict(a: PredictArgs) -> sshiba::Result<()> {
    let model = load_model(&a.model)?;
    let manifest = DatasetManifest::from_path(&a.manifest)?;
    let result = predict_manifest(&model, &manifest, a.targets)?;
    fs::create_dir_all(&a.out)?;
    for p in &result.views {
        write_matrix_csv(&a.out.join(format!("{}.mean.csv", p.name)), &p.mean, None)?;
        if let Some(prob) = &p.probabilities {
            write_matrix_csv(
                &a.out.join(format!("{}.probabilities.csv", p.name)),
                prob,
                None,
            )?;
        }
        if let Some(labels) = &p.labels {
            let m = DMatrix::from_fn(labels.len(), 1, |r, _| labels[r] as f64);
            write_matrix_csv(&a.out.join(format!("{}.labels.csv", p.name)), &m, None)?;
        }
    }
    Ok(())
}

/// Predicts `targets` (default: the manifest's target views) from the
/// manifest's remaining input views.
fn predict_manifest(
    model: &ModelState,
    manifest: &DatasetManifest,
    targets: Vec<String>,
) -> sshiba::Result<PredictionResult> {
    let targets: Vec<String> = if targets.is_empty() {
        manifest
            .views_with_role(Role::Target)
            .into_iter()
            .map(String::from)
            .collect()
    } else {
        targets
    };
    if targets.is_empty() {
        return Err(Error::Domain(
            "no target views: pass --target or mark views with role = \"target\"".into(),
        ));
    }
    for t in &targets {
        if model.view_index(t).is_none() {
            return Err(Error::UnknownView(t.clone()));
        }
    }
    let mut observed = Vec::new();
    for entry in manifest
        .views
        .iter()
        .filter(|v| v.role == Role::Input && !targets.contains(&v.name))
    {
        let view = load_view(manifest, entry)?;
        observed.push((entry.name.clone(), to_input(&entry.name, view.data)?));
    }
    predict(model, &PredictionRequest { observed, targets })
}

fn to_input(name: &str, data: ViewData) -> sshiba::Result<ViewInput> {
    let incomplete = || {
        Error::Domain(format!(
            "view '{name}' has missing cells; prediction inputs must be complete"
        ))
    };
    match data {
        ViewData::Real { values, missing } => {
            if missing.iter().any(|&m| m) {
                return Err(incomplete());
            }
            Ok(ViewInput::Real(values))
        }
        ViewData::Binary { values, missing } => {
            if missing.iter().any(|&m| m) {
                return Err(incomplete());
            }
            Ok(ViewInput::Binary(values))
        }
        ViewData::Categorical { labels } => labels
            .into_iter()
            .map(|l| l.ok_or_else(incomplete))
            .collect::<sshiba::Result<_>>()
            .map(ViewInput::Categorical),
    }
}

fn run_impute(a: ModelArgs) -> sshiba::Result<()> {
    let model = load_model(&a.model)?;
    fs::create_dir_all(&a.out)?;
    for v in &model.views {
        let completed = match &v.latent {
            ViewLatent::Real(r) => r.x_mean.clone(),
            // observed cells hold their label, missing cells P(t = 1)
            ViewLatent::Binary(b) => b.label_prob.clone(),
            ViewLatent::Categorical(c) => {
                let n = c.labels.len();
                DMatrix::from_fn(n, 1, |r, _| {
                    c.labels[r].unwrap_or_else(|| c.label_posterior.row(r).transpose().argmax().0)
                        as f64
                })
            }
        };
        write_matrix_csv(
            &a.out.join(format!("{}.csv", v.spec.name)),
            &completed,
            None,
        )?;
    }
    Ok(())
}

/// Features of one view ranked by `1/⟨γ_d⟩`, most relevant first; ties keep
/// feature order.
fn ranked_relevance(model: &ModelState, m: usize) -> Option<Vec<(usize, f64)>> {
    let gamma = model.views[m].gamma.as_ref()?;
    let mut ranked: Vec<(usize, f64)> = gamma.mean().iter().map(|g| 1.0 / g).enumerate().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
    Some(ranked)
}

fn run_relevance(a: RelevanceArgs) -> sshiba::Result<()> {
    let model = load_model(&a.model)?;
    let views: Vec<usize> = match &a.view {
        Some(name) => vec![model
            .view_index(name)
            .ok_or_else(|| Error::UnknownView(name.clone()))?],
        None => (0..model.views.len())
            .filter(|&m| model.views[m].gamma.is_some())
            .collect(),
    };
    let mut out = String::from("view,feature,rank,relevance\n");
    for m in views {
        let name = &model.views[m].spec.name;
        let ranked = ranked_relevance(&model, m).ok_or_else(|| {
            Error::Domain(format!(
                "view '{name}' was fitted without feature selection"
            ))
        })?;
        for (rank, (d, r)) in ranked.into_iter().enumerate() {
            out.push_str(&format!("{name},{d},{},{r}\n", rank + 1));
        }
    }
    fs::write(&a.out, out)?;
    Ok(())
}

fn run_report(a: ReportArgs) -> sshiba::Result<()> {
    let model = load_model(&a.model)?;
    fs::create_dir_all(&a.out)?;
    for v in &model.views {
        let scale: Vec<f64> = v.alpha.mean().iter().map(|x| 1.0 / x).collect();
        let mut order: Vec<usize> = (0..model.k).collect();
        order.sort_by(|&i, &j| scale[j].total_cmp(&scale[i]));
        let w = DMatrix::from_fn(v.w.mean.nrows(), order.len(), |r, c| {
            v.w.mean[(r, order[c])]
        });
        let name = &v.spec.name;
        write_matrix_csv(&a.out.join(format!("{name}.W.csv")), &w, None)?;
        let factors = DMatrix::from_fn(order.len(), 2, |r, c| {
            if c == 0 {
                order[r] as f64
            } else {
                scale[order[r]]
            }
        });
        write_matrix_csv(
            &a.out.join(format!("{name}.factor_scale.csv")),
            &factors,
            None,
        )?;
        if let Some(g) = &v.gamma {
            write_matrix_csv(
                &a.out.join(format!("{name}.gamma.csv")),
                &DMatrix::from_column_slice(g.len(), 1, g.mean().as_slice()),
                None,
            )?;
        }
    }
    if let Some(path) = &a.manifest {
        let manifest = DatasetManifest::from_path(path)?;
        let result = predict_manifest(&model, &manifest, Vec::new())?;
        let mut out = String::from("view,metric,value\n");
        for p in &result.views {
            let entry = manifest
                .views
                .iter()
                .find(|e| e.name == p.name)
                .expect("target from manifest");
            let (metric, value) = score(p, load_view(&manifest, entry)?.data)?;
            out.push_str(&format!("{},{metric},{value}\n", p.name));
        }
        fs::write(a.out.join("metrics.csv"), out)?;
    }
    Ok(())
}

/// Held-out score of one predicted view: RMSE over observed cells for real
/// views, balanced AUC for binary and categorical views.
fn score(p: &ViewPrediction, truth: ViewData) -> sshiba::Result<(&'static str, f64)> {
    let incomplete = || Error::Domain(format!("target view '{}' has missing labels", p.name));
    match truth {
        ViewData::Real { values, missing } => {
            Ok(("rmse", masked_rmse(&p.mean, &values, &missing.map(|m| !m))))
        }
        ViewData::Binary { values, missing } => {
            if missing.iter().any(|&m| m) {
                return Err(incomplete());
            }
            let probs = p
                .probabilities
                .as_ref()
                .expect("binary predictions carry probabilities");
            Ok(("auc", auc_multilabel_balanced(probs, &values)?))
        }
        ViewData::Categorical { labels } => {
            let labels: Vec<usize> = labels
                .into_iter()
                .map(|l| l.ok_or_else(incomplete))
                .collect::<sshiba::Result<_>>()?;
            let probs = p
                .probabilities
                .as_ref()
                .expect("categorical predictions carry probabilities");
            Ok(("auc", auc_multiclass_balanced(probs, &labels)?))
        }
    }
}
