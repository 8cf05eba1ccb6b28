use std::path::Path;

use anyhow::{bail, Context};
use arn::dataset::{load_idx, load_model, sample_per_class, save_model, split_per_class};
use arn::vision::CLASSES;
use arn::{ArnClassifier, Evaluation, LabeledImageSet, TrainingReport};
use clap::ValueEnum;

use crate::config::{write_file, Overrides, RunConfig};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepAxis {
    SampleSize,
    Rho,
    Threshold,
}

impl SweepAxis {
    fn name(self) -> &'static str {
        match self {
            SweepAxis::SampleSize => "sample_size",
            SweepAxis::Rho => "rho",
            SweepAxis::Threshold => "threshold",
        }
    }

    fn apply(self, config: &mut RunConfig, value: f64) -> anyhow::Result<()> {
        match self {
            SweepAxis::SampleSize => {
                if value < 1.0 || value.fract() != 0.0 {
                    bail!("sample size {value} is not a positive integer");
                }
                config.n_per_class = value as usize;
            }
            SweepAxis::Rho => {
                config.network.rho = value;
                config.network.l2_rho = value;
            }
            SweepAxis::Threshold => {
                config.network.threshold = value;
                config.network.l2_threshold = value;
            }
        }
        config.validate()
    }
}

/// Training sample and held-out sample for a run.
pub fn load_sets(config: &RunConfig) -> anyhow::Result<(LabeledImageSet, LabeledImageSet)> {
    let pool = load_idx(&config.images, &config.labels)?;
    match (&config.test_images, &config.test_labels) {
        (Some(images), Some(labels)) => {
            let test_pool = load_idx(images, labels)?;
            Ok((
                sample_per_class(&pool, config.n_per_class, config.seed)?,
                sample_per_class(&test_pool, config.test_per_class, config.seed)?,
            ))
        }
        _ => Ok(split_per_class(
            &pool,
            config.n_per_class,
            config.test_per_class,
            config.seed,
        )?),
    }
}

fn csv_text(
    command: &str,
    config: &RunConfig,
    header: &[&str],
    rows: &[Vec<String>],
) -> anyhow::Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    let body = String::from_utf8(w.into_inner().context("flushing csv")?)?;
    Ok(format!(
        "# arn {command} config={} schema=1\n{body}",
        config.hash()
    ))
}

fn fmt_f(v: f64) -> String {
    format!("{v:.6}")
}

fn train_network(
    config: &RunConfig,
    train: &LabeledImageSet,
) -> anyhow::Result<(ArnClassifier, TrainingReport)> {
    let mut net = ArnClassifier::new(config.pipeline()?)?;
    let report = net.train(&train.images, &train.labels)?;
    Ok((net, report))
}

pub fn train(o: &Overrides) -> anyhow::Result<()> {
    let config = RunConfig::resolve(o).map_err(CliError::config)?;
    config.write_resolved("train")?;
    let (train, _) = load_sets(&config)?;
    let (net, report) = train_network(&config, &train)?;
    let model_path = config.out_dir.join("model.json");
    save_model(&net, Some(config.seed), &model_path)?;

    let rows = vec![vec![
        report.images.to_string(),
        report.l1_nodes.to_string(),
        report.l2_nodes.to_string(),
        report.l1_resonators.to_string(),
        report.epochs.len().to_string(),
    ]];
    let header = ["images", "l1_nodes", "l2_nodes", "l1_resonators", "epochs"];
    write_file(
        &config.out_dir.join("train_summary.csv"),
        &csv_text("train", &config, &header, &rows)?,
    )?;
    let epochs: Vec<Vec<String>> = report
        .epochs
        .iter()
        .map(|e| {
            vec![
                e.epoch.to_string(),
                e.presented.to_string(),
                e.l1_created.to_string(),
                e.l2_created.to_string(),
                e.conflicts.to_string(),
            ]
        })
        .collect();
    let header = ["epoch", "presented", "l1_created", "l2_created", "conflicts"];
    write_file(
        &config.out_dir.join("train_epochs.csv"),
        &csv_text("train", &config, &header, &epochs)?,
    )?;

    println!(
        "trained on {} images: L1 {} nodes ({} resonators), L2 {} nodes, {} passes, {:.2}s",
        report.images,
        report.l1_nodes,
        report.l1_resonators,
        report.l2_nodes,
        report.epochs.len(),
        report.seconds
    );
    println!("model written to {}", model_path.display());
    Ok(())
}

/// Loads a model and checks it against the run's tiling and feature capacity.
fn load_checked(path: &Path, config: &RunConfig) -> anyhow::Result<ArnClassifier> {
    let net = load_model(path)?.network;
    let wanted = config.pipeline()?;
    let have = net.config();
    if have.tiling != wanted.tiling || have.k_cap != wanted.k_cap {
        return Err(CliError::state(anyhow::anyhow!(
            "model uses a {}x{} grid with k_cap {}, run config asks for {}x{} with k_cap {}",
            have.tiling.rows,
            have.tiling.cols,
            have.k_cap,
            wanted.tiling.rows,
            wanted.tiling.cols,
            wanted.k_cap
        )));
    }
    Ok(net)
}

fn confusion_rows(eval: &Evaluation) -> Vec<Vec<String>> {
    let cm = &eval.confusion;
    (0..CLASSES)
        .map(|t| {
            let mut row = vec![t.to_string()];
            row.extend((0..CLASSES).map(|p| fmt_f(cm.cell(t, p))));
            row.push(cm.unrecognized(t).to_string());
            row.push(fmt_f(cm.row_total(t)));
            row
        })
        .collect()
}

pub fn eval(model: &Path, o: &Overrides) -> anyhow::Result<()> {
    let config = RunConfig::resolve(o).map_err(CliError::config)?;
    config.write_resolved("eval")?;
    let net = load_checked(model, &config)?;
    let (_, test) = load_sets(&config)?;
    let eval = net.evaluate(&test.images, &test.labels)?;

    let mut header: Vec<String> = vec!["true".into()];
    header.extend((0..CLASSES).map(|p| format!("pred_{p}")));
    header.extend(["unrecognized".into(), "total".into()]);
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_file(
        &config.out_dir.join("confusion.csv"),
        &csv_text("eval", &config, &header, &confusion_rows(&eval))?,
    )?;

    let mut rows: Vec<Vec<String>> = (0..CLASSES)
        .map(|c| {
            vec![
                c.to_string(),
                eval.confusion.class_accuracy(c).map(fmt_f).unwrap_or_default(),
            ]
        })
        .collect();
    rows.push(vec!["all".into(), fmt_f(eval.accuracy())]);
    write_file(
        &config.out_dir.join("accuracy.csv"),
        &csv_text("eval", &config, &["class", "accuracy"], &rows)?,
    )?;
    let c = &eval.counts;
    let rows = vec![vec![
        c.correct.to_string(),
        c.wrong.to_string(),
        c.multiple.to_string(),
        c.unrecognized.to_string(),
    ]];
    write_file(
        &config.out_dir.join("outcomes.csv"),
        &csv_text(
            "eval",
            &config,
            &["correct", "wrong", "multiple", "unrecognized"],
            &rows,
        )?,
    )?;

    println!("accuracy {:.4} on {} images", eval.accuracy(), test.len());
    println!(
        "correct {} wrong {} multiple {} unrecognized {}",
        c.correct, c.wrong, c.multiple, c.unrecognized
    );
    for class in 0..CLASSES {
        if let Some(a) = eval.confusion.class_accuracy(class) {
            println!("  digit {class}: {a:.4}");
        }
    }
    Ok(())
}

pub fn sweep(axis: SweepAxis, values: &[f64], o: &Overrides) -> anyhow::Result<()> {
    let base = RunConfig::resolve(o).map_err(CliError::config)?;
    if values.len() < 2 {
        return Err(CliError::config(anyhow::anyhow!(
            "a sweep needs at least two values"
        )));
    }
    let configs = values
        .iter()
        .map(|&v| {
            let mut c = base.clone();
            axis.apply(&mut c, v).map(|()| c)
        })
        .collect::<anyhow::Result<Vec<_>>>()
        .map_err(CliError::config)?;
    base.write_resolved(&format!("sweep_{}", axis.name()))?;

    let mut rows = Vec::new();
    for (value, config) in values.iter().zip(&configs) {
        let (train, test) = load_sets(config)?;
        let (net, report) = train_network(config, &train)?;
        let eval = net.evaluate(&test.images, &test.labels)?;
        println!(
            "{} = {value}: accuracy {:.4}, L1 {}, L2 {}, {:.2}s",
            axis.name(),
            eval.accuracy(),
            report.l1_nodes,
            report.l2_nodes,
            report.seconds
        );
        rows.push(vec![
            value.to_string(),
            fmt_f(eval.accuracy()),
            report.l1_nodes.to_string(),
            report.l2_nodes.to_string(),
            format!("{:.3}", report.seconds),
        ]);
    }
    let header = [axis.name(), "accuracy", "l1_nodes", "l2_nodes", "train_seconds"];
    let path = base.out_dir.join(format!("sweep_{}.csv", axis.name()));
    write_file(&path, &csv_text("sweep", &base, &header, &rows)?)?;
    println!("sweep written to {}", path.display());
    Ok(())
}

pub fn trace(model: &Path, index: usize, o: &Overrides) -> anyhow::Result<()> {
    let config = RunConfig::resolve(o).map_err(CliError::config)?;
    let net = load_checked(model, &config)?;
    let (_, test) = load_sets(&config)?;
    if index >= test.len() {
        return Err(CliError::config(anyhow::anyhow!(
            "index {index} outside the {} test images",
            test.len()
        )));
    }
    let (outcome, path) = net.classify(&test.images[index], test.labels[index])?;
    let mut report = net.trace_explain(&path)?;
    report.push_str(&format!(
        "true label {}: {:?}\n",
        test.labels[index], outcome.status
    ));
    config.write_resolved("trace")?;
    write_file(&config.out_dir.join(format!("trace_{index}.txt")), &report)?;
    print!("{report}");
    Ok(())
}
