use std::fmt::Write as _;

use evfuse::analysis::{
    default_thresholds, hop_ablation, hop_ablation_report, ood_compare, ood_report, std_density, std_density_report,
    uncertainty_curve, uncertainty_curve_report, MetricRow, ReportRecord,
};
use evfuse::checkpoint;
use evfuse::data::{generate_sbm, generic_files, DatasetBundle, SbmSpec, Split};
use evfuse::train::{evaluate_propagated, grid_search, propagate_dataset, train, Model, SearchSpace, TrainHistory};
use evfuse::{Error, Result};

use crate::inputs::{load_dataset, load_sbm_spec, read_text, resolve_config};
use crate::output::Staged;
use crate::Command;

const SPLITS: [Split; 3] = [Split::Train, Split::Val, Split::Test];

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Train { data, config, runs, out } => {
            let config = resolve_config(&config)?;
            if runs == 0 {
                return Err(Error::Input("--runs must be >= 1".into()));
            }
            let dataset = load_dataset(&data)?;
            let mut staged = Staged::default();
            let mut report = ReportRecord::new("train", &config).param("runs", runs);
            let mut test_acc = Vec::new();
            for r in 0..runs {
                let cfg = evfuse::train::TrainConfig {
                    seed: config.seed.wrapping_add(r as u64),
                    ..config.clone()
                };
                let (model, history) = train(&dataset, &cfg)?;
                let coord = format!("run={r};seed={}", cfg.seed);
                for (split, acc, u) in split_summaries(&model, &dataset)? {
                    report.push(MetricRow::new("accuracy", split.name(), coord.clone(), Some(acc)));
                    report.push(MetricRow::new("mean_uncertainty", split.name(), coord.clone(), Some(u)));
                    if split == Split::Test {
                        test_acc.push(acc);
                    }
                }
                report.push(MetricRow::new("best_epoch", "val", coord.clone(), history.best_epoch.map(|e| e as f64)));
                report.push(MetricRow::new("epochs", "train", coord, Some(history.records.len() as f64)));
                if r == 0 {
                    staged.add("checkpoint.json", checkpoint::to_string(&model));
                    staged.add("history.tsv", history_tsv(&history));
                }
            }
            if !test_acc.is_empty() {
                let n = test_acc.len() as f64;
                let mean = test_acc.iter().sum::<f64>() / n;
                let std = (test_acc.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
                report.push(MetricRow::new("accuracy_mean", "test", "", Some(mean)));
                report.push(MetricRow::new("accuracy_std", "test", "", Some(std)));
                println!("test accuracy {mean:.4} ± {std:.4} over {runs} run(s)");
            }
            staged.report("train", &report)?;
            staged.commit(&out.out, "train")?;
        }
        Command::Eval { checkpoint: ckpt, data, out } => {
            let model = checkpoint::load(&ckpt)?;
            let dataset = load_dataset(&data)?;
            let mut report = ReportRecord::new("eval", &model.config);
            let propagated = propagate_dataset(&dataset, &model.config)?;
            let mut predictions = String::from("node\tsplit\tlabel\tprediction\tuncertainty");
            for k in 0..dataset.classes() {
                write!(predictions, "\tp{k}").unwrap();
            }
            predictions.push('\n');
            for split in SPLITS {
                if dataset.masks().indices(split).is_empty() {
                    continue;
                }
                let m = evaluate_propagated(&model, &dataset, &propagated, split)?;
                report.push(MetricRow::new("accuracy", split.name(), "", Some(m.accuracy)));
                report.push(MetricRow::new("loss", split.name(), "", Some(m.loss)));
                report.push(MetricRow::new("mean_uncertainty", split.name(), "", Some(m.mean_uncertainty())));
                for (i, &node) in m.nodes.iter().enumerate() {
                    write!(
                        predictions,
                        "{node}\t{}\t{}\t{}\t{}",
                        split.name(),
                        m.labels[i],
                        m.predictions[i],
                        m.uncertainty[i]
                    )
                    .unwrap();
                    for p in m.probabilities.row(i) {
                        write!(predictions, "\t{p}").unwrap();
                    }
                    predictions.push('\n');
                }
                println!("{} accuracy {:.4}", split.name(), m.accuracy);
            }
            let mut staged = Staged::default();
            staged.report("eval", &report)?;
            staged.add("predictions.tsv", predictions);
            staged.commit(&out.out, "eval")?;
        }
        Command::UncertaintyCurve { checkpoint: ckpt, data, thresholds, out } => {
            let thresholds = thresholds.unwrap_or_else(default_thresholds);
            if let Some(t) = thresholds.iter().find(|t| !(**t > 0.0 && **t <= 1.0)) {
                return Err(Error::Input(format!("threshold {t} outside (0, 1]")));
            }
            let model = checkpoint::load(&ckpt)?;
            let dataset = load_dataset(&data)?;
            let metrics = test_metrics(&model, &dataset)?;
            let points = uncertainty_curve(&metrics, &thresholds)?;
            let report = uncertainty_curve_report(&model, &points);
            let mut staged = Staged::default();
            staged.report("uncertainty_curve", &report)?;
            staged.commit(&out.out, "uncertainty-curve")?;
        }
        Command::OodCompare { checkpoint: ckpt, data, eta, seed, out } => {
            if !(eta.is_finite() && eta >= 0.0) {
                return Err(Error::Input(format!("--eta must be >= 0, got {eta}")));
            }
            let model = checkpoint::load(&ckpt)?;
            let dataset = load_dataset(&data)?;
            let cmp = ood_compare(&model, &dataset, eta, seed)?;
            let report = ood_report(&model, &cmp, seed);
            let nodes = dataset.masks().indices(Split::Test);
            let mut per_node = String::from("node\tclean\tpolluted\n");
            for ((n, c), p) in nodes.iter().zip(&cmp.clean).zip(&cmp.polluted) {
                writeln!(per_node, "{n}\t{c}\t{p}").unwrap();
            }
            println!(
                "mean uncertainty clean {:.4}, polluted {:.4}",
                cmp.clean_mean, cmp.polluted_mean
            );
            let mut staged = Staged::default();
            staged.report("ood_compare", &report)?;
            staged.add("ood_nodes.tsv", per_node);
            staged.commit(&out.out, "ood-compare")?;
        }
        Command::HopAblation { data, config, out } => {
            let config = resolve_config(&config)?;
            let dataset = load_dataset(&data)?;
            let rows = hop_ablation(&dataset, &config)?;
            for r in &rows {
                println!("{}\ttest accuracy {:.4}", r.label, r.test_accuracy);
            }
            let mut staged = Staged::default();
            staged.report("hop_ablation", &hop_ablation_report(&config, &rows))?;
            staged.commit(&out.out, "hop-ablation")?;
        }
        Command::StdDensity { data, config, depths, out } => {
            let config = resolve_config(&config)?;
            if depths.is_empty() || depths.contains(&0) {
                return Err(Error::Input("--depths must list integers >= 1".into()));
            }
            let dataset = load_dataset(&data)?;
            let result = std_density(&dataset, &config, &depths)?;
            let mut staged = Staged::default();
            staged.report("std_density", &std_density_report(&config, &result))?;
            staged.commit(&out.out, "std-density")?;
        }
        Command::Grid { data, space, trials, out } => {
            let space = SearchSpace::from_toml(&read_text(&space)?)?;
            if trials == 0 {
                return Err(Error::Input("--trials must be >= 1".into()));
            }
            space.configs()?;
            let dataset = load_dataset(&data)?;
            let grid = grid_search(&dataset, &space, trials)?;
            let mut table = String::from(
                "index\tconfig_hash\tlearning_rate\tweight_decay\thidden_size\tdropout_rate\tperturb_sigma\t\
                 propagation_steps\tlambda_kl\tlambda_dis\ttrials\tval_accuracy\tval_loss\ttest_accuracy\tstatus\n",
            );
            let na = |v: f64| if v.is_finite() { v.to_string() } else { "NA".into() };
            for (i, r) in grid.rows.iter().enumerate() {
                let c = &r.config;
                let status = r.failure.as_deref().unwrap_or("ok").replace(['\t', '\n'], " ");
                writeln!(
                    table,
                    "{i}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{status}",
                    r.config_hash,
                    c.learning_rate,
                    c.weight_decay,
                    c.hidden_size,
                    c.dropout_rate,
                    c.perturb_sigma,
                    c.propagation_steps,
                    c.lambda_kl,
                    c.lambda_dis,
                    r.trials,
                    na(r.val_accuracy),
                    na(r.val_loss),
                    na(r.test_accuracy)
                )
                .unwrap();
            }
            let best = &grid.rows[grid.best];
            let mut report = ReportRecord::new("grid", &best.config)
                .param("grid_points", grid.rows.len())
                .param("trials", trials)
                .param("best_index", grid.best);
            report.push(MetricRow::new("accuracy", "val", "", Some(best.val_accuracy)));
            report.push(MetricRow::new("loss", "val", "", Some(best.val_loss)));
            report.push(MetricRow::new("accuracy", "test", "", best.test_accuracy.is_finite().then_some(best.test_accuracy)));
            println!(
                "best grid point {} of {}: val accuracy {:.4}",
                grid.best,
                grid.rows.len(),
                best.val_accuracy
            );
            let best_toml = toml::to_string(&best.config).map_err(|e| Error::Input(e.to_string()))?;
            let mut staged = Staged::default();
            staged.add("grid_sweep.tsv", table);
            staged.add("best_config.toml", best_toml);
            staged.report("grid", &report)?;
            staged.commit(&out.out, "grid")?;
        }
        Command::SbmGenerate {
            spec,
            n,
            classes,
            p_in,
            p_out,
            feature_dim,
            separation,
            noise,
            train_per_class,
            val_per_class,
            seed,
            out,
        } => {
            let mut s = match spec {
                Some(p) => load_sbm_spec(&p)?,
                None => SbmSpec::default(),
            };
            macro_rules! apply {
                ($($f:ident),*) => { $(if let Some(v) = $f { s.$f = v; })* };
            }
            apply!(n, classes, p_in, p_out, feature_dim, separation, noise, train_per_class, val_per_class, seed);
            let bundle = generate_sbm(&s)?;
            let spec_toml = toml::to_string(&s).map_err(|e| Error::Input(e.to_string()))?;
            let mut staged = Staged::default();
            for (name, body) in generic_files(&bundle) {
                staged.add(name, body);
            }
            staged.add("spec.toml", spec_toml);
            staged.commit(&out.out, "sbm-generate")?;
            println!(
                "{} nodes, {} edges, {} classes",
                bundle.n(),
                bundle.edges().len(),
                bundle.classes()
            );
        }
    }
    Ok(())
}

fn split_summaries(model: &Model, dataset: &DatasetBundle) -> Result<Vec<(Split, f64, f64)>> {
    let propagated = propagate_dataset(dataset, &model.config)?;
    let mut out = Vec::new();
    for split in SPLITS {
        if dataset.masks().indices(split).is_empty() {
            continue;
        }
        let m = evaluate_propagated(model, dataset, &propagated, split)?;
        out.push((split, m.accuracy, m.mean_uncertainty()));
    }
    Ok(out)
}

fn test_metrics(model: &Model, dataset: &DatasetBundle) -> Result<evfuse::train::Metrics> {
    let propagated = propagate_dataset(dataset, &model.config)?;
    evaluate_propagated(model, dataset, &propagated, Split::Test)
}

fn history_tsv(history: &TrainHistory) -> String {
    let mut s = String::from("epoch\ttrain_loss\tval_loss\tval_accuracy\tval_uncertainty\tbest\n");
    for r in &history.records {
        writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{}",
            r.epoch,
            r.train_loss,
            r.val_loss,
            r.val_accuracy,
            r.val_uncertainty,
            u8::from(history.best_epoch == Some(r.epoch))
        )
        .unwrap();
    }
    s
}
