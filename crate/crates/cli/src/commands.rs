use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use log::info;
use prefshap::data::{
    gen_context_synthetic, gen_gpm_draw, gen_synthetic, load_dataset_dir, save_dataset_dir, split_indices,
};
use prefshap::models::{dataset_auc, train_model};
use prefshap::shapley::{explain_item_avg, explain_matches, mean_abs_phi, save_csv, save_json};
use prefshap::{Dataset, ExplainMode, Explanation, ModelKind, PreferenceModel, FORMAT_VERSION};
use serde::Serialize;

use crate::config::{Evaluate, Explain, Generate, GenerateKind, Plot, PlotKind, SplitChoice, Train};
use crate::error::CliError;
use crate::plot;

/// Global settings shared by every command.
pub struct Globals<'a> {
    pub seed: u64,
    pub threads: usize,
    pub config_file: Option<&'a Path>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::input(format!("cannot write {}: {e}", path.display())))
}

fn write_run_config<T: Serialize>(path: &Path, command: &str, g: &Globals, params: &T) -> Result<(), CliError> {
    write_json(
        path,
        &crate::config::RunConfig {
            format_version: FORMAT_VERSION,
            command,
            seed: g.seed,
            threads: g.threads,
            config_file: g.config_file,
            params,
        },
    )
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::input(format!("cannot create {}: {e}", dir.display())))
}

pub fn generate(p: &Generate, g: &Globals) -> Result<(), CliError> {
    let ds = match p.kind {
        GenerateKind::Synthetic => gen_synthetic(p.n_items, p.n_matches, g.seed)?,
        GenerateKind::ContextSynthetic => gen_context_synthetic(p.n_items, p.n_contexts, p.n_matches, g.seed)?,
        GenerateKind::GpmDraw => gen_gpm_draw(p.n_items, p.n_matches, g.seed)?,
    };
    create_dir(&p.out)?;
    save_dataset_dir(&ds, &p.out)?;
    write_run_config(&p.out.join("run_config.json"), "generate", g, p)?;
    info!("wrote {} items and {} matches to {}", ds.items.len(), ds.matches.len(), p.out.display());
    Ok(())
}

fn load_data(dir: &Path) -> Result<Dataset, CliError> {
    if !dir.join("items.csv").exists() {
        return Err(CliError::input(format!("{} has no items.csv", dir.display())));
    }
    Ok(load_dataset_dir(dir)?)
}

#[derive(Serialize)]
struct SplitAuc {
    train: f64,
    val: f64,
    test: f64,
}

#[derive(Serialize)]
struct Metrics<'a> {
    format_version: u32,
    kind: ModelKind,
    split_seed: u64,
    n_train: usize,
    n_val: usize,
    n_test: usize,
    auc: SplitAuc,
    training: &'a prefshap::models::TrainingSummary,
}

fn metrics<'a>(model: &'a PreferenceModel, ds: &Dataset) -> Result<Metrics<'a>, CliError> {
    let (tr, va, te) = split_indices(ds.matches.len(), model.split_seed())?;
    let auc = |idx: &[usize]| dataset_auc(model, &ds.with_matches(idx));
    Ok(Metrics {
        format_version: FORMAT_VERSION,
        kind: model.kind(),
        split_seed: model.split_seed(),
        n_train: tr.len(),
        n_val: va.len(),
        n_test: te.len(),
        auc: SplitAuc {
            train: auc(&tr)?,
            val: auc(&va)?,
            test: auc(&te)?,
        },
        training: model.training(),
    })
}

pub fn train(p: &Train, g: &Globals) -> Result<(), CliError> {
    let ds = load_data(&p.data)?;
    if p.kind == ModelKind::Cgpm && ds.contexts.is_none() {
        return Err(CliError::input(format!(
            "cgpm needs contexts.csv in {}",
            p.data.display()
        )));
    }
    let (tr, _, _) = split_indices(ds.matches.len(), p.train.split_seed)?;
    info!("training {} on {} of {} matches", p.kind, tr.len(), ds.matches.len());
    let model = train_model(&ds.with_matches(&tr), p.kind, &p.train)?;
    let m = metrics(&model, &ds)?;
    info!("test AUC {:.4}", m.auc.test);
    create_dir(&p.out)?;
    model.save(&p.out.join("model.json"))?;
    write_json(&p.out.join("metrics.json"), &m)?;
    write_run_config(&p.out.join("run_config.json"), "train", g, p)?;
    println!("{}", serde_json::to_string(&m.auc)?);
    Ok(())
}

pub fn evaluate(p: &Evaluate, g: &Globals) -> Result<(), CliError> {
    let model = PreferenceModel::load(&p.model)?;
    let ds = load_data(&p.data)?;
    let m = metrics(&model, &ds)?;
    match &p.out {
        Some(dir) => {
            create_dir(dir)?;
            write_json(&dir.join("metrics.json"), &m)?;
            write_run_config(&dir.join("run_config.json"), "evaluate", g, p)?;
            println!("{}", serde_json::to_string(&m.auc)?);
        }
        None => println!("{}", serde_json::to_string_pretty(&m)?),
    }
    Ok(())
}

/// Indices of the matches selected by split, group filter and limit.
pub fn select_matches(ds: &Dataset, p: &Explain, split_seed: u64) -> Result<Vec<usize>, CliError> {
    let (tr, va, te) = split_indices(ds.matches.len(), split_seed)?;
    let mut idx = match p.split {
        SplitChoice::Train => tr,
        SplitChoice::Val => va,
        SplitChoice::Test => te,
        SplitChoice::All => (0..ds.matches.len()).collect(),
    };
    idx.sort_unstable();
    if let Some(groups) = &p.clusters {
        let tags = ds
            .clusters
            .as_ref()
            .ok_or_else(|| CliError::input("--clusters needs a dataset with clusters.csv"))?;
        let (a, b) = (&groups[0], &groups[1]);
        idx.retain(|&j| {
            let m = ds.matches[j];
            let (l, r) = (&tags[m.left], &tags[m.right]);
            (l == a && r == b) || (l == b && r == a)
        });
    }
    if let Some(limit) = p.limit {
        idx.truncate(limit);
    }
    if idx.is_empty() {
        return Err(CliError::input("no matches selected; check --split, --clusters and --limit"));
    }
    Ok(idx)
}

fn explain_items(model: &PreferenceModel, ds: &Dataset, p: &Explain, selected: &[usize]) -> Result<Vec<Explanation>, CliError> {
    let ids: Vec<String> = match &p.items {
        Some(ids) => ids.clone(),
        None => {
            let set: BTreeSet<usize> = selected.iter().flat_map(|&j| [ds.matches[j].left, ds.matches[j].right]).collect();
            set.into_iter().map(|i| ds.items.ids[i].clone()).collect()
        }
    };
    ids.iter()
        .map(|id| {
            let i = ds
                .items
                .index_of(id)
                .ok_or_else(|| CliError::input(format!("unknown item id '{id}'")))?;
            Ok(explain_item_avg(model, &ds.items.row(i), id, None, &p.explain)?)
        })
        .collect()
}

pub fn explain(p: &Explain, g: &Globals) -> Result<(), CliError> {
    let model = PreferenceModel::load(&p.model)?;
    let ds = load_data(&p.data)?;
    let selected = select_matches(&ds, p, model.split_seed())?;
    info!("explaining {} matches in {} mode", selected.len(), p.mode);
    let explanations = match p.mode {
        ExplainMode::ItemAvg => explain_items(&model, &ds, p, &selected)?,
        mode => explain_matches(&model, &ds, &selected, mode, &p.explain)?,
    };
    create_dir(&p.out)?;
    save_csv(&p.out.join("explanations.csv"), &explanations)?;
    save_json(&p.out.join("explanations.json"), &explanations)?;
    write_run_config(&p.out.join("run_config.json"), "explain", g, p)?;

    let worst_gap = explanations.iter().map(|e| e.efficiency_gap().abs()).fold(0.0, f64::max);
    info!("max efficiency gap {worst_gap:.2e}");
    let mean = mean_abs_phi(&explanations);
    let mut order: Vec<usize> = (0..mean.len()).collect();
    order.sort_by(|&a, &b| mean[b].total_cmp(&mean[a]));
    let names = &explanations[0].feature_names;
    for j in order {
        println!("{}\t{:.6}", names[j], mean[j]);
    }
    Ok(())
}

pub fn plot(p: &Plot, g: &Globals) -> Result<(), CliError> {
    let explanations = plot::load_explanations(&p.input)?;
    let svg = match p.kind {
        PlotKind::Bar => plot::bar_svg(&explanations)?,
        PlotKind::Beeswarm => plot::beeswarm_svg(&explanations)?,
    };
    if let Some(parent) = p.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    fs::write(&p.out, svg).map_err(|e| CliError::input(format!("cannot write {}: {e}", p.out.display())))?;
    write_run_config(&p.out.with_extension("run_config.json"), "plot", g, p)?;
    Ok(())
}
