use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use fedsel_core::data::{labeled_to_csv, samples_to_matrix, ClientDataset, LabeledData, Sample};
use fedsel_core::features::write_pca_bundle;
use fedsel_core::fl::ModelParams;
use fedsel_core::matrix::FeatureMatrix;
use fedsel_core::orchestrator::grid::ATTACK_COLUMNS;
use fedsel_core::orchestrator::{
    experiment_grid, incremental_train, initial_model, measure_distances, noisy_releases,
    order_by_distance, pqfed_select, prepare_cohort, run_federation, CellMembers, Cohort,
    ExperimentConfig, FederationCell, FederationGrid, GridSpec, Table,
};
use fedsel_core::privacy::{mia_power_curve, sensitivity};
use log::info;

use crate::config::{config_hash, serialize, Layers, RunConfig};
use crate::error::CliError;
use crate::manifest::{Run, RunManifest};
use crate::presets::Repro;
use crate::report::render_report;

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML config file with flat `section.key = value` entries.
    #[arg(long, short, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override one config key; repeatable, last wins.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Directory for CSV artifacts, config.toml and manifest.json.
    #[arg(long, short, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Participants {
    /// Target plus the collaborators chosen by the selection policy.
    Selected,
    /// Target plus every peer.
    All,
    /// Target alone.
    Local,
}

pub fn load_config(common: &Common, preset: Option<Repro>) -> Result<RunConfig> {
    let mut layers = Layers::new();
    if let Some(p) = preset {
        for l in p.layers() {
            layers.merge_str(l, &format!("preset {}", p.name()))?;
        }
    }
    if let Some(path) = &common.config {
        layers.merge_file(path)?;
    }
    for s in &common.set {
        layers.set(s)?;
    }
    Ok(layers.build()?)
}

/// Resolves the config, refuses to run without a seed, and opens the
/// output directory with the canonical config already written.
fn start(command: &str, common: &Common, preset: Option<Repro>) -> Result<(RunConfig, ExperimentConfig, Run)> {
    let cfg = load_config(common, preset)?;
    let exp = cfg.seeded()?;
    let mut run = Run::create(&common.out, command, config_hash(&cfg), cfg.seed)?;
    run.write("config.toml", serialize(&cfg).as_bytes())?;
    run.data_files(&exp.dataset.files())?;
    info!("{command}: writing to {}", common.out.display());
    Ok((cfg, exp, run))
}

fn cohort(run: &mut Run, exp: &ExperimentConfig) -> Result<Cohort> {
    Ok(run.stage("cohort", || prepare_cohort(exp))?)
}

fn clients(cohort: &Cohort) -> Vec<(&ClientDataset, Option<f64>)> {
    std::iter::once((&cohort.target, None))
        .chain(cohort.peers.iter().map(|p| (&p.client, Some(p.rate))))
        .collect()
}

fn labeled(samples: &[Sample]) -> LabeledData {
    LabeledData {
        features: samples_to_matrix(samples),
        labels: samples.iter().map(|s| s.label).collect(),
    }
}

fn matrix_csv(id_header: &str, column_prefix: &str, rows: &[(String, &[f64])]) -> String {
    let dim = rows.first().map_or(0, |r| r.1.len());
    let mut out = id_header.to_string();
    for j in 0..dim {
        let _ = write!(out, ",{column_prefix}{j}");
    }
    out.push('\n');
    for (id, row) in rows {
        out += id;
        for v in *row {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

fn labeled_matrix(m: &FeatureMatrix, labels: &[usize]) -> LabeledData {
    LabeledData {
        features: m.clone(),
        labels: labels.to_vec(),
    }
}

fn write_model(run: &mut Run, model: &ModelParams) -> Result<()> {
    let mut layout = String::from("name,shape,offset\n");
    let mut offset = 0;
    for (name, shape) in &model.layout {
        let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
        let _ = writeln!(layout, "{name},{},{offset}", dims.join("x"));
        offset += shape.iter().product::<usize>();
    }
    let mut params = String::from("value\n");
    for v in &model.values {
        let _ = writeln!(params, "{v}");
    }
    run.write("model_layout.csv", layout.as_bytes())?;
    run.write("model_params.csv", params.as_bytes())?;
    Ok(())
}

fn finish(run: Run) -> Result<RunManifest> {
    run.finish()
}

pub fn partition(common: &Common) -> Result<RunManifest> {
    let (_, exp, mut run) = start("partition", common, None)?;
    let cohort = cohort(&mut run, &exp)?;
    let mut index = String::from("client_id,role,rate,n_train,n_test,provenance\n");
    for (client, rate) in clients(&cohort) {
        let provenance: Vec<String> = client.provenance.iter().map(|(c, n)| format!("{c}:{n}")).collect();
        let _ = writeln!(
            index,
            "{},{},{},{},{},{}",
            client.client_id,
            if rate.is_some() { "peer" } else { "target" },
            rate.map_or(String::new(), |r| r.to_string()),
            client.train.len(),
            client.test.len(),
            provenance.join(";"),
        );
        let id = &client.client_id;
        run.write(&format!("clients/{id}_train.csv"), labeled_to_csv(&labeled(&client.train)).as_bytes())?;
        if !client.test.is_empty() {
            run.write(&format!("clients/{id}_test.csv"), labeled_to_csv(&labeled(&client.test)).as_bytes())?;
        }
    }
    run.write("clients.csv", index.as_bytes())?;
    finish(run)
}

pub fn extract(common: &Common) -> Result<RunManifest> {
    let (_, exp, mut run) = start("extract", common, None)?;
    let cohort = cohort(&mut run, &exp)?;
    let bundle = run.dir().join("pca");
    std::fs::create_dir_all(&bundle).map_err(|e| CliError::io(&bundle, e))?;
    for path in write_pca_bundle(&cohort.pca, &bundle)? {
        run.adopt(&path)?;
    }
    for (i, (client, _)) in clients(&cohort).into_iter().enumerate() {
        let projected = cohort.projected_train(i.checked_sub(1));
        let labels: Vec<usize> = client.train.iter().map(|s| s.label).collect();
        run.write(
            &format!("projected/{}.csv", client.client_id),
            labeled_to_csv(&labeled_matrix(&projected, &labels)).as_bytes(),
        )?;
    }
    finish(run)
}

pub fn noise(common: &Common) -> Result<RunManifest> {
    let (_, exp, mut run) = start("noise", common, None)?;
    let cohort = cohort(&mut run, &exp)?;
    let releases = run.stage("privatize", || noisy_releases(&cohort, &exp, exp.epsilon))?;
    let mut sens_rows = Vec::new();
    for (i, ((client, _), release)) in clients(&cohort).into_iter().zip(&releases).enumerate() {
        let labels: Vec<usize> = client.train.iter().map(|s| s.label).collect();
        run.write(
            &format!("noisy/{}.csv", client.client_id),
            labeled_to_csv(&labeled_matrix(release, &labels)).as_bytes(),
        )?;
        let s = sensitivity(&cohort.projected_train(i.checked_sub(1)), exp.sensitivity)?;
        sens_rows.push((client.client_id.clone(), s.values().to_vec()));
    }
    let rows: Vec<(String, &[f64])> = sens_rows.iter().map(|(id, v)| (id.clone(), v.as_slice())).collect();
    run.write("sensitivity.csv", matrix_csv("client_id", "c", &rows).as_bytes())?;
    finish(run)
}

pub fn cluster(common: &Common) -> Result<RunManifest> {
    let (_, exp, mut run) = start("cluster", common, None)?;
    let cohort = cohort(&mut run, &exp)?;
    let report = run.stage("similarity", || measure_distances(&cohort, &exp, exp.epsilon))?;
    run.write("centroids.csv", report.model.centroids_csv().as_bytes())?;
    let ids: Vec<String> = clients(&cohort).iter().map(|(c, _)| c.client_id.clone()).collect();
    let hist: Vec<(String, &[f64])> = std::iter::once(&report.target_histogram)
        .chain(&report.peer_histograms)
        .zip(&ids)
        .map(|(h, id)| (id.clone(), h.weights()))
        .collect();
    let hist_csv = matrix_csv("client_id", "k", &hist);
    run.write("histograms.csv", hist_csv.as_bytes())?;
    let mut inertia = String::from("iteration,inertia\n");
    for (i, v) in report.model.inertia_history.iter().enumerate() {
        let _ = writeln!(inertia, "{},{v}", i + 1);
    }
    run.write("inertia.csv", inertia.as_bytes())?;
    finish(run)
}

fn distance_table(distances: &[fedsel_core::orchestrator::PeerDistance]) -> String {
    let mut out = String::from("client_id,emd\n");
    for d in distances {
        let _ = writeln!(out, "{},{}", d.client_id, d.distance);
    }
    out
}

pub fn distances(common: &Common) -> Result<RunManifest> {
    let (_, exp, mut run) = start("distances", common, None)?;
    let cohort = cohort(&mut run, &exp)?;
    let report = run.stage("similarity", || measure_distances(&cohort, &exp, exp.epsilon))?;
    run.write("distances.csv", distance_table(&report.distances).as_bytes())?;
    finish(run)
}

pub fn select(common: &Common) -> Result<RunManifest> {
    let (_, exp, mut run) = start("select", common, None)?;
    let cohort = cohort(&mut run, &exp)?;
    let (selection, report) = run.stage("select", || pqfed_select(&cohort, &exp))?;
    let mut out = String::from("client_id,rate,emd,selected\n");
    for d in &report.distances {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            d.client_id,
            d.rate,
            d.distance,
            selection.selected.contains(&d.peer)
        );
    }
    run.write("selection.csv", out.as_bytes())?;
    let chosen: Vec<&str> = selection
        .selected
        .iter()
        .map(|&i| cohort.peers[i].client.client_id.as_str())
        .collect();
    let summary = format!(
        "policy {}\nepsilon {}\ntau {}\nselected {}\n",
        exp.policy,
        exp.epsilon,
        selection.tau,
        chosen.join(";")
    );
    run.write("summary.txt", summary.as_bytes())?;
    finish(run)
}

pub fn train(common: &Common, participants: Participants) -> Result<RunManifest> {
    let (_, exp, mut run) = start("train", common, None)?;
    let cohort = cohort(&mut run, &exp)?;
    let chosen: Vec<usize> = match participants {
        Participants::Local => Vec::new(),
        Participants::All => (0..cohort.peers.len()).collect(),
        Participants::Selected => run.stage("select", || pqfed_select(&cohort, &exp))?.0.selected,
    };
    let (target, peers) = cohort.training_view(exp.features);
    let mut members = vec![target];
    members.extend(chosen.iter().map(|&i| peers[i].clone()));
    let init = initial_model(&exp, cohort.input_dim(exp.features), cohort.n_classes)?;
    let rounds = run.stage("federation", || run_federation(&exp, &members, &init))?;
    let mut csv = String::from("round,algorithm,n_clients,target_accuracy\n");
    for r in &rounds {
        let _ = writeln!(
            csv,
            "{},{},{},{}",
            r.round,
            exp.algorithm.name(),
            members.len(),
            r.target_test_accuracy
        );
    }
    run.write("rounds.csv", csv.as_bytes())?;
    let last = rounds.last().expect("round 0 is always reported");
    write_model(&mut run, &last.global_params)?;
    finish(run)
}

pub fn incremental(common: &Common) -> Result<RunManifest> {
    let (_, exp, mut run) = start("incremental", common, None)?;
    let cohort = cohort(&mut run, &exp)?;
    let report = run.stage("similarity", || measure_distances(&cohort, &exp, exp.epsilon))?;
    let order = order_by_distance(&report.distances);
    let (target, peers) = cohort.training_view(exp.features);
    let ordered: Vec<(ClientDataset, f64)> = order.iter().map(|d| (peers[d.peer].clone(), d.distance)).collect();
    let init = initial_model(&exp, cohort.input_dim(exp.features), cohort.n_classes)?;
    let outcome = run.stage("incremental", || incremental_train(&exp, &target, &ordered, &init))?;
    let mut csv = String::from("step,client_id,emd,accuracy,kept\n");
    for (i, acc) in outcome.accuracies.iter().enumerate() {
        let (id, emd) = order
            .get(i)
            .map_or((String::new(), String::new()), |d| (d.client_id.clone(), d.distance.to_string()));
        let kept = *acc >= outcome.best_accuracy || (i + 1 < outcome.accuracies.len());
        let _ = writeln!(csv, "{},{id},{emd},{acc},{kept}", i + 1);
    }
    run.write("incremental.csv", csv.as_bytes())?;
    write_model(&mut run, &outcome.model)?;
    let summary = format!(
        "algorithm {}\nstop_round {}\nstopped_early {}\nbest_accuracy {}\n",
        exp.algorithm.name(),
        outcome.stop_round,
        outcome.stopped_early,
        outcome.best_accuracy
    );
    run.write("summary.txt", summary.as_bytes())?;
    finish(run)
}

pub fn attack(common: &Common) -> Result<RunManifest> {
    let (_, exp, mut run) = start("attack", common, None)?;
    let cohort = cohort(&mut run, &exp)?;
    let a = &exp.attack;
    let reports = run.stage("attack", || {
        mia_power_curve(&cohort.projected_pool, a.sample_size, a.alpha, &a.epsilons, a.rounds, exp.seed)
    })?;
    let mut summary = Table::new("attack", &ATTACK_COLUMNS);
    let mut rounds = Table::new("attack_rounds", &["epsilon", "round", "power", "fpr", "gamma"]);
    for r in &reports {
        summary.push(vec![
            r.epsilon.to_string().into(),
            r.rounds.into(),
            r.alpha.into(),
            r.power_mean.into(),
            r.power_std.into(),
            r.fpr_realized.into(),
        ]);
        for (i, raw) in r.raw.iter().enumerate() {
            rounds.push(vec![
                r.epsilon.to_string().into(),
                (i + 1).into(),
                raw.power.into(),
                raw.fpr.into(),
                raw.gamma.into(),
            ]);
        }
    }
    run.write("attack.csv", summary.to_csv().as_bytes())?;
    run.write("attack_rounds.csv", rounds.to_csv().as_bytes())?;
    finish(run)
}

/// Grid run without a preset: the configured algorithm over the local,
/// policy, all-peer and incremental cells.
fn default_grid(cfg: &RunConfig, seed: u64) -> GridSpec {
    let e = &cfg.experiment;
    GridSpec::Federation(FederationGrid {
        cells: vec![
            FederationCell::new("local", CellMembers::LocalOnly),
            FederationCell::new(e.policy.to_string(), CellMembers::Policy(e.policy)),
            FederationCell::new("all", CellMembers::AllPeers),
            FederationCell::new("incremental", CellMembers::Incremental),
        ],
        algorithms: vec![e.algorithm],
        seeds: (0..cfg.repeats as u64).map(|i| seed + i).collect(),
    })
}

pub fn grid(common: &Common, repro: Option<Repro>) -> Result<RunManifest> {
    let (cfg, exp, mut run) = start("grid", common, repro)?;
    let spec = match repro {
        Some(p) => p.grid(&cfg, exp.seed),
        None => default_grid(&cfg, exp.seed),
    };
    let table = run.stage("grid", || experiment_grid(&exp, &spec))?;
    let notes = vec![format!(
        "grid {}, seed {}, config {}",
        repro.map_or("custom", |p| p.name()),
        exp.seed,
        run.manifest().config_hash
    )];
    render_report(&mut run, &[("grid.csv", &table)], &notes)?;
    finish(run)
}
