//! End-to-end orchestration: ingest, derive, select, train, weight, index,
//! evaluate, plot.
//!
//! Every fitting stage sees only months inside the training window. Stage
//! failures are wrapped in [`Error::Stage`] naming the stage and basin.

use std::path::{Path, PathBuf};

use log::info;
use ndarray::{concatenate, Array2, Axis};
use rayon::prelude::*;

use crate::config::{derive_seed, PipelineConfig};
use crate::encoder::{train_autoencoder, TrainedEncoder};
use crate::error::{Error, Result};
use crate::featsel::{
    average_importance, forest_importance, select_features, train_forest, ImportanceVector,
    SelectionReport,
};
use crate::index::{compose_index, evaluate_index, EvaluationReport, IndexSeries};
use crate::io::{read_file, read_raw_table, weights_to_csv, write_file, RawTable, Resolution};
use crate::mi::{compute_weights, WeightVector};
use crate::plot::plot_emit;
use crate::snowpart::{snow_fraction_from_monthly, SNOW_FRACTION_ID};
use crate::spi::{spi_id, SpiModel};
use crate::timeseries::{
    align_raw, monthly_climatology_anomaly, BasinTable, DesignMatrix, MonthRange, MonthStamp,
    MonthlySeries, ZScoreParams,
};

pub const STAGE_INGEST: &str = "ingest";
pub const STAGE_DERIVE: &str = "derive";
pub const STAGE_SELECT: &str = "select-features";
pub const STAGE_TRAIN: &str = "train";
pub const STAGE_WEIGHTS: &str = "weights";
pub const STAGE_INDEX: &str = "index";
pub const STAGE_EVALUATE: &str = "evaluate";
pub const STAGE_PLOT: &str = "plot";

pub const SWE_ANOMALY_ID: &str = "SWE_ANOMALY";

fn in_basin(stage: &str, basin: &str) -> impl Fn(Error) -> Error {
    let name = format!("{stage} [basin {basin}]");
    move |e| e.in_stage(name.clone())
}

/// One basin's monthly table, including derived SPI and snow-fraction columns.
#[derive(Debug, Clone, PartialEq)]
pub struct BasinData {
    pub table: BasinTable,
    /// Columns present in the input file.
    pub input_columns: Vec<String>,
    /// Months whose accumulations fitted the SPI distributions.
    pub spi_window: MonthRange,
}

impl BasinData {
    pub fn basin_id(&self) -> &str {
        &self.table.basin_id
    }
}

/// The configured training window clipped to `range`.
pub fn training_window(cfg: &PipelineConfig, range: MonthRange) -> Result<MonthRange> {
    let start = cfg
        .split
        .train_start
        .unwrap_or(range.start)
        .max(range.start);
    let end = cfg.split.train_end.min(range.end);
    MonthRange::new(start, end).map_err(|_| {
        Error::Config(format!(
            "training window {}..{} does not overlap the data range {}..{}",
            cfg.split
                .train_start
                .map_or("start".into(), |s| s.to_string()),
            cfg.split.train_end,
            range.start,
            range.end
        ))
    })
}

/// Monthly table from a parsed file, plus snow fraction computed at the
/// file's native resolution.
pub fn monthly_from_raw(
    cfg: &PipelineConfig,
    raw: &RawTable,
) -> Result<(BasinTable, Option<MonthlySeries>)> {
    let table = raw.to_monthly(&cfg.aggregation, cfg.missing_policy, &cfg.units)?;
    let snow = if raw.resolution != Resolution::Monthly
        && !raw.columns.iter().any(|c| c == SNOW_FRACTION_ID)
    {
        let sf = raw.snow_fraction(&cfg.variables.snow_inputs(), &cfg.snow)?;
        if !sf.dry_months.is_empty() {
            log::warn!(
                "basin {}: {} months without precipitation use the unweighted snow fraction",
                raw.basin_id,
                sf.dry_months.len()
            );
        }
        Some(sf.series)
    } else {
        None
    };
    Ok((table, snow))
}

/// Add SPI columns (fitted on the training window) and, when absent, the
/// snow fraction.
pub fn derive(
    cfg: &PipelineConfig,
    mut table: BasinTable,
    snow: Option<MonthlySeries>,
) -> Result<BasinData> {
    let basin = table.basin_id.clone();
    let wrap = in_basin(STAGE_DERIVE, &basin);
    let input_columns = table.variable_ids();
    let roles = &cfg.variables;
    if table.get(SNOW_FRACTION_ID).is_none() {
        let sf = match snow {
            Some(s) => s,
            None => snow_fraction_from_monthly(
                table.require(&roles.temperature).map_err(&wrap)?,
                table.require(&roles.humidity).map_err(&wrap)?,
                table.require(&roles.pressure).map_err(&wrap)?,
                &cfg.snow,
            )
            .map_err(&wrap)?,
        };
        table.insert(sf).map_err(&wrap)?;
    }
    let precip = table.require(&roles.precip).map_err(&wrap)?.clone();
    let range = precip
        .defined_range()
        .ok_or_else(|| wrap(Error::Empty(format!("precipitation {}", roles.precip))))?;
    let window = training_window(cfg, range).map_err(&wrap)?;
    for &k in &cfg.spi.timescales {
        let sub = |e: Error| e.in_stage(format!("{STAGE_DERIVE} [basin {basin}, {}]", spi_id(k)));
        let model = SpiModel::fit(&precip, k, Some(window)).map_err(sub)?;
        let spi = model.apply(&precip).map_err(sub)?;
        if !spi.model.fits.iter().all(|f| f.converged) {
            log::warn!(
                "basin {basin}: {} gamma fit fell back to the initial estimate",
                spi_id(k)
            );
        }
        table.upsert(spi.series);
    }
    Ok(BasinData {
        table,
        input_columns,
        spi_window: window,
    })
}

/// Read and derive every configured input.
pub fn load_inputs(cfg: &PipelineConfig) -> Result<Vec<BasinData>> {
    let mut out: Vec<BasinData> = Vec::with_capacity(cfg.inputs.len());
    for path in &cfg.inputs {
        info!("ingest {}", path.display());
        let raw = read_raw_table(path).map_err(|e| e.in_stage(STAGE_INGEST))?;
        if out.iter().any(|b| b.basin_id() == raw.basin_id) {
            return Err(
                Error::Config(format!("two inputs share basin id {}", raw.basin_id))
                    .in_stage(STAGE_INGEST),
            );
        }
        let (table, snow) =
            monthly_from_raw(cfg, &raw).map_err(in_basin(STAGE_INGEST, &raw.basin_id))?;
        out.push(derive(cfg, table, snow)?);
    }
    Ok(out)
}

/// Random-forest candidate pool for one basin.
pub fn candidate_features(cfg: &PipelineConfig, basin: &BasinData) -> Vec<String> {
    if !cfg.variables.candidates.is_empty() {
        return cfg.variables.candidates.clone();
    }
    basin
        .input_columns
        .iter()
        .filter(|c| {
            **c != cfg.variables.swe
                && **c != cfg.variables.discharge
                && c.as_str() != SNOW_FRACTION_ID
                && !c.starts_with("SPI")
        })
        .cloned()
        .collect()
}

fn training_rows(start: MonthStamp, raw: &Array2<f64>, window: MonthRange) -> Result<Array2<f64>> {
    let range = MonthRange::new(start, start.add_months(raw.nrows() as i64 - 1))?;
    let w = range.intersect(&window).ok_or_else(|| {
        Error::InsufficientData(format!(
            "no aligned months inside the training window {}..{}",
            window.start, window.end
        ))
    })?;
    let lo = start.months_until(w.start) as usize;
    let hi = start.months_until(w.end) as usize;
    Ok(raw.slice(ndarray::s![lo..=hi, ..]).to_owned())
}

/// Per-basin forest importances against SWE and discharge, averaged across
/// basins, and the union of the top-k of each.
pub fn select(cfg: &PipelineConfig, basins: &[BasinData]) -> Result<SelectionReport> {
    let candidates = basins
        .first()
        .map(|b| candidate_features(cfg, b))
        .ok_or_else(|| Error::Empty("no basins".into()).in_stage(STAGE_SELECT))?;
    let per_basin: Vec<(ImportanceVector, ImportanceVector)> = basins
        .par_iter()
        .map(|b| {
            let wrap = in_basin(STAGE_SELECT, b.basin_id());
            let mut vars = candidates.clone();
            vars.push(cfg.variables.swe.clone());
            vars.push(cfg.variables.discharge.clone());
            let (start, raw) = align_raw(&b.table, &vars).map_err(&wrap)?;
            let range =
                MonthRange::new(start, start.add_months(raw.nrows() as i64 - 1)).map_err(&wrap)?;
            let window = training_window(cfg, range).map_err(&wrap)?;
            let rows = training_rows(start, &raw, window).map_err(&wrap)?;
            let d = candidates.len();
            let x = rows.slice(ndarray::s![.., ..d]).to_owned();
            let mut out = Vec::with_capacity(2);
            for (j, target) in ["swe", "discharge"].iter().enumerate() {
                let y = rows.column(d + j).to_vec();
                let seed = derive_seed(
                    cfg.seed,
                    &format!("{STAGE_SELECT}/{}/{target}", b.basin_id()),
                );
                let forest = train_forest(&x, &y, &candidates, &cfg.forest.hyperparams(seed))
                    .map_err(&wrap)?;
                out.push(forest_importance(&forest));
            }
            let q = out.pop().expect("two targets");
            let s = out.pop().expect("two targets");
            Ok((s, q))
        })
        .collect::<Result<_>>()?;
    let (swe, q): (Vec<_>, Vec<_>) = per_basin.into_iter().unzip();
    let wrap = |e: Error| e.in_stage(STAGE_SELECT);
    let swe = average_importance(&swe).map_err(wrap)?;
    let discharge = average_importance(&q).map_err(wrap)?;
    let selected = select_features(&swe, &discharge, cfg.forest.top_k).map_err(wrap)?;
    info!("selected features: {}", selected.join(","));
    Ok(SelectionReport {
        k: cfg.forest.top_k,
        swe,
        discharge,
        selected,
    })
}

/// Autoencoder inputs: selected features, SPI columns, snow fraction.
pub fn input_roster(cfg: &PipelineConfig, selected: &[String]) -> Vec<String> {
    let mut roster = selected.to_vec();
    roster.extend(cfg.spi.timescales.iter().map(|&k| spi_id(k)));
    roster.push(SNOW_FRACTION_ID.to_string());
    roster
}

/// Standardized design matrices for every basin plus the pooled training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub roster: Vec<String>,
    pub basins: Vec<DesignMatrix>,
    pub training_windows: Vec<MonthRange>,
    pub spi_windows: Vec<MonthRange>,
    /// Training rows of all basins, stacked in input order.
    pub training: DesignMatrix,
}

/// Align each basin on `roster`; z-score params come from `params` or are
/// fitted on the pooled training rows.
pub fn build_design(
    cfg: &PipelineConfig,
    basins: &[BasinData],
    roster: &[String],
    params: Option<&[ZScoreParams]>,
) -> Result<Design> {
    let mut aligned = Vec::with_capacity(basins.len());
    let mut windows = Vec::with_capacity(basins.len());
    let mut pooled = Vec::with_capacity(basins.len());
    for b in basins {
        let wrap = in_basin(STAGE_TRAIN, b.basin_id());
        let (start, raw) = align_raw(&b.table, roster).map_err(&wrap)?;
        let range =
            MonthRange::new(start, start.add_months(raw.nrows() as i64 - 1)).map_err(&wrap)?;
        let window = training_window(cfg, range).map_err(&wrap)?;
        pooled.push(training_rows(start, &raw, window).map_err(&wrap)?);
        windows.push(window);
        aligned.push((start, raw));
    }
    let views: Vec<_> = pooled.iter().map(|a| a.view()).collect();
    let pooled = concatenate(Axis(0), &views)
        .map_err(|e| Error::Numeric(e.to_string()).in_stage(STAGE_TRAIN))?;
    let params = match params {
        Some(p) if p.len() != roster.len() => {
            return Err(Error::DimensionMismatch {
                expected: roster.len(),
                got: p.len(),
            })
        }
        Some(p) => p.to_vec(),
        None => pooled
            .columns()
            .into_iter()
            .zip(roster)
            .map(|(c, id)| ZScoreParams::fit(&c.to_vec(), id))
            .collect::<Result<_>>()
            .map_err(|e| e.in_stage(STAGE_TRAIN))?,
    };
    let basins_z = aligned
        .iter()
        .map(|(s, raw)| DesignMatrix::from_raw(*s, roster.to_vec(), raw, params.clone()))
        .collect();
    let training = DesignMatrix::from_raw(windows[0].start, roster.to_vec(), &pooled, params);
    Ok(Design {
        roster: roster.to_vec(),
        basins: basins_z,
        training_windows: windows,
        spi_windows: basins.iter().map(|b| b.spi_window).collect(),
        training,
    })
}

pub fn train(cfg: &PipelineConfig, design: &Design) -> Result<TrainedEncoder> {
    let tc = cfg.train.train_config(derive_seed(cfg.seed, STAGE_TRAIN));
    info!(
        "training autoencoder on {} rows x {} columns",
        design.training.nrows(),
        design.training.ncols()
    );
    let mut model =
        train_autoencoder(&design.training, &tc).map_err(|e| e.in_stage(STAGE_TRAIN))?;
    model.metadata.insert("config_hash".into(), cfg.hash());
    model
        .metadata
        .insert("global_seed".into(), cfg.seed.to_string());
    let fmt = |ws: &[MonthRange]| {
        ws.iter()
            .map(|w| format!("{}..{}", w.start, w.end))
            .collect::<Vec<_>>()
            .join(";")
    };
    model
        .metadata
        .insert("training_windows".into(), fmt(&design.training_windows));
    model
        .metadata
        .insert("spi_fit_windows".into(), fmt(&design.spi_windows));
    Ok(model)
}

pub fn weights(
    cfg: &PipelineConfig,
    model: &TrainedEncoder,
    design: &Design,
) -> Result<WeightVector> {
    let wrap = |e: Error| e.in_stage(STAGE_WEIGHTS);
    let bottleneck = model.encode(&design.training).map_err(wrap)?;
    compute_weights(&design.training, bottleneck.values(), cfg.mi.bins).map_err(wrap)
}

pub fn indices(
    basins: &[BasinData],
    design: &Design,
    w: &WeightVector,
    model_ref: &str,
) -> Result<Vec<IndexSeries>> {
    basins
        .iter()
        .zip(&design.basins)
        .zip(&design.training_windows)
        .map(|((b, z), window)| {
            let mut idx =
                compose_index(z, w, Some(*window)).map_err(in_basin(STAGE_INDEX, b.basin_id()))?;
            idx.provenance.model_ref = model_ref.to_string();
            Ok(idx)
        })
        .collect()
}

/// SWE anomaly, SWE and discharge for one basin.
pub fn indicators(cfg: &PipelineConfig, table: &BasinTable) -> Result<Vec<MonthlySeries>> {
    let swe = table.require(&cfg.variables.swe)?;
    let mut anomaly = monthly_climatology_anomaly(swe)?;
    anomaly.variable_id = SWE_ANOMALY_ID.into();
    let q = table.require(&cfg.variables.discharge)?;
    Ok(vec![anomaly, swe.clone(), q.clone()])
}

pub fn evaluate(
    cfg: &PipelineConfig,
    table: &BasinTable,
    idx: &IndexSeries,
) -> Result<EvaluationReport> {
    let wrap = in_basin(STAGE_EVALUATE, &table.basin_id);
    let ind = indicators(cfg, table).map_err(&wrap)?;
    evaluate_index(idx, &ind[0], &ind[2], &cfg.evaluation.event_windows).map_err(&wrap)
}

/// Everything the fitting stages produce, before anything is written.
#[derive(Debug, Clone)]
pub struct FitOutputs {
    pub selection: SelectionReport,
    pub design: Design,
    pub model: TrainedEncoder,
    pub weights: WeightVector,
}

pub fn fit(cfg: &PipelineConfig, basins: &[BasinData]) -> Result<FitOutputs> {
    let selection = select(cfg, basins)?;
    let roster = input_roster(cfg, &selection.selected);
    let design = build_design(cfg, basins, &roster, None)?;
    let model = train(cfg, &design)?;
    let weights = weights(cfg, &model, &design)?;
    Ok(FitOutputs {
        selection,
        design,
        model,
        weights,
    })
}

/// Artifact file names for one config.
#[derive(Debug, Clone)]
pub struct ArtifactNames {
    pub dir: PathBuf,
    pub hash: String,
}

impl ArtifactNames {
    pub fn new(cfg: &PipelineConfig) -> Self {
        ArtifactNames {
            dir: cfg.output_dir.clone(),
            hash: cfg.short_hash(),
        }
    }

    fn file(&self, stem: &str, basin: Option<&str>, ext: &str) -> PathBuf {
        let name = match basin {
            Some(b) => format!("{stem}-{b}-{}.{ext}", self.hash),
            None => format!("{stem}-{}.{ext}", self.hash),
        };
        self.dir.join(name)
    }

    pub fn monthly(&self, basin: &str) -> PathBuf {
        self.file("monthly", Some(basin), "csv")
    }
    pub fn config(&self) -> PathBuf {
        self.file("config", None, "toml")
    }
    pub fn features(&self) -> PathBuf {
        self.file("features", None, "txt")
    }
    pub fn model(&self) -> PathBuf {
        self.file("model", None, "json")
    }
    pub fn weights(&self) -> PathBuf {
        self.file("weights", None, "csv")
    }
    pub fn index(&self, basin: &str) -> PathBuf {
        self.file("index", Some(basin), "csv")
    }
    pub fn evaluation_csv(&self, basin: &str) -> PathBuf {
        self.file("evaluation", Some(basin), "csv")
    }
    pub fn evaluation_txt(&self, basin: &str) -> PathBuf {
        self.file("evaluation", Some(basin), "txt")
    }
    pub fn plot(&self, basin: &str) -> PathBuf {
        self.file("plot", Some(basin), "svg")
    }
}

fn stamped(stamp: &str, body: &str) -> String {
    format!("# {stamp}\n{body}")
}

pub fn selection_text(cfg: &PipelineConfig, report: &SelectionReport) -> String {
    stamped(&cfg.stamp(), &report.to_text())
}

pub fn index_csv(cfg: &PipelineConfig, idx: &IndexSeries) -> String {
    let stamp = format!(
        "{} model={} weight_hash={} index_mean={} index_std={}",
        cfg.stamp(),
        idx.provenance.model_ref,
        idx.provenance.weight_hash,
        idx.params.mean,
        idx.params.std
    );
    stamped(&stamp, &idx.to_csv())
}

/// Paths of everything a full run wrote.
#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifacts {
    pub config_hash: String,
    pub config: PathBuf,
    pub features: PathBuf,
    pub model: PathBuf,
    pub weights: PathBuf,
    pub index: Vec<PathBuf>,
    pub evaluation: Vec<PathBuf>,
    pub plots: Vec<PathBuf>,
    pub reports: Vec<EvaluationReport>,
}

/// Run every stage and write all artifacts to `cfg.output_dir`.
pub fn pipeline_run(cfg: &PipelineConfig) -> Result<RunArtifacts> {
    let basins = load_inputs(cfg)?;
    let out = fit(cfg, &basins)?;
    let names = ArtifactNames::new(cfg);
    let model_path = names.model();
    let model_ref = model_path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let idx = indices(&basins, &out.design, &out.weights, &model_ref)?;
    let reports = basins
        .iter()
        .zip(&idx)
        .map(|(b, i)| evaluate(cfg, &b.table, i))
        .collect::<Result<Vec<_>>>()?;
    let plots_in = basins
        .iter()
        .map(|b| indicators(cfg, &b.table).map_err(in_basin(STAGE_PLOT, b.basin_id())))
        .collect::<Result<Vec<_>>>()?;

    let stamp = cfg.stamp();
    write_file(&names.config(), &stamped(&stamp, &cfg.to_toml()?))?;
    write_file(&names.features(), &selection_text(cfg, &out.selection))?;
    write_file(&model_path, &out.model.to_json()?)?;
    write_file(
        &names.weights(),
        &weights_to_csv(&out.weights, Some(&stamp)),
    )?;
    let mut art = RunArtifacts {
        config_hash: cfg.hash(),
        config: names.config(),
        features: names.features(),
        model: model_path,
        weights: names.weights(),
        index: Vec::new(),
        evaluation: Vec::new(),
        plots: Vec::new(),
        reports: reports.clone(),
    };
    for ((b, i), (r, ind)) in basins.iter().zip(&idx).zip(reports.iter().zip(&plots_in)) {
        let id = b.basin_id();
        write_file(&names.index(id), &index_csv(cfg, i))?;
        write_file(&names.evaluation_csv(id), &stamped(&stamp, &r.to_csv()))?;
        write_file(&names.evaluation_txt(id), &stamped(&stamp, &r.summary()))?;
        plot_emit(i, ind, &names.plot(id), Some(&stamp)).map_err(in_basin(STAGE_PLOT, id))?;
        art.index.push(names.index(id));
        art.evaluation.push(names.evaluation_csv(id));
        art.plots.push(names.plot(id));
    }
    Ok(art)
}

/// Load a model file written by [`pipeline_run`] or the `train` stage.
pub fn read_model(path: &Path) -> Result<TrainedEncoder> {
    TrainedEncoder::from_json(&read_file(path)?).map_err(|e| match e {
        Error::Io { .. } => e,
        other => Error::Parse(format!("{}: {other}", path.display())),
    })
}
