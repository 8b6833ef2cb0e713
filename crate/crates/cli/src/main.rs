//! `snodri` command line.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 data error, 3 numeric
//! failure. Log verbosity comes from `SNODRI_LOG` (default `warn`).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;

use snodri::config::PipelineConfig;
use snodri::featsel::SelectionReport;
use snodri::index::IndexSeries;
use snodri::io::{
    basin_to_csv, parse_weights_csv, read_file, read_raw_table, series_to_csv, weights_to_csv,
    write_file, Resolution,
};
use snodri::pipeline::{
    build_design, evaluate, indicators, indices, input_roster, load_inputs, pipeline_run,
    read_model, select, selection_text, training_window, ArtifactNames, BasinData, Design,
    STAGE_EVALUATE, STAGE_PLOT,
};
use snodri::plot::plot_emit;
use snodri::snowpart::{snow_fraction_from_monthly, SigmoidParams};
use snodri::spi::SpiModel;
use snodri::synth::{generate_synthetic_basin, DroughtWinter, SynthConfig};
use snodri::timeseries::{BasinTable, MonthRange};
use snodri::{Error, ErrorKind, Result};

#[derive(Debug, Parser)]
#[command(
    name = "snodri",
    version,
    about = "Composite snow-drought index from basin monthly series"
)]
struct Cli {
    /// Pipeline config (TOML).
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set forest.n_trees=200`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic basin CSV and its drought mask.
    Synth(SynthArgs),
    /// Read every input, aggregate to months, add SPI and snow fraction.
    Ingest,
    /// SPI of one input's precipitation at one timescale.
    Spi {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        k: usize,
        /// Precipitation column (defaults to the configured role, or APCP).
        #[arg(long)]
        variable: Option<String>,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monthly snow fraction of one input.
    Snowfrac {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Random-forest rankings against SWE and discharge, and the selected union.
    SelectFeatures,
    /// Train the autoencoder on the selected features, SPI and snow fraction.
    Train {
        /// Feature report (defaults to the artifact of this config).
        #[arg(long)]
        features: Option<PathBuf>,
    },
    /// Mutual-information weights of each input against the bottleneck.
    Weights {
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Weighted, standardized index per basin.
    Index {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Compare each basin's index with its SWE anomaly and discharge.
    Evaluate,
    /// Index and indicator panels per basin as SVG.
    Plot,
    /// Every stage in order.
    Run,
}

#[derive(Debug, clap::Args)]
struct SynthArgs {
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    #[arg(long, default_value = "synthetic")]
    basin_id: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1981)]
    start_year: i32,
    #[arg(long, default_value_t = 30)]
    years: usize,
    #[arg(long, default_value_t = 1.0)]
    noise_std: f64,
    /// `YEAR` or `YEAR:SEVERITY` (severity in (0, 1], default 1). Repeatable.
    #[arg(long = "drought", value_parser = parse_drought)]
    droughts: Vec<DroughtWinter>,
}

fn parse_drought(s: &str) -> std::result::Result<DroughtWinter, String> {
    let (y, sev) = s.split_once(':').unwrap_or((s, "1"));
    Ok(DroughtWinter {
        year: y.trim().parse().map_err(|_| format!("bad year in {s:?}"))?,
        severity: sev
            .trim()
            .parse()
            .map_err(|_| format!("bad severity in {s:?}"))?,
    })
}

struct Ctx {
    config: Option<PathBuf>,
    set: Vec<String>,
}

impl Ctx {
    fn config(&self) -> Result<PipelineConfig> {
        let path = self
            .config
            .as_deref()
            .ok_or_else(|| Error::Config("this command needs --config".into()))?;
        PipelineConfig::load(path, &self.set)
    }

    fn optional_config(&self) -> Result<Option<PipelineConfig>> {
        self.config.as_ref().map(|_| self.config()).transpose()
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => {
            write_file(p, text)?;
            println!("{}", p.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn wrote(path: &Path, text: &str) -> Result<()> {
    write_file(path, text)?;
    info!("wrote {}", path.display());
    println!("{}", path.display());
    Ok(())
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn synth(a: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        basin_id: a.basin_id,
        start_year: a.start_year,
        n_years: a.years,
        seed: a.seed,
        drought_winters: a.droughts,
        noise_std: a.noise_std,
        ..Default::default()
    };
    let (table, mask) = generate_synthetic_basin(&cfg)?;
    let stamp = format!("snodri synth seed={}", cfg.seed);
    wrote(
        &a.out_dir.join(format!("{}.csv", cfg.basin_id)),
        &basin_to_csv(&table, Some(&stamp)),
    )?;
    wrote(
        &a.out_dir.join(format!("{}-mask.csv", cfg.basin_id)),
        &format!("# {stamp}\n{}", mask.to_csv()),
    )
}

/// Monthly table of one file, with aggregation and units from the config
/// when one is given.
fn monthly_input(
    cfg: Option<&PipelineConfig>,
    path: &Path,
) -> Result<(BasinTable, snodri::io::RawTable)> {
    let raw = read_raw_table(path)?;
    let table = match cfg {
        Some(c) => raw.to_monthly(&c.aggregation, c.missing_policy, &c.units)?,
        None => raw.to_monthly(&Default::default(), Default::default(), &Default::default())?,
    };
    Ok((table, raw))
}

fn spi(
    cfg: Option<PipelineConfig>,
    input: &Path,
    k: usize,
    variable: Option<String>,
    out: Option<&Path>,
) -> Result<()> {
    let (table, _) = monthly_input(cfg.as_ref(), input)?;
    let var = variable
        .or_else(|| cfg.as_ref().map(|c| c.variables.precip.clone()))
        .unwrap_or_else(|| "APCP".into());
    let precip = table.require(&var)?;
    let range = precip
        .defined_range()
        .ok_or_else(|| Error::Empty(format!("precipitation {var}")))?;
    let window: MonthRange = match &cfg {
        Some(c) => training_window(c, range)?,
        None => range,
    };
    let s = SpiModel::fit(precip, k, Some(window))?.apply(precip)?;
    let stamp = cfg.as_ref().map(|c| c.stamp());
    emit(out, &series_to_csv(&s.series, stamp.as_deref()))
}

fn snowfrac(cfg: Option<PipelineConfig>, input: &Path, out: Option<&Path>) -> Result<()> {
    let (table, raw) = monthly_input(cfg.as_ref(), input)?;
    let (roles, params) = match &cfg {
        Some(c) => (c.variables.snow_inputs(), c.snow),
        None => (Default::default(), SigmoidParams::default()),
    };
    let series = if raw.resolution == Resolution::Monthly {
        snow_fraction_from_monthly(
            table.require(&roles.temperature)?,
            table.require(&roles.humidity)?,
            table.require(&roles.pressure)?,
            &params,
        )?
    } else {
        raw.snow_fraction(&roles, &params)?.series
    };
    let stamp = cfg.as_ref().map(|c| c.stamp());
    emit(out, &series_to_csv(&series, stamp.as_deref()))
}

fn design_for_model(
    cfg: &PipelineConfig,
    basins: &[BasinData],
    model: &snodri::encoder::TrainedEncoder,
) -> Result<Design> {
    build_design(cfg, basins, &model.column_ids, Some(&model.standardization))
}

fn stamped(cfg: &PipelineConfig, body: &str) -> String {
    format!("# {}\n{body}", cfg.stamp())
}

fn run_command(ctx: &Ctx, command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Spi {
            input,
            k,
            variable,
            out,
        } => spi(ctx.optional_config()?, &input, k, variable, out.as_deref()),
        Command::Snowfrac { input, out } => {
            snowfrac(ctx.optional_config()?, &input, out.as_deref())
        }
        Command::Ingest => {
            let cfg = ctx.config()?;
            let names = ArtifactNames::new(&cfg);
            for b in load_inputs(&cfg)? {
                wrote(
                    &names.monthly(b.basin_id()),
                    &basin_to_csv(&b.table, Some(&cfg.stamp())),
                )?;
            }
            Ok(())
        }
        Command::SelectFeatures => {
            let cfg = ctx.config()?;
            let report = select(&cfg, &load_inputs(&cfg)?)?;
            wrote(
                &ArtifactNames::new(&cfg).features(),
                &selection_text(&cfg, &report),
            )
        }
        Command::Train { features } => {
            let cfg = ctx.config()?;
            let names = ArtifactNames::new(&cfg);
            let selected = SelectionReport::parse_selected(&read_file(
                &features.unwrap_or_else(|| names.features()),
            )?)?;
            let basins = load_inputs(&cfg)?;
            let design = build_design(&cfg, &basins, &input_roster(&cfg, &selected), None)?;
            let model = snodri::pipeline::train(&cfg, &design)?;
            wrote(&names.model(), &model.to_json()?)
        }
        Command::Weights { model } => {
            let cfg = ctx.config()?;
            let names = ArtifactNames::new(&cfg);
            let model = read_model(&model.unwrap_or_else(|| names.model()))?;
            let design = design_for_model(&cfg, &load_inputs(&cfg)?, &model)?;
            let w = snodri::pipeline::weights(&cfg, &model, &design)?;
            wrote(&names.weights(), &weights_to_csv(&w, Some(&cfg.stamp())))
        }
        Command::Index { model, weights } => {
            let cfg = ctx.config()?;
            let names = ArtifactNames::new(&cfg);
            let model_path = model.unwrap_or_else(|| names.model());
            let model = read_model(&model_path)?;
            let w = parse_weights_csv(&read_file(&weights.unwrap_or_else(|| names.weights()))?)?;
            let basins = load_inputs(&cfg)?;
            let design = design_for_model(&cfg, &basins, &model)?;
            for (b, idx) in
                basins
                    .iter()
                    .zip(indices(&basins, &design, &w, &file_name(&model_path))?)
            {
                wrote(
                    &names.index(b.basin_id()),
                    &snodri::pipeline::index_csv(&cfg, &idx),
                )?;
            }
            Ok(())
        }
        Command::Evaluate => {
            let cfg = ctx.config()?;
            let names = ArtifactNames::new(&cfg);
            for b in load_inputs(&cfg)? {
                let id = b.basin_id();
                let idx = IndexSeries::from_csv(&read_file(&names.index(id))?)
                    .map_err(|e| e.in_stage(STAGE_EVALUATE))?;
                let report = evaluate(&cfg, &b.table, &idx)?;
                wrote(&names.evaluation_csv(id), &stamped(&cfg, &report.to_csv()))?;
                wrote(&names.evaluation_txt(id), &stamped(&cfg, &report.summary()))?;
            }
            Ok(())
        }
        Command::Plot => {
            let cfg = ctx.config()?;
            let names = ArtifactNames::new(&cfg);
            for b in load_inputs(&cfg)? {
                let id = b.basin_id();
                let wrap = |e: Error| e.in_stage(format!("{STAGE_PLOT} [basin {id}]"));
                let idx = IndexSeries::from_csv(&read_file(&names.index(id))?).map_err(wrap)?;
                let ind = indicators(&cfg, &b.table).map_err(wrap)?;
                let out = names.plot(id);
                plot_emit(&idx, &ind, &out, Some(&cfg.stamp())).map_err(wrap)?;
                println!("{}", out.display());
            }
            Ok(())
        }
        Command::Run => {
            let cfg = ctx.config()?;
            let art = pipeline_run(&cfg)?;
            for p in [&art.config, &art.features, &art.model, &art.weights] {
                println!("{}", p.display());
            }
            for (i, p) in art.index.iter().enumerate() {
                println!("{}", p.display());
                println!("{}", art.evaluation[i].display());
                println!("{}", art.plots[i].display());
            }
            for (p, r) in art.index.iter().zip(&art.reports) {
                eprint!("[{}]\n{}", file_name(p), r.summary());
            }
            Ok(())
        }
    }
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Config => 1,
        ErrorKind::Data => 2,
        ErrorKind::Numeric => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SNODRI_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let ctx = Ctx {
        config: cli.config,
        set: cli.set,
    };
    match run_command(&ctx, cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}
