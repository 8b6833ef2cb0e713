use std::path::{Path, PathBuf};

use snodri::config::PipelineConfig;
use snodri::io::basin_to_csv;
use snodri::pipeline::{fit, load_inputs, pipeline_run, read_model, ArtifactNames};
use snodri::synth::{generate_synthetic_basin, DroughtWinter, SynthConfig};
use snodri::timeseries::{BasinTable, MonthStamp, MonthlySeries};
use snodri::ErrorKind;

const TRAIN_END: &str = "2000-12";

fn synth_table(seed: u64) -> BasinTable {
    let cfg = SynthConfig {
        basin_id: "b1".into(),
        n_years: 24,
        seed,
        drought_winters: vec![
            DroughtWinter {
                year: 1988,
                severity: 1.0,
            },
            DroughtWinter {
                year: 2002,
                severity: 0.8,
            },
        ],
        ..Default::default()
    };
    generate_synthetic_basin(&cfg).unwrap().0
}

fn write_basin(dir: &Path, name: &str, table: &BasinTable) -> PathBuf {
    let p = dir.join(format!("{name}.csv"));
    std::fs::write(&p, basin_to_csv(table, None)).unwrap();
    p
}

fn config(inputs: &[PathBuf], out: &Path, extra: &[&str]) -> PipelineConfig {
    let list: Vec<String> = inputs
        .iter()
        .map(|p| format!("{:?}", p.display().to_string()))
        .collect();
    let text = format!(
        "seed = 3\ninputs = [{}]\noutput_dir = {:?}\n\n[split]\ntrain_end = \"{TRAIN_END}\"\n\n\
         [forest]\nn_trees = 40\n\n[train]\nepochs = 400\n\n\
         [evaluation]\nevent_windows = [{{ start = \"1987-11\", end = \"1988-04\" }}]\n",
        list.join(", "),
        out.display().to_string()
    );
    let sets: Vec<String> = extra.iter().map(|s| s.to_string()).collect();
    PipelineConfig::from_toml_str(&text, &sets, None).unwrap()
}

/// Replace every value after the training window with a sentinel that stays
/// inside the physical input ranges.
fn poisoned(table: &BasinTable) -> BasinTable {
    let cut: MonthStamp = TRAIN_END.parse().unwrap();
    let mut out = BasinTable::new(table.basin_id.clone());
    for s in table.series() {
        let sentinel = match s.variable_id.as_str() {
            "TMP" => 301.0,
            "SPFH" => 0.0123,
            "PRES" => 99_999.0,
            "APCP" => 777.0,
            _ => 12_345.0,
        };
        let vals = s
            .stamps()
            .zip(s.values())
            .map(|(m, &v)| if m > cut { sentinel } else { v })
            .collect();
        out.insert(MonthlySeries::new(
            s.variable_id.clone(),
            s.unit.clone(),
            s.start(),
            vals,
        ))
        .unwrap();
    }
    out
}

#[test]
fn evaluation_rows_never_reach_fitting() {
    let dir = tempfile::tempdir().unwrap();
    let clean = synth_table(11);
    let a = write_basin(dir.path(), "b1", &clean);
    let sub = dir.path().join("poisoned");
    std::fs::create_dir(&sub).unwrap();
    let b = write_basin(&sub, "b1", &poisoned(&clean));

    let ca = config(&[a], &dir.path().join("out"), &[]);
    let cb = config(&[b], &dir.path().join("out"), &[]);
    let fa = fit(&ca, &load_inputs(&ca).unwrap()).unwrap();
    let fb = fit(&cb, &load_inputs(&cb).unwrap()).unwrap();
    assert_eq!(fa.selection, fb.selection);
    assert_eq!(fa.model.weights, fb.model.weights);
    assert_eq!(fa.model.standardization, fb.model.standardization);
    assert_eq!(fa.weights, fb.weights);
    assert_eq!(fa.design.training, fb.design.training);
    assert_ne!(fa.design.basins[0], fb.design.basins[0]);
}

#[test]
fn full_run_writes_stamped_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let inputs = [
        write_basin(dir.path(), "b1", &synth_table(1)),
        write_basin(dir.path(), "b2", &{
            let mut t = synth_table(2);
            t.basin_id = "b2".into();
            t
        }),
    ];
    let cfg = config(&inputs, &dir.path().join("out"), &[]);
    let art = pipeline_run(&cfg).unwrap();
    let hash = cfg.hash();
    let short = cfg.short_hash();
    let mut files = vec![
        art.config.clone(),
        art.features.clone(),
        art.model.clone(),
        art.weights.clone(),
    ];
    files.extend(art.index.iter().cloned());
    files.extend(art.evaluation.iter().cloned());
    files.extend(art.plots.iter().cloned());
    assert_eq!(files.len(), 4 + 3 * 2);
    for f in &files {
        let name = f.file_name().unwrap().to_string_lossy().into_owned();
        assert!(name.contains(&short), "{name}");
        let text = std::fs::read_to_string(f).unwrap();
        assert!(text.contains(&hash), "{name} lacks the config hash");
        assert!(text.contains("seed"), "{name} lacks the seed");
    }
    let names = ArtifactNames::new(&cfg);
    assert!(names.evaluation_txt("b2").exists());
    let idx = std::fs::read_to_string(&art.index[0]).unwrap();
    assert_eq!(idx.lines().nth(1), Some("date,snodri,raw_weighted_sum"));
    let svg = std::fs::read_to_string(&art.plots[0]).unwrap();
    assert_eq!(svg.matches(r#"class="panel""#).count(), 4);

    let model = read_model(&art.model).unwrap();
    assert_eq!(
        model.metadata["spi_fit_windows"],
        format!("1981-01..{TRAIN_END};1981-01..{TRAIN_END}")
    );

    let other = config(&inputs, &dir.path().join("out"), &["seed=4"]);
    assert_ne!(ArtifactNames::new(&other).model(), art.model);
}

#[test]
fn missing_input_is_a_data_error_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.csv");
    let cfg = config(&[missing.clone()], &dir.path().join("out"), &[]);
    let err = pipeline_run(&cfg).unwrap_err();
    assert_eq!(err.kind(), ErrorKind::Data);
    let msg = err.to_string();
    assert!(msg.contains("nope.csv") && msg.contains("ingest"), "{msg}");
}

#[test]
fn stage_errors_name_stage_and_basin() {
    let dir = tempfile::tempdir().unwrap();
    let mut t = synth_table(1);
    let keep: Vec<MonthlySeries> = t
        .series()
        .iter()
        .filter(|s| s.variable_id != "PRES")
        .cloned()
        .collect();
    t = BasinTable::new("b1");
    for s in keep {
        t.insert(s).unwrap();
    }
    let p = write_basin(dir.path(), "b1", &t);
    let cfg = config(&[p], &dir.path().join("out"), &[]);
    let msg = load_inputs(&cfg).unwrap_err().to_string();
    assert!(
        msg.contains("derive") && msg.contains("b1") && msg.contains("PRES"),
        "{msg}"
    );
}

#[test]
fn split_outside_data_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_basin(dir.path(), "b1", &synth_table(1));
    let cfg = config(
        &[p],
        &dir.path().join("out"),
        &["split.train_end=\"1950-01\""],
    );
    assert_eq!(load_inputs(&cfg).unwrap_err().kind(), ErrorKind::Config);
}

#[test]
fn daily_inputs_need_declared_aggregation() {
    let dir = tempfile::tempdir().unwrap();
    let t = synth_table(5);
    let mut text = String::from("date");
    for s in t.series() {
        text.push(',');
        text.push_str(&s.variable_id);
    }
    text.push('\n');
    for i in 0..t.series()[0].len() {
        let m = t.series()[0].stamp(i);
        let days = m.days_in_month();
        for d in 1..=days {
            text.push_str(&format!("{m}-{d:02}"));
            for s in t.series() {
                let v = s.values()[i];
                let v = if s.variable_id == "APCP" {
                    v / days as f64
                } else {
                    v
                };
                text.push_str(&format!(",{v}"));
            }
            text.push('\n');
        }
    }
    let p = dir.path().join("b1.csv");
    std::fs::write(&p, text).unwrap();
    let out = dir.path().join("out");
    let bare = config(&[p.clone()], &out, &[]);
    let err = load_inputs(&bare).unwrap_err();
    assert_eq!(err.kind(), ErrorKind::Config);

    let sets = [
        "aggregation.APCP=\"sum\"",
        "aggregation.TMP=\"mean\"",
        "aggregation.DSWRF=\"mean\"",
        "aggregation.SPFH=\"mean\"",
        "aggregation.PRES=\"mean\"",
        "aggregation.UGRD=\"mean\"",
        "aggregation.VGRD=\"mean\"",
        "aggregation.SWE=\"mean\"",
        "aggregation.Q=\"mean\"",
    ];
    let cfg = config(&[p], &out, &sets);
    let basins = load_inputs(&cfg).unwrap();
    let got = basins[0].table.get("APCP").unwrap();
    let want = t.get("APCP").unwrap();
    for (a, b) in got.values().iter().zip(want.values()) {
        assert!((a - b).abs() < 1e-9 * b.abs().max(1.0));
    }
    let sf = basins[0].table.get("SNOWFRAC").unwrap();
    assert!(sf.values().iter().all(|v| (0.0..=1.0).contains(v)));
}
