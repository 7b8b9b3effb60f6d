use msnode::config::{ConfigError, RunConfig, KEYS};
use msnode::dataset::{self, read_csv, write_csv};
use msnode::plot::{state_plot, Series};
use msnode::report::{write_history, Checkpoint};
use msnode_core::network::{init_params, NetworkSpec};
use msnode_core::systems::{System, SystemSpec, Variants};
use msnode_core::trainer::EpochRecord;

fn pairs(v: &[(&str, &str)]) -> Vec<(String, String)> {
    v.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

#[test]
fn config_echo_round_trips() {
    for system in System::ALL {
        let cfg = RunConfig::for_system(system, Variants::default());
        let text = cfg.to_conf_string();
        assert_eq!(RunConfig::load(Some(&text), &[]).unwrap(), cfg, "{system}");
    }
    let cfg = RunConfig::load(
        None,
        &pairs(&[
            ("system", "lotka_volterra"),
            ("lr_schedule", "epochs"),
            ("lr_decay_epochs", "10,20"),
            ("cg_max_iter", "7"),
            ("hidden", "4,5"),
        ]),
    )
    .unwrap();
    assert_eq!(RunConfig::load(Some(&cfg.to_conf_string()), &[]).unwrap(), cfg);
}

#[test]
fn every_key_is_echoed() {
    let cfg = RunConfig::for_system(System::LotkaVolterra, Variants::default());
    let text = cfg.to_conf_string();
    for key in KEYS {
        // Schedule-specific keys only appear with their schedule.
        if matches!(*key, "lr_patience" | "lr_min_improvement" | "lr_decay_epochs") {
            continue;
        }
        assert!(text.contains(&format!("{key} = ")), "{key}");
    }
}

#[test]
fn overrides_win_and_unknown_keys_fail() {
    let text = "system = lotka_volterra\nepochs = 5\n# comment\nepochs = 6\n";
    let cfg = RunConfig::load(Some(text), &pairs(&[("intervals", "4")])).unwrap();
    assert_eq!(cfg.train.epochs, 6);
    assert_eq!(cfg.train.intervals, 4);
    let cfg = RunConfig::load(Some(text), &pairs(&[("epochs", "9")])).unwrap();
    assert_eq!(cfg.train.epochs, 9);

    assert_eq!(
        RunConfig::load(Some(text), &pairs(&[("epoch", "1")])).unwrap_err(),
        ConfigError::UnknownKey("epoch".into())
    );
    assert_eq!(RunConfig::load(Some("epochs = 3"), &[]).unwrap_err(), ConfigError::MissingSystem);
    assert!(matches!(
        RunConfig::load(Some("system = nope"), &[]),
        Err(ConfigError::BadValue { .. })
    ));
    assert!(matches!(
        RunConfig::load(Some("system lotka_volterra"), &[]),
        Err(ConfigError::Syntax { line: 1 })
    ));
    assert!(matches!(
        RunConfig::load(Some(text), &pairs(&[("lr_patience", "3")])),
        Err(ConfigError::BadValue { .. })
    ));
}

#[test]
fn shipped_configs_match_reference_setups() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for system in System::ALL {
        let path = dir.join(format!("{}.conf", system.name()));
        let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        let cfg = RunConfig::load(Some(&text), &[]).unwrap();
        assert_eq!(cfg, RunConfig::for_system(system, Variants::default()), "{}", path.display());
    }
}

#[test]
fn dataset_files_round_trip_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SystemSpec::standard(System::LotkaVolterra);
    let (split, files) = dataset::generate(&spec, 20, dir.path()).unwrap();
    assert_eq!(split.train.len(), 201);
    let text = std::fs::read_to_string(&files.train).unwrap();
    assert_eq!(text.lines().count(), 202);
    assert_eq!(text.lines().next().unwrap(), "t,x1,x2");

    let (meta, loaded) = dataset::load(&files.sidecar).unwrap();
    assert_eq!(meta.train_rows, 201);
    assert_eq!(meta.split_time, 20.0);
    assert_eq!(loaded.train.values, split.train.values);
    assert_eq!(loaded.train.times, split.train.times);
    assert_eq!(loaded.test.unwrap().values, split.test.unwrap().values);
}

#[test]
fn csv_rejects_bad_header() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.csv");
    std::fs::write(&p, "time,a\n0,1\n").unwrap();
    assert!(read_csv(&p).is_err());
    let ms = msnode_core::systems::MeasurementSet::new(vec![0.0, 0.1], vec![0.1 + 0.2, -1e-300], 1).unwrap();
    write_csv(&p, &ms).unwrap();
    assert_eq!(read_csv(&p).unwrap().values, ms.values);
}

#[test]
fn checkpoint_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let spec = NetworkSpec::new(3, vec![5, 4]);
    let mut values = init_params(&spec, 9).values;
    values[0] = 0.1 + 0.2;
    values[1] = f64::MIN_POSITIVE;
    let c = Checkpoint {
        network: spec.clone(),
        values,
    };
    let p = dir.path().join("params.json");
    c.write(&p).unwrap();
    assert_eq!(Checkpoint::read(&p).unwrap(), c);

    let short = Checkpoint {
        network: spec,
        values: vec![0.0; 3],
    };
    short.write(&p).unwrap();
    assert!(Checkpoint::read(&p).is_err());
}

#[test]
fn history_csv_columns() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("h.csv");
    let rec = EpochRecord {
        epoch: 0,
        phi: 1.5,
        g_inf: 0.25,
        lr: 0.01,
        defect: 0.0,
        cg_iterations: 3,
    };
    write_history(&p, &[rec]).unwrap();
    let text = std::fs::read_to_string(&p).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "epoch,phi,g_inf,lr");
    let row: Vec<f64> = lines.next().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(row, vec![0.0, 1.5, 0.25, 0.01]);
}

#[test]
fn svg_is_deterministic() {
    let times = [0.0, 1.0, 2.0, 3.0];
    let make = || {
        let series = [
            Series {
                label: "measurements",
                color: "#000",
                dashed: false,
                points: true,
                times: &times,
                values: vec![0.0, 1.0, 0.5, f64::NAN],
            },
            Series {
                label: "model",
                color: "#00f",
                dashed: true,
                points: false,
                times: &times[..2],
                values: vec![0.1, 0.9],
            },
        ];
        state_plot("x1", &series, Some(1.5))
    };
    let a = make();
    assert_eq!(a, make());
    assert!(a.starts_with("<svg"));
    assert_eq!(a.matches("<polyline").count(), 1);
    assert_eq!(a.matches("<circle").count(), 3);
    assert!(a.contains("stroke-dasharray=\"2,3\""));
}
