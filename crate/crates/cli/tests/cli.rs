use std::fs;
use std::path::Path;
use std::process::Command;

fn kgflow(args: &[&str], config: Option<&str>, dir: &Path) -> (i32, String) {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_kgflow"));
    cmd.args(args).arg("--out").arg(dir.join("out"));
    if let Some(text) = config {
        let p = dir.join("config.json");
        fs::write(&p, text).unwrap();
        cmd.arg("--config").arg(&p);
    }
    let o = cmd.output().unwrap();
    (o.status.code().unwrap_or(-1), String::from_utf8_lossy(&o.stderr).into_owned())
}

fn report(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("out/null_report.json")).unwrap()).unwrap()
}

const CUBIC: &str = r#"{"nonlinearity":[{"u":3,"utx":0,"uxx":0,"ut":0,"ux":0,"coeff":1}]}"#;

#[test]
fn u_cubed_satisfies_null_condition() {
    let d = tempfile::tempdir().unwrap();
    let (code, err) = kgflow(&["check-null"], Some(CUBIC), d.path());
    assert_eq!(code, 0, "{err}");
    let r = report(d.path());
    assert_eq!(r["verdict"], true);
    assert!(r["phi1_at_zero"].as_f64().unwrap() != 0.0);
    assert!(d.path().join("out/resolved_config.json").exists());
}

#[test]
fn ut_cubed_violates_null_condition() {
    let d = tempfile::tempdir().unwrap();
    let cfg = r#"{"nonlinearity":[{"u":0,"utx":0,"uxx":0,"ut":3,"ux":0,"coeff":1}]}"#;
    let (code, err) = kgflow(&["check-null"], Some(cfg), d.path());
    assert_eq!(code, 0, "{err}");
    let r = report(d.path());
    assert_eq!(r["verdict"], false);
    assert_eq!(r["Q_coefficients"], serde_json::json!(["3"]));
}

#[test]
fn malformed_record_exits_2() {
    let d = tempfile::tempdir().unwrap();
    for cfg in [
        r#"{"nonlinearity":[{"u":3,"coeff":1}]}"#,
        r#"{"nonlinearity":[{"u":2,"utx":0,"uxx":0,"ut":0,"ux":0,"coeff":1}]}"#,
        r#"{"nonlinearity":[{"u":1,"utx":1,"uxx":1,"ut":0,"ux":0,"coeff":1}]}"#,
        r#"{"grid":{"n":4096,"half_length":-1}}"#,
        r#"{"unknown":1}"#,
        "not json",
    ] {
        let (code, _) = kgflow(&["check-null"], Some(cfg), d.path());
        assert_eq!(code, 2, "{cfg}");
    }
}

#[test]
fn empty_station_list_exits_2() {
    let d = tempfile::tempdir().unwrap();
    let cfg = r#"{"profile":{"stations":[]},"grid":{"n":256,"half_length":20},"solver":{"t_end":1}}"#;
    let (code, err) = kgflow(&["extract-profile"], Some(cfg), d.path());
    assert_eq!(code, 2, "{err}");
    assert!(err.contains("station"), "{err}");
}

#[test]
fn blowup_exits_1_and_flushes_norms() {
    let d = tempfile::tempdir().unwrap();
    // u_tt - (1 - 1e4 u^2) u_xx + u = 0 turns elliptic once |u| > 0.01
    let cfg = r#"{"nonlinearity":[{"u":2,"utx":0,"uxx":1,"ut":0,"ux":0,"coeff":-1e4}],
                  "grid":{"n":512,"half_length":30},"solver":{"epsilon":0.9,"t_end":200}}"#;
    let (code, err) = kgflow(&["simulate"], Some(cfg), d.path());
    assert_eq!(code, 1, "{err}");
    let norms = fs::read_to_string(d.path().join("out/norms.csv")).unwrap();
    assert!(norms.starts_with("t,linf_u,sqrt_t_linf,E0,EZ1,Hs"));
    assert!(norms.lines().count() > 1);
}

#[test]
fn zero_data_gives_zero_series() {
    let d = tempfile::tempdir().unwrap();
    let cfg = r#"{"nonlinearity":[{"u":3,"utx":0,"uxx":0,"ut":0,"ux":0,"coeff":1}],
                  "grid":{"n":256,"half_length":20},"solver":{"epsilon":0,"t_end":4}}"#;
    let (code, err) = kgflow(&["simulate"], Some(cfg), d.path());
    assert_eq!(code, 0, "{err}");
    let mut rdr = csv::Reader::from_path(d.path().join("out/norms.csv")).unwrap();
    let mut rows = 0;
    for r in rdr.records() {
        let r = r.unwrap();
        for v in r.iter().skip(1) {
            assert_eq!(v.parse::<f64>().unwrap(), 0.0);
        }
        rows += 1;
    }
    assert!(rows > 2);
}

#[test]
fn outputs_are_deterministic() {
    let cfg = r#"{"nonlinearity":[{"u":3,"utx":0,"uxx":0,"ut":0,"ux":0,"coeff":1}],
                  "grid":{"n":512,"half_length":40},"solver":{"epsilon":0.2,"t_end":12},
                  "profile":{"stations":[0.0,0.3],"t_min":3}}"#;
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let (code, err) = kgflow(&["fit-scattering", "--threads", "2"], Some(cfg), d.path());
        assert_eq!(code, 0, "{err}");
    }
    for f in ["norms.csv", "profile.csv", "fit.csv", "snapshot_final.csv", "resolved_config.json"] {
        let x = fs::read(a.path().join("out").join(f)).unwrap();
        let y = fs::read(b.path().join("out").join(f)).unwrap();
        assert!(x == y, "{f} differs");
    }
    let fit = fs::read_to_string(a.path().join("out/fit.csv")).unwrap();
    assert!(fit.starts_with("x_station,amplitude,phase_slope,predicted_slope,relative_error,residual_rms"));
}

#[test]
fn fit_reads_series_file() {
    let d = tempfile::tempdir().unwrap();
    let times: Vec<f64> = (0..400).map(|i| 10.0 + i as f64).collect();
    let a = [kgflow::C64::new(1.0, 0.0); 2];
    let s = kgflow::profile::synthetic_series(0.05, &[0.0, 0.4], &a, &[0.5, 0.5], &times).unwrap();
    let path = d.path().join("series.csv");
    s.write_csv(fs::File::create(&path).unwrap()).unwrap();
    let cfg = format!(r#"{{"solver":{{"epsilon":0.05}},"profile":{{"stations":[0.0,0.4],"series":"{}"}}}}"#, path.display());
    let (code, err) = kgflow(&["fit-scattering"], Some(&cfg), d.path());
    assert_eq!(code, 0, "{err}");
    let mut rdr = csv::Reader::from_path(d.path().join("out/fit.csv")).unwrap();
    for r in rdr.records() {
        let slope: f64 = r.unwrap()[2].parse().unwrap();
        assert!((slope - 0.5 * 0.05f64.powi(2)).abs() < 1e-8, "{slope}");
    }
}

#[test]
fn benches_write_csv() {
    let d = tempfile::tempdir().unwrap();
    let cfg = r#"{"bench":{"orders":[0],"h_exponents":[4,5],"iterations":5,"probe_exponents":[5,6]}}"#;
    let (code, err) = kgflow(&["moyal-bench"], Some(cfg), d.path());
    assert_eq!(code, 0, "{err}");
    let m = fs::read_to_string(d.path().join("out/moyal.csv")).unwrap();
    assert!(m.starts_with("h,k,error,fitted_slope"));
    assert_eq!(m.lines().count(), 3);
    let (code, err) = kgflow(&["opnorm-bench"], Some(cfg), d.path());
    assert_eq!(code, 0, "{err}");
    let o = fs::read_to_string(d.path().join("out/opnorm.csv")).unwrap();
    assert!(o.starts_with("h,target,error,fitted_slope"));
}
