use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use photocell::model::BOLTZMANN_EV_PER_K;

fn photocell(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_photocell"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("cell.toml");
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn sweep_writes_one_file_per_donor_count() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = photocell(&["sweep", "--donors", "3,6,9", "--grid", "1e-10:1e1:25"], &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for n in [3, 6, 9] {
        let csv = fs::read_to_string(out.join(format!("sweep_N{n}.csv"))).unwrap();
        let meta: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(out.join(format!("sweep_N{n}_meta.json"))).unwrap()).unwrap();
        let dropped = meta["dropped"].as_array().unwrap().len();
        assert_eq!(csv.lines().count(), 1 + 25 - dropped);
        assert!(csv.starts_with("Gamma_eV,V_volts,j_natural,j_norm,P_natural\n"));
    }
    let audit = Command::new(env!("CARGO_BIN_EXE_photocell"))
        .arg("audit")
        .arg(out.join("sweep_N3.csv"))
        .arg(out.join("sweep_N9.csv"))
        .output()
        .unwrap();
    assert!(audit.status.success());
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["subcommand"], "sweep");
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn steady_thermal_config_matches_gibbs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "donor_count = 2\n[rates]\nGamma = 0.0\nchi = 0.0\n[bath]\nT_h = 300.0\n",
    );
    let out = tmp.path().join("run");
    let o = photocell(&["steady", "--config", &cfg], &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("steady_N2.csv")).unwrap();
    let rows: Vec<(f64, f64)> = csv
        .lines()
        .skip(1)
        .map(|l| {
            let c: Vec<&str> = l.split(',').collect();
            (c[2].parse().unwrap(), c[3].parse().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), 5);
    let kt = BOLTZMANN_EV_PER_K * 300.0;
    let z: f64 = rows.iter().map(|(e, _)| (-e / kt).exp()).sum();
    for (e, p) in rows {
        assert!((p - (-e / kt).exp() / z).abs() < 1e-12);
    }
}

#[test]
fn config_errors_exit_with_code_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let bad = write_config(tmp.path(), "[rates]\nGamma = -1.0\n");
    let o = photocell(&["steady", "--config", &bad], &out);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("negative rate"));

    let unknown = write_config(tmp.path(), "[rates]\nGama = 0.1\n");
    let o = photocell(&["steady", "--config", &unknown], &out);
    assert_eq!(o.status.code(), Some(2));

    let o = photocell(&["steady", "--config", "/nonexistent/cell.toml"], &out);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.join("manifest.json").exists());
}

#[test]
fn unreachable_voltage_exits_with_code_4() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = photocell(&["scan", "--donors", "3", "--v-target", "1.75"], &out);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let args = ["mpp", "--donors", "1,4", "--grid", "1e-12:1e2:60"];
    assert!(photocell(&args, &out).status.success());
    let first = fs::read(out.join("mpp.json")).unwrap();
    let manifest = fs::read(out.join("manifest.json")).unwrap();
    assert!(photocell(&args, &out).status.success());
    assert_eq!(first, fs::read(out.join("mpp.json")).unwrap());
    assert_eq!(manifest, fs::read(out.join("manifest.json")).unwrap());
}
