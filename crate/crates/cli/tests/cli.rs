use std::path::Path;
use std::process::{Command, Output};

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use uwb_pol::sim::Scenario;

const RUN_HEADER: &str = "scenario,attempt,claim_x,claim_y,claim_z,true_x,true_y,true_z,est_x,est_y,est_z,\
error_radius_m,claim_est_dist_m,buffer_m,likelihood,verdict,terminal_state,seed";

fn uwb_pol(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uwb-pol")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn run_writes_two_accepted_rows() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("r.csv");
    let out = uwb_pol(&["run", "--preset", "fig4", "--seed", "7", "--out", p(&csv)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(RUN_HEADER));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2);
    for row in rows {
        assert_eq!(row[15], "accepted");
        assert_eq!(row[16], "AUTHORIZED");
        assert_eq!(row[17], "7");
    }
    assert!(stderr(&out).contains("2/2 authorized"));
}

#[test]
fn run_to_stdout_is_deterministic() {
    let a = uwb_pol(&["run", "--preset", "fig4", "--seed", "7"]);
    let b = uwb_pol(&["run", "--preset", "fig4", "--seed", "7"]);
    assert_eq!(code(&a), 0);
    assert!(!a.stdout.is_empty());
    assert_eq!(a.stdout, b.stdout);
    let c = uwb_pol(&["run", "--preset", "fig4", "--seed", "8"]);
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn csv_floats_round_trip_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("r.csv");
    assert_eq!(code(&uwb_pol(&["run", "--preset", "fig5", "--seed", "3", "--out", p(&csv)])), 0);
    let mut reader = csv::Reader::from_path(&csv).unwrap();
    let header: Vec<String> = reader.headers().unwrap().iter().map(str::to_string).collect();
    assert_eq!(header.join(","), RUN_HEADER);

    let report = uwb_pol::sim::run(&Scenario::preset("fig5").unwrap(), Some(3)).unwrap();
    for (rec, row) in report.attempts.iter().zip(reader.records()) {
        let row = row.unwrap();
        let num = |i: usize| row[i].parse::<f64>().unwrap();
        assert_eq!(num(2).to_bits(), rec.claim.x.to_bits());
        assert_eq!(num(6).to_bits(), rec.true_position.y.to_bits());
        let est = rec.estimate.unwrap();
        assert_eq!(num(8).to_bits(), est.x.to_bits());
        assert_eq!(num(9).to_bits(), est.y.to_bits());
        assert_eq!(num(11).to_bits(), rec.error_radius.unwrap().to_bits());
        assert_eq!(num(12).to_bits(), rec.claim_to_estimate_distance.unwrap().to_bits());
        assert_eq!(num(14).to_bits(), rec.likelihood.unwrap().to_bits());
    }
}

#[test]
fn run_from_scenario_file_and_attack_rows() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = Scenario::preset("fig4").unwrap();
    s.attack = Some(uwb_pol::sim::AttackSpec::WrongIdentity { target_attempt: 0 });
    let path = dir.path().join("s.json");
    std::fs::write(&path, s.to_json()).unwrap();
    let out = uwb_pol(&["run", p(&path)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = String::from_utf8_lossy(&out.stdout);
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(&row[8..13], ["", "", "", "", ""]);
    assert_eq!(row[15], "");
    assert_eq!(row[16], "ABORTED");
    assert!(stderr(&out).contains("identity-mismatch"));
}

#[test]
fn run_usage_errors_exit_2() {
    assert_eq!(code(&uwb_pol(&["run", "missing.json"])), 2);
    assert_eq!(code(&uwb_pol(&["run"])), 2);
    assert_eq!(code(&uwb_pol(&["run", "--preset", "fig9"])), 2);
    assert_eq!(code(&uwb_pol(&["run", "--preset", "fig4", "--seed", "x"])), 2);
    assert_eq!(code(&uwb_pol(&["launch"])), 2);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    let mut s = Scenario::preset("fig4").unwrap();
    s.anchors.truncate(2);
    std::fs::write(&path, s.to_json()).unwrap();
    let out = uwb_pol(&["run", p(&path)]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("anchors"), "{}", stderr(&out));

    std::fs::write(&path, s.to_json().replacen("\"buffer\"", "\"bufer\"", 1)).unwrap();
    let out = uwb_pol(&["run", p(&path)]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("bufer"), "{}", stderr(&out));
}

#[test]
fn run_io_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let nowhere = dir.path().join("no/such/dir/r.csv");
    assert_eq!(code(&uwb_pol(&["run", "--preset", "fig4", "--out", p(&nowhere)])), 3);
    assert_eq!(code(&uwb_pol(&["run", "--preset", "fig4", "--audit", p(&nowhere)])), 3);
}

#[test]
fn sweep_rows_and_orderings() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("s.csv");
    let out = uwb_pol(&[
        "sweep", "--preset", "fig4", "--param", "distance_scale", "--values", "1,4", "--reps", "100", "--out", p(&csv),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let mut reader = csv::Reader::from_path(&csv).unwrap();
    assert_eq!(
        reader.headers().unwrap().iter().collect::<Vec<_>>(),
        ["param", "value", "reps", "acceptance_rate", "median_error_radius_m", "median_claim_est_dist_m"]
    );
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 2);
    let radius = |r: &csv::StringRecord| r[4].parse::<f64>().unwrap();
    assert!(radius(&rows[1]) > radius(&rows[0]));
    assert_eq!(&rows[0][2], "100");

    let out = uwb_pol(&["sweep", "--preset", "fig5", "--param", "buffer", "--values", "0.01,1.0", "--reps", "100"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    let rates: Vec<f64> = text.lines().skip(1).map(|l| l.split(',').nth(3).unwrap().parse().unwrap()).collect();
    assert_eq!(rates.len(), 2);
    assert!(rates[0] <= rates[1]);
}

#[test]
fn sweep_usage_and_io_errors() {
    let base = ["sweep", "--preset", "fig4", "--param", "buffer"];
    let with = |extra: &[&str]| code(&uwb_pol(&[&base[..], extra].concat()));
    assert_eq!(with(&["--values", ""]), 2);
    assert_eq!(with(&["--values", ","]), 2);
    assert_eq!(with(&["--values", "1,abc"]), 2);
    assert_eq!(with(&["--values", "-1"]), 2);
    assert_eq!(with(&["--values", "1", "--reps", "0"]), 2);
    assert_eq!(with(&[]), 2);
    assert_eq!(
        code(&uwb_pol(&["sweep", "--preset", "fig4", "--param", "altitude", "--values", "1"])),
        2
    );
    let dir = tempfile::tempdir().unwrap();
    let nowhere = dir.path().join("no/s.csv");
    assert_eq!(with(&["--values", "1", "--reps", "2", "--out", p(&nowhere)]), 3);
}

fn audit_from_run(dir: &Path) -> (std::path::PathBuf, String) {
    let log = dir.join("audit.log");
    assert_eq!(
        code(&uwb_pol(&["run", "--preset", "fig4", "--seed", "7", "--out", p(&dir.join("r.csv")), "--audit", p(&log)])),
        0
    );
    let text = std::fs::read_to_string(&log).unwrap();
    (log, text)
}

#[test]
fn replay_accepts_an_untouched_log() {
    let dir = tempfile::tempdir().unwrap();
    let (log, _) = audit_from_run(dir.path());
    let out = uwb_pol(&["replay", "--audit", p(&log)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(String::from_utf8_lossy(&out.stdout).contains("4 transactions"));
}

#[test]
fn replay_names_the_tampered_height() {
    let dir = tempfile::tempdir().unwrap();
    let (log, text) = audit_from_run(dir.path());
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let i = lines.iter().position(|l| l.starts_with("3\t")).unwrap();
    let mut fields: Vec<String> = lines[i].split('\t').map(str::to_string).collect();
    let mut payload = STANDARD.decode(&fields[6]).unwrap();
    payload[10] ^= 0x80;
    fields[6] = STANDARD.encode(payload);
    lines[i] = fields.join("\t");
    std::fs::write(&log, lines.join("\n") + "\n").unwrap();

    let out = uwb_pol(&["replay", "--audit", p(&log)]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("height 3 "), "{}", stderr(&out));
}

#[test]
fn replay_reports_truncation() {
    let dir = tempfile::tempdir().unwrap();
    let (log, text) = audit_from_run(dir.path());
    let cut: Vec<&str> = text.lines().take(text.lines().count() - 3).collect();
    std::fs::write(&log, cut.join("\n") + "\n").unwrap();
    let out = uwb_pol(&["replay", "--audit", p(&log)]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("unexpected end"), "{}", stderr(&out));
}

#[test]
fn replay_usage_and_io_errors() {
    assert_eq!(code(&uwb_pol(&["replay"])), 2);
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&uwb_pol(&["replay", "--audit", p(&dir.path().join("none.log"))])), 3);
    assert_eq!(code(&uwb_pol(&["replay", "--audit", p(dir.path())])), 3);
    let garbage = dir.path().join("garbage.log");
    std::fs::write(&garbage, "not an audit log\n").unwrap();
    assert_eq!(code(&uwb_pol(&["replay", "--audit", p(&garbage)])), 1);
}

#[test]
fn help_exits_cleanly() {
    let out = uwb_pol(&["--help"]);
    assert_eq!(code(&out), 0);
    for cmd in ["run", "sweep", "replay"] {
        assert!(String::from_utf8_lossy(&out.stdout).contains(cmd));
    }
}
