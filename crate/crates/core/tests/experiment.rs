use std::path::Path;

use rrnn_core::evalkit::{run_experiment, ExperimentManifest, MetricReport, REPORT_COLUMNS, REPORT_SCHEMA_VERSION};
use rrnn_core::synthgen::{make_suite_with, SuiteConfig};

fn manifest(text: &str) -> ExperimentManifest {
    toml::from_str(text).unwrap()
}

#[test]
fn ctrv_table_and_missing_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    make_suite_with(9, &SuiteConfig::small()).unwrap().save(dir.path()).unwrap();
    let m = manifest(
        r#"
        horizons = [{ t_obs = 12, t_pred = 8 }, { t_obs = 12, t_pred = 12 }]
        [[datasets]]
        name = "straight"
        path = "straight"
        [[datasets]]
        name = "approach"
        path = "approach"
        [[models]]
        name = "CTRV"
        kind = "ctrv"
        [[models]]
        name = "RRNN-Vel"
        kind = "checkpoint"
        path = "models/{dataset}_{t_obs}_{t_pred}.ckpt"
        "#,
    );
    let out = run_experiment(&m, dir.path()).unwrap();
    let report = &out.report;
    assert_eq!(report.schema_version, REPORT_SCHEMA_VERSION);
    assert_eq!(report.rows.len(), 4);
    assert_eq!(report.skipped.len(), 4);
    assert!(report.skipped.iter().all(|s| s.model == "RRNN-Vel" && s.reason.contains("not found")));
    for h in [8, 12] {
        let row = report.row("CTRV", "straight", h).unwrap();
        assert!(row.ade_m.unwrap() < 1e-6, "{row:?}");
        assert!(row.n_windows > 0);
        assert_eq!(row.ms_per_seq, None);
        assert!(report.row("CTRV", "approach", h).unwrap().ade_m.unwrap() > 1e-6);
    }

    // serialized row fields appear in the published order
    let text = serde_json::to_string(&report.rows[0]).unwrap();
    let positions: Vec<usize> = REPORT_COLUMNS.iter().map(|c| text.find(&format!("\"{c}\"")).unwrap()).collect();
    assert!(positions.windows(2).all(|w| w[0] < w[1]), "{text}");
    let back: MetricReport = serde_json::from_str(&report.to_json()).unwrap();
    assert_eq!(&back, report);

    let table = report.render_table();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 9);
    assert!(lines[5..].iter().all(|l| l.starts_with("skipped RRNN-Vel")));
    assert!(lines[0].contains("straight t=8") && lines[0].contains("approach t=12"));
    assert!(lines[3].starts_with("| RRNN-Vel") && lines[3].contains("skipped"));

    assert_eq!(out.traces.len(), 4);
    assert_eq!(run_experiment(&m, dir.path()).unwrap().report, *report);
}

#[test]
fn manifest_rejects_unknown_and_inconsistent_entries() {
    let base = "horizons = [{ t_obs = 12, t_pred = 8 }]\n[[datasets]]\nname = \"d\"\npath = \"d\"\n";
    assert!(toml::from_str::<ExperimentManifest>(&format!("{base}[[models]]\nname = \"m\"\nkind = \"ctrv\"\ncolour = 1\n")).is_err());
    assert!(toml::from_str::<ExperimentManifest>(&format!("{base}[[models]]\nname = \"m\"\nkind = \"checkpoint\"\n")).is_err());
    assert!(toml::from_str::<ExperimentManifest>(&format!("{base}[[models]]\nname = \"m\"\nkind = \"ctrv\"\npath = \"x\"\n")).is_err());
    let m = manifest(&format!("{base}[[models]]\nname = \"m\"\nkind = \"ctrv\"\n"));
    assert!(run_experiment(&m, Path::new("/does/not/exist")).is_err());
}
