use std::sync::atomic::{AtomicUsize, Ordering};

use rrnn_core::synthgen::{generate, make_suite_with, ScenarioSpec, SuiteConfig, SUITE_NAMES};
use rrnn_core::trajdata::{Dataset, StandardizationStats, WindowConfig, DEFAULT_TARGET_RATE};

struct CountWarnings;

static WARNINGS: AtomicUsize = AtomicUsize::new(0);

impl log::Log for CountWarnings {
    fn enabled(&self, m: &log::Metadata) -> bool {
        m.level() <= log::Level::Warn
    }
    fn log(&self, r: &log::Record) {
        if self.enabled(r.metadata()) {
            eprintln!("{}", r.args());
            WARNINGS.fetch_add(1, Ordering::SeqCst);
        }
    }
    fn flush(&self) {}
}

#[test]
fn saved_suites_reload_without_warnings() {
    log::set_logger(&CountWarnings).unwrap();
    log::set_max_level(log::LevelFilter::Warn);
    let dir = tempfile::tempdir().unwrap();
    let bundle = make_suite_with(4, &SuiteConfig::small()).unwrap();
    bundle.save(dir.path()).unwrap();
    let cfg = WindowConfig::new(12, 8);
    for name in SUITE_NAMES {
        let sub = dir.path().join(name);
        let loaded = Dataset::load(&sub, DEFAULT_TARGET_RATE).unwrap();
        let original = bundle.get(name).unwrap();
        assert_eq!(loaded.labels, original.labels);
        assert_eq!(loaded.folds, original.folds);
        let all: Vec<usize> = (0..loaded.folds.folds).collect();
        let stats = StandardizationStats::IDENTITY;
        let (a, _) = loaded.windows(&all, &stats, &cfg).unwrap();
        let (b, _) = original.windows(&all, &stats, &cfg).unwrap();
        assert_eq!(a.len(), b.len());
        assert!(!a.is_empty());
        for (wa, wb) in a.iter().zip(&b) {
            assert_eq!(wa.id, wb.id);
            for (x, y) in wa.agents.iter().zip(&wb.agents) {
                for (p, q) in x.positions.iter().zip(&y.positions) {
                    match (p, q) {
                        (Some(p), Some(q)) => assert!((p[0] - q[0]).abs() < 1e-9 && (p[1] - q[1]).abs() < 1e-9),
                        (None, None) => {}
                        _ => panic!("presence changed in {}", wa.id),
                    }
                }
            }
        }

        // scenario files regenerate the same recordings
        let (_, _, specs) = bundle.suites.iter().find(|(n, ..)| n == name).unwrap();
        let text = std::fs::read_to_string(sub.join(format!("{}.scenario.toml", specs[0].name))).unwrap();
        let spec = ScenarioSpec::from_toml(&text).unwrap();
        assert_eq!(&spec, &specs[0]);
        assert_eq!(generate(&spec, 1).unwrap(), generate(&specs[0], 1).unwrap());
    }
    assert_eq!(WARNINGS.load(Ordering::SeqCst), 0);
}
