#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rrnn_core::neural::LossMode;
use rrnn_core::responsernn::{ModelConfig, ResponseRnn};
use rrnn_core::service::{demo_scenarios, Scenario};
use rrnn_core::synthgen::{make_suite_with, SuiteConfig};
use rrnn_core::trajdata::{StandardizationStats, TypeLabels, WindowConfig};

pub const T_OBS: usize = 8;
pub const T_PRED: usize = 6;

pub const SMALL_CONFIG: &str = r#"
[data]
t_obs = 8
t_pred = 6
[model]
edge_hidden = 8
node_hidden = 8
embedding = 8
attention_dim = 8
[train]
epochs = 2
[synth]
demo_scenarios = 3
[synth.straight]
recordings = 2
duration = 10.0
[synth.crossing]
recordings = 2
duration = 10.0
[synth.approach]
recordings = 5
duration = 30.0
"#;

pub fn write_config(dir: &Path) -> PathBuf {
    let path = dir.join("small.toml");
    std::fs::write(&path, SMALL_CONFIG).unwrap();
    path
}

pub fn rrnn(args: &[&str]) -> i32 {
    rrnn_cli::run(std::iter::once("rrnn").chain(args.iter().copied()))
}

/// An untrained but deterministic checkpoint for the small horizon.
pub fn checkpoint(dir: &Path) -> PathBuf {
    let cfg = ModelConfig::new(2, T_OBS, T_PRED, LossMode::Velocity).with_width(8).with_motion_scale(0.05);
    let stats = StandardizationStats { mean_x: 0.3, mean_y: -0.2, std_x: 1.8, std_y: 1.6 };
    let model = ResponseRnn::new(cfg, stats, 4).unwrap();
    let path = dir.join("model.ckpt");
    let labels = TypeLabels::new(["agent", "robot"]).unwrap();
    model.to_checkpoint(Some(labels), None).save(&path).unwrap();
    path
}

pub fn scenarios() -> Vec<Scenario> {
    let bundle = make_suite_with(5, &SuiteConfig::small()).unwrap();
    demo_scenarios(bundle.get("approach").unwrap(), "approach", &WindowConfig::new(T_OBS, T_PRED), 3, 2.0).unwrap()
}

/// Every file under `dir` with its contents.
pub fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}
