//! Scenario files bundled with the binary.

use std::path::Path;

use anyhow::{Context, Result};
use bridgemon_core::simkit::Scenario;

use crate::exit::Stage;

pub const BUILTIN: [(&str, &str); 5] = [
    ("demo", include_str!("../scenarios/demo.json")),
    ("zero-load", include_str!("../scenarios/zero-load.json")),
    ("girder-a", include_str!("../scenarios/girder-a.json")),
    ("girder-b", include_str!("../scenarios/girder-b.json")),
    ("girder-c", include_str!("../scenarios/girder-c.json")),
];

pub fn builtin(name: &str) -> Option<Scenario> {
    BUILTIN.iter().find(|(n, _)| *n == name).map(|(n, text)| {
        Scenario::from_json_str(text).unwrap_or_else(|e| panic!("bundled scenario {n}: {e}"))
    })
}

/// A path to a scenario JSON file, or the name of a bundled scenario when no
/// such file exists.
pub fn load(arg: &str) -> Result<Scenario> {
    let path = Path::new(arg);
    if !path.exists() {
        if let Some(s) = builtin(arg) {
            return Ok(s);
        }
    }
    Scenario::from_path(path)
        .with_context(|| format!("scenario {arg:?} (bundled: {})", names()))
        .context(Stage::Config)
}

pub fn names() -> String {
    BUILTIN
        .iter()
        .map(|(n, _)| *n)
        .collect::<Vec<_>>()
        .join(", ")
}

/// Copy of `s` shifted by `i` hours with every excitation seed offset by `i`,
/// so repeated runs give distinct, non-colliding sessions.
pub fn variant(s: &Scenario, i: u64) -> Scenario {
    let mut v = s.clone();
    if i == 0 {
        return v;
    }
    v.epoch_ms += i as i64 * 3_600_000;
    for l in &mut v.loads {
        if let Some(d) = &mut l.dynamic {
            d.seed = d.seed.wrapping_add(i);
        }
    }
    if let Some(a) = &mut v.ambient {
        a.seed = a.seed.wrapping_add(i);
    }
    v
}
