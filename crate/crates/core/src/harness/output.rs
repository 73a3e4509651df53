//! Files written by a study run.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::imaging::TdMap;

use super::studies::{RayProfile, StudyOutcome};

/// CSV text of a map: header `x,y,z,T,inside_B`, one row per sample in grid order.
pub fn td_map_csv(map: &TdMap) -> String {
    let mut s = String::from("x,y,z,T,inside_B\n");
    for ((p, t), inside) in map.points.iter().zip(&map.values).zip(&map.inside) {
        let _ = writeln!(s, "{},{},{},{},{}", p.x, p.y, p.z, t, u8::from(*inside));
    }
    s
}

/// CSV text of a ray profile: header `dist,absT`.
pub fn ray_csv(ray: &RayProfile) -> String {
    let mut s = String::from("dist,absT\n");
    for (d, t) in ray.dist.iter().zip(&ray.abs_t) {
        let _ = writeln!(s, "{d},{t}");
    }
    s
}

fn write(path: &Path, text: &str) -> Result<PathBuf> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
    Ok(path.to_path_buf())
}

/// Writes `report.json`, `td_map.csv` and one CSV per ray into `dir`. The wall-clock time
/// goes to `timing.json` so that the other files are reproducible byte for byte.
pub fn emit_outputs(outcome: &StudyOutcome, dir: &Path, wall_seconds: Option<f64>) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = vec![write(&dir.join("report.json"), &outcome.report.to_json())?];
    if let Some(map) = &outcome.map {
        written.push(write(&dir.join("td_map.csv"), &td_map_csv(map))?);
    }
    for ray in &outcome.rays {
        written.push(write(&dir.join(format!("{}.csv", ray.name)), &ray_csv(ray))?);
    }
    if let Some(t) = wall_seconds {
        let text = format!("{{\n  \"wall_clock_seconds\": {t}\n}}\n");
        written.push(write(&dir.join("timing.json"), &text)?);
    }
    Ok(written)
}
