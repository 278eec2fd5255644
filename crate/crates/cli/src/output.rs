//! Output files. Everything a run produces is staged in memory and committed
//! at the end, so a failed run leaves no half-written artifacts behind.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use hdbandit_core::replay::{ReplayStep, SubsampleReport};
use hdbandit_core::sim_env::VariantCurves;

/// Named files waiting to be written into one directory.
#[derive(Debug, Default)]
pub struct OutputSet {
    files: Vec<(String, Vec<u8>)>,
}

impl OutputSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.files.push((name.into(), bytes));
    }

    pub fn add_json<T: Serialize>(&mut self, name: impl Into<String>, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value).context("cannot serialize JSON output")?;
        bytes.push(b'\n');
        self.add(name, bytes);
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.files.iter().map(|(n, _)| n.as_str())
    }

    /// Writes every file as `.<name>.partial`, then renames them all into
    /// place. On failure, partial files and anything already renamed are
    /// removed.
    pub fn commit(self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
        let staged: Vec<(PathBuf, PathBuf)> =
            self.files.iter().map(|(name, _)| (dir.join(format!(".{name}.partial")), dir.join(name))).collect();
        let cleanup = |upto: usize| {
            for (partial, fin) in &staged[..upto] {
                let _ = fs::remove_file(partial);
                let _ = fs::remove_file(fin);
            }
        };
        for (i, ((_, bytes), (partial, _))) in self.files.iter().zip(&staged).enumerate() {
            if let Err(e) = fs::write(partial, bytes) {
                cleanup(i + 1);
                return Err(e).with_context(|| format!("cannot write {}", partial.display()));
            }
        }
        for (partial, fin) in &staged {
            if let Err(e) = fs::rename(partial, fin) {
                cleanup(staged.len());
                return Err(e).with_context(|| format!("cannot move {} into place", fin.display()));
            }
        }
        Ok(staged.into_iter().map(|(_, f)| f).collect())
    }
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.into_inner().map_err(|e| anyhow::anyhow!("cannot finish CSV: {e}"))
}

pub const CURVE_HEADER: [&str; 5] = ["t", "variant", "mean_instantaneous_regret", "mean_cumulative_regret", "hit_rate"];

/// One row per `(variant, t)`, sorted by variant name and then `t`.
pub fn curves_csv(curves: &[VariantCurves]) -> Result<Vec<u8>> {
    let mut sorted: Vec<&VariantCurves> = curves.iter().collect();
    sorted.sort_by_key(|c| c.variant.name());
    let rows = sorted.into_iter().flat_map(|c| {
        (0..c.mean_cumulative_regret.len()).map(move |i| {
            vec![
                (i + 1).to_string(),
                c.variant.name().to_string(),
                c.mean_instantaneous_regret[i].to_string(),
                c.mean_cumulative_regret[i].to_string(),
                c.hit_rate[i].to_string(),
            ]
        })
    });
    csv_bytes(&CURVE_HEADER, rows)
}

pub fn replay_steps_csv(steps: &[ReplayStep]) -> Result<Vec<u8>> {
    let rows = steps.iter().map(|s| {
        vec![
            s.t.to_string(),
            s.recommended_arm.to_string(),
            s.logged_arm.to_string(),
            u8::from(s.hit).to_string(),
            s.branch.name().to_string(),
        ]
    });
    csv_bytes(&["t", "recommended_arm", "logged_arm", "hit", "branch"], rows)
}

/// `run, variant, seed, hit_rate, vendors` with vendors joined by `;`.
pub fn subsample_csv(reports: &[(String, SubsampleReport)]) -> Result<Vec<u8>> {
    let rows = reports.iter().flat_map(|(variant, report)| {
        report.runs.iter().enumerate().map(move |(i, run)| {
            vec![
                i.to_string(),
                variant.clone(),
                run.seed.to_string(),
                run.outcome.hit_rate_post_init.to_string(),
                run.vendors.join(";"),
            ]
        })
    });
    csv_bytes(&["run", "variant", "seed", "hit_rate", "vendors"], rows)
}

/// `empirical` may be shorter than the grid or absent; missing cells are
/// left empty.
pub fn bounds_csv(grid: &[u64], hd: &[f64], chd: &[f64], empirical: Option<&[Option<f64>]>) -> Result<Vec<u8>> {
    let rows = grid.iter().enumerate().map(|(i, t)| {
        let emp = empirical.and_then(|e| e.get(i).copied().flatten()).map(|v| v.to_string()).unwrap_or_default();
        vec![t.to_string(), hd[i].to_string(), chd[i].to_string(), emp]
    });
    csv_bytes(&["t", "hd_bound", "chd_bound", "empirical_optional"], rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn commit_writes_all_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutputSet::new();
        out.add("a.csv", b"x\n".to_vec());
        out.add_json("b.json", &serde_json::json!({"k": 1})).unwrap();
        let paths = out.commit(dir.path()).unwrap();
        assert_eq!(paths.len(), 2);
        assert_eq!(fs::read(dir.path().join("a.csv")).unwrap(), b"x\n");
        let leftovers: Vec<_> = fs::read_dir(dir.path())
            .unwrap()
            .filter_map(|e| e.ok())
            .filter(|e| e.file_name().to_string_lossy().ends_with(".partial"))
            .collect();
        assert!(leftovers.is_empty());
    }

    #[test]
    fn failed_commit_leaves_nothing() {
        let dir = tempfile::tempdir().unwrap();
        // A directory in the way of the second file makes its rename fail.
        fs::create_dir(dir.path().join("blocked")).unwrap();
        fs::write(dir.path().join("blocked").join("keep"), b"").unwrap();
        let mut out = OutputSet::new();
        out.add("first.csv", b"1\n".to_vec());
        out.add("blocked", b"2\n".to_vec());
        assert!(out.commit(dir.path()).is_err());
        assert!(!dir.path().join("first.csv").exists());
        assert!(!dir.path().join(".first.csv.partial").exists());
        assert!(!dir.path().join(".blocked.partial").exists());
    }

    #[test]
    fn bounds_csv_leaves_missing_empirical_blank() {
        let bytes = bounds_csv(&[400, 500], &[1.0, 2.0], &[0.5, 1.5], Some(&[Some(0.25)])).unwrap();
        assert_eq!(
            String::from_utf8(bytes).unwrap(),
            "t,hd_bound,chd_bound,empirical_optional\n400,1,0.5,0.25\n500,2,1.5,\n"
        );
    }
}
