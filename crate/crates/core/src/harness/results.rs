use std::fs;
use std::path::{Path, PathBuf};

use super::{AttackRun, HarnessError};
use crate::circuit::Kind;
use crate::ga::write_trace_csv;
use crate::locking::Scheme;

/// `<root>/<bench>/<scheme>/k<k>/seed<seed>`
pub fn results_dir(root: &Path, bench: Kind, scheme: Scheme, k: usize, seed: u64) -> PathBuf {
    root.join(bench.name()).join(scheme.name()).join(format!("k{k}")).join(format!("seed{seed}"))
}

/// Write `report.json` and one `trace_<label>.csv` per GA pass.
pub fn write_run(dir: &Path, run: &AttackRun) -> Result<(), HarnessError> {
    fs::create_dir_all(dir)?;
    let mut json = serde_json::to_string_pretty(&run.report)?;
    json.push('\n');
    fs::write(dir.join("report.json"), json)?;
    for (label, trace) in &run.traces {
        let file = fs::File::create(dir.join(format!("trace_{label}.csv")))?;
        write_trace_csv(trace, file)?;
    }
    Ok(())
}
