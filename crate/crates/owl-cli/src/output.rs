//! Result persistence: RFC-4180 CSV with 17-significant-digit numerics,
//! deterministic JSON summaries, and a manifest with per-file checksums.
//! Files are written atomically (temp file, then rename).

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use owl::campaign::{CampaignConfig, CampaignResult};

use crate::CliError;

/// 17 significant digits: round-trips `f64` losslessly.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub struct OutDir {
    root: PathBuf,
    /// `(name, sha256, bytes)` of every data file written.
    pub files: Vec<(String, String, usize)>,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root)
            .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", root.display())))?;
        Ok(Self { root: root.to_path_buf(), files: Vec::new() })
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    /// Atomic write; records the checksum for the manifest.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let final_path = self.root.join(name);
        let tmp_path = self.root.join(format!(".{name}.tmp"));
        fs::write(&tmp_path, bytes)
            .map_err(|e| CliError::Runtime(format!("write {}: {e}", tmp_path.display())))?;
        fs::rename(&tmp_path, &final_path)
            .map_err(|e| CliError::Runtime(format!("rename to {}: {e}", final_path.display())))?;
        let digest = hex::encode(Sha256::digest(bytes));
        self.files.push((name.to_string(), digest, bytes.len()));
        Ok(())
    }
}

fn csv_bytes(rows: Vec<Vec<String>>) -> Result<Vec<u8>, CliError> {
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(Vec::new());
    for row in rows {
        writer
            .write_record(&row)
            .map_err(|e| CliError::Runtime(format!("csv: {e}")))?;
    }
    writer
        .into_inner()
        .map_err(|e| CliError::Runtime(format!("csv: {e}")))
}

/// `errors.csv` column contract: `repeat,step,criterion,error_abs,
/// error_rel,h_1..h_m`.
pub fn errors_csv(
    result: &CampaignResult,
    strategy: &str,
    input_dim: usize,
) -> Result<Vec<u8>, CliError> {
    let mut header = vec![
        "repeat".to_string(),
        "step".to_string(),
        "criterion".to_string(),
        "error_abs".to_string(),
        "error_rel".to_string(),
    ];
    header.extend((1..=input_dim).map(|k| format!("h_{k}")));
    let mut rows = vec![header];
    for (l, rep) in result.repeats.iter().enumerate() {
        for step in 0..rep.errors_abs.len() {
            let mut row = vec![
                l.to_string(),
                step.to_string(),
                strategy.to_string(),
                fmt_f64(rep.errors_abs[step]),
                fmt_f64(rep.errors_rel[step]),
            ];
            row.extend(rep.chosen[step].iter().map(|v| fmt_f64(*v)));
            rows.push(row);
        }
    }
    csv_bytes(rows)
}

/// `samples.csv`: `repeat,step,h_1..h_m,y`.
pub fn samples_csv(result: &CampaignResult, input_dim: usize) -> Result<Vec<u8>, CliError> {
    let mut header = vec!["repeat".to_string(), "step".to_string()];
    header.extend((1..=input_dim).map(|k| format!("h_{k}")));
    header.push("y".to_string());
    let mut rows = vec![header];
    for (l, rep) in result.repeats.iter().enumerate() {
        for step in 0..rep.outputs.len() {
            let mut row = vec![l.to_string(), step.to_string()];
            row.extend(rep.chosen[step].iter().map(|v| fmt_f64(*v)));
            row.push(fmt_f64(rep.outputs[step]));
            rows.push(row);
        }
    }
    csv_bytes(rows)
}

/// Per-step ensemble curve: `step,mean_error,std_error,band_0p2`.
pub fn curve_csv(result: &CampaignResult) -> Result<Vec<u8>, CliError> {
    let mut rows = vec![vec![
        "step".to_string(),
        "mean_error".to_string(),
        "std_error".to_string(),
        "band_0p2".to_string(),
    ]];
    for step in 0..result.mean_error.len() {
        rows.push(vec![
            step.to_string(),
            fmt_f64(result.mean_error[step]),
            fmt_f64(result.std_error[step]),
            fmt_f64(result.band[step]),
        ]);
    }
    csv_bytes(rows)
}

/// Direction statistics: `step,var_h_1..var_h_m`.
pub fn direction_stats_csv(result: &CampaignResult, input_dim: usize) -> Result<Vec<u8>, CliError> {
    let mut header = vec!["step".to_string()];
    header.extend((1..=input_dim).map(|k| format!("var_h_{k}")));
    let mut rows = vec![header];
    for step in 0..result.mean_error.len() {
        let stats = owl::campaign::direction_stats(&result.repeats, step)
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        let mut row = vec![step.to_string()];
        row.extend(stats.iter().map(|v| fmt_f64(*v)));
        rows.push(row);
    }
    csv_bytes(rows)
}

#[derive(Serialize)]
pub struct Provenance {
    pub config_path: String,
    pub overrides: Vec<String>,
    pub tool_version: String,
}

#[derive(Serialize)]
pub struct SummaryResults {
    pub n_steps: usize,
    pub n_repeats: usize,
    pub exact_output_variance: f64,
    pub mean_error: Vec<f64>,
    pub std_error: Vec<f64>,
    pub band_0p2: Vec<f64>,
    pub final_mean_error: f64,
    pub warnings: Vec<String>,
}

#[derive(Serialize)]
pub struct Summary<C: Serialize> {
    pub config: C,
    pub provenance: Provenance,
    pub results: SummaryResults,
}

pub fn collect_warnings(result: &CampaignResult) -> Vec<String> {
    let mut warnings = Vec::new();
    for (l, rep) in result.repeats.iter().enumerate() {
        if !rep.optimizer_fallback_steps.is_empty() {
            warnings.push(format!(
                "repeat {l}: optimizer fell back to the grid at steps {:?}",
                rep.optimizer_fallback_steps
            ));
        }
        if !rep.eb_nonconverged_steps.is_empty() {
            warnings.push(format!(
                "repeat {l}: empirical Bayes kept the previous (alpha, nu) at steps {:?}",
                rep.eb_nonconverged_steps
            ));
        }
    }
    warnings
}

pub fn summary_results(result: &CampaignResult, config: &CampaignConfig) -> SummaryResults {
    SummaryResults {
        n_steps: config.n_steps,
        n_repeats: config.n_repeats,
        exact_output_variance: result.truth.exact_output_variance,
        mean_error: result.mean_error.clone(),
        std_error: result.std_error.clone(),
        band_0p2: result.band.clone(),
        final_mean_error: *result.mean_error.last().unwrap_or(&f64::NAN),
        warnings: collect_warnings(result),
    }
}

pub fn to_json_pretty<T: Serialize>(value: &T) -> Result<Vec<u8>, CliError> {
    let mut bytes = serde_json::to_vec_pretty(value)
        .map_err(|e| CliError::Runtime(format!("json: {e}")))?;
    bytes.push(b'\n');
    Ok(bytes)
}

#[derive(Serialize)]
pub struct ManifestFile {
    pub name: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Serialize)]
pub struct Manifest<C: Serialize> {
    pub tool_version: String,
    pub base_seed: u64,
    pub wall_clock_unix: f64,
    pub config: C,
    pub files: Vec<ManifestFile>,
}

/// Write `manifest.json` last, covering every data file emitted so far.
pub fn write_manifest<C: Serialize>(
    out: &mut OutDir,
    config: &C,
    base_seed: u64,
) -> Result<(), CliError> {
    let manifest = Manifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        base_seed,
        wall_clock_unix: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs_f64())
            .unwrap_or(0.0),
        config,
        files: out
            .files
            .iter()
            .map(|(name, sha256, bytes)| ManifestFile {
                name: name.clone(),
                sha256: sha256.clone(),
                bytes: *bytes,
            })
            .collect(),
    };
    let bytes = to_json_pretty(&manifest)?;
    // The manifest itself is not part of its own checksum list.
    let final_path = out.path().join("manifest.json");
    let tmp_path = out.path().join(".manifest.json.tmp");
    fs::write(&tmp_path, &bytes)
        .map_err(|e| CliError::Runtime(format!("write manifest: {e}")))?;
    fs::rename(&tmp_path, &final_path)
        .map_err(|e| CliError::Runtime(format!("rename manifest: {e}")))?;
    Ok(())
}
