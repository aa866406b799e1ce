use std::path::PathBuf;
use std::process::Command;

use rand::Rng;

use super::{GeneratorSpec, MetadataMode};
use crate::data::{derive_metadata, load_csv, save_csv, Dataset, RangePolicy, SchemaMetadata};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct ExternalOptions {
    /// Keep per-invocation work directories instead of deleting them.
    pub keep_workdirs: bool,
    /// Parent for work directories; the system temp dir when unset.
    pub workdir_root: Option<PathBuf>,
}

/// Runs an external generator as `sh -c <external_cmd>`.
///
/// The command template may use `{train_csv}`, `{schema_json}`, `{out_csv}`, `{m}` and
/// `{seed}`. The output CSV is parsed against the training schema with out-of-range
/// values rejected, then truncated or cycled to exactly `m` rows.
pub fn fit_sample_external<R: Rng + ?Sized>(
    spec: &GeneratorSpec,
    data: &Dataset,
    metadata: &SchemaMetadata,
    m: usize,
    rng: &mut R,
    options: &ExternalOptions,
) -> Result<Dataset> {
    let template = spec
        .external_cmd
        .as_deref()
        .ok_or_else(|| Error::InvalidConfig("External generator requires external_cmd".into()))?;
    let metadata = match spec.metadata_mode {
        MetadataMode::Provided => metadata.clone(),
        MetadataMode::Learned => derive_metadata(data, spec.metadata_pad)?,
    };

    let mut builder = tempfile::Builder::new();
    builder.prefix("privgain-ext-");
    let workdir = match &options.workdir_root {
        Some(root) => builder.tempdir_in(root),
        None => builder.tempdir(),
    }
    .map_err(|e| Error::io("<workdir>", e))?;
    let train_csv = workdir.path().join("train.csv");
    let schema_json = workdir.path().join("schema.json");
    let out_csv = workdir.path().join("out.csv");
    save_csv(data, &train_csv)?;
    std::fs::write(&schema_json, metadata.to_json_string()).map_err(|e| Error::io(&schema_json, e))?;

    let seed: u64 = rng.gen();
    let cmd = template
        .replace("{train_csv}", &train_csv.to_string_lossy())
        .replace("{schema_json}", &schema_json.to_string_lossy())
        .replace("{out_csv}", &out_csv.to_string_lossy())
        .replace("{m}", &m.to_string())
        .replace("{seed}", &seed.to_string());
    let output = Command::new("sh")
        .arg("-c")
        .arg(&cmd)
        .current_dir(workdir.path())
        .output()
        .map_err(|e| Error::io("sh", e))?;
    if !output.status.success() {
        return Err(Error::ExternalProcessFailed {
            code: output.status.code(),
            stderr: String::from_utf8_lossy(&output.stderr).trim().to_string(),
        });
    }

    let result = load_csv(&out_csv, data.schema_arc().clone(), RangePolicy::Reject).map_err(|e| match e {
        Error::Io { .. } => Error::OutputSchemaMismatch("generator produced no output file".into()),
        other => Error::OutputSchemaMismatch(other.to_string()),
    });
    if options.keep_workdirs {
        let kept = workdir.keep();
        log::info!("kept external generator workdir {}", kept.display());
    }
    let produced = result?;
    if produced.is_empty() {
        return Err(Error::OutputSchemaMismatch("generator produced no records".into()));
    }
    let records = produced.records().iter().cycle().take(m).cloned().collect();
    Ok(produced.with_records(records))
}
