use std::io::Write;

use bargewatch_core::augment::{self, AugmentConfig, AugmentError};
use bargewatch_core::dataset::{DatasetManifest, SplitAssignment, SplitRatios, TestChildPolicy};
use bargewatch_core::evalsuite::transferability_protocol;
use serde_json::json;

use super::{emit, load_manifest};
use crate::{AugmentArgs, CliError, Format, SplitArgs};

pub fn split(args: SplitArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let manifest = load_manifest(&args.input)?;
    let assignment = match &args.holdout {
        Some(location) => {
            let (train, test) = transferability_protocol(&manifest, location)?;
            SplitAssignment {
                train: train.records.into_iter().map(|r| r.id).collect(),
                val: Vec::new(),
                test: test.records.into_iter().map(|r| r.id).collect(),
                warnings: Vec::new(),
            }
        }
        None => {
            let ratios: SplitRatios = args.ratios.as_deref().map(str::parse).transpose()?.unwrap_or_default();
            let policy: TestChildPolicy = args
                .test_children
                .as_deref()
                .map(str::parse)
                .transpose()
                .map_err(CliError::Invalid)?
                .unwrap_or_default();
            bargewatch_core::dataset::stratified_group_split(&manifest, &ratios, args.seed, policy)?
        }
    };
    assignment.write_files(&args.out)?;
    let [train, val, test] = assignment.sizes();
    let text = match args.format {
        Format::Table => format!(
            "train {train}\nval   {val}\ntest  {test}\nwritten to {}",
            args.out.display()
        ),
        Format::Json => json!({
            "train": train,
            "val": val,
            "test": test,
            "holdout": args.holdout,
            "warnings": assignment.warnings,
        })
        .to_string(),
    };
    emit(out, &text)
}

pub fn augment(args: AugmentArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let manifest = load_manifest(&args.input)?;
    let text = std::fs::read_to_string(&args.config).map_err(|e| CliError::io(&args.config, e))?;
    let mut config: AugmentConfig = toml::from_str(&text)
        .map_err(|e| AugmentError::InvalidSpec(format!("{}: {e}", args.config.display())))?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let created = augment::pipeline(&config, &manifest, &args.out)?;
    let count = created.len();
    let mut records: Vec<_> = manifest.originals().cloned().collect();
    records.extend(created);
    let combined = DatasetManifest::new(records, manifest.label_map.clone())?;
    let path = args.out.join("manifest.jsonl");
    combined.write_manifest(&path)?;
    emit(out, &format!("{count} augmented records; manifest written to {}", path.display()))
}
