use std::io::Write;

use bargewatch_core::bgsub::{BackgroundModel, BgSubConfig};

use super::{emit, file_stem, image_files};
use crate::{BgsubArgs, BgsubMode, CliError};

/// Each frame is compared against the model built from the frames before
/// it, then folded in. The first frame only seeds the model.
pub fn bgsub(args: BgsubArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let defaults = BgSubConfig::default();
    let config = BgSubConfig {
        alpha: args.alpha.unwrap_or(defaults.alpha),
        tau: args.tau.unwrap_or(defaults.tau),
    };
    config.validate()?;
    let files = image_files(&args.input)?;
    if files.is_empty() {
        return Err(CliError::Invalid(format!("no images in {}", args.input.display())));
    }
    std::fs::create_dir_all(&args.out).map_err(|e| CliError::io(&args.out, e))?;

    let mut model = BackgroundModel::new(config.alpha)?;
    let mut written = 0;
    for path in &files {
        let frame = image::open(path).map_err(|e| CliError::io(path, e))?.to_rgb8();
        if model.is_initialized() {
            let stem = file_stem(path);
            if matches!(args.mode, BgsubMode::Normalize | BgsubMode::Both) {
                let target = args.out.join(format!("{stem}_norm.png"));
                model.normalize(&frame)?.save(&target).map_err(|e| CliError::io(&target, e))?;
                written += 1;
            }
            if matches!(args.mode, BgsubMode::Mask | BgsubMode::Both) {
                let target = args.out.join(format!("{stem}_mask.png"));
                model
                    .foreground_mask(&frame, config.tau)?
                    .save(&target)
                    .map_err(|e| CliError::io(&target, e))?;
                written += 1;
            }
        }
        model.update(&frame)?;
    }
    let background = args.out.join("background.png");
    model.mean_image()?.save(&background).map_err(|e| CliError::io(&background, e))?;
    emit(
        out,
        &format!("{} frames, {written} images written to {}", files.len(), args.out.display()),
    )
}
