//! Context-aware, preference-learned speech enhancement.
//!
//! A multi-task network predicts the segmental SNR and acoustic scene of a
//! noisy utterance; an up/down/no-change elicitation loop learns a linear
//! noise-floor preference per scene; the floor becomes the lower asymptote
//! of a generalised-logistic mask activation that scales a ratio-mask
//! enhancer.
//!
//! Module map:
//!
//! - [`signal`]: WAV I/O, STFT, SNR mixing, segmental SNR, ratio masks
//! - [`scenes`]: procedural scene noise and speech surrogates, datasets
//! - [`mtlnet`]: features, the CNN-BiLSTM-attention network and its trainer
//! - [`preference`]: elicitation sessions, preference fitting, simulated users
//! - [`control`]: Richards-curve mask scaling and the enhancement conditions
//! - [`eval`]: correlation metrics, confusion matrices, t-SNE, silhouettes

pub mod signal;
pub mod scenes;
pub mod mtlnet;
pub mod preference;
pub mod control;
pub mod eval;

use std::io::Write;
use std::path::Path;

/// Writes `bytes` to a sibling temporary file, syncs it and renames it over
/// `path`, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let name = path.file_name().ok_or_else(|| std::io::Error::other("path has no file name"))?;
    let mut tmp_name = name.to_os_string();
    tmp_name.push(format!(".{}.tmp", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    result
}
