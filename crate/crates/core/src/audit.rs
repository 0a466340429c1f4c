//! Process-wide record of files opened for reading.
//!
//! Every read in this crate funnels through [`open_read`], so a test can
//! switch the recorder on, drive an entire training run, and then inspect
//! exactly which paths were touched. Used to prove the training path never
//! opens a ground-truth mask.

use std::fs::File;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

static OPENED: Mutex<Option<Vec<PathBuf>>> = Mutex::new(None);

/// Start recording opened paths (clears any previous recording).
pub fn begin() {
    *OPENED.lock().unwrap() = Some(Vec::new());
}

/// Stop recording and return the paths opened since [`begin`].
pub fn take() -> Vec<PathBuf> {
    OPENED.lock().unwrap().take().unwrap_or_default()
}

/// Open a file for reading, recording the path when auditing is active.
pub fn open_read(path: &Path) -> std::io::Result<File> {
    if let Some(v) = OPENED.lock().unwrap().as_mut() {
        v.push(path.to_path_buf());
    }
    File::open(path)
}
