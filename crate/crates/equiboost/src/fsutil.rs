//! Write-to-temp, rename-on-success file output.

use std::fs;
use std::io::Write;
use std::path::Path;

use tempfile::{NamedTempFile, TempDir};

use crate::error::{AppError, AppResult};

fn parent_of(path: &Path) -> &Path {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> AppResult<()> {
    let dir = parent_of(path);
    fs::create_dir_all(dir).map_err(|e| AppError::io(dir.display(), e))?;
    let mut tmp = NamedTempFile::new_in(dir).map_err(|e| AppError::io(dir.display(), e))?;
    tmp.write_all(bytes).map_err(|e| AppError::io(path.display(), e))?;
    tmp.as_file().sync_all().map_err(|e| AppError::io(path.display(), e))?;
    tmp.persist(path).map_err(|e| AppError::io(path.display(), e.error))?;
    Ok(())
}

/// Fills a fresh sibling directory with `fill`, then swaps it in for `target`.
pub fn replace_dir<F>(target: &Path, fill: F) -> AppResult<()>
where
    F: FnOnce(&Path) -> AppResult<()>,
{
    let parent = parent_of(target);
    fs::create_dir_all(parent).map_err(|e| AppError::io(parent.display(), e))?;
    let staging = TempDir::with_prefix_in(".staging-", parent).map_err(|e| AppError::io(parent.display(), e))?;
    fill(staging.path())?;
    if target.exists() {
        fs::remove_dir_all(target).map_err(|e| AppError::io(target.display(), e))?;
    }
    let staged = staging.keep();
    fs::rename(&staged, target).map_err(|e| AppError::io(target.display(), e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn failed_fill_leaves_target_untouched() {
        let dir = tempfile::tempdir().unwrap();
        let target = dir.path().join("gen");
        fs::create_dir(&target).unwrap();
        fs::write(target.join("keep"), b"x").unwrap();
        let err = replace_dir(&target, |staging| {
            fs::write(staging.join("partial"), b"y").unwrap();
            Err(AppError::Input("boom".into()))
        });
        assert!(err.is_err());
        assert!(target.join("keep").exists());
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn replace_dir_swaps_contents() {
        let dir = tempfile::tempdir().unwrap();
        let target = dir.path().join("gen");
        replace_dir(&target, |s| fs::write(s.join("a"), b"1").map_err(|e| AppError::io("a", e))).unwrap();
        replace_dir(&target, |s| fs::write(s.join("b"), b"2").map_err(|e| AppError::io("b", e))).unwrap();
        assert!(!target.join("a").exists());
        assert!(target.join("b").exists());
    }
}
