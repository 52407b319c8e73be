use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use knn_ner::search::{load_index, ApproxIndex};
use knn_ner::{load_datastore, read_dump, Datastore, EmbeddingDump};
use tempfile::NamedTempFile;

use crate::failure::{CmdResult, Failure};

/// Fails with a usage error unless every path names an existing file.
pub fn require_inputs<'a>(paths: impl IntoIterator<Item = &'a Path>) -> CmdResult {
    for path in paths {
        if !path.is_file() {
            return Err(Failure::NoSuchFile(path.to_path_buf()));
        }
    }
    Ok(())
}

fn open(path: &Path) -> CmdResult<BufReader<File>> {
    match File::open(path) {
        Ok(f) => Ok(BufReader::new(f)),
        Err(e) if e.kind() == io::ErrorKind::NotFound => {
            Err(Failure::NoSuchFile(path.to_path_buf()))
        }
        Err(source) => Err(Failure::Read {
            path: path.to_path_buf(),
            source: knn_ner::Error::Io { offset: 0, source },
        }),
    }
}

fn read_with<T>(
    path: &Path,
    f: impl FnOnce(BufReader<File>) -> knn_ner::Result<T>,
) -> CmdResult<T> {
    f(open(path)?).map_err(|source| Failure::Read {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_dump_file(path: &Path) -> CmdResult<EmbeddingDump> {
    log::info!("reading dump {}", path.display());
    read_with(path, read_dump)
}

pub fn read_store_file(path: &Path) -> CmdResult<Datastore> {
    log::info!("reading datastore {}", path.display());
    read_with(path, load_datastore)
}

pub fn read_index_file(path: &Path, store: Arc<Datastore>) -> CmdResult<ApproxIndex> {
    log::info!("reading index {}", path.display());
    read_with(path, |r| load_index(r, store))
}

/// Writes through a temporary file in the destination directory and renames
/// it into place, so a failed command never leaves a partial output.
pub fn write_atomic<F>(path: &Path, body: F) -> CmdResult
where
    F: FnOnce(&mut BufWriter<&mut NamedTempFile>) -> CmdResult,
{
    let write_err = |source| Failure::Write {
        path: path.to_path_buf(),
        source,
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let mut tmp = NamedTempFile::new_in(&dir).map_err(write_err)?;
    {
        let mut w = BufWriter::new(&mut tmp);
        body(&mut w)?;
        w.flush().map_err(write_err)?;
    }
    tmp.persist(path).map_err(|e| write_err(e.error))?;
    Ok(())
}

/// Adapts a core writer error, reporting I/O failures against `path`.
pub fn write_failure(path: &Path) -> impl Fn(knn_ner::Error) -> Failure + '_ {
    move |e| match e {
        knn_ner::Error::Io { source, .. } => Failure::Write {
            path: path.to_path_buf(),
            source,
        },
        other => Failure::Core(other),
    }
}

pub fn io_failure(path: &Path) -> impl Fn(io::Error) -> Failure + '_ {
    move |source| Failure::Write {
        path: path.to_path_buf(),
        source,
    }
}
