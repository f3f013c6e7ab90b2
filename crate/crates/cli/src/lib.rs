//! Command implementations behind the `sumsr` binary.

pub mod config;
pub mod curves;
pub mod evaluate;
pub mod summarize;
pub mod train;

use std::fmt;
use std::fs;
use std::path::Path;

/// An error carrying an explicit code, e.g. relayed from a child process.
#[derive(Debug)]
pub struct Coded {
    pub code: String,
    pub message: String,
}

impl Coded {
    pub fn new(code: &str, message: &str) -> Self {
        Self {
            code: code.to_string(),
            message: message.to_string(),
        }
    }
}

impl fmt::Display for Coded {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Coded {}

/// Machine-readable code of an error chain.
pub fn error_code(err: &anyhow::Error) -> String {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<sumsr_core::Error>() {
            return e.code().to_string();
        }
        if let Some(c) = cause.downcast_ref::<Coded>() {
            return c.code.clone();
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return "E_IO".to_string();
        }
        if cause.downcast_ref::<serde_json::Error>().is_some() {
            return "E_SCHEMA".to_string();
        }
    }
    "E_CLI".to_string()
}

/// `CODE: message` on one line; causes already quoted by their parent are skipped.
pub fn error_line(err: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if !msg.contains(&text) {
            if !msg.is_empty() {
                msg.push_str(": ");
            }
            msg.push_str(&text);
        }
    }
    format!("{}: {}", error_code(err), msg.replace(['\n', '\r'], " "))
}

/// Writes to stdout; a closed pipe (e.g. `| head`) is not an error.
pub fn emit(text: &str) -> anyhow::Result<()> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| sumsr_core::Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    fs::write(path, bytes).map_err(|e| sumsr_core::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}
