//! Append-only newline-delimited log of every exchange.

use std::fs::OpenOptions;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc::{self, Sender};
use std::sync::Mutex;
use std::thread::JoinHandle;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::parse::AnswerStatus;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawLogEntry {
    pub run_id: String,
    pub item_index: usize,
    pub attempt: u32,
    pub prompt: String,
    /// Model output exactly as received; `None` when the exchange failed.
    pub raw_response: Option<String>,
    pub parsed: Option<AnswerStatus>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub sent_at: DateTime<Utc>,
    pub received_at: DateTime<Utc>,
}

pub trait LogSink: Send + Sync {
    fn append(&self, entry: RawLogEntry) -> io::Result<()>;
    fn flush(&self) -> io::Result<()>;
}

#[derive(Debug, Default)]
pub struct MemoryLog {
    entries: Mutex<Vec<RawLogEntry>>,
}

impl MemoryLog {
    pub fn entries(&self) -> Vec<RawLogEntry> {
        self.entries.lock().unwrap().clone()
    }
}

impl LogSink for MemoryLog {
    fn append(&self, entry: RawLogEntry) -> io::Result<()> {
        self.entries.lock().unwrap().push(entry);
        Ok(())
    }

    fn flush(&self) -> io::Result<()> {
        Ok(())
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct NullLog;

impl LogSink for NullLog {
    fn append(&self, _: RawLogEntry) -> io::Result<()> {
        Ok(())
    }

    fn flush(&self) -> io::Result<()> {
        Ok(())
    }
}

enum Msg {
    Line(String),
    Flush(mpsc::Sender<io::Result<()>>),
}

/// File-backed log. Callers on any thread enqueue lines; one writer thread
/// owns the file, so lines never interleave.
pub struct FileLog {
    path: PathBuf,
    tx: Mutex<Option<Sender<Msg>>>,
    worker: Mutex<Option<JoinHandle<io::Result<()>>>>,
}

impl FileLog {
    pub fn open(path: impl AsRef<Path>) -> io::Result<Self> {
        let path = path.as_ref().to_path_buf();
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        let (tx, rx) = mpsc::channel::<Msg>();
        let worker = std::thread::spawn(move || -> io::Result<()> {
            let mut out = BufWriter::new(file);
            for msg in rx {
                match msg {
                    Msg::Line(line) => {
                        out.write_all(line.as_bytes())?;
                        out.write_all(b"\n")?;
                    }
                    Msg::Flush(reply) => {
                        let r = out.flush().and_then(|_| out.get_ref().sync_data());
                        let _ = reply.send(r);
                    }
                }
            }
            out.flush()
        });
        Ok(Self {
            path,
            tx: Mutex::new(Some(tx)),
            worker: Mutex::new(Some(worker)),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn send(&self, msg: Msg) -> io::Result<()> {
        let guard = self.tx.lock().unwrap();
        guard
            .as_ref()
            .ok_or_else(|| io::Error::other("log closed"))?
            .send(msg)
            .map_err(|_| io::Error::other("log writer stopped"))
    }

    pub fn close(&self) -> io::Result<()> {
        self.tx.lock().unwrap().take();
        match self.worker.lock().unwrap().take() {
            Some(h) => h.join().map_err(|_| io::Error::other("log writer panicked"))?,
            None => Ok(()),
        }
    }

    pub fn read_all(path: impl AsRef<Path>) -> io::Result<Vec<RawLogEntry>> {
        let text = std::fs::read_to_string(path)?;
        text.lines()
            .filter(|l| !l.is_empty())
            .map(|l| serde_json::from_str(l).map_err(io::Error::other))
            .collect()
    }
}

impl LogSink for FileLog {
    fn append(&self, entry: RawLogEntry) -> io::Result<()> {
        let line = serde_json::to_string(&entry).map_err(io::Error::other)?;
        self.send(Msg::Line(line))
    }

    fn flush(&self) -> io::Result<()> {
        let (tx, rx) = mpsc::channel();
        self.send(Msg::Flush(tx))?;
        rx.recv().map_err(|_| io::Error::other("log writer stopped"))?
    }
}

impl Drop for FileLog {
    fn drop(&mut self) {
        let _ = self.close();
    }
}
