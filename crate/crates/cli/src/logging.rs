//! Minimal stderr logger gated by `SICA_LOG={error,info,debug}`.

use std::sync::OnceLock;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Level {
    Error = 0,
    Info = 1,
    Debug = 2,
}

fn threshold() -> Level {
    static LEVEL: OnceLock<Level> = OnceLock::new();
    *LEVEL.get_or_init(|| match std::env::var("SICA_LOG").as_deref() {
        Ok("error") => Level::Error,
        Ok("debug") => Level::Debug,
        _ => Level::Info,
    })
}

pub fn enabled(level: Level) -> bool {
    level <= threshold()
}

pub fn log(level: Level, msg: &str) {
    if enabled(level) {
        let tag = match level {
            Level::Error => "error",
            Level::Info => "info",
            Level::Debug => "debug",
        };
        eprintln!("[sica {tag}] {msg}");
    }
}

macro_rules! info {
    ($($arg:tt)*) => { crate::logging::log(crate::logging::Level::Info, &format!($($arg)*)) };
}

pub(crate) use info;
