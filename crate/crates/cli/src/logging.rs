//! One JSON object per line on stderr, for library log records and for
//! pipeline events alike.

use std::io::Write;
use std::time::{SystemTime, UNIX_EPOCH};

use log::{Level, LevelFilter, Log, Metadata, Record};
use serde_json::{json, Map, Value};

struct JsonLogger {
    level: LevelFilter,
}

fn timestamp() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

fn emit(mut fields: Map<String, Value>) {
    fields.insert("ts".into(), json!(timestamp()));
    let line = Value::Object(fields).to_string();
    let _ = writeln!(std::io::stderr().lock(), "{line}");
}

impl Log for JsonLogger {
    fn enabled(&self, metadata: &Metadata) -> bool {
        metadata.level() <= self.level
    }

    fn log(&self, record: &Record) {
        if !self.enabled(record.metadata()) {
            return;
        }
        let mut fields = Map::new();
        fields.insert("level".into(), json!(record.level().as_str().to_lowercase()));
        fields.insert("event".into(), json!("log"));
        fields.insert("target".into(), json!(record.target()));
        fields.insert("msg".into(), json!(record.args().to_string()));
        emit(fields);
    }

    fn flush(&self) {}
}

pub fn init(level: LevelFilter) {
    if log::set_boxed_logger(Box::new(JsonLogger { level })).is_ok() {
        log::set_max_level(level);
    }
}

/// Structured pipeline event at info level. `fields` must be a JSON object.
pub fn event(name: &str, fields: Value) {
    if !log::log_enabled!(Level::Info) {
        return;
    }
    let mut map = match fields {
        Value::Object(m) => m,
        other => Map::from_iter([("value".to_string(), other)]),
    };
    map.insert("level".into(), json!("info"));
    map.insert("event".into(), json!(name));
    emit(map);
}
