//! Training history as CSV: `epoch,loss,val_f1,eta`.

use std::path::Path;

use noisex_core::trainer::EpochRecord;
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Serialize)]
struct Row {
    epoch: usize,
    loss: f64,
    val_f1: f64,
    eta: Option<f64>,
}

pub fn to_csv(history: &[EpochRecord]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in history {
        w.serialize(Row { epoch: r.epoch, loss: r.loss, val_f1: r.val_f1, eta: r.eta }).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

pub fn write(path: impl AsRef<Path>, history: &[EpochRecord]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_csv(history)).map_err(|e| Error::io(path, e))
}
