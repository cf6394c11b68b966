use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use autostpp::baselines::McStppModel;
use autostpp::evaluate::{SequenceScorer, SpatialModel};
use autostpp::grid::SpatialGrid;
use autostpp::simulate::{split_dataset, SimulationHeader, Split};
use autostpp::stpp::{read_jsonl, write_jsonl, AutoStppModel, EventSequence};
use serde::Serialize;

use crate::fail::{CliError, CliResult};

pub const EVENTS_FILE: &str = "events.jsonl";
pub const PARAMS_FILE: &str = "params.json";

pub fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::data(format!("cannot open {}: {e}", path.display())))
}

pub fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CliError::data(format!("cannot create {}: {e}", parent.display())))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::data(format!("cannot create {}: {e}", path.display())))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    serde_json::from_reader(open(path)?).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::data(e.to_string()))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// A simulated dataset directory: the events of one long sequence and the
/// header describing how they were generated. Only the sequence is kept.
pub struct DataDir {
    pub seq: EventSequence,
}

impl DataDir {
    pub fn write(dir: &Path, header: &SimulationHeader, seq: &EventSequence) -> CliResult<()> {
        let mut w = create(&dir.join(EVENTS_FILE))?;
        write_jsonl(&mut w, std::slice::from_ref(seq))?;
        w.flush()?;
        write_json(&dir.join(PARAMS_FILE), header)
    }

    pub fn read(dir: &Path) -> CliResult<Self> {
        let header: SimulationHeader = read_json(&dir.join(PARAMS_FILE))?;
        let events_path = dir.join(EVENTS_FILE);
        let mut groups = read_jsonl(open(&events_path)?)
            .map_err(|e| CliError::data(format!("{}: {e}", events_path.display())))?;
        if groups.len() > 1 {
            return Err(CliError::data(format!(
                "{} holds {} sequences; expected one long sequence",
                events_path.display(),
                groups.len()
            )));
        }
        let events = groups.pop().map(|g| g.1).unwrap_or_default();
        let seq = EventSequence::new(events, header.domain, header.horizon)
            .map_err(|e| CliError::data(format!("{}: {e}", events_path.display())))?;
        if seq.len() != header.n_events {
            return Err(CliError::data(format!(
                "{} lists {} events but the header records {}",
                events_path.display(),
                seq.len(),
                header.n_events
            )));
        }
        Ok(DataDir { seq })
    }

    pub fn split(&self, windows: usize, ratio: [usize; 3]) -> CliResult<Split> {
        let len = self.seq.horizon() / windows.max(1) as f64;
        Ok(split_dataset(&self.seq, windows, len, (ratio[0], ratio[1], ratio[2]))?)
    }
}

/// Either kind of trained model, told apart by the fields of its file.
pub enum AnyModel {
    Auto(AutoStppModel),
    Mc(McStppModel),
}

impl AnyModel {
    pub fn read(path: &Path) -> CliResult<Self> {
        let value: serde_json::Value = read_json(path)?;
        let parse = |e: serde_json::Error| CliError::data(format!("{}: {e}", path.display()));
        if value.get("prodsum").is_some() {
            Ok(AnyModel::Auto(serde_json::from_value(value).map_err(parse)?))
        } else if value.get("mlp").is_some() {
            Ok(AnyModel::Mc(serde_json::from_value(value).map_err(parse)?))
        } else {
            Err(CliError::data(format!("{} is not a model file", path.display())))
        }
    }

    pub fn scorer(&self) -> &dyn SequenceScorer {
        match self {
            AnyModel::Auto(m) => m,
            AnyModel::Mc(m) => m,
        }
    }

    pub fn spatial(&self) -> &dyn SpatialModel {
        match self {
            AnyModel::Auto(m) => m,
            AnyModel::Mc(m) => m,
        }
    }

    pub fn intensity_grid(&self, t: f64, hist: &EventSequence, grid: &SpatialGrid) -> autostpp::Result<Vec<f64>> {
        match self {
            AnyModel::Auto(m) => m.intensity_grid(t, hist, grid),
            AnyModel::Mc(m) => m.intensity_grid(t, hist, grid),
        }
    }
}
