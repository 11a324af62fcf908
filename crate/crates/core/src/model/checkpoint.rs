use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

/// First line of every checkpoint file.
pub const CHECKPOINT_MAGIC: &str = "PTCKPT1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// A network's configuration, seed and every parameter tensor.
///
/// On disk: the magic line followed by one JSON document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub kind: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub params: Vec<ParamRecord>,
}

impl Checkpoint {
    pub fn new(kind: &str, seed: u64, config: serde_json::Value, store: &ParamStore) -> Self {
        Checkpoint {
            kind: kind.to_string(),
            seed,
            config,
            params: store
                .iter()
                .map(|(name, t)| ParamRecord {
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                    values: t.data().to_vec(),
                })
                .collect(),
        }
    }

    pub fn param_store(&self) -> Result<ParamStore> {
        let mut names = Vec::with_capacity(self.params.len());
        let mut values = Vec::with_capacity(self.params.len());
        for p in &self.params {
            names.push(p.name.clone());
            values.push(
                Tensor::new(p.shape.clone(), p.values.clone())
                    .map_err(|e| Error::Checkpoint(format!("parameter {}: {e}", p.name)))?,
            );
        }
        Ok(ParamStore::from_parts(names, values))
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "{CHECKPOINT_MAGIC}")?;
        serde_json::to_writer(&mut w, self)?;
        writeln!(w)?;
        Ok(())
    }

    pub fn read_from(r: impl Read) -> Result<Self> {
        let mut reader = BufReader::new(r);
        let mut magic = String::new();
        reader.read_line(&mut magic)?;
        if magic.trim_end() != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint(format!(
                "bad magic {:?}, expected {CHECKPOINT_MAGIC}",
                magic.trim_end()
            )));
        }
        Ok(serde_json::from_reader(reader)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(std::fs::File::open(path)?)
    }
}
