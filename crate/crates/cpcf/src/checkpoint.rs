//! Model checkpoint files.
//!
//! Little-endian binary:
//!
//! | offset | type     | field                                      |
//! |--------|----------|--------------------------------------------|
//! | 0      | [u8; 4]  | magic `CPCF`                               |
//! | 4      | u32      | format version (1)                         |
//! | 8      | u32      | input_dim                                  |
//! | 12     | u32      | layer count (3)                            |
//! | 16     | u32 × 3  | layer output widths: hidden1, hidden2, 10  |
//! | 28     | f64 …    | W1, b1, W2, b2, W3, b3, row-major          |

use std::fs;
use std::path::Path;

use cpcf_core::mlp::MlpModel;
use cpcf_core::optim::Optimizer;

use crate::{CliError, Result};

pub fn save(model: &MlpModel, path: &Path) -> Result<()> {
    fs::write(path, model.to_bytes()).map_err(|e| CliError::io(path, e))
}

/// Loads parameters; the optimizer starts fresh.
pub fn load(path: &Path, optimizer: Optimizer) -> Result<MlpModel> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    MlpModel::from_bytes(&bytes, optimizer).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}
