//! The bundled model documents, embedded at compile time.

use std::io;
use std::path::Path;

use crate::model::{ActivityModel, ModelError, ModelLoader};

pub const HLF: &str = include_str!("../../../models/hlf.json");
pub const HLF_INITIAL: &str = include_str!("../../../models/hlf-initial.json");
pub const TPCC: &str = include_str!("../../../models/tpcc.json");
pub const TPCC_HLF_BRIDGE: &str = include_str!("../../../models/tpcc-hlf-bridge.json");

/// Looks a bundled document up by file name.
pub fn document(file_name: &str) -> Option<&'static str> {
    match file_name {
        "hlf.json" => Some(HLF),
        "hlf-initial.json" => Some(HLF_INITIAL),
        "tpcc.json" => Some(TPCC),
        "tpcc-hlf-bridge.json" => Some(TPCC_HLF_BRIDGE),
        _ => None,
    }
}

/// A loader that reads bundled documents instead of the filesystem.
pub fn loader() -> ModelLoader {
    ModelLoader::with_reader(|p: &Path| {
        p.file_name()
            .and_then(|n| n.to_str())
            .and_then(document)
            .map(str::to_string)
            .ok_or_else(|| io::Error::new(io::ErrorKind::NotFound, "not a bundled model"))
    })
}

pub fn load(file_name: &str) -> Result<ActivityModel, ModelError> {
    let mut l = loader();
    l.add_path(file_name)?;
    l.finish()
}

/// The HLF platform model with all 18 measured aspects flagged.
pub fn hlf() -> ActivityModel {
    load("hlf.json").expect("bundled model loads")
}

/// The HLF model as first written, without the commit-history step.
pub fn hlf_initial() -> ActivityModel {
    load("hlf-initial.json").expect("bundled model loads")
}

pub fn tpcc() -> ActivityModel {
    load("tpcc.json").expect("bundled model loads")
}

/// TPC-C workload bridged onto the HLF platform model.
pub fn tpcc_on_hlf() -> ActivityModel {
    load("tpcc-hlf-bridge.json").expect("bundled model loads")
}
