//! MOT-style text tables and line-delimited detection records.

mod detections;
mod mot;

use std::path::Path;

use crate::error::{Error, Result};

pub use detections::{
    format_detections, parse_detections, read_detections, write_detections, DetectionSet, DETECTIONS_FORMAT,
    DETECTIONS_VERSION,
};
pub use mot::{format_mot, mot_to_objects, objects_to_mot, parse_mot, read_mot, tracks_to_mot, write_mot, MotRecord};

pub(crate) fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}
