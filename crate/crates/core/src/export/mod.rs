//! Persistence: the `SAIW` weight container, PGM attention images and CSV
//! metric reports.

mod container;
mod pgm;
mod report;

pub use container::{
    decode_container, encode_container, parse_header, read_container, write_container, DType, Header, HeadMeta,
    Metadata, TensorEntry, ALIGNMENT, FORMAT_VERSION, MAGIC,
};
pub use pgm::{encode_pgm, render_attention_pgm, Zoom};
pub use report::{write_fidelity_csv, FidelityRow};
