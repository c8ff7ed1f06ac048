//! Datasets, synthetic lanes, oracle scores, file formats and rendering.

mod dataset;
mod oracle;
mod render;
mod serial;
mod synth;

pub use dataset::{
    load_csv, load_culane_dir, load_tusimple_jsonl, parse_csv, parse_culane_lines,
    parse_tusimple_jsonl, save_tusimple_jsonl, write_csv, write_tusimple_jsonl, DatasetRecord,
    LoadWarnings, LoadedDataset, MISSING_X,
};
pub use oracle::{oracle_scores, OracleConfig, OracleFeatures, OracleOutput};
pub use render::{render_svg, svg_string, Layer, LayerStyle};
pub use serial::{
    from_versioned_json, load_basis, load_candidates, load_json, load_jsonl, save_basis,
    save_candidates, save_json, save_jsonl, to_versioned_json, BasisFile, CandidateFile,
    RelationFile, ScoresFile, SCHEMA_VERSION,
};
pub use synth::{
    default_grid, generate_synthetic, generate_synthetic_with_shapes, Camera, CircleBranch,
    FamilyWeights, LaneShape, SyntheticRecord, SyntheticSpec,
};
