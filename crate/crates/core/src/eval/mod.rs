mod export;
mod metrics;
mod table;
mod tsne;

pub use export::{export_latents, scatter_svg, ExportSummary, LatentExport, LATENTS_FILE, PLOT_FILE, PROJECTION_FILE};
pub use metrics::{
    evaluate, predict_class, predict_logits, visible_labels, Confusion, EvalReport, EVAL_BATCH,
};
pub use table::{comparison_csv, comparison_table, static_rows, RowSource, TableRow};
pub use tsne::{silhouette, tsne, TsneConfig};
