//! Task metrics, the RGB-only evaluation protocol and comparison reports.

mod metrics;
mod protocol;
mod report;

pub use metrics::{average_precision, coco_thresholds, compute_map, compute_miou, Confusion, MapResult, MiouResult};
pub use protocol::{
    evaluate_domains, evaluate_samples, load_inference_model, DomainOutcome, DomainResult, RgbPredictor,
    EVAL_MAX_DETECTIONS, EVAL_SCORE_THRESHOLD,
};
pub use report::{
    build_report, median, read_report, render_csv, render_markdown, report_json, write_report, ReportCell, Report,
    ReportRow, RunResult, REPORT_CSV, REPORT_JSON, REPORT_MD,
};
