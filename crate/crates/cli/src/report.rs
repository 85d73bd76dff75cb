//! CSV row formatting shared by the run and train reports.

use gscoop::classes::{class_name, NUM_SEMANTIC};
use gscoop::comms::VolumeReport;
use gscoop::metrics::EvalReport;
use gscoop::sim::Mode;

/// Fixed-precision number, or an empty field when absent.
pub fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map(|x| format!("{x:.digits$}")).unwrap_or_default()
}

pub fn report_header() -> String {
    let mut cols = vec![
        "mode".to_string(),
        "iou".into(),
        "miou".into(),
        "bev_vehicle".into(),
        "bev_road".into(),
        "bev_others".into(),
        "messages".into(),
        "gaussians".into(),
        "bytes_sent".into(),
        "messages_rejected".into(),
        "mean_bytes_per_message".into(),
    ];
    cols.extend((0..NUM_SEMANTIC).map(|k| format!("iou_{}", class_name(k))));
    cols.join(",")
}

pub fn report_fields(mode: Mode, r: &EvalReport, v: &VolumeReport, rejected: u64) -> String {
    let mut f = vec![
        mode.name().to_string(),
        fmt_opt(r.iou, 6),
        fmt_opt(r.miou, 6),
        fmt_opt(r.bev_vehicle, 6),
        fmt_opt(r.bev_road, 6),
        fmt_opt(r.bev_others, 6),
        v.messages_sent.to_string(),
        v.gaussians_sent.to_string(),
        v.bytes_sent.to_string(),
        rejected.to_string(),
        format!("{:.1}", v.mean_bytes_per_message),
    ];
    f.extend(r.per_class_iou.iter().map(|x| fmt_opt(*x, 6)));
    f.join(",")
}
