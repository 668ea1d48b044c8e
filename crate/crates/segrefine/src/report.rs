//! Text serialization of quality and training reports.

use std::fmt::Write as _;

use segrefine_core::metrics::QualityReport;
use segrefine_core::train::TrainingReport;

fn db(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v:.4}")
    }
}

/// One record per frame, per-segment summaries, then a summary footer.
pub fn format_quality_report(report: &QualityReport) -> String {
    let mut out = String::new();
    out.push_str("# frame psnr_degraded psnr_refined ms_ssim_degraded ms_ssim_refined\n");
    for f in &report.frames {
        let _ = writeln!(
            out,
            "{} {} {} {:.6} {:.6}",
            f.index,
            db(f.psnr_degraded),
            db(f.psnr_refined),
            f.ms_ssim_degraded,
            f.ms_ssim_refined
        );
    }
    if !report.segments.is_empty() {
        out.push_str("# segment start end mean_psnr_degraded mean_psnr_refined\n");
        for s in &report.segments {
            let _ = writeln!(
                out,
                "{} {} {} {} {}",
                s.index,
                s.start_frame,
                s.end_frame,
                db(s.mean_psnr_degraded),
                db(s.mean_psnr_refined)
            );
        }
    }
    out.push_str("# summary\n");
    let _ = writeln!(out, "mean_psnr_degraded_db={}", db(report.mean_psnr_degraded));
    let _ = writeln!(out, "mean_psnr_refined_db={}", db(report.mean_psnr_refined));
    let _ = writeln!(out, "mean_ms_ssim_degraded={:.6}", report.mean_ms_ssim_degraded);
    let _ = writeln!(out, "mean_ms_ssim_refined={:.6}", report.mean_ms_ssim_refined);
    let _ = writeln!(out, "sidecar_bpp={:.6}", report.sidecar_bpp);
    out
}

/// Machine-readable training report, one line per segment.
pub fn format_training_reports(reports: &[(usize, usize, usize, TrainingReport)]) -> String {
    let mut out = String::new();
    for (index, start, end, r) in reports {
        let final_loss = r.step_losses.last().copied().unwrap_or(0.0);
        let _ = writeln!(
            out,
            "segment={index} start={start} end={end} steps={} final_loss={final_loss:.8} \
             pre_psnr_db={} post_psnr_db={} wall_time_secs={:.3}",
            r.steps,
            db(r.pre_psnr_db),
            db(r.post_psnr_db),
            r.wall_time_secs
        );
    }
    out
}
