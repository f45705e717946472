//! CSV renderings of traces and reports. Numbers use Rust's shortest
//! round-trip formatting, so equal values always print identically.

use std::fmt::Write as _;

use warpnorm_core::train::{AblationReport, StprOutcome, TrainTrace};

pub fn trace_csv(trace: &TrainTrace) -> String {
    let mut s = String::from("step,adv,recon,style,content,total,heldout_l1\n");
    for r in &trace.rows {
        let t = &r.terms;
        let held = r.heldout_l1.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.step, t.adv, t.recon, t.style, t.content, r.total, held
        );
    }
    s
}

pub fn ablation_csv(report: &AblationReport) -> String {
    let mut s = String::from("mode,task,split,variant,initial_l1,final_l1\n");
    for r in &report.rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.mode.name(),
            r.task.name(),
            r.split.name(),
            r.variant,
            r.initial_l1,
            r.final_l1
        );
    }
    s
}

pub fn stpr_csv(out: &StprOutcome) -> String {
    let mut s = String::from("metric,before,after\n");
    let _ = writeln!(
        s,
        "target_l1,{},{}",
        out.before.target_l1, out.after.target_l1
    );
    let _ = writeln!(
        s,
        "nontarget_l1,{},{}",
        out.before.nontarget_l1, out.after.nontarget_l1
    );
    let _ = writeln!(
        s,
        "pose_transfer_l1,{},{}",
        out.heldout_before, out.heldout_after
    );
    s
}

/// Rows of a CSV as string fields, header excluded.
pub fn parse_csv(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}
