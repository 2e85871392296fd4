use std::fmt::Write as _;

use super::EvalReport;

/// The numbers compared between feature pipelines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportSummary {
    /// Training-mode (dropout active) accuracy at the best epoch.
    pub train_acc: f64,
    pub test_acc: f64,
    pub training_seconds: f64,
    pub best_epoch: usize,
    pub train_bytes: usize,
}

impl From<&EvalReport> for ReportSummary {
    fn from(r: &EvalReport) -> Self {
        let best = r.best();
        Self {
            train_acc: best.map_or(0.0, |e| e.train_acc),
            test_acc: best.map_or(0.0, |e| e.test_acc),
            training_seconds: r.training_seconds,
            best_epoch: r.best_epoch,
            train_bytes: r.train_bytes,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    /// Aligned plain-text table.
    pub text: String,
    /// `metric,vae,mfcc,ratio_mfcc_vae`
    pub csv: String,
    /// `(metric, vae, mfcc, mfcc / vae)` rows.
    pub rows: Vec<(&'static str, f64, f64, f64)>,
}

fn ratio(mfcc: f64, vae: f64) -> f64 {
    if vae == 0.0 {
        if mfcc == 0.0 {
            1.0
        } else {
            f64::NAN
        }
    } else {
        mfcc / vae
    }
}

pub fn compare_summaries(vae: &ReportSummary, mfcc: &ReportSummary) -> Comparison {
    let rows: Vec<(&'static str, f64, f64, f64)> = [
        ("train_accuracy", vae.train_acc, mfcc.train_acc),
        ("test_accuracy", vae.test_acc, mfcc.test_acc),
        ("training_time_s", vae.training_seconds, mfcc.training_seconds),
        ("best_epoch", vae.best_epoch as f64, mfcc.best_epoch as f64),
        ("train_size_bytes", vae.train_bytes as f64, mfcc.train_bytes as f64),
    ]
    .into_iter()
    .map(|(name, v, m)| (name, v, m, ratio(m, v)))
    .collect();

    let mut csv = String::from("metric,vae,mfcc,ratio_mfcc_vae\n");
    for &(name, v, m, r) in &rows {
        match name {
            "best_epoch" | "train_size_bytes" => writeln!(csv, "{name},{v:.0},{m:.0},{r:.6}"),
            _ => writeln!(csv, "{name},{v:.6},{m:.6},{r:.6}"),
        }
        .unwrap();
    }

    let cell = |name: &str, v: f64| match name {
        "train_accuracy" | "test_accuracy" => format!("{v:.4}"),
        "training_time_s" => format!("{v:.1} s"),
        "best_epoch" => format!("{v:.0}"),
        _ => format!("{:.1} MB", v / 1e6),
    };
    let label = |name: &str| match name {
        "train_accuracy" => "Train accuracy",
        "test_accuracy" => "Test accuracy",
        "training_time_s" => "MLP training time*",
        "best_epoch" => "Best epoch",
        _ => "Train size",
    };
    let mut text = format!("{:<20}{:>14}{:>14}{:>12}\n", "", "VAE", "MFCC", "MFCC/VAE");
    for &(name, v, m, r) in &rows {
        writeln!(text, "{:<20}{:>14}{:>14}{:>12.3}", label(name), cell(name, v), cell(name, m), r).unwrap();
    }
    text.push_str("* wall-clock, machine-dependent\n");
    Comparison { text, csv, rows }
}

pub fn compare_report(vae: &EvalReport, mfcc: &EvalReport) -> Comparison {
    compare_summaries(&vae.into(), &mfcc.into())
}
