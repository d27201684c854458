//! Table rendering: CSV at full precision for machines, Markdown at two
//! decimals for side-by-side comparison with the published tables.

use std::fmt::Write as _;

use fayherriot::estimators::VarianceEstimate;
use fayherriot::simulation::SimulationSummary;
use fayherriot::{IntervalMethod, IntervalResult};
use nalgebra::DVector;

use crate::ingest::fmt_full;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum OutputFormat {
    Csv,
    Markdown,
}

fn fmt2(v: f64) -> String {
    format!("{v:.2}")
}

pub fn intervals_csv(rows: &[IntervalResult]) -> String {
    let mut out =
        String::from("area_id,method,center,lower,upper,half_width,a_used,q_used,branch\n");
    for r in rows {
        let branch = r
            .branch
            .map(|b| b.to_string())
            .unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.area_id,
            r.method.label(),
            fmt_full(r.center),
            fmt_full(r.lower),
            fmt_full(r.upper),
            fmt_full(r.half_width),
            fmt_full(r.a_used),
            fmt_full(r.q_used),
            branch
        );
    }
    out
}

pub fn intervals_markdown(rows: &[IntervalResult]) -> String {
    let mut out = String::from(
        "| area | method | center | lower | upper | half-width | A used | q | branch |\n\
         |---|---|---|---|---|---|---|---|---|\n",
    );
    for r in rows {
        let branch = r
            .branch
            .map(|b| b.to_string())
            .unwrap_or_else(|| "-".into());
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} | {} | {} | {} |",
            r.area_id,
            r.method.label(),
            fmt2(r.center),
            fmt2(r.lower),
            fmt2(r.upper),
            fmt2(r.half_width),
            fmt2(r.a_used),
            fmt2(r.q_used),
            branch
        );
    }
    out
}

pub fn fit_csv(est: &VarianceEstimate, beta: &DVector<f64>) -> String {
    let mut header = String::from(
        "method,a_hat,converged,truncated,existence_ok,iterations,objective",
    );
    for j in 1..=beta.len() {
        let _ = write!(header, ",beta{j}");
    }
    let mut line = format!(
        "{},{},{},{},{},{},{}",
        est.method,
        fmt_full(est.a_hat),
        est.converged,
        est.truncated,
        est.existence_ok,
        est.iterations,
        fmt_full(est.objective_at_opt)
    );
    for j in 0..beta.len() {
        line.push(',');
        line.push_str(&fmt_full(beta[j]));
    }
    format!("{header}\n{line}\n")
}

pub fn fit_text(est: &VarianceEstimate, beta: &DVector<f64>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "method:      {}", est.method);
    let _ = writeln!(out, "A_hat:       {}", est.a_hat);
    let _ = writeln!(out, "converged:   {}", est.converged);
    let _ = writeln!(out, "truncated:   {}", est.truncated);
    let _ = writeln!(out, "existence:   {}", if est.existence_ok { "ok" } else { "violated" });
    let _ = writeln!(out, "iterations:  {}", est.iterations);
    let _ = writeln!(out, "objective:   {}", est.objective_at_opt);
    let betas: Vec<String> = (0..beta.len()).map(|j| beta[j].to_string()).collect();
    let _ = writeln!(out, "beta_hat:    [{}]", betas.join(", "));
    out
}

pub fn summaries_csv(summaries: &[SimulationSummary]) -> String {
    let mut out = String::from(
        "scenario,a_true,alpha,seed,n_reps,failed_reps,method,cell,d,leverage,b_true,\
         coverage_pct,avg_length,mc_se_pct,reml_truncation_rate,nas_nas0_branch_freq\n",
    );
    for s in summaries {
        let trunc = s
            .reml_truncation_rate
            .map(fmt_full)
            .unwrap_or_default();
        let branch = s
            .nas_branch_nas0_freq
            .map(fmt_full)
            .unwrap_or_default();
        for row in &s.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                s.scenario,
                fmt_full(s.a_true),
                fmt_full(s.alpha),
                s.seed,
                s.n_reps,
                s.failed_reps,
                row.method.label(),
                row.cell,
                fmt_full(row.d),
                fmt_full(row.leverage),
                fmt_full(row.b_true),
                fmt_full(row.coverage_pct),
                fmt_full(row.avg_length),
                fmt_full(row.mc_se_pct),
                trunc,
                branch
            );
        }
    }
    out
}

/// One Markdown table per scenario: rows are reporting cells, columns are
/// methods, each entry `coverage (length)` like the published layout, and
/// a trailing MC-standard-error column for the worst cell.
pub fn summaries_markdown(summaries: &[SimulationSummary]) -> String {
    let mut out = String::new();
    for s in summaries {
        let methods: Vec<IntervalMethod> = {
            let mut seen = Vec::new();
            for row in &s.rows {
                if !seen.contains(&row.method) {
                    seen.push(row.method);
                }
            }
            seen
        };
        let cells: Vec<String> = {
            let mut seen = Vec::new();
            for row in &s.rows {
                if !seen.contains(&row.cell) {
                    seen.push(row.cell.clone());
                }
            }
            seen
        };
        let _ = writeln!(
            out,
            "### {} (A = {:.4}, {} reps, seed {}, {} failed)\n",
            s.scenario, s.a_true, s.n_reps, s.seed, s.failed_reps
        );
        let mut header = String::from("| B | Leverage |");
        let mut rule = String::from("|---|---|");
        for m in &methods {
            let _ = write!(header, " {} |", m.label());
            rule.push_str("---|");
        }
        let _ = writeln!(out, "{header}");
        let _ = writeln!(out, "{rule}");
        for cell in &cells {
            let any = s.rows.iter().find(|r| &r.cell == cell).unwrap();
            let mut line = format!("| {} | {} |", fmt2(any.b_true), fmt2(any.leverage));
            for m in &methods {
                match s.row(*m, cell) {
                    Some(r) => {
                        let _ = write!(
                            line,
                            " {} ({}) |",
                            fmt2(r.coverage_pct),
                            fmt2(r.avg_length)
                        );
                    }
                    None => line.push_str(" - |"),
                }
            }
            let _ = writeln!(out, "{line}");
        }
        let max_se = s
            .rows
            .iter()
            .map(|r| r.mc_se_pct)
            .fold(0.0_f64, f64::max);
        let _ = writeln!(out, "\nmax MC SE: {} pp", fmt2(max_se));
        if let Some(t) = s.reml_truncation_rate {
            let _ = writeln!(out, "REML truncation rate: {}", fmt2(100.0 * t));
        }
        if let Some(b) = s.nas_branch_nas0_freq {
            let _ = writeln!(out, "NAS0-branch frequency: {}", fmt2(100.0 * b));
        }
        out.push('\n');
    }
    out
}
