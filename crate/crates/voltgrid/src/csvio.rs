//! CSV writers for time series, run summaries and sweep tables.

use std::io::Write;

use voltgrid_core::experiment::RunSummary;
use voltgrid_core::sim::{LogRow, LOG_COLUMNS};

use crate::study::SweepPoint;

pub const SUMMARY_COLUMNS: [&str; 8] = [
    "run_id",
    "n_agents",
    "mode",
    "comm_steps",
    "act_steps",
    "converged",
    "feasible",
    "j_fair",
];

pub const SWEEP_COLUMNS: [&str; 7] = ["gamma", "k", "act_steps", "comm_steps", "converged", "feasible", "diverged"];

pub fn write_time_series<W: Write>(w: W, rows: &[LogRow]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(LOG_COLUMNS)?;
    for r in rows {
        out.write_record([
            r.sim_time_s.to_string(),
            r.agent_id.to_string(),
            r.v_pu.to_string(),
            r.q_kvar.to_string(),
            r.lambda_min.to_string(),
            r.lambda_max.to_string(),
            r.mu_min.to_string(),
            r.mu_max.to_string(),
            r.qhat_kvar.to_string(),
            r.inner_iterations_used.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_summaries<W: Write>(w: W, runs: &[RunSummary]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(SUMMARY_COLUMNS)?;
    for s in runs {
        out.write_record([
            s.run_id.clone(),
            s.n_agents.to_string(),
            s.mode.clone(),
            s.comm_steps.to_string(),
            s.act_steps.to_string(),
            s.converged.to_string(),
            s.feasible.to_string(),
            s.j_fair.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_sweep<W: Write>(w: W, points: &[SweepPoint]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(SWEEP_COLUMNS)?;
    for p in points {
        out.write_record([
            p.gamma.to_string(),
            p.k.to_string(),
            p.summary.act_steps.to_string(),
            p.summary.comm_steps.to_string(),
            p.summary.converged.to_string(),
            p.summary.feasible.to_string(),
            p.summary.diverged.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn time_series_header_is_exact() {
        let mut buf = Vec::new();
        write_time_series(&mut buf, &[]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap().trim_end(),
            "sim_time_s,agent_id,v_pu,q_kvar,lambda_min,lambda_max,mu_min,mu_max,qhat_kvar,inner_iterations_used"
        );
    }

    #[test]
    fn summary_header_is_exact() {
        let mut buf = Vec::new();
        write_summaries(&mut buf, &[]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap().trim_end(),
            "run_id,n_agents,mode,comm_steps,act_steps,converged,feasible,j_fair"
        );
    }
}
