use std::io::Write;

use super::DispatchOutcome;

/// Writes the billed hours of a day as `hour,scheduled_pg,actual_pg,delta,soc,c_ds,c_imb`.
///
/// `soc` is the state of energy at the end of the hour.
pub fn write_trace_csv<W: Write>(outcome: &DispatchOutcome, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["hour", "scheduled_pg", "actual_pg", "delta", "soc", "c_ds", "c_imb"])?;
    let steps = outcome.cost.per_step.as_deref().unwrap_or(&[]);
    for (k, step) in steps.iter().enumerate() {
        w.write_record([
            k.to_string(),
            outcome.schedule.p_g[k].to_string(),
            outcome.actual_p_g[k].to_string(),
            outcome.deviations[k].to_string(),
            outcome.soc_trajectory[k + 1].to_string(),
            step.ds.to_string(),
            step.imb.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
