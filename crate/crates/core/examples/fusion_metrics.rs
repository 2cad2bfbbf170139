//! Scores simple hand-made fusions of a synthetic infrared/visible pair and
//! prints the report as CSV and JSON.

use cscfuse::metrics::{evaluate_all, reports_to_csv, reports_to_json, Metric};
use cscfuse::pipelines::synth_ivf_pair;
use cscfuse::Task;

fn main() -> cscfuse::Result<()> {
    let (ir, vis) = synth_ivf_pair(2)?;
    let (a, b) = (ir.pixels(), vis.pixels());
    let candidates = [
        ("visible_only", b.clone()),
        ("infrared_only", a.clone()),
        ("mean", a.add(b)?.scale(0.5)),
        ("maximum", a.zip_map(b, "maximum", f32::max)?),
    ];
    let mut reports = Vec::new();
    for (name, fused) in candidates {
        let mut report = evaluate_all(Task::Ivf, &[a.clone(), b.clone()], &fused)?;
        report.provenance.sources = vec!["infrared".into(), "visible".into()];
        report.provenance.fused = name.into();
        reports.push(report);
    }
    print!("{}", reports_to_csv(&reports));
    let best = reports
        .iter()
        .max_by(|x, y| x.get(Metric::Mi).partial_cmp(&y.get(Metric::Mi)).expect("finite"))
        .expect("non-empty");
    println!("highest mutual information: {}", best.provenance.fused);
    print!("{}", reports_to_json(&reports[2..3]));
    Ok(())
}
