//! Event-based F1 and PSDS on hand-written references and scores, with the
//! PSD-ROC written as CSV.
//!
//! cargo run --example metrics -- [roc.csv]

use std::collections::BTreeMap;

use tagkit::metrics::{event_f1, export_roc, match_events, psds, EventList, EventMetricConfig, PsdsConfig};
use tagkit::model::{frames_from_segments, FrameScores};
use tagkit::Segment;

fn seg(onset: f64, offset: f64) -> Segment {
    Segment { onset, offset }
}

fn main() -> tagkit::Result<()> {
    let cfg = EventMetricConfig::default();
    let refs = [seg(1.0, 2.0), seg(4.0, 6.5), seg(8.0, 8.4)];
    let hyps = [seg(1.06, 2.1), seg(4.3, 6.5), seg(7.98, 8.5)];
    let trace = match_events(&refs, &hyps, &cfg);
    for (h, m) in hyps.iter().zip(&trace.pairs) {
        println!("hyp {:.2}-{:.2} -> {:?}", h.onset, h.offset, m.map(|r| (refs[r].onset, refs[r].offset)));
    }

    let mut reference = EventList::new();
    reference.insert("clip1", "a dog barks", &refs)?;
    let mut hypothesis = EventList::new();
    hypothesis.insert("clip1", "a dog barks", &hyps)?;
    let s = event_f1(&reference, &hypothesis, &cfg)?;
    println!("event-F1 {:.2}%  P {:.2}%  R {:.2}%  (tp {} fp {} fn {})", s.f1, s.precision, s.recall, s.tp, s.fp, s.fn_);

    // scores: a blurred copy of the reference labels
    let labels = frames_from_segments(&refs, 499, 0.02)?;
    let blurred: Vec<f64> = (0..labels.len())
        .map(|t| {
            let lo = t.saturating_sub(5);
            let hi = (t + 6).min(labels.len());
            0.05 + 0.9 * labels[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect();
    let scores = BTreeMap::from([(("clip1".to_string(), "a dog barks".to_string()), FrameScores::new(blurred))]);
    let (value, roc) = psds(&reference, &scores, 10.0, &PsdsConfig::default())?;
    println!("PSDS {value:.4} over {} operating points", roc.points.len());
    if let Some(path) = std::env::args().nth(1) {
        std::fs::write(&path, export_roc(&roc))?;
        println!("ROC written to {path}");
    }
    Ok(())
}
