//! Cohen's kappa, sensitivity, specificity, bands and timing statistics
//! for a confusion matrix.
//!
//! cargo run --example agreement_metrics

use kappabench::corpus::Label;
use kappabench::metrics::{
    band, bootstrap_kappa_ci, cohen_kappa, sensitivity, specificity, timing_stats, ConfusionMatrix,
};

fn main() {
    let m = ConfusionMatrix::new(240, 5, 245, 10);
    let k = cohen_kappa(&m).unwrap();
    println!("matrix {m:?}");
    println!(
        "kappa {k:.4} ({}), sensitivity {:.3}, specificity {:.3}",
        band(k),
        sensitivity(&m).unwrap(),
        specificity(&m).unwrap()
    );

    // no negatives at all: specificity is undefined, not zero
    let degenerate = ConfusionMatrix::new(10, 0, 0, 0);
    println!("all-positive cell: kappa {:?}, specificity {:?}", cohen_kappa(&degenerate), specificity(&degenerate));

    for k in [0.39, 0.41, 0.74, 0.80, 0.93] {
        println!("kappa {k:.2} -> {}", band(k));
    }

    let t = timing_stats(&[1.2, 1.5, 1.1, 2.0, 1.4]);
    println!("timing mean {:.3} s, sd {:.3} s", t.mean.unwrap(), t.sd.unwrap());

    let mut pairs = Vec::new();
    pairs.extend(std::iter::repeat_n((Label::Positive, Label::Positive), 240));
    pairs.extend(std::iter::repeat_n((Label::Positive, Label::Negative), 10));
    pairs.extend(std::iter::repeat_n((Label::Negative, Label::Negative), 245));
    pairs.extend(std::iter::repeat_n((Label::Negative, Label::Positive), 5));
    let ci = bootstrap_kappa_ci(&pairs, 1000, 7).unwrap();
    println!("bootstrap 95% interval: [{:.3}, {:.3}]", ci.lower, ci.upper);
}
