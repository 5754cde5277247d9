//! Date normalization and the probabilistic negative-date generator:
//! prints normalized forms, a sample of perturbed dates, and the empirical
//! branch distribution over many draws.
//!
//!     cargo run --release --example date_negatives

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use textmatch::datagen::{derive_rng, gen_negative_date, normalize_date};

fn main() -> textmatch::Result<()> {
    for date in ["02/04/2021", "15/12/2019", "31/01/2022", "09/09/2003"] {
        println!("{date} -> {}", normalize_date(date)?);
    }

    let train_years: BTreeSet<u32> = (2018..=2021).collect();
    let base = normalize_date("02/04/2021")?;
    let mut rng = derive_rng(7, 0, 0);

    println!("\nten negatives for {base}:");
    for _ in 0..10 {
        let (neg, branch) = gen_negative_date(&base, &train_years, &mut rng)?;
        println!("  {neg}   ({})", branch.name());
    }

    let n = 10_000;
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for _ in 0..n {
        let (neg, branch) = gen_negative_date(&base, &train_years, &mut rng)?;
        assert_ne!(neg, base);
        *counts.entry(branch.name()).or_default() += 1;
    }
    println!("\nbranch frequencies over {n} draws (expected 0.30/0.30/0.15/0.15/0.10):");
    for (branch, count) in counts {
        println!("  {branch:<12} {:.3}", count as f64 / n as f64);
    }
    Ok(())
}
