//! Acceptance suite: one line per criterion, non-zero exit if any fails.
//!
//! `GRADTD_ACCEPTANCE=quick` runs the reduced-size variant.

use gradtd::verify::{run_criteria, Scale};

fn main() {
    let scale = match std::env::var("GRADTD_ACCEPTANCE").as_deref() {
        Ok("quick") => Scale::Quick,
        _ => Scale::Full,
    };
    let only: Vec<u8> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let outcomes = run_criteria(scale, &only, |o| println!("{o}"));
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    println!("acceptance: {} passed, {failed} failed", outcomes.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
