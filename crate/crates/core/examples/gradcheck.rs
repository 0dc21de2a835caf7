//! The finite-difference audit of every gradient path.

use agm::eval::gradcheck_suite;

fn main() -> agm::Result<()> {
    let report = gradcheck_suite()?;
    for c in &report.checks {
        println!("{} {} ({})", if c.passed { "ok  " } else { "FAIL" }, c.name, c.requirement);
        for b in &c.blocks {
            println!("      {:<24} rel err {:.2e}", b.block, b.rel_err);
        }
    }
    report.into_result().map(|_| ())
}
