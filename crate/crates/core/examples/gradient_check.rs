//! Analytic gradients against central finite differences on small random problems.

use sdg::commands::cmd_gradcheck;

fn main() -> sdg::Result<()> {
    let seeds: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let reports = cmd_gradcheck(0, seeds, &[0.0, 0.5], 1e-4)?;
    for r in &reports {
        println!("{r}");
    }
    let failed = reports.iter().filter(|r| !r.passed()).count();
    println!("{} of {} checks passed", reports.len() - failed, reports.len());
    if failed > 0 {
        std::process::exit(1);
    }
    Ok(())
}
