//! Oracle bias of the projection estimand as the enrollment effect drifts
//! away from its working model.

use atmle::diagnostics::{misspecification_ladder, LadderKind, McConfig, LADDER_WEIGHTS};

pub fn main() -> atmle::Result<()> {
    let mc = McConfig::new(200_000, 11);
    println!(
        "{:>12} {:>6} {:>8} {:>10} {:>12}",
        "kind", "weight", "adj R2", "wMSE", "oracle bias"
    );
    for kind in LadderKind::ALL {
        for row in misspecification_ladder(kind, &LADDER_WEIGHTS, &mc)? {
            println!(
                "{:>12} {:>6.2} {:>8.3} {:>10.2e} {:>+12.4}",
                kind.name(),
                row.weight,
                row.adjusted_r2,
                row.weighted_mse,
                row.oracle_bias
            );
        }
    }
    Ok(())
}
