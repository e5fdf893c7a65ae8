use rand::Rng;

use crate::diffusion::{Condition, CsiVector};
use crate::rng::standard_normal;
use crate::{Error, Result};

/// Observed rows copied through; every masked entry replaced by an
/// independent `N(0, entry_var)` draw (per real entry).
pub fn rc_impute(cond: &Condition, entry_var: f64, rng: &mut impl Rng) -> Result<CsiVector> {
    if !(entry_var >= 0.0) {
        return Err(Error::Domain(format!("fill variance {entry_var}")));
    }
    let (n, m) = (cond.elements, cond.antennas);
    let std = entry_var.sqrt();
    let mut x = CsiVector((0..2 * n * m).map(|_| std * standard_normal(rng)).collect());
    for (j, &i) in cond.observed.iter().enumerate() {
        x.set_element_token(n, m, i, cond.token(j));
    }
    Ok(x)
}
