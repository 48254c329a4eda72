use super::SolverError;

/// Level `g` such that `sum_i max(a_i - g, 0) = target`, found by a sorted scan.
/// Returns `None` when `target == 0` (every level above `max a` works).
pub fn water_level(a: &[f64], target: f64) -> Result<Option<f64>, SolverError> {
    if target.is_nan() || target < 0.0 || target.is_infinite() {
        return Err(SolverError::InvalidArgument(format!(
            "water-filling target must be >= 0, got {target}"
        )));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(SolverError::InvalidArgument(
            "water-filling input must be finite".into(),
        ));
    }
    if target == 0.0 || a.is_empty() {
        return Ok(None);
    }
    let mut sorted = a.to_vec();
    sorted.sort_by(|x, y| y.total_cmp(x));
    let mut prefix = 0.0;
    let mut level = 0.0;
    for (k, &v) in sorted.iter().enumerate() {
        prefix += v;
        let candidate = (prefix - target) / (k + 1) as f64;
        // the k+1 largest stay positive iff the next one sits at or below the level
        level = candidate;
        match sorted.get(k + 1) {
            Some(&next) if next > candidate => continue,
            _ => break,
        }
    }
    Ok(Some(level))
}

/// Euclidean projection of `a` onto `{x >= 0, sum x = target}`:
/// `x_i = max(a_i - g, 0)` with `g` from [`water_level`].
pub fn simplex_water_fill(a: &[f64], target: f64) -> Result<Vec<f64>, SolverError> {
    match water_level(a, target)? {
        None => Ok(vec![0.0; a.len()]),
        Some(g) => Ok(a.iter().map(|&v| (v - g).max(0.0)).collect()),
    }
}
