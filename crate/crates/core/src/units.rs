//! dB / dBm conversions. All internal link budgets are carried in watts;
//! decibel quantities exist only at the config boundary.

/// Convert dBm to watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0) * 1e-3
}

/// Convert watts to dBm.
pub fn watts_to_dbm(watts: f64) -> f64 {
    10.0 * (watts / 1e-3).log10()
}

/// Convert a dB gain/loss to a linear power ratio.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Convert a linear power ratio to dB.
pub fn linear_to_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dbm_round_trip() {
        assert!((dbm_to_watts(-110.0) - 1e-14).abs() < 1e-26);
        assert!((dbm_to_watts(30.0) - 1.0).abs() < 1e-12);
        assert!((watts_to_dbm(dbm_to_watts(17.3)) - 17.3).abs() < 1e-10);
    }

    #[test]
    fn db_linear_round_trip() {
        assert!((db_to_linear(3.0) - 1.9952623149688795).abs() < 1e-12);
        assert!((linear_to_db(db_to_linear(-7.7)) + 7.7).abs() < 1e-10);
    }
}
