use crate::error::{Error, Result};
use crate::sim::state::Vehicle;

fn travel_time(v: &Vehicle, horizon: f64) -> f64 {
    // Trips still running at the horizon are censored there.
    v.exit_time.unwrap_or(horizon) - v.entry_time
}

fn mean_over<'a, F>(
    departed: impl IntoIterator<Item = &'a Vehicle>,
    active: impl IntoIterator<Item = &'a Vehicle>,
    f: F,
) -> Result<f64>
where
    F: Fn(&Vehicle) -> f64,
{
    let (mut sum, mut n) = (0.0, 0usize);
    for v in departed.into_iter().chain(active) {
        sum += f(v);
        n += 1;
    }
    if n == 0 {
        return Err(Error::NoTraffic);
    }
    Ok(sum / n as f64)
}

/// Average travel time: mean of `exit - entry`, with active trips censored at `horizon`.
pub fn compute_att<'a>(
    departed: impl IntoIterator<Item = &'a Vehicle>,
    active: impl IntoIterator<Item = &'a Vehicle>,
    horizon: f64,
) -> Result<f64> {
    mean_over(departed, active, |v| travel_time(v, horizon))
}

/// Average delay: mean of actual minus free-flow travel time.
pub fn compute_adt<'a>(
    departed: impl IntoIterator<Item = &'a Vehicle>,
    active: impl IntoIterator<Item = &'a Vehicle>,
    horizon: f64,
) -> Result<f64> {
    mean_over(departed, active, |v| travel_time(v, horizon) - v.theoretical_time)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use alloc::vec::Vec;

    #[test]
    fn att_single_and_pair() {
        let one = vec![Vehicle::trip(0.0, Some(100.0), 50.0)];
        assert_eq!(compute_att(&one, &[], 3600.0).unwrap(), 100.0);
        let two = vec![Vehicle::trip(0.0, Some(100.0), 50.0), Vehicle::trip(10.0, Some(130.0), 50.0)];
        assert_eq!(compute_att(&two, &[], 3600.0).unwrap(), 110.0);
    }

    #[test]
    fn no_traffic_is_error() {
        let none: Vec<Vehicle> = Vec::new();
        assert_eq!(compute_att(&none, &none, 3600.0), Err(Error::NoTraffic));
        assert_eq!(compute_adt(&none, &none, 3600.0), Err(Error::NoTraffic));
    }

    #[test]
    fn adt_cases() {
        let exact = vec![Vehicle::trip(5.0, Some(95.0), 90.0)];
        assert_eq!(compute_adt(&exact, &[], 3600.0).unwrap(), 0.0);
        let late = vec![Vehicle::trip(0.0, Some(150.0), 90.0)];
        assert_eq!(compute_adt(&late, &[], 3600.0).unwrap(), 60.0);
    }

    #[test]
    fn censored_trips_use_horizon() {
        let departed = vec![Vehicle::trip(0.0, Some(100.0), 50.0)];
        let active = vec![Vehicle::trip(3000.0, None, 50.0)];
        assert_eq!(compute_att(&departed, &active, 3600.0).unwrap(), 350.0);
    }
}
