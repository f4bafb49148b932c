use chrono::{DateTime, SubsecRound, Utc};

/// Current UTC time at millisecond precision.
pub fn now_utc() -> DateTime<Utc> {
    Utc::now().trunc_subsecs(3)
}
