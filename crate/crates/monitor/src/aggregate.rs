//! Daily traffic counts from passage events.
//!
//! A vessel passage is any event of class B, C, D or F; C and D also count
//! as vessels with barges. F events count as vessels but not as barge
//! traffic since no barge was confirmed. E events (barge without a visible
//! towboat) are counted separately.

use bargewatch_core::SceneClass;
use chrono::{Days, NaiveDate, NaiveTime};
use serde::{Deserialize, Serialize};

use crate::events::PassageEvent;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyAggregate {
    pub camera_id: String,
    pub date: NaiveDate,
    pub vessel_count: usize,
    pub with_barge_count: usize,
    /// `with_barge_count / vessel_count`; `None` (JSON `null`) when no
    /// vessel passed.
    pub pct_with_barges: Option<f64>,
    pub barge_only_count: usize,
}

pub fn is_vessel(scene: SceneClass) -> bool {
    matches!(scene, SceneClass::B | SceneClass::C | SceneClass::D | SceneClass::F)
}

pub fn is_with_barge(scene: SceneClass) -> bool {
    matches!(scene, SceneClass::C | SceneClass::D)
}

/// Whether `event` overlaps the UTC day `date`.
pub fn intersects_date(event: &PassageEvent, date: NaiveDate) -> bool {
    let day_start = date.and_time(NaiveTime::MIN).and_utc();
    match date.checked_add_days(Days::new(1)) {
        Some(next) => event.start < next.and_time(NaiveTime::MIN).and_utc() && event.end >= day_start,
        None => event.end >= day_start,
    }
}

/// Counts the events of `camera_id` that overlap `date`; others are
/// ignored.
pub fn aggregate_daily(events: &[PassageEvent], date: NaiveDate, camera_id: &str) -> DailyAggregate {
    let mut agg = DailyAggregate {
        camera_id: camera_id.to_string(),
        date,
        vessel_count: 0,
        with_barge_count: 0,
        pct_with_barges: None,
        barge_only_count: 0,
    };
    for e in events
        .iter()
        .filter(|e| e.camera_id == camera_id && intersects_date(e, date))
    {
        if is_vessel(e.scene) {
            agg.vessel_count += 1;
        }
        if is_with_barge(e.scene) {
            agg.with_barge_count += 1;
        }
        if e.scene == SceneClass::E {
            agg.barge_only_count += 1;
        }
    }
    if agg.vessel_count > 0 {
        agg.pct_with_barges = Some(agg.with_barge_count as f64 / agg.vessel_count as f64);
    }
    agg
}
