//! Per-vertiport FATO slot calendars.
//!
//! A calendar tracks committed take-off and landing slots per FATO and
//! answers "next available conflict-free slot" queries under two layout
//! concepts of operation:
//!
//! * `OneDirectional` - FATOs carry independent traffic flows; the only
//!   rule is that committed intervals on a single FATO are disjoint.
//! * `BiDirectional` - flows are interdependent; additionally, no take-off
//!   slot on any FATO may overlap a landing slot on any FATO of the same
//!   vertiport once the landing interval is expanded by the
//!   interdependence buffer.
//!
//! Offers are plain values: nothing is reserved until a commit, and a
//! commit re-checks the offer against the live calendar, so offers that
//! were not committed within their planning transaction simply expire.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::Layout;
use crate::ids::{SlotId, VertiportId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotKind {
    TakeOff,
    Landing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotState {
    Committed,
    Released,
}

/// A committed (or later released) FATO reservation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slot {
    pub id: SlotId,
    pub vertiport: VertiportId,
    pub fato_index: u32,
    pub kind: SlotKind,
    pub start_s: i64,
    pub end_s: i64,
    pub state: SlotState,
}

/// An offered slot: not yet committed, carries no id.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlotOffer {
    pub vertiport: VertiportId,
    pub fato_index: u32,
    pub kind: SlotKind,
    pub start_s: i64,
    pub end_s: i64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SlotError {
    #[error("no conflict-free slot within the search horizon")]
    SlotUnavailable,
    #[error("offer no longer satisfies the calendar's conflict rules")]
    ConflictRetry,
    #[error("unknown slot {0}")]
    UnknownSlot(SlotId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotCalendar {
    pub vertiport: VertiportId,
    pub layout: Layout,
    pub fato_count: u32,
    pub slot_duration_s: i64,
    pub interdependence_buffer_s: i64,
    slots: Vec<Slot>,
}

impl SlotCalendar {
    pub fn new(
        vertiport: VertiportId,
        layout: Layout,
        fato_count: u32,
        slot_duration_s: i64,
        interdependence_buffer_s: i64,
    ) -> SlotCalendar {
        SlotCalendar {
            vertiport,
            layout,
            fato_count,
            slot_duration_s,
            interdependence_buffer_s,
            slots: Vec::new(),
        }
    }

    /// Committed slots only (released ones no longer constrain anything).
    pub fn committed(&self) -> impl Iterator<Item = &Slot> {
        self.slots.iter().filter(|s| s.state == SlotState::Committed)
    }

    pub fn all_slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn get(&self, id: SlotId) -> Option<&Slot> {
        self.slots.iter().find(|s| s.id == id)
    }

    fn overlaps(a_start: i64, a_end: i64, b_start: i64, b_end: i64) -> bool {
        a_start < b_end && b_start < a_end
    }

    /// Conflict rules for a hypothetical slot, per the calendar's layout.
    pub fn offer_fits(&self, offer: &SlotOffer) -> bool {
        if offer.fato_index >= self.fato_count {
            return false;
        }
        for slot in self.committed() {
            if slot.fato_index == offer.fato_index
                && Self::overlaps(offer.start_s, offer.end_s, slot.start_s, slot.end_s)
            {
                return false;
            }
            if self.layout == Layout::BiDirectional {
                // Take-off vs landing interdependence across all FATOs: the
                // landing interval is expanded by the buffer on both sides.
                let (takeoff, landing) = match (offer.kind, slot.kind) {
                    (SlotKind::TakeOff, SlotKind::Landing) => {
                        ((offer.start_s, offer.end_s), (slot.start_s, slot.end_s))
                    }
                    (SlotKind::Landing, SlotKind::TakeOff) => {
                        ((slot.start_s, slot.end_s), (offer.start_s, offer.end_s))
                    }
                    _ => continue,
                };
                let buffered = (
                    landing.0 - self.interdependence_buffer_s,
                    landing.1 + self.interdependence_buffer_s,
                );
                if Self::overlaps(takeoff.0, takeoff.1, buffered.0, buffered.1) {
                    return false;
                }
            }
        }
        true
    }

    /// Earliest conflict-free slot with `start >= earliest`. Candidate
    /// starts advance in slot-duration steps from `earliest`; FATOs are
    /// scanned in index order at each step.
    pub fn next_free_slot(
        &self,
        kind: SlotKind,
        earliest_s: i64,
        horizon_s: i64,
    ) -> Result<SlotOffer, SlotError> {
        let mut start = earliest_s;
        while start <= earliest_s + horizon_s {
            for fato in 0..self.fato_count {
                let offer = SlotOffer {
                    vertiport: self.vertiport,
                    fato_index: fato,
                    kind,
                    start_s: start,
                    end_s: start + self.slot_duration_s,
                };
                if self.offer_fits(&offer) {
                    return Ok(offer);
                }
            }
            start += self.slot_duration_s;
        }
        Err(SlotError::SlotUnavailable)
    }

    /// Commits an offer under a fresh slot id. Fails with `ConflictRetry`
    /// if the calendar changed since the offer was produced.
    pub fn commit(&mut self, offer: &SlotOffer, id: SlotId) -> Result<Slot, SlotError> {
        if !self.offer_fits(offer) {
            return Err(SlotError::ConflictRetry);
        }
        let slot = Slot {
            id,
            vertiport: offer.vertiport,
            fato_index: offer.fato_index,
            kind: offer.kind,
            start_s: offer.start_s,
            end_s: offer.end_s,
            state: SlotState::Committed,
        };
        self.slots.push(slot.clone());
        Ok(slot)
    }

    /// Inserts an already-validated committed slot. Used when applying
    /// recorded events; live commits go through [`SlotCalendar::commit`].
    pub fn insert(&mut self, slot: Slot) {
        self.slots.push(slot);
    }

    /// Returns capacity: the slot no longer constrains queries.
    pub fn release(&mut self, id: SlotId) -> Result<(), SlotError> {
        match self.slots.iter_mut().find(|s| s.id == id) {
            Some(slot) => {
                slot.state = SlotState::Released;
                Ok(())
            }
            None => Err(SlotError::UnknownSlot(id)),
        }
    }

    /// Brute-force pairwise audit of the layout rules over committed slots.
    pub fn audit(&self) -> Vec<String> {
        let mut violations = Vec::new();
        let committed: Vec<&Slot> = self.committed().collect();
        for (i, a) in committed.iter().enumerate() {
            for b in committed.iter().skip(i + 1) {
                if a.fato_index == b.fato_index
                    && Self::overlaps(a.start_s, a.end_s, b.start_s, b.end_s)
                {
                    violations.push(format!(
                        "vertiport {}: slots {} and {} overlap on FATO {}",
                        self.vertiport, a.id, b.id, a.fato_index
                    ));
                }
                if self.layout == Layout::BiDirectional {
                    let (t, l) = match (a.kind, b.kind) {
                        (SlotKind::TakeOff, SlotKind::Landing) => (a, b),
                        (SlotKind::Landing, SlotKind::TakeOff) => (b, a),
                        _ => continue,
                    };
                    if Self::overlaps(
                        t.start_s,
                        t.end_s,
                        l.start_s - self.interdependence_buffer_s,
                        l.end_s + self.interdependence_buffer_s,
                    ) {
                        violations.push(format!(
                            "vertiport {}: take-off slot {} inside buffered landing slot {}",
                            self.vertiport, t.id, l.id
                        ));
                    }
                }
            }
        }
        violations
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn calendar(layout: Layout, fatos: u32) -> SlotCalendar {
        SlotCalendar::new(VertiportId(0), layout, fatos, 90, 60)
    }

    const H9: i64 = 9 * 3600; // 09:00

    #[test]
    fn empty_calendar_offers_at_earliest() {
        let cal = calendar(Layout::OneDirectional, 1);
        let offer = cal.next_free_slot(SlotKind::TakeOff, H9, 86_400).unwrap();
        assert_eq!(offer.start_s, H9);
        assert_eq!(offer.end_s, H9 + 90);
        assert_eq!(offer.fato_index, 0);
    }

    #[test]
    fn busy_fato_pushes_to_next_step() {
        let mut cal = calendar(Layout::OneDirectional, 1);
        let first = cal.next_free_slot(SlotKind::TakeOff, H9, 86_400).unwrap();
        cal.commit(&first, SlotId(1)).unwrap();
        let next = cal.next_free_slot(SlotKind::TakeOff, H9, 86_400).unwrap();
        assert_eq!(next.start_s, H9 + 90);
        assert_eq!(next.end_s, H9 + 180);
    }

    #[test]
    fn bidirectional_buffer_blocks_takeoff_near_landing() {
        // Landing committed 09:00-09:01:30 on FATO 0; take-off requested
        // from 09:01 with a second FATO available. The buffered landing
        // interval [08:59, 09:02:30) blocks both FATOs until 09:02:30.
        let mut cal = calendar(Layout::BiDirectional, 2);
        let landing = SlotOffer {
            vertiport: VertiportId(0),
            fato_index: 0,
            kind: SlotKind::Landing,
            start_s: H9,
            end_s: H9 + 90,
        };
        cal.commit(&landing, SlotId(1)).unwrap();
        let offer = cal
            .next_free_slot(SlotKind::TakeOff, H9 + 60, 86_400)
            .unwrap();
        assert_eq!(offer.start_s, H9 + 150); // 09:02:30
    }

    #[test]
    fn one_directional_ignores_cross_kind() {
        let mut cal = calendar(Layout::OneDirectional, 2);
        let landing = SlotOffer {
            vertiport: VertiportId(0),
            fato_index: 0,
            kind: SlotKind::Landing,
            start_s: H9,
            end_s: H9 + 90,
        };
        cal.commit(&landing, SlotId(1)).unwrap();
        let offer = cal.next_free_slot(SlotKind::TakeOff, H9, 86_400).unwrap();
        // Second FATO is free at the same instant.
        assert_eq!(offer.start_s, H9);
        assert_eq!(offer.fato_index, 1);
    }

    #[test]
    fn stale_offer_conflicts_on_commit() {
        let mut cal = calendar(Layout::OneDirectional, 1);
        let offer_a = cal.next_free_slot(SlotKind::TakeOff, H9, 86_400).unwrap();
        let offer_b = cal.next_free_slot(SlotKind::TakeOff, H9, 86_400).unwrap();
        assert_eq!(offer_a, offer_b);
        // Both commit orders: exactly one wins.
        cal.commit(&offer_a, SlotId(1)).unwrap();
        assert_eq!(cal.commit(&offer_b, SlotId(2)), Err(SlotError::ConflictRetry));
    }

    #[test]
    fn release_returns_capacity() {
        let mut cal = calendar(Layout::OneDirectional, 1);
        let offer = cal.next_free_slot(SlotKind::TakeOff, H9, 86_400).unwrap();
        cal.commit(&offer, SlotId(1)).unwrap();
        cal.release(SlotId(1)).unwrap();
        let again = cal.next_free_slot(SlotKind::TakeOff, H9, 86_400).unwrap();
        assert_eq!(again.start_s, H9);
        assert!(cal.audit().is_empty());
    }

    #[test]
    fn saturated_horizon_reports_unavailable() {
        let mut cal = calendar(Layout::OneDirectional, 1);
        let horizon = 900;
        let mut start = H9;
        while start <= H9 + horizon + 90 {
            let offer = SlotOffer {
                vertiport: VertiportId(0),
                fato_index: 0,
                kind: SlotKind::TakeOff,
                start_s: start,
                end_s: start + 90,
            };
            cal.commit(&offer, SlotId(start as u64)).unwrap();
            start += 90;
        }
        assert_eq!(
            cal.next_free_slot(SlotKind::TakeOff, H9, horizon),
            Err(SlotError::SlotUnavailable)
        );
    }

    #[test]
    fn one_directional_sustains_fato_count_simultaneous_movements() {
        // Same instant, F FATOs: one-directional fits F movements of mixed
        // kinds; bi-directional fits fewer because of the cross-kind buffer.
        let commits = |layout: Layout| {
            let mut cal = calendar(layout, 2);
            let mut ok = 0;
            for (i, kind) in [SlotKind::TakeOff, SlotKind::Landing].iter().enumerate() {
                if let Ok(offer) = cal.next_free_slot(*kind, H9, 0) {
                    if offer.start_s == H9 {
                        cal.commit(&offer, SlotId(i as u64)).unwrap();
                        ok += 1;
                    }
                }
            }
            ok
        };
        assert_eq!(commits(Layout::OneDirectional), 2);
        assert!(commits(Layout::BiDirectional) < 2);
    }
}
