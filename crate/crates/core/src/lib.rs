//! UWB-based proof of location for UAVs.
//!
//! A UAV announces a position claim on a permissioned ledger, ground anchors
//! range it over UWB with session codes embedded in the ranging frames, and a
//! ledger-hosted contract accepts the claim when it lies within an error
//! buffer of the UWB position fix.

pub mod codec;
pub mod geo;
pub mod ids;
pub mod ledger;
pub mod pol;
pub mod sim;
pub mod uwb;
