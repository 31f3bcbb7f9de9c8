//! Strongly typed entity identifiers. Ids are allocated sequentially by the
//! world state and never reused.

use serde::{Deserialize, Serialize};

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(
            Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub u64);

        impl std::fmt::Display for $name {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                write!(f, "{}", self.0)
            }
        }

        impl From<u64> for $name {
            fn from(v: u64) -> Self {
                $name(v)
            }
        }
    };
}

id_type!(VertiportId);
id_type!(VehicleId);
id_type!(FlightId);
id_type!(TripId);
id_type!(
    /// One travel request per trip; shares the trip's numeric id.
    RequestId
);
id_type!(ItineraryId);
id_type!(SlotId);
id_type!(TrajectoryId);
