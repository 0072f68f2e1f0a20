//! Dense 0-based identifiers for users, items, entities and relations.
//!
//! Items are knowledge-graph nodes: a prepared dataset assigns item tokens
//! the first `num_items` entity ids, so `ItemId(i)` and `EntityId(i)` name
//! the same node.

use std::fmt;

use serde::{Deserialize, Serialize};

macro_rules! dense_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(
            Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub u32);

        impl $name {
            #[inline]
            pub fn index(self) -> usize {
                self.0 as usize
            }
        }

        impl From<usize> for $name {
            fn from(i: usize) -> Self {
                $name(u32::try_from(i).expect("id exceeds u32 range"))
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }
    };
}

dense_id!(
    /// Knowledge-graph node.
    EntityId
);
dense_id!(
    /// Relation type of a triple.
    RelationId
);
dense_id!(UserId);
dense_id!(
    /// Catalog item; shares its index with the corresponding [`EntityId`].
    ItemId
);

impl ItemId {
    #[inline]
    pub fn entity(self) -> EntityId {
        EntityId(self.0)
    }
}
