//! Semantic label set: twelve semantic classes plus the empty class, which
//! always occupies the last channel.

use serde::{Deserialize, Serialize};

pub const NUM_CLASSES: usize = 13;
pub const NUM_SEMANTIC: usize = NUM_CLASSES - 1;
pub const EMPTY_CLASS: usize = NUM_CLASSES - 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum SemanticClass {
    Building = 0,
    Fence = 1,
    Terrain = 2,
    Pole = 3,
    Road = 4,
    Sidewalk = 5,
    Vegetation = 6,
    Vehicle = 7,
    Wall = 8,
    GuardRail = 9,
    TrafficSign = 10,
    Bridge = 11,
    Empty = 12,
}

impl SemanticClass {
    pub const ALL: [SemanticClass; NUM_CLASSES] = [
        SemanticClass::Building,
        SemanticClass::Fence,
        SemanticClass::Terrain,
        SemanticClass::Pole,
        SemanticClass::Road,
        SemanticClass::Sidewalk,
        SemanticClass::Vegetation,
        SemanticClass::Vehicle,
        SemanticClass::Wall,
        SemanticClass::GuardRail,
        SemanticClass::TrafficSign,
        SemanticClass::Bridge,
        SemanticClass::Empty,
    ];

    pub fn from_index(i: usize) -> Option<SemanticClass> {
        Self::ALL.get(i).copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            SemanticClass::Building => "building",
            SemanticClass::Fence => "fence",
            SemanticClass::Terrain => "terrain",
            SemanticClass::Pole => "pole",
            SemanticClass::Road => "road",
            SemanticClass::Sidewalk => "sidewalk",
            SemanticClass::Vegetation => "vegetation",
            SemanticClass::Vehicle => "vehicle",
            SemanticClass::Wall => "wall",
            SemanticClass::GuardRail => "guard_rail",
            SemanticClass::TrafficSign => "traffic_sign",
            SemanticClass::Bridge => "bridge",
            SemanticClass::Empty => "empty",
        }
    }
}

pub fn class_name(i: usize) -> &'static str {
    SemanticClass::from_index(i).map_or("?", SemanticClass::name)
}

pub fn one_hot(class: usize, magnitude: f64) -> [f64; NUM_CLASSES] {
    let mut v = [0.0; NUM_CLASSES];
    v[class] = magnitude;
    v
}

/// Argmax with ties resolved to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate().skip(1) {
        if *x > v[best] {
            best = i;
        }
    }
    best
}
