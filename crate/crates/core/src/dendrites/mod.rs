//! Context-gated neurons and k-winner-take-all.

mod kwta;
mod layer;
mod probe;
mod segments;

pub use kwta::{kwta, kwta_margin, kwta_with_winners, KwtaConfig};
pub use layer::{gate, ActiveDendritesLayer, AdlGrads, ForwardRecord, Gated, Gating};
pub use probe::{DendriticProbe, ProbeShape};
pub use segments::{DendriticSegments, Responses};
