//! Soft-sphere discrete-element simulator used as ground truth.

pub mod contact;
pub mod scenes;
pub mod trajectory;

pub use contact::{damping_ratio, normal_damping, Body, ContactKey, DemState, Material, WallMaterial};
pub use scenes::{generate, GenConfig, SceneKind, SimAudit};
pub use trajectory::{to_json_line, Frame, Header, Trajectory};
