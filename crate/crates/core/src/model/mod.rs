pub mod anchors;
pub mod checkpoint;
pub mod network;
pub mod nms;

pub use anchors::{
    decode_box, encode_box, generate_anchors, match_anchors, AnchorConfig, AnchorGrid, AnchorLocation,
    AnchorMatch,
};
pub use network::{
    extract_object_repr, scatter_object_repr_grad, DetectorOutputs, ForwardPass, ModelConfig, Network,
    ObjectRepresentation, OutputGrads,
};
pub use nms::{nms, Candidate, DEFAULT_NMS_IOU};
