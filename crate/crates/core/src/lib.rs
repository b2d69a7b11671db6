//! Stem-and-refine video codec core: scheduling, flow, entropy coding,
//! backbone and motion-vector codecs, type embedding and refinement.

pub mod backbone;
pub mod bytes;
pub mod config;
pub mod conv;
pub mod dct;
pub mod entropy;
pub mod error;
pub mod flow;
pub mod frame;
pub mod fte;
pub mod metrics;
pub mod mv;
pub mod plane;
pub mod refine;
pub mod schedule;
pub mod synth;

pub use config::{CodecConfig, ContextParams};
pub use error::{Error, Result};
pub use flow::{chain_warp, estimate_flow, warp, FlowField};
pub use frame::{Frame, FrameSequence};
pub use schedule::{build_schedule, FrameType, GopSchedule};
