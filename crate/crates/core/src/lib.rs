//! Polar code construction by iterative message passing over a
//! heterogeneous graph, with classical baselines, a CA-SCL decoder, a Monte
//! Carlo FER harness and a deep Q-learning trainer.

pub mod appendix;
pub mod channel;
pub mod classical;
pub mod decoder;
pub mod error;
pub mod fer;
pub mod imp;
pub mod model;
pub mod pccmp;
pub mod polar;
pub mod rl;

pub use channel::{q_function, substream, AwgnQpsk, LlrVector, SnrDb};
pub use classical::{
    run_abstract_construction, BhattacharyyaOps, ClassicalConstruction, ConstructionOps, GaInit, GaOps, ZLayout,
};
pub use decoder::{cascl_decode, sc_decode, scl_decode, DecodeResult, ListDecoder};
pub use error::{Error, Result};
pub use fer::{estimate_fer, sweep, FerEngine, FerEstimate, StopRule, SweepRow};
pub use imp::{construct_imp, neighborhood_search, ImpRun, NsResult, PriorityModel};
pub use model::{ImpHyper, ImpParams};
pub use pccmp::{build_pccmp, PccmpGraph, PccmpStructure};
pub use polar::{encode, BitVector, CodeSpec, Construction, ConstructionFile, CrcPoly};
pub use rl::{dqn_train, fine_tune, EnvState, TrainConfig};
