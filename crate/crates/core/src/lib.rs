pub mod cli;
pub mod experiment;
pub mod mdlprobe;
pub mod numerics;
pub mod ppo;
pub mod pretrain;
pub mod reward;
pub mod rng;
pub mod taskgen;
pub mod textfeatures;
pub mod transformer;
