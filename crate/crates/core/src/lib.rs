pub mod encoders;
pub mod evaluation;
pub mod fusion;
pub mod plot_synth;
pub mod tensor;
pub mod training;
