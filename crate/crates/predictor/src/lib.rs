pub mod predictor;
pub mod tensor;
