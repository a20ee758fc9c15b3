pub mod data;
pub mod loss;
pub mod model;
pub mod tokenizer;
pub mod trainer;
pub mod eval;
pub mod corpus;
pub mod cli;
