pub mod dataprep;
pub mod evalkit;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod seeding;
pub mod synthetic;
pub mod tgstore;
