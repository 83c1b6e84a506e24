pub mod game;
pub mod linalg;
