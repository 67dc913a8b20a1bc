pub mod attack;
pub mod dataset;
pub mod experiments;
pub mod game;
pub mod lp;
pub mod rng;
pub mod tom;
pub mod verify;
