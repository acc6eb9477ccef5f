pub mod replay;
pub mod run;
pub mod shapley;
pub mod wev;
