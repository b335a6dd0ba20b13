pub mod calibrate;
pub mod eval;
pub mod grad_check;
pub mod synth;
