//! Dense feature stack → LSTM (or dense) core → linear Q head, with exact
//! reverse-mode gradients through time.

mod gradcheck;
mod network;
mod params;
mod tensor;

pub use gradcheck::{finite_difference_check, gradient_check, gradient_check_with, GradCheckReport};
pub use network::{
    backward_sequence, forward_sequence, infer_sequence, init_parameters, CoreKind, LstmState,
    NetworkSpec, Tape,
};
pub use params::{GradientSet, ParameterSet, MAGIC};
pub(crate) use params::{read_line, read_magic, read_tensor_body, write_entry};
pub use tensor::Tensor;
