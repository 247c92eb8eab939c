//! Diverse solutions of two-player differentiable games.
//!
//! The crate treats an optimizer as a fixed-point operator on the joint
//! parameter vector, measures finite-horizon trajectory separation with
//! truncated Lyapunov exponents, and runs a branching tree search that starts
//! at high-separation points and branches along maximal-separation
//! directions. Candidate branch points can be classified against the
//! saddle-node, pitchfork and Hopf normal forms.

pub mod autodiff;
pub mod bifurcation;
pub mod error;
pub mod games;
pub mod grr;
pub mod lyapunov;
pub mod matrix;
pub mod optimizers;
pub mod spectral;

pub use error::{Error, Result};
pub use games::{Game, JointParams, ParamSpace};
pub use matrix::Matrix;
pub use optimizers::StepOperator;
