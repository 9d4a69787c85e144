//! Simulation and output-feedback control of a viscous liquid tank.
//!
//! A tank carrying a viscous liquid is driven by a commanded acceleration.
//! The liquid obeys the one-dimensional viscous Saint-Venant equations in
//! the tank frame, the tank is a double integrator, and only the tank
//! position and the two wall levels are measured. This crate provides:
//!
//! - [`params`]: parameters, gains, sampled state, the dimensionless frame
//! - [`gfunc`]: the level function `G`, spill radius, gain conditions
//! - [`scheme`]: the positivity-preserving explicit step of the fluid
//! - [`feedback`]: control laws and exact tank/observer updates
//! - [`lyapunov`]: discrete Lyapunov functionals and the size monitor
//! - [`sim`]: closed-loop runs with monitor-based acceptance
//! - [`plan`]: gain selection for spill-free, slosh-free transfers
//! - [`convergence`]: self-convergence and mass-drift studies
//! - [`io`]: scenario files, initial-condition expressions, CSV output

pub mod convergence;
pub mod error;
pub mod feedback;
pub mod gfunc;
pub mod io;
pub mod lyapunov;
pub mod params;
pub mod plan;
pub mod scheme;
pub mod sim;

pub use error::{Error, Result};
pub use feedback::ControllerKind;
pub use lyapunov::RightStencil;
pub use params::{FluidGrid, Gains, MeasuredOutput, Observer, PhysParams, RigState, TankState};
pub use sim::{run, MonitorMode, RunConfig, Trace};

/// Worker pool honouring `TANKSIM_THREADS`.
pub fn thread_pool() -> rayon::ThreadPool {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = std::env::var("TANKSIM_THREADS")
        .ok()
        .and_then(|s| s.trim().parse::<usize>().ok())
        .filter(|n| *n > 0)
    {
        builder = builder.num_threads(n);
    }
    builder.build().expect("thread pool")
}
