//! Kinematic, velocity and dexterity model of the 3T2R AR-CUBE parallel
//! mechanism, with genetic-algorithm dimensional synthesis over drilling
//! trajectories.

pub mod design;
pub mod dexterity;
pub mod kinematics;
pub mod optimizer;
pub mod trajectory;
pub mod units;
pub mod validation;
pub mod velocity;

pub use design::{drill_axis, leg_frame, DesignVector, JointState, Leg, LegFrame, TaskPose};
pub use kinematics::{
    full_ik, reach_local, solve_any, Branch, Branches, IkError, IkSolution, Stage,
};
