//! Coarse-grained supercritical machinery at desk scale: typical trajectories,
//! proper parts, good sequences and seeds, the exploration Algorithm, the
//! dominating ω^q percolation, and the branching and hit-chain processes.

mod algorithm;
mod branching;
mod good;
mod omega;
mod typical;

pub use algorithm::{
    read_round_records, read_statuses, replay_statuses, run_algorithm, write_round_records, write_statuses,
    AlgorithmRun, Outcome, RoundRecord, Status, StatusMap,
};
pub use branching::{
    sample_sigma, simulate_branching, simulate_hit_chain, simulate_trimmed_direct, x_at_sums, BranchingRun,
    ChainVariant, Generation,
};
pub use good::{check_good_sequence, find_seed, Bullet, GoodVerdict, SeedCandidate, Violation};
pub use omega::{sample_omega_q, spans_box, OmegaSample};
pub use typical::{
    classify_typical, is_typical, proper_part, star_proper_part, traj_label, AlgorithmParams, BandLaw, Event,
    ScaleOverrides, StarPart, TrajCache, Typicality, TypicalityParams, Verdict, C_EXP,
};

#[cfg(test)]
mod tests;
