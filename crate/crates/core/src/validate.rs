//! Invariant suites for the validate subcommand.
