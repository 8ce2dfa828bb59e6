//! Experiment campaigns (one per reproduced figure).
