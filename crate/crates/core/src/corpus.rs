//! Sample programs shipped with the crate.

pub const LOOP_SUM: &str = include_str!("../corpus/loop_sum.s");
pub const FIBONACCI: &str = include_str!("../corpus/fibonacci.s");
pub const MEMCOPY: &str = include_str!("../corpus/memcopy.s");
pub const NESTED_BRANCHES: &str = include_str!("../corpus/nested_branches.s");
pub const OUTPUT_SEQUENCE: &str = include_str!("../corpus/output_sequence.s");
pub const STRAIGHT_LINE: &str = include_str!("../corpus/straight_line.s");
pub const SUBLABELS: &str = include_str!("../corpus/sublabels.s");
/// Endless service loop plus a handler that never runs; for campaigns.
pub const WORKLOAD: &str = include_str!("../corpus/workload.s");

/// Terminating programs with their expected output.
pub const PROGRAMS: [(&str, &str, &[u8]); 7] = [
    ("loop_sum", LOOP_SUM, &[55]),
    ("fibonacci", FIBONACCI, &[1, 1, 2, 3, 5, 8, 13, 21, 34, 55]),
    ("memcopy", MEMCOPY, &[3, 1, 4, 1, 5]),
    ("nested_branches", NESTED_BRANCHES, &[100, 201, 102, 53, 104, 205]),
    ("output_sequence", OUTPUT_SEQUENCE, &[1, 2, 3, 4, 5]),
    ("straight_line", STRAIGHT_LINE, &[30, 25, 18, 23, 20, 20]),
    ("sublabels", SUBLABELS, &[3, 2, 1, 9]),
];
