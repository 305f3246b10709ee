// SPDX-License-Identifier: MIT OR Apache-2.0

//! Experiment orchestration behind the `kvsmooth` command-line tool.
//!
//! | exit code | meaning |
//! |-----------|---------|
//! | 0 | success |
//! | 1 | internal error |
//! | 2 | configuration, I/O or model-file error |
//! | 3 | input schema error (records, captions, lexicon, annotations, probes) |
//! | 4 | verification failure |
//! | 5 | no work (empty prompt file); nothing is written |

mod bench;
mod config;
mod eval;
mod generate;
mod sweep;
mod toy;
mod verify;

pub use bench::{bench_with, cmd_bench, peak_rss, timed_pass, ArmStats, BenchReport};
pub use config::{
    config_digest, EvalInputs, ModelSource, Prompt, PromptSource, RunConfig, DEFAULT_MAX_NEW_TOKENS,
};
pub use eval::{cmd_eval, load_caption_source, records_to_captions, CaptionSource, EvalContext};
pub use generate::{
    cmd_generate, run_prompt, run_prompts, write_jsonl, write_jsonl_file, GenerationRecord,
    PromptRun, StepRecord, Timing, GENERATION_SCHEMA_VERSION,
};
pub use sweep::{cmd_sweep, mean_lambda_tilde, SweepAxis, SweepOutcome, SweepRow, SWEEP_SCHEMA_VERSION};
pub use toy::{ToyCorpus, SPECIALS};
pub use verify::{
    cmd_verify, relative_logit_diff, suite_contraction, suite_ema_closed_form, suite_fifo,
    suite_lambda_zero, suite_map_oracle, suite_rank, suite_rank_with, ContractionProbe, RankFn,
    SuiteResult, VerifyReport,
};

use crate::error::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SCHEMA: i32 = 3;
pub const EXIT_VERIFY: i32 = 4;
pub const EXIT_NO_WORK: i32 = 5;

/// Process exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    use Error::*;
    match err {
        InvalidModelConfig(_)
        | InvalidSmootherConfig(_)
        | BadMagic { .. }
        | VersionMismatch { .. }
        | HeaderInconsistent(_)
        | TruncatedPayload { .. }
        | BudgetExceeded { .. }
        | TokenOutOfRange { .. }
        | Config(_)
        | Io { .. } => EXIT_CONFIG,
        Schema { .. }
        | Json(_)
        | Csv(_)
        | InvalidLexicon(_)
        | MissingAnnotation(_)
        | UncaptionedProbe(_)
        | InvalidProbe(_)
        | UnknownWord(_)
        | EmptyGroup(_) => EXIT_SCHEMA,
        NoWork(_) => EXIT_NO_WORK,
        _ => EXIT_INTERNAL,
    }
}
