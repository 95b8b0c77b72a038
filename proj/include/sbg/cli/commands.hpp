#pragma once

#include "sbg/cli/run_config.hpp"

namespace sbg::cli {

/// Exit codes shared by the library entry points and the binary.
enum ExitCode : int {
  exit_ok = 0,
  exit_failure = 1,     // unexpected
  exit_input = 2,       // input / config / unsupported / state errors
  exit_numerical = 3,   // non-finite arithmetic
  exit_estimation = 4,  // degenerate estimators (dead weights, empty sets)
};

/// Runs the biased chain, splits it per the contiguous/contiguous/uniform
/// protocol and writes train/val/test plus a provenance record.
void cmd_generate_data(const RunConfig& config);

/// Fits the flow on the generated data; writes the training log, the
/// best-validation checkpoint and a resumable last-state checkpoint.
void cmd_train(const RunConfig& config);

/// Draws proposal samples from the checkpoint into an ensemble file.
void cmd_sample(const RunConfig& config);

/// Runs the full annealed-SMC loop and writes the transported ensemble,
/// diagnostics and optional trajectory dumps.
void cmd_transport(const RunConfig& config);

/// Runs the proposal / one-shot reweighting / annealed-SMC estimator triple on
/// one shared proposal draw and writes per-estimator reports and histograms.
void cmd_evaluate(const RunConfig& config);

/// Prints the reports found in the output directory as a table.
void cmd_report(const RunConfig& config);

/// Exception-to-exit-code mapping used by the binary around every command.
int run_guarded(const std::function<void()>& body);

}  // namespace sbg::cli
