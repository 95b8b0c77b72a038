#pragma once

#include <string>

#include "sbg/metrics.hpp"
#include "sbg/smc.hpp"
#include "sbg/train.hpp"
#include "sbg/transport.hpp"

namespace sbg {

enum class DatasetFormat { csv, binary };

/// CSV: a `# dim=<d>` comment row, then one comma-separated sample per line
/// with 17 significant digits.  Binary: 8-byte count, 8-byte dim
/// (little-endian), then row-major 64-bit floats.
void write_dataset(const std::string& path, const Matrix& samples, DatasetFormat format);
Matrix read_dataset(const std::string& path);

/// Ensemble CSV: `# dim=<d> tau=<t>` header, then per particle the position,
/// log-weight and quarantine flag.
void write_ensemble_csv(const std::string& path, const ParticleEnsemble& ensemble);
ParticleEnsemble read_ensemble_csv(const std::string& path);

void write_histogram_csv(const std::string& path, const HistogramTable& table);

std::string metrics_report_json(const MetricsReport& report);
void write_metrics_report(const std::string& path, const MetricsReport& report);
MetricsReport read_metrics_report(const std::string& path);

std::string diagnostics_json(const SbgDiagnostics& diagnostics);
void write_diagnostics(const std::string& path, const SbgDiagnostics& diagnostics);

/// Versioned binary checkpoint: architecture, parameters, EMA shadow,
/// standardization and CoM scale, plus optional trainer state.  Raw 64-bit
/// parameter images make reloads bit-exact.
void save_checkpoint(const std::string& path, const FlowModel& model,
                     const TrainerState* state = nullptr);
FlowModel load_checkpoint(const std::string& path, TrainerState* state = nullptr);

/// "%.17g" rendering used wherever floats cross a text boundary.
std::string format_double(double value);

}  // namespace sbg
