// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "vfa/analysis.hpp"
#include "vfa/fi.hpp"

namespace vfa {

inline constexpr int kReportSchemaVersion = 1;

struct ReportLayer {
  int layer = 0;
  std::uint64_t activations = 0;
  std::uint64_t weights = 0;
  std::optional<double> lvf_act;
  std::optional<double> lvf_weight;
  bool operator==(const ReportLayer&) const = default;
};

/// One channel result; `mode` is "activations" or "filters" for both analysis
/// and injection reports so the two join on (mode, layer, channel).
struct ReportChannel {
  std::string mode;
  int layer = 0;
  int channel = 0;
  double cvf = 0.0;
  std::uint64_t units = 0;
  bool operator==(const ReportChannel&) const = default;
};

struct MaeRow {
  std::string scope;  // "channel" or "layer"
  std::string mode;
  std::uint64_t count = 0;
  double mae = 0.0;
  bool operator==(const MaeRow&) const = default;
};

/// Serializable campaign result. `kind` is "analysis", "fi" or "compare".
/// Field order and content are deterministic; no timestamps or host data.
struct ReportFile {
  int schema_version = kReportSchemaVersion;
  std::string kind;
  std::map<std::string, std::string> config;
  std::vector<ReportLayer> layers;
  std::vector<ReportChannel> channels;
  std::optional<double> mvf_act;
  std::optional<double> mvf_weight;
  std::optional<double> mvf_total;
  std::map<std::string, std::uint64_t> counters;
  std::map<std::string, double> metrics;
  std::vector<MaeRow> mae;
  std::vector<std::string> warnings;
  bool operator==(const ReportFile&) const = default;
};

enum class ReportFormat { Json, Csv };
ReportFormat parse_report_format(std::string_view text);

ReportFile make_analysis_report(const VfSummary& summary,
                                std::map<std::string, std::string> config);
ReportFile make_fi_report(const FiResult& result, const Network& net,
                          std::map<std::string, std::string> config);
/// Joins two reports on (mode, layer, channel) and on (layer, lvf) pairs.
/// Throws AnalysisError when no channel is shared or when neither report's
/// channel set contains the other's.
ReportFile compare_reports(const ReportFile& a, const ReportFile& b);

std::string to_json_text(const ReportFile& report);
/// Throws LoadError on malformed documents or a schema mismatch.
ReportFile report_from_json_text(std::string_view text);
/// One header line and one row per layer.
std::string to_csv_text(const ReportFile& report);

/// Atomic write (temporary file plus rename) in the chosen format.
void write_report(const ReportFile& report, const std::filesystem::path& path,
                  ReportFormat format);
ReportFile read_report(const std::filesystem::path& path);

}  // namespace vfa
