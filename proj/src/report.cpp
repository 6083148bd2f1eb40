// SPDX-License-Identifier: Apache-2.0
#include "vfa/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>
#include <tuple>

#include <json.hpp>

#include "vfa/error.hpp"
#include "vfa/model_io.hpp"

namespace vfa {

using nlohmann::ordered_json;

ReportFormat parse_report_format(std::string_view text) {
  if (text == "json") return ReportFormat::Json;
  if (text == "csv") return ReportFormat::Csv;
  throw ConfigError("unknown report format '" + std::string(text) + "'");
}

ReportFile make_analysis_report(const VfSummary& summary,
                                std::map<std::string, std::string> config) {
  ReportFile r;
  r.kind = "analysis";
  r.config = std::move(config);
  for (const LayerVf& l : summary.layers)
    r.layers.push_back({l.layer, l.activations, l.weights, l.lvf_act, l.lvf_weight});
  for (const ChannelVf& c : summary.channels)
    r.channels.push_back({std::string(to_string(c.mode)), c.layer, c.channel, c.cvf, c.units});
  r.mvf_act = summary.mvf_act;
  r.mvf_weight = summary.mvf_weight;
  r.mvf_total = summary.mvf_total;

  std::uint64_t total = 0;
  auto add = [&](const std::string& prefix, const std::optional<ModeCounters>& c,
                 const std::vector<std::optional<double>>& alt) {
    if (!c) return;
    r.counters[prefix + ".units"] = c->units;
    r.counters[prefix + ".unit_images"] = c->unit_images;
    r.counters[prefix + ".injection_passes"] = c->injection_passes;
    r.counters[prefix + ".gradient_passes"] = c->gradient_passes;
    r.counters[prefix + ".gradient_skips"] = c->gradient_skips;
    r.counters[prefix + ".forward_passes"] = c->forward_passes();
    r.counters[prefix + ".exhaustive_fi_forwards"] = c->exhaustive_fi_forwards;
    total += c->forward_passes();
    // Layer-mean VF under the alternative bound reading, for comparison.
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& v : alt)
      if (v) {
        sum += *v;
        ++n;
      }
    if (n) r.metrics[prefix + ".mvf_alt_reading"] = sum / static_cast<double>(n);
  };
  std::vector<std::optional<double>> act_alt, weight_alt;
  for (const LayerVf& l : summary.layers) {
    act_alt.push_back(l.lvf_act_alt);
    weight_alt.push_back(l.lvf_weight_alt);
  }
  add("activations", summary.act_counters, act_alt);
  add("filters", summary.weight_counters, weight_alt);
  r.counters["forward_passes"] = total;
  r.counters["edm.maps"] = summary.edm.maps;
  r.counters["edm.non_monotone"] = summary.edm.non_monotone;
  r.metrics["edm.max_mass_error"] = summary.edm.max_mass_error;
  r.warnings = summary.warnings;
  return r;
}

ReportFile make_fi_report(const FiResult& result, const Network& net,
                          std::map<std::string, std::string> config) {
  ReportFile r;
  r.kind = "fi";
  r.config = std::move(config);
  r.config["fi_mode"] = std::string(to_string(result.mode));
  r.config["target"] = std::string(to_string(result.target));
  const bool weights = result.target == FaultTarget::Weights;
  double sum = 0.0;
  for (const FiLayerResult& l : result.layers) {
    ReportLayer rl;
    rl.layer = l.layer;
    rl.activations = net.output_activations(l.layer);
    rl.weights = net.weight_count(l.layer);
    (weights ? rl.lvf_weight : rl.lvf_act) = l.lvf;
    r.layers.push_back(rl);
    r.counters["layer" + std::to_string(l.layer) + ".fault_space"] = l.fault_space;
    r.counters["layer" + std::to_string(l.layer) + ".injections"] = l.counters.injections;
    sum += l.lvf;
  }
  for (const ChannelVf& c : result.channels)
    r.channels.push_back({std::string(to_string(c.mode)), c.layer, c.channel, c.cvf, c.units});
  if (!result.layers.empty())
    (weights ? r.mvf_weight : r.mvf_act) = sum / static_cast<double>(result.layers.size());
  r.counters["injections"] = result.counters.injections;
  r.counters["batch_forwards"] = result.counters.batch_forwards;
  r.counters["image_forwards"] = result.counters.image_forwards;
  r.counters["forward_passes"] = result.counters.image_forwards;
  return r;
}

ReportFile compare_reports(const ReportFile& a, const ReportFile& b) {
  using Key = std::tuple<std::string, int, int>;
  std::map<Key, double> left, right;
  for (const ReportChannel& c : a.channels) left[{c.mode, c.layer, c.channel}] = c.cvf;
  for (const ReportChannel& c : b.channels) right[{c.mode, c.layer, c.channel}] = c.cvf;

  auto contains = [](const std::map<Key, double>& big, const std::map<Key, double>& small) {
    return std::all_of(small.begin(), small.end(),
                       [&](const auto& kv) { return big.contains(kv.first); });
  };
  if (!contains(left, right) && !contains(right, left))
    throw AnalysisError("reports cover mismatched unit sets; neither contains the other");

  ReportFile out;
  out.kind = "compare";
  out.config["left.kind"] = a.kind;
  out.config["right.kind"] = b.kind;

  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> by_mode;
  for (const auto& [key, v] : left) {
    auto it = right.find(key);
    if (it == right.end()) continue;
    auto& lists = by_mode[std::get<0>(key)];
    lists.first.push_back(v);
    lists.second.push_back(it->second);
  }
  if (by_mode.empty()) throw AnalysisError("reports share no channel");
  for (const auto& [mode, lists] : by_mode)
    out.mae.push_back({"channel", mode, lists.first.size(), compare_mae(lists.first, lists.second)});

  std::vector<double> la, lb, wa, wb;
  for (const ReportLayer& x : a.layers)
    for (const ReportLayer& y : b.layers) {
      if (x.layer != y.layer) continue;
      if (x.lvf_act && y.lvf_act) {
        la.push_back(*x.lvf_act);
        lb.push_back(*y.lvf_act);
      }
      if (x.lvf_weight && y.lvf_weight) {
        wa.push_back(*x.lvf_weight);
        wb.push_back(*y.lvf_weight);
      }
    }
  if (!la.empty()) out.mae.push_back({"layer", "activations", la.size(), compare_mae(la, lb)});
  if (!wa.empty()) out.mae.push_back({"layer", "filters", wa.size(), compare_mae(wa, wb)});
  return out;
}

namespace {

ordered_json optional_number(const std::optional<double>& v) {
  return v ? ordered_json(*v) : ordered_json(nullptr);
}

std::optional<double> read_optional(const ordered_json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

}  // namespace

std::string to_json_text(const ReportFile& r) {
  ordered_json j;
  j["schema_version"] = r.schema_version;
  j["kind"] = r.kind;
  j["config"] = r.config;
  ordered_json layers = ordered_json::array();
  ordered_json series_labels = ordered_json::array(), series_act = ordered_json::array(),
               series_weight = ordered_json::array();
  for (const ReportLayer& l : r.layers) {
    layers.push_back({{"layer", l.layer},
                      {"activations", l.activations},
                      {"weights", l.weights},
                      {"lvf_act", optional_number(l.lvf_act)},
                      {"lvf_weight", optional_number(l.lvf_weight)}});
    series_labels.push_back("layer " + std::to_string(l.layer));
    series_act.push_back(optional_number(l.lvf_act));
    series_weight.push_back(optional_number(l.lvf_weight));
  }
  j["layers"] = layers;
  ordered_json channels = ordered_json::array();
  for (const ReportChannel& c : r.channels)
    channels.push_back({{"mode", c.mode},
                        {"layer", c.layer},
                        {"channel", c.channel},
                        {"cvf", c.cvf},
                        {"units", c.units}});
  j["channels"] = channels;
  j["mvf_act"] = optional_number(r.mvf_act);
  j["mvf_weight"] = optional_number(r.mvf_weight);
  j["mvf_total"] = optional_number(r.mvf_total);
  j["counters"] = r.counters;
  j["metrics"] = r.metrics;
  ordered_json mae = ordered_json::array();
  for (const MaeRow& m : r.mae)
    mae.push_back({{"scope", m.scope}, {"mode", m.mode}, {"count", m.count}, {"mae", m.mae}});
  j["mae"] = mae;
  j["lvf_series"] = {{"labels", series_labels},
                     {"activations", series_act},
                     {"filters", series_weight}};
  j["warnings"] = r.warnings;
  return j.dump(2) + "\n";
}

ReportFile report_from_json_text(std::string_view text) {
  ReportFile r;
  try {
    const ordered_json j = ordered_json::parse(text);
    r.schema_version = j.at("schema_version").get<int>();
    if (r.schema_version != kReportSchemaVersion)
      throw LoadError("report schema_version " + std::to_string(r.schema_version) +
                      " is not supported");
    r.kind = j.at("kind").get<std::string>();
    r.config = j.at("config").get<std::map<std::string, std::string>>();
    for (const auto& l : j.at("layers"))
      r.layers.push_back({l.at("layer").get<int>(), l.at("activations").get<std::uint64_t>(),
                          l.at("weights").get<std::uint64_t>(), read_optional(l, "lvf_act"),
                          read_optional(l, "lvf_weight")});
    for (const auto& c : j.at("channels"))
      r.channels.push_back({c.at("mode").get<std::string>(), c.at("layer").get<int>(),
                            c.at("channel").get<int>(), c.at("cvf").get<double>(),
                            c.at("units").get<std::uint64_t>()});
    r.mvf_act = read_optional(j, "mvf_act");
    r.mvf_weight = read_optional(j, "mvf_weight");
    r.mvf_total = read_optional(j, "mvf_total");
    r.counters = j.at("counters").get<std::map<std::string, std::uint64_t>>();
    r.metrics = j.at("metrics").get<std::map<std::string, double>>();
    for (const auto& m : j.at("mae"))
      r.mae.push_back({m.at("scope").get<std::string>(), m.at("mode").get<std::string>(),
                       m.at("count").get<std::uint64_t>(), m.at("mae").get<double>()});
    r.warnings = j.at("warnings").get<std::vector<std::string>>();
  } catch (const ordered_json::exception& e) {
    throw LoadError(std::string("malformed report: ") + e.what());
  }
  return r;
}

namespace {

std::string csv_number(const std::optional<double>& v) {
  if (!v) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", *v);
  return buf;
}

}  // namespace

std::string to_csv_text(const ReportFile& r) {
  std::ostringstream out;
  out << "layer,activations,weights,lvf_act,lvf_weight\n";
  for (const ReportLayer& l : r.layers)
    out << l.layer << ',' << l.activations << ',' << l.weights << ',' << csv_number(l.lvf_act)
        << ',' << csv_number(l.lvf_weight) << '\n';
  return out.str();
}

void write_report(const ReportFile& report, const std::filesystem::path& path,
                  ReportFormat format) {
  write_file_atomic(path, format == ReportFormat::Json ? to_json_text(report)
                                                       : to_csv_text(report));
}

ReportFile read_report(const std::filesystem::path& path) {
  return report_from_json_text(read_file(path));
}

}  // namespace vfa
