// SPDX-License-Identifier: Apache-2.0
#include "vfa/cli.hpp"

#include <cstdio>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "vfa/analysis.hpp"
#include "vfa/error.hpp"
#include "vfa/fi.hpp"
#include "vfa/model_io.hpp"
#include "vfa/report.hpp"

namespace vfa {

namespace {

struct CommonOptions {
  std::string model;
  std::string batch;
  std::string sampling = "complete";
  double ratio = 0.1;
  std::uint64_t seed = 0;
  int workers = 1;
  std::string out;
  std::string format = "json";
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--model", o.model, "model file (.vglm)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--batch", o.batch, "batch file (.vglb)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--sampling", o.sampling, "complete | ratio")
      ->check(CLI::IsMember({"complete", "ratio"}));
  cmd->add_option("--ratio", o.ratio, "channel sampling ratio in (0, 1]");
  cmd->add_option("--seed", o.seed, "seed for every random choice");
  cmd->add_option("--workers", o.workers, "worker threads (0: one per core)");
  cmd->add_option("--out", o.out, "report path")->required();
  cmd->add_option("--format", o.format, "json | csv")->check(CLI::IsMember({"json", "csv"}));
}

std::string number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

SamplingPlan plan_for(const Network& net, const CommonOptions& o) {
  return o.sampling == "complete" ? make_complete_plan(net)
                                  : make_sampling_plan(net, o.ratio, o.seed);
}

std::map<std::string, std::string> common_config(const CommonOptions& o) {
  std::map<std::string, std::string> c;
  c["model"] = o.model;
  c["batch"] = o.batch;
  c["sampling"] = o.sampling;
  if (o.sampling == "ratio") c["ratio"] = number(o.ratio);
  c["seed"] = std::to_string(o.seed);
  return c;
}

struct Loaded {
  Loaded(Network n, std::vector<Tensor> images) : net(std::move(n)), run(net, std::move(images)) {}
  Network net;
  GoldenRun run;
};

std::unique_ptr<Loaded> load(const CommonOptions& o) {
  Network net = load_model(o.model);
  Batch batch = load_batch(o.batch, net.classes());
  return std::make_unique<Loaded>(std::move(net), std::move(batch.images));
}

std::string optional_text(const std::optional<double>& v) { return v ? number(*v) : "n/a"; }

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Single-bitflip vulnerability analysis of convolutional networks"};
  app.require_subcommand(1);

  CommonOptions an;
  std::string mode = "both";
  int rho_max = 10;
  double grad_tol = 1e-12;
  CLI::App* analyze = app.add_subcommand("analyze", "estimate vulnerability factors");
  add_common(analyze, an);
  analyze->add_option("--mode", mode, "activations | filters | both")
      ->check(CLI::IsMember({"activations", "filters", "both"}));
  analyze->add_option("--rho-max", rho_max, "largest grid exponent");
  analyze->add_option("--grad-tol", grad_tol, "gradient-zero tolerance");

  CommonOptions fo;
  FiCampaignSpec spec;
  std::string fi_mode = "exhaustive-weights";
  std::string target = "weights";
  CLI::App* fi = app.add_subcommand("fi", "run a fault-injection campaign");
  add_common(fi, fo);
  fi->add_option("--fi-mode", fi_mode,
                 "exhaustive-weights | exhaustive-activations | sfi-layerwise | "
                 "sfi-data-unaware | sfi-data-aware");
  fi->add_option("--target", target, "weights | activations (statistical modes)");
  fi->add_option("--layers", spec.layers, "conv layer indices (default: all)");
  fi->add_option("--e", spec.e, "error margin");
  fi->add_option("--t", spec.t, "confidence coefficient");
  fi->add_option("--p", spec.p, "failure probability for layer-wise sizing");
  fi->add_option("--pilot", spec.pilot, "data-aware pilot injections per bit");

  std::string left, right, cmp_out, cmp_format = "json";
  CLI::App* compare = app.add_subcommand("compare", "mean absolute error between two reports");
  compare->add_option("left", left, "first report (json)")->required()->check(CLI::ExistingFile);
  compare->add_option("right", right, "second report (json)")->required()->check(CLI::ExistingFile);
  compare->add_option("--out", cmp_out, "comparison report path");
  compare->add_option("--format", cmp_format, "json | csv")
      ->check(CLI::IsMember({"json", "csv"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    std::ostringstream o, r;
    const int code = app.exit(e, o, r);
    out << o.str();
    err << r.str();
    return code;
  }

  try {
    if (*analyze) {
      AnalysisConfig cfg{rho_max, grad_tol, an.workers};
      auto l = load(an);
      const SamplingPlan plan = plan_for(l->net, an);
      std::vector<VulnerabilityRecord> records;
      for (AnalysisMode m : {AnalysisMode::Activations, AnalysisMode::Filters}) {
        if (mode != "both" && mode != to_string(m)) continue;
        auto part = run_analysis(l->run, plan, m, cfg);
        records.insert(records.end(), std::make_move_iterator(part.begin()),
                       std::make_move_iterator(part.end()));
      }
      const VfSummary summary = aggregate(records, plan, l->net);
      auto config = common_config(an);
      config["mode"] = mode;
      config["rho_max"] = std::to_string(rho_max);
      config["grad_tol"] = number(grad_tol);
      const ReportFile report = make_analysis_report(summary, config);
      write_report(report, an.out, parse_report_format(an.format));
      out << "MVF_act " << optional_text(report.mvf_act) << "\n"
          << "MVF_weight " << optional_text(report.mvf_weight) << "\n"
          << "MVF_total " << optional_text(report.mvf_total) << "\n"
          << "forward passes " << report.counters.at("forward_passes") << "\n";
      for (const std::string& w : report.warnings) err << "warning: " << w << "\n";
      return 0;
    }
    if (*fi) {
      spec.mode = parse_fi_mode(fi_mode);
      spec.target = parse_fault_target(target);
      spec.seed = fo.seed;
      spec.workers = fo.workers;
      auto l = load(fo);
      const SamplingPlan plan = plan_for(l->net, fo);
      const FiResult result = run_fi(l->run, spec, plan);
      auto config = common_config(fo);
      config["e"] = number(spec.e);
      config["t"] = number(spec.t);
      config["p"] = number(spec.p);
      config["pilot"] = std::to_string(spec.pilot);
      const ReportFile report = make_fi_report(result, l->net, config);
      write_report(report, fo.out, parse_report_format(fo.format));
      out << "MVF_act " << optional_text(report.mvf_act) << "\n"
          << "MVF_weight " << optional_text(report.mvf_weight) << "\n"
          << "forward passes " << report.counters.at("forward_passes") << "\n";
      return 0;
    }
    if (*compare) {
      const ReportFile report = compare_reports(read_report(left), read_report(right));
      for (const MaeRow& m : report.mae)
        out << m.scope << ' ' << m.mode << " n=" << m.count << " MAE " << number(m.mae * 100.0)
            << " pp\n";
      if (!cmp_out.empty()) write_report(report, cmp_out, parse_report_format(cmp_format));
      return 0;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace vfa
