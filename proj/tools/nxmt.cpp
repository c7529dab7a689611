// nxmt: pretrain, fine-tune, sweep, analyze and export NxM-sparse toy models.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "nxm/checkpoint.hpp"
#include "nxm/compressed.hpp"
#include "nxm/experiment.hpp"
#include "nxm/metrics.hpp"
#include "nxm/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return json::parse(in);
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Remaining "--key=value" arguments after the named options are consumed.
std::vector<std::string> overrides_of(const CLI::App* sub) {
  std::vector<std::string> out;
  for (const auto& arg : sub->remaining()) {
    if (arg.rfind("--", 0) != 0 || arg.find('=') == std::string::npos)
      throw std::invalid_argument("unexpected argument '" + arg + "' (expected --key=value)");
    out.push_back(arg);
  }
  return out;
}

json load_doc(const std::string& config_path, const CLI::App* sub) {
  json doc = config_path.empty() ? json::object() : read_json(config_path);
  nxm::apply_overrides(doc, overrides_of(sub));
  return doc;
}

int cmd_pretrain(const std::string& config_path, const CLI::App* sub) {
  json doc = load_doc(config_path, sub);
  if (!doc.contains("output_dir")) doc["output_dir"] = "runs/pretrain";
  const nxm::RunConfig config = nxm::config_from_json(doc);
  fs::create_directories(config.output_dir);
  const nxm::ParameterSet params = nxm::pretrain_checkpoint(config);
  const fs::path path = fs::path(config.output_dir) / "pretrained.nxmw";
  nxm::save_checkpoint(path, params);
  std::ofstream(fs::path(config.output_dir) / "config.json") << nxm::to_json(config).dump(2) << "\n";
  std::cout << "wrote " << path.string() << "\n";
  return 0;
}

int cmd_finetune(const std::string& config_path, const CLI::App* sub) {
  const nxm::RunConfig config = nxm::config_from_json(load_doc(config_path, sub));
  try {
    const nxm::RunSummary summary = nxm::run_experiment(config);
    std::cout << nxm::to_json(summary).dump(2) << "\n";
    return 0;
  } catch (const nxm::DivergenceError& e) {
    std::cerr << "run diverged: " << e.what() << "\n(partial metrics in " << config.output_dir << ")\n";
    return 3;
  }
}

int cmd_sweep(const std::string& config_path, const std::vector<std::string>& grid_args, const CLI::App* sub) {
  json doc = config_path.empty() ? json::object() : read_json(config_path);
  json base = doc.value("base", json::object());
  json grid = doc.value("grid", json::object());
  std::string out = doc.value("output_dir", std::string("runs/sweep"));
  nxm::apply_overrides(base, overrides_of(sub));
  // Cells get their own directories, so an output_dir override names the sweep root.
  if (base.contains("output_dir")) {
    out = base["output_dir"].get<std::string>();
    base.erase("output_dir");
  }
  for (const auto& g : grid_args) {
    const auto eq = g.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("--grid expects key=[v1,v2,...]: " + g);
    json values = json::parse(g.substr(eq + 1));
    if (!values.is_array()) throw std::invalid_argument("--grid values must be a JSON list: " + g);
    grid[g.substr(0, eq)] = values;
  }
  const auto cells = nxm::sweep(base, grid, out);
  std::size_t failed = 0;
  for (const auto& c : cells) failed += c.summary.status != "ok";
  std::cout << read_text(fs::path(out) / "summary.csv");
  std::cout << cells.size() - failed << " of " << cells.size() << " cells completed\n";
  return failed == 0 ? 0 : 4;
}

std::string fmt(const json& v) {
  if (v.is_null()) return "-";
  if (v.is_number_float()) return nxm::format_double(v.get<double>());
  return v.dump();
}

int cmd_analyze(const std::vector<std::string>& runs, const std::string& report) {
  struct Point {
    std::string run;
    double similarity;
    double loss;
  };
  std::vector<Point> points;
  for (const auto& run : runs) {
    const fs::path dir = run;
    const json summary = read_json((dir / "summary.json").string());
    const nxm::MetricLog log = nxm::MetricLog::read_csv(dir / "metrics.csv");
    std::cout << "== " << run << "\n";
    for (const char* key : {"status", "method", "seed", "iterations", "best_val_loss", "final_val_loss",
                            "final_residual", "mean_similarity", "mean_similarity_after_first", "compliant"})
      std::cout << "  " << key << ": " << fmt(summary.value(key, json())) << "\n";

    std::cout << "  iterations logged:";
    std::size_t shown = 0;
    for (const auto& row : log.rows())
      if (row.similarity) {
        if (shown++ < 12) std::cout << " k" << *row.k << "=" << nxm::format_double(*row.similarity);
      }
    std::cout << (shown > 12 ? " ..." : "") << "\n";

    if (fs::exists(dir / "decay.csv")) {
      std::cout << "  presence  population  mean |w_final|/|w_initial|\n";
      std::istringstream decay(read_text(dir / "decay.csv"));
      std::string line;
      std::getline(decay, line);
      while (std::getline(decay, line)) {
        std::istringstream fields(line);
        std::string presence, population, ratio;
        std::getline(fields, presence, ',');
        std::getline(fields, population, ',');
        std::getline(fields, ratio, ',');
        if (population != "0") std::printf("  %8s  %10s  %s\n", presence.c_str(), population.c_str(), ratio.c_str());
      }
    }
    if (summary.value("status", "") == "ok" && summary["mean_similarity"].is_number())
      points.push_back({run, summary["mean_similarity"].get<double>(), summary["final_val_loss"].get<double>()});
  }

  if (!report.empty()) {
    std::sort(points.begin(), points.end(), [](const Point& a, const Point& b) { return a.similarity < b.similarity; });
    std::ofstream out(report);
    out << "run,mean_similarity,final_val_loss\n";
    for (const auto& p : points)
      out << p.run << ',' << nxm::format_double(p.similarity) << ',' << nxm::format_double(p.loss) << '\n';
    std::cout << "similarity report: " << report << "\n";
  }
  return 0;
}

int cmd_export(const std::string& checkpoint, const std::string& pattern_text, const std::string& out,
               const std::vector<std::string>& layers) {
  const nxm::SparsityPattern pattern = nxm::SparsityPattern::parse(pattern_text);
  const nxm::ParameterSet params = nxm::load_checkpoint(checkpoint);
  fs::create_directories(out);
  std::vector<std::string> chosen = layers;
  const bool explicit_layers = !chosen.empty();
  if (!explicit_layers)
    for (const auto& name : params.names()) {
      const nxm::Tensor& w = params.get(name);
      if (w.rank() == 2 && w.cols() % pattern.n == 0 && nxm::check_compliance(w, pattern)) chosen.push_back(name);
    }
  if (chosen.empty()) throw std::runtime_error("no tensor in the checkpoint satisfies " + pattern.to_string());
  std::size_t total = 0;
  for (const auto& name : chosen) {
    const nxm::Tensor& w = params.get(name);
    const nxm::CompressedNxM c = nxm::compress(w, pattern);
    const fs::path path = fs::path(out) / (name + ".nxmc");
    nxm::save_compressed(path, c);
    if (!(nxm::decompress(nxm::load_compressed(path)) == w))
      throw std::runtime_error("round trip mismatch for " + name);
    const std::size_t bytes = nxm::serialized_size(pattern, w.shape());
    total += bytes;
    std::cout << name << " " << nxm::shape_to_string(w.shape()) << " -> " << bytes << " bytes (dense "
              << w.numel() * sizeof(double) << ")\n";
  }
  std::cout << chosen.size() << " tensors, " << total << " bytes\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"NxM semi-structured sparsity via ADMM on desk-scale transformers"};
  app.require_subcommand(1);

  std::string config_path;
  auto* pretrain = app.add_subcommand("pretrain", "dense pretraining; writes pretrained.nxmw");
  pretrain->add_option("-c,--config", config_path, "JSON run config");
  pretrain->allow_extras();

  auto* finetune = app.add_subcommand("finetune", "one fine-tuning run (admm-nxm, asp, admm-unstructured, dense)");
  finetune->add_option("-c,--config", config_path, "JSON run config");
  finetune->allow_extras();

  std::vector<std::string> grid_args;
  auto* sweep = app.add_subcommand("sweep", "grid of runs with a merged summary table");
  sweep->add_option("-c,--config", config_path, "JSON document with base, grid and output_dir");
  sweep->add_option("-g,--grid", grid_args, "grid axis as key=[v1,v2,...]");
  sweep->allow_extras();

  std::vector<std::string> runs;
  std::string report;
  auto* analyze = app.add_subcommand("analyze", "similarity, residual and decay report for run directories");
  analyze->add_option("runs", runs, "run directories")->required();
  analyze->add_option("-r,--report", report, "write a similarity vs validation loss CSV");

  std::string checkpoint, pattern = "4:2", out = "export";
  std::vector<std::string> layers;
  auto* exporter = app.add_subcommand("export", "write compressed NxM tensors from a checkpoint");
  exporter->add_option("checkpoint", checkpoint, "checkpoint file")->required();
  exporter->add_option("-p,--pattern", pattern, "N:M pattern");
  exporter->add_option("-o,--out", out, "output directory");
  exporter->add_option("-l,--layer", layers, "tensor to export (default: every compliant matrix)");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*pretrain) return cmd_pretrain(config_path, pretrain);
    if (*finetune) return cmd_finetune(config_path, finetune);
    if (*sweep) return cmd_sweep(config_path, grid_args, sweep);
    if (*analyze) return cmd_analyze(runs, report);
    if (*exporter) return cmd_export(checkpoint, pattern, out, layers);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
