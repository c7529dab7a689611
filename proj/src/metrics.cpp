#include "nxm/metrics.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace nxm {

std::string format_double(double value) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  return buf;
}

namespace {

template <class T>
std::string cell(const std::optional<T>& v) {
  if (!v) return {};
  if constexpr (std::is_floating_point_v<T>)
    return format_double(*v);
  else
    return std::to_string(*v);
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::optional<double> opt_double(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return std::stod(s);
}

}  // namespace

std::string MetricLog::to_csv() const {
  std::string out = std::string(kHeader) + "\n";
  for (const auto& r : rows_) {
    out += std::to_string(r.step) + "," + std::to_string(r.epoch) + "," + cell(r.k) + "," + cell(r.train_loss) +
           "," + cell(r.aug_loss) + "," + cell(r.val_loss_pruned) + "," + cell(r.residual) + "," +
           cell(r.similarity) + "," + r.method + "," + std::to_string(r.seed) + "\n";
  }
  return out;
}

void MetricLog::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_csv();
}

MetricLog MetricLog::parse_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kHeader) throw std::runtime_error("metric CSV header mismatch");
  MetricLog log;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split(line);
    if (f.size() != 10) throw std::runtime_error("metric CSV row has " + std::to_string(f.size()) + " fields");
    MetricRow r;
    r.step = std::stoull(f[0]);
    r.epoch = std::stoull(f[1]);
    if (!f[2].empty()) r.k = std::stoull(f[2]);
    r.train_loss = opt_double(f[3]);
    r.aug_loss = opt_double(f[4]);
    r.val_loss_pruned = opt_double(f[5]);
    r.residual = opt_double(f[6]);
    r.similarity = opt_double(f[7]);
    r.method = f[8];
    r.seed = std::stoull(f[9]);
    log.append(std::move(r));
  }
  return log;
}

MetricLog MetricLog::read_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_csv(ss.str());
}

}  // namespace nxm
