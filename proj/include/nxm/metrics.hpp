#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace nxm {

/// One logging event. Fields that do not apply to the event stay empty and
/// are written as empty CSV cells.
struct MetricRow {
  std::size_t step = 0;
  std::size_t epoch = 0;
  std::optional<std::size_t> k;
  std::optional<double> train_loss;
  std::optional<double> aug_loss;
  std::optional<double> val_loss_pruned;
  /// Max over constrained layers of ||W - Z||_F / ||W||_F.
  std::optional<double> residual;
  /// Mean over layers of the mask similarity to the previous iteration.
  std::optional<double> similarity;
  std::string method;
  std::uint64_t seed = 0;

  bool operator==(const MetricRow&) const = default;
};

/// Append-only metric record with a fixed CSV schema.
class MetricLog {
 public:
  static constexpr const char* kHeader =
      "step,epoch,k,train_loss,aug_loss,val_loss_pruned,residual,similarity,method,seed";

  void append(MetricRow row) { rows_.push_back(std::move(row)); }
  const std::vector<MetricRow>& rows() const { return rows_; }
  bool empty() const { return rows_.empty(); }

  std::string to_csv() const;
  void write_csv(const std::filesystem::path& path) const;
  static MetricLog parse_csv(const std::string& text);
  static MetricLog read_csv(const std::filesystem::path& path);

 private:
  std::vector<MetricRow> rows_;
};

/// Shortest round-trip-exact text form (17 significant digits).
std::string format_double(double value);

}  // namespace nxm
