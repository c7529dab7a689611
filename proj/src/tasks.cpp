#include "nxm/tasks.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace nxm {

std::string to_string(TaskKind kind) {
  return kind == TaskKind::TeacherRegression ? "teacher-regression" : "cluster-classification";
}

TaskKind parse_task_kind(const std::string& text) {
  if (text == "teacher-regression") return TaskKind::TeacherRegression;
  if (text == "cluster-classification") return TaskKind::ClusterClassification;
  throw std::invalid_argument("unknown task kind: " + text);
}

std::string to_string(TaskPhase phase) { return phase == TaskPhase::Pretrain ? "pretrain" : "finetune"; }

TaskPhase parse_task_phase(const std::string& text) {
  if (text == "pretrain") return TaskPhase::Pretrain;
  if (text == "finetune") return TaskPhase::Finetune;
  throw std::invalid_argument("unknown task phase: " + text);
}

TaskSpec task_preset(const std::string& name) {
  TaskSpec spec;
  if (name == "pretrain") {
    spec.phase = TaskPhase::Pretrain;
    spec.train_samples = 20000;
  } else if (name == "reference") {
    spec.train_samples = 20000;
  } else if (name == "low-resource") {
    spec.train_samples = 2500;
  } else if (name == "high-resource") {
    spec.train_samples = 50000;
  } else {
    throw std::invalid_argument("unknown task preset: " + name);
  }
  return spec;
}

// --- Dataset --------------------------------------------------------------

Dataset::Dataset(TaskKind kind, std::size_t seq_len, std::size_t input_dim, std::size_t output_dim)
    : kind_(kind), seq_len_(seq_len), input_dim_(input_dim), output_dim_(output_dim) {}

void Dataset::append(std::span<const double> input, std::span<const double> target, int label) {
  if (input.size() != seq_len_ * input_dim_) throw ShapeError("sample input has the wrong size");
  inputs_.insert(inputs_.end(), input.begin(), input.end());
  if (kind_ == TaskKind::TeacherRegression) {
    if (target.size() != output_dim_) throw ShapeError("sample target has the wrong size");
    targets_.insert(targets_.end(), target.begin(), target.end());
  } else {
    if (label < 0 || static_cast<std::size_t>(label) >= output_dim_) throw std::out_of_range("label out of range");
    labels_.push_back(label);
  }
  ++count_;
}

std::span<const double> Dataset::input(std::size_t i) const {
  const std::size_t w = seq_len_ * input_dim_;
  return std::span<const double>(inputs_).subspan(i * w, w);
}

std::span<const double> Dataset::target(std::size_t i) const {
  return std::span<const double>(targets_).subspan(i * output_dim_, output_dim_);
}

Batch Dataset::gather(std::span<const std::size_t> indices) const {
  if (indices.empty()) throw std::invalid_argument("empty batch");
  const std::size_t n = indices.size();
  const std::size_t w = seq_len_ * input_dim_;
  Batch batch;
  batch.count = n;
  batch.inputs = Tensor({n * seq_len_, input_dim_});
  if (kind_ == TaskKind::TeacherRegression) batch.targets = Tensor({n, output_dim_});
  for (std::size_t b = 0; b < n; ++b) {
    const std::size_t i = indices[b];
    if (i >= count_) throw std::out_of_range("sample index out of range");
    std::copy_n(inputs_.begin() + static_cast<std::ptrdiff_t>(i * w), w, batch.inputs.values().begin() + static_cast<std::ptrdiff_t>(b * w));
    if (kind_ == TaskKind::TeacherRegression)
      std::copy_n(targets_.begin() + static_cast<std::ptrdiff_t>(i * output_dim_), output_dim_,
                  batch.targets.values().begin() + static_cast<std::ptrdiff_t>(b * output_dim_));
    else
      batch.labels.push_back(labels_[i]);
  }
  return batch;
}

Batch Dataset::slice(std::size_t begin, std::size_t end) const {
  std::vector<std::size_t> idx;
  for (std::size_t i = begin; i < end; ++i) idx.push_back(i);
  return gather(idx);
}

// --- generation -----------------------------------------------------------

namespace {

// Stream ids keep train / validation / teacher draws independent.
enum Stream : std::uint32_t { kTrain = 1, kValidation = 2, kShift = 3, kCalibration = 4, kCentres = 5, kBody = 6 };

std::mt19937_64 make_rng(std::uint64_t seed, std::uint32_t stream, TaskPhase phase) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), stream,
                    static_cast<std::uint32_t>(phase)};
  return std::mt19937_64(seq);
}

struct InputDistribution {
  std::vector<double> shift;  // per input feature
  double scale = 1.0;

  void draw(std::mt19937_64& rng, std::span<double> out) const {
    std::normal_distribution<double> unit(0.0, 1.0);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = shift[i % shift.size()] + scale * unit(rng);
  }
};

InputDistribution input_distribution(const TaskSpec& spec, std::size_t input_dim) {
  InputDistribution dist{std::vector<double>(input_dim, 0.0), 1.0};
  if (spec.phase == TaskPhase::Finetune) {
    auto rng = make_rng(spec.teacher_seed, kShift, spec.phase);
    std::normal_distribution<double> shift(0.0, spec.input_shift);
    for (auto& s : dist.shift) s = shift(rng);
    dist.scale = spec.input_scale;
  }
  return dist;
}

// The teacher shares its body across phases; the finetune phase swaps in a
// different head. Outputs are standardized per phase.
struct Teacher {
  Model model;
  std::vector<double> mean;
  std::vector<double> inv_std;

  Teacher(const TaskSpec& spec, const ModelConfig& config, const InputDistribution& inputs)
      : model(config, spec.teacher_seed) {
    if (spec.phase == TaskPhase::Finetune) {
      model.reinitialize_classifier(spec.teacher_seed ^ 0x9e3779b97f4a7c15ull);
      if (spec.body_shift > 0.0) {
        auto rng = make_rng(spec.teacher_seed, kBody, spec.phase);
        std::normal_distribution<double> unit(0.0, 1.0);
        for (const auto& name : model.block_weights()) {
          Tensor& w = model.params().get(name);
          const double scale = spec.body_shift / std::sqrt(static_cast<double>(w.cols()));
          for (auto& v : w.values()) v += scale * unit(rng);
        }
      }
    }
    constexpr std::size_t calibration = 2048;
    auto rng = make_rng(spec.teacher_seed, kCalibration, spec.phase);
    Tensor x({calibration * config.seq_len, config.input_dim});
    for (std::size_t i = 0; i < calibration; ++i)
      inputs.draw(rng, x.data().subspan(i * config.seq_len * config.input_dim, config.seq_len * config.input_dim));
    const Tensor y = model.predict(x);
    const std::size_t out = config.output_dim;
    mean.assign(out, 0.0);
    inv_std.assign(out, 0.0);
    for (std::size_t i = 0; i < calibration; ++i)
      for (std::size_t j = 0; j < out; ++j) mean[j] += y[i * out + j];
    for (auto& m : mean) m /= calibration;
    for (std::size_t i = 0; i < calibration; ++i)
      for (std::size_t j = 0; j < out; ++j) inv_std[j] += (y[i * out + j] - mean[j]) * (y[i * out + j] - mean[j]);
    for (auto& s : inv_std) s = 1.0 / std::sqrt(s / calibration + 1e-12);
  }

  Tensor targets(const Tensor& x) const {
    Tensor y = model.predict(x);
    const std::size_t out = mean.size();
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] = (y[i] - mean[i % out]) * inv_std[i % out];
    return y;
  }
};

Dataset draw_regression(const TaskSpec& spec, const ModelConfig& config, const Teacher& teacher,
                        const InputDistribution& inputs, std::size_t count, std::uint32_t stream) {
  Dataset data(TaskKind::TeacherRegression, config.seq_len, config.input_dim, config.output_dim);
  auto rng = make_rng(spec.seed, stream, spec.phase);
  std::normal_distribution<double> noise(0.0, 1.0);
  const std::size_t width = config.seq_len * config.input_dim;
  constexpr std::size_t chunk = 512;
  for (std::size_t begin = 0; begin < count; begin += chunk) {
    const std::size_t n = std::min(chunk, count - begin);
    Tensor x({n * config.seq_len, config.input_dim});
    for (std::size_t i = 0; i < n; ++i) inputs.draw(rng, x.data().subspan(i * width, width));
    Tensor y = teacher.targets(x);
    for (auto& v : y.values()) v += spec.noise_std * noise(rng);
    for (std::size_t i = 0; i < n; ++i)
      data.append(x.data().subspan(i * width, width), y.data().subspan(i * config.output_dim, config.output_dim), -1);
  }
  return data;
}

Dataset draw_clusters(const TaskSpec& spec, const ModelConfig& config, const InputDistribution& inputs,
                      std::size_t count, std::uint32_t stream) {
  const std::size_t width = config.seq_len * config.input_dim;
  const std::size_t classes = config.output_dim;
  auto centre_rng = make_rng(spec.teacher_seed, kCentres, spec.phase);
  std::normal_distribution<double> centre(0.0, spec.separation);
  std::vector<double> centres(classes * width);
  for (auto& c : centres) c = centre(centre_rng);

  Dataset data(TaskKind::ClusterClassification, config.seq_len, config.input_dim, classes);
  auto rng = make_rng(spec.seed, stream, spec.phase);
  std::uniform_int_distribution<int> pick(0, static_cast<int>(classes) - 1);
  std::vector<double> x(width);
  for (std::size_t i = 0; i < count; ++i) {
    const int label = pick(rng);
    inputs.draw(rng, x);
    for (std::size_t j = 0; j < width; ++j) x[j] += centres[static_cast<std::size_t>(label) * width + j];
    data.append(x, {}, label);
  }
  return data;
}

}  // namespace

TaskData generate_task(const TaskSpec& spec, const ModelConfig& config) {
  if (spec.train_samples == 0 || spec.val_samples == 0) throw std::invalid_argument("sample counts must be positive");
  const InputDistribution inputs = input_distribution(spec, config.input_dim);
  if (spec.kind == TaskKind::TeacherRegression) {
    const Teacher teacher(spec, config, inputs);
    return {draw_regression(spec, config, teacher, inputs, spec.train_samples, kTrain),
            draw_regression(spec, config, teacher, inputs, spec.val_samples, kValidation)};
  }
  if (config.output_dim < 2) throw std::invalid_argument("classification needs at least two classes");
  return {draw_clusters(spec, config, inputs, spec.train_samples, kTrain),
          draw_clusters(spec, config, inputs, spec.val_samples, kValidation)};
}

}  // namespace nxm
