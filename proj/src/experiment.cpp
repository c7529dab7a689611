#include "nxm/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "nxm/admm.hpp"
#include "nxm/analytics.hpp"
#include "nxm/baselines.hpp"
#include "nxm/checkpoint.hpp"
#include "nxm/compressed.hpp"
#include "nxm/metrics.hpp"
#include "nxm/training.hpp"

namespace nxm {

using nlohmann::json;
namespace fs = std::filesystem;

bool is_admm_method(const std::string& method) { return method == "admm-nxm" || method == "admm-unstructured"; }

namespace {

const std::vector<std::string> kMethods{"admm-nxm", "asp", "admm-unstructured", "dense"};

// Separates the run's classifier initialization from its other seed uses.
constexpr std::uint64_t kHeadSalt = 0xc1a55f1e5eedull;

}  // namespace

RunConfig preset_config(const std::string& preset, const std::string& method) {
  if (std::find(kMethods.begin(), kMethods.end(), method) == kMethods.end())
    throw std::invalid_argument("unknown method: " + method);
  RunConfig c;
  c.method = method;
  c.preset = preset;
  c.task = task_preset(preset);
  if (c.task.phase != TaskPhase::Finetune) throw std::invalid_argument("preset '" + preset + "' is not a fine-tuning task");
  double rho = 1e-2;
  if (preset == "reference") {
    c.learning_rate = 1e-2;
    c.epochs = 10;
  } else if (preset == "low-resource") {
    c.learning_rate = 1e-2;
    c.epochs = 10;
    rho = 3e-2;
  } else if (preset == "high-resource") {
    c.learning_rate = 3e-3;
    c.epochs = 5;
    rho = 3e-3;
  }
  if (is_admm_method(method)) c.rho = rho;
  if (method == "admm-unstructured") c.sparsity = 0.5;
  c.output_dir = "runs/" + preset + "-" + method;
  return c;
}

// --- JSON -----------------------------------------------------------------

namespace {

json task_json(const TaskSpec& t) {
  return {{"kind", to_string(t.kind)},          {"train_samples", t.train_samples}, {"val_samples", t.val_samples},
          {"teacher_seed", t.teacher_seed},     {"noise_std", t.noise_std},         {"input_shift", t.input_shift},
          {"input_scale", t.input_scale},       {"body_shift", t.body_shift},       {"separation", t.separation}};
}

json model_json(const ModelConfig& m) {
  return {{"kind", to_string(m.kind)}, {"blocks", m.blocks},   {"hidden", m.hidden},
          {"heads", m.heads},          {"ffn_multiplier", m.ffn_multiplier},
          {"seq_len", m.seq_len},      {"input_dim", m.input_dim}, {"output_dim", m.output_dim}};
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::size_t count_of(const json& v, const std::string& key) {
  if (!v.is_number_integer() || v.get<std::int64_t>() < 0)
    throw std::invalid_argument(key + " must be a non-negative integer");
  return v.get<std::size_t>();
}

double number_of(const json& v, const std::string& key) {
  if (!v.is_number()) throw std::invalid_argument(key + " must be a number");
  return v.get<double>();
}

std::string string_of(const json& v, const std::string& key) {
  if (!v.is_string()) throw std::invalid_argument(key + " must be a string");
  return v.get<std::string>();
}

bool bool_of(const json& v, const std::string& key) {
  if (!v.is_boolean()) throw std::invalid_argument(key + " must be true or false");
  return v.get<bool>();
}

using Setter = std::function<void(const json&)>;

void apply_fields(const json& doc, const std::string& prefix, const std::map<std::string, Setter>& fields) {
  if (!doc.is_object()) throw std::invalid_argument((prefix.empty() ? std::string("config") : prefix) + " must be an object");
  for (const auto& [key, value] : doc.items()) {
    const auto it = fields.find(key);
    if (it == fields.end()) throw std::invalid_argument("unknown config key: " + prefix + key);
    it->second(value);
  }
}

}  // namespace

json to_json(const RunConfig& c) {
  json overrides = json::object();
  for (const auto& [name, flag] : c.layer_overrides) overrides[name] = flag;
  return {{"method", c.method},
          {"preset", c.preset},
          {"pattern", {{"n", c.pattern.n}, {"m", c.pattern.m}}},
          {"rho", optional_json(c.rho)},
          {"sparsity", optional_json(c.sparsity)},
          {"learning_rate", c.learning_rate},
          {"lr_schedule", c.lr_schedule},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"steps_per_iteration", c.steps_per_iteration},
          {"min_iterations", c.min_iterations},
          {"prune_eval_each_epoch", c.prune_eval_each_epoch},
          {"reset_adam_each_iteration", c.reset_adam_each_iteration},
          {"finalize", c.finalize},
          {"seed", c.seed},
          {"log_interval", c.log_interval},
          {"task", task_json(c.task)},
          {"model", model_json(c.model)},
          {"layer_overrides", overrides},
          {"checkpoint", c.checkpoint},
          {"pretrain",
           {{"epochs", c.pretrain.epochs},
            {"learning_rate", c.pretrain.learning_rate},
            {"batch_size", c.pretrain.batch_size},
            {"train_samples", c.pretrain.train_samples},
            {"seed", c.pretrain.seed}}},
          {"output_dir", c.output_dir}};
}

RunConfig config_from_json(const json& doc) {
  if (!doc.is_object()) throw std::invalid_argument("config must be a JSON object");
  const std::string method = doc.contains("method") ? string_of(doc["method"], "method") : "admm-nxm";
  const std::string preset = doc.contains("preset") ? string_of(doc["preset"], "preset") : "reference";
  RunConfig c = preset_config(preset, method);

  auto& t = c.task;
  auto& m = c.model;
  auto& p = c.pretrain;
  const std::map<std::string, Setter> task_fields{
      {"kind", [&](const json& v) { t.kind = parse_task_kind(string_of(v, "task.kind")); }},
      {"train_samples", [&](const json& v) { t.train_samples = count_of(v, "task.train_samples"); }},
      {"val_samples", [&](const json& v) { t.val_samples = count_of(v, "task.val_samples"); }},
      {"teacher_seed", [&](const json& v) { t.teacher_seed = count_of(v, "task.teacher_seed"); }},
      {"noise_std", [&](const json& v) { t.noise_std = number_of(v, "task.noise_std"); }},
      {"input_shift", [&](const json& v) { t.input_shift = number_of(v, "task.input_shift"); }},
      {"input_scale", [&](const json& v) { t.input_scale = number_of(v, "task.input_scale"); }},
      {"body_shift", [&](const json& v) { t.body_shift = number_of(v, "task.body_shift"); }},
      {"separation", [&](const json& v) { t.separation = number_of(v, "task.separation"); }},
  };
  const std::map<std::string, Setter> model_fields{
      {"kind", [&](const json& v) { m.kind = parse_model_kind(string_of(v, "model.kind")); }},
      {"blocks", [&](const json& v) { m.blocks = count_of(v, "model.blocks"); }},
      {"hidden", [&](const json& v) { m.hidden = count_of(v, "model.hidden"); }},
      {"heads", [&](const json& v) { m.heads = count_of(v, "model.heads"); }},
      {"ffn_multiplier", [&](const json& v) { m.ffn_multiplier = count_of(v, "model.ffn_multiplier"); }},
      {"seq_len", [&](const json& v) { m.seq_len = count_of(v, "model.seq_len"); }},
      {"input_dim", [&](const json& v) { m.input_dim = count_of(v, "model.input_dim"); }},
      {"output_dim", [&](const json& v) { m.output_dim = count_of(v, "model.output_dim"); }},
  };
  const std::map<std::string, Setter> pretrain_fields{
      {"epochs", [&](const json& v) { p.epochs = count_of(v, "pretrain.epochs"); }},
      {"learning_rate", [&](const json& v) { p.learning_rate = number_of(v, "pretrain.learning_rate"); }},
      {"batch_size", [&](const json& v) { p.batch_size = count_of(v, "pretrain.batch_size"); }},
      {"train_samples", [&](const json& v) { p.train_samples = count_of(v, "pretrain.train_samples"); }},
      {"seed", [&](const json& v) { p.seed = count_of(v, "pretrain.seed"); }},
  };

  const std::map<std::string, Setter> fields{
      {"method", [](const json&) {}},
      {"preset", [](const json&) {}},
      {"pattern",
       [&](const json& v) {
         if (v.is_string()) {
           c.pattern = SparsityPattern::parse(v.get<std::string>());
           return;
         }
         std::size_t n = c.pattern.n, mm = c.pattern.m;
         apply_fields(v, "pattern.",
                      {{"n", [&](const json& x) { n = count_of(x, "pattern.n"); }},
                       {"m", [&](const json& x) { mm = count_of(x, "pattern.m"); }}});
         c.pattern = SparsityPattern(n, mm);
       }},
      {"rho",
       [&](const json& v) {
         if (v.is_null()) c.rho.reset();
         else c.rho = number_of(v, "rho");
       }},
      {"sparsity",
       [&](const json& v) {
         if (v.is_null()) c.sparsity.reset();
         else c.sparsity = number_of(v, "sparsity");
       }},
      {"learning_rate", [&](const json& v) { c.learning_rate = number_of(v, "learning_rate"); }},
      {"lr_schedule", [&](const json& v) { c.lr_schedule = string_of(v, "lr_schedule"); }},
      {"batch_size", [&](const json& v) { c.batch_size = count_of(v, "batch_size"); }},
      {"epochs", [&](const json& v) { c.epochs = count_of(v, "epochs"); }},
      {"steps_per_iteration", [&](const json& v) { c.steps_per_iteration = count_of(v, "steps_per_iteration"); }},
      {"min_iterations", [&](const json& v) { c.min_iterations = count_of(v, "min_iterations"); }},
      {"prune_eval_each_epoch", [&](const json& v) { c.prune_eval_each_epoch = bool_of(v, "prune_eval_each_epoch"); }},
      {"reset_adam_each_iteration",
       [&](const json& v) { c.reset_adam_each_iteration = bool_of(v, "reset_adam_each_iteration"); }},
      {"finalize", [&](const json& v) { c.finalize = string_of(v, "finalize"); }},
      {"seed", [&](const json& v) { c.seed = count_of(v, "seed"); }},
      {"log_interval", [&](const json& v) { c.log_interval = count_of(v, "log_interval"); }},
      {"task", [&](const json& v) { apply_fields(v, "task.", task_fields); }},
      {"model", [&](const json& v) { apply_fields(v, "model.", model_fields); }},
      {"pretrain", [&](const json& v) { apply_fields(v, "pretrain.", pretrain_fields); }},
      {"layer_overrides",
       [&](const json& v) {
         if (!v.is_object()) throw std::invalid_argument("layer_overrides must be an object");
         c.layer_overrides.clear();
         for (const auto& [name, flag] : v.items()) c.layer_overrides[name] = bool_of(flag, "layer_overrides." + name);
       }},
      {"checkpoint", [&](const json& v) { c.checkpoint = string_of(v, "checkpoint"); }},
      {"output_dir", [&](const json& v) { c.output_dir = string_of(v, "output_dir"); }},
  };
  apply_fields(doc, "", fields);
  validate(c);
  return c;
}

namespace {

json& resolve_path(json& doc, const std::string& dotted) {
  json* node = &doc;
  std::size_t begin = 0;
  while (true) {
    const std::size_t dot = dotted.find('.', begin);
    const std::string part = dotted.substr(begin, dot == std::string::npos ? std::string::npos : dot - begin);
    if (part.empty()) throw std::invalid_argument("malformed key: " + dotted);
    if (!node->is_object()) *node = json::object();
    node = &(*node)[part];
    if (dot == std::string::npos) return *node;
    begin = dot + 1;
  }
}

json parse_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error&) {
    return text;
  }
}

}  // namespace

void apply_overrides(json& doc, const std::vector<std::string>& assignments) {
  if (doc.is_null()) doc = json::object();
  for (std::string a : assignments) {
    if (a.rfind("--", 0) == 0) a = a.substr(2);
    const std::size_t eq = a.find('=');
    if (eq == std::string::npos || eq == 0) throw std::invalid_argument("override must look like key=value: " + a);
    resolve_path(doc, a.substr(0, eq)) = parse_value(a.substr(eq + 1));
  }
}

void validate(const RunConfig& c) {
  auto fail = [](const std::string& why) { throw std::invalid_argument("invalid config: " + why); };
  if (std::find(kMethods.begin(), kMethods.end(), c.method) == kMethods.end()) fail("unknown method " + c.method);
  if (is_admm_method(c.method)) {
    if (!c.rho) fail("method " + c.method + " needs rho");
    if (!std::isfinite(*c.rho) || *c.rho < 0.0) fail("rho must be finite and non-negative");
  } else if (c.rho) {
    fail("rho does not apply to method " + c.method);
  }
  if (c.method == "admm-unstructured") {
    if (!c.sparsity) fail("admm-unstructured needs sparsity");
    if (!(*c.sparsity > 0.0 && *c.sparsity < 1.0)) fail("sparsity must lie strictly between 0 and 1");
  } else if (c.sparsity) {
    fail("sparsity only applies to admm-unstructured");
  }
  if (!(c.learning_rate > 0.0) || !std::isfinite(c.learning_rate)) fail("learning_rate must be positive");
  parse_lr_schedule(c.lr_schedule);
  if (c.batch_size == 0) fail("batch_size must be positive");
  if (c.epochs == 0) fail("epochs must be positive");
  if (c.steps_per_iteration == 0) fail("steps_per_iteration must be positive");
  if (c.min_iterations == 0) fail("min_iterations must be positive");
  if (c.finalize != "project" && c.finalize != "adopt-z") fail("finalize must be project or adopt-z");
  if (c.task.train_samples < c.batch_size) fail("task.train_samples must hold at least one batch");
  if (c.task.val_samples == 0) fail("task.val_samples must be positive");
  if (c.task.noise_std < 0.0 || c.task.body_shift < 0.0) fail("task noise and shift must be non-negative");
  if (c.model.hidden == 0 || c.model.heads == 0 || c.model.hidden % c.model.heads != 0)
    fail("model.hidden must be a positive multiple of model.heads");
  if (c.model.blocks == 0 || c.model.seq_len == 0 || c.model.input_dim == 0 || c.model.output_dim == 0 ||
      c.model.ffn_multiplier == 0)
    fail("model dimensions must be positive");
  if (c.checkpoint.empty() && (c.pretrain.epochs == 0 || c.pretrain.batch_size == 0 ||
                               c.pretrain.train_samples < c.pretrain.batch_size || !(c.pretrain.learning_rate > 0.0)))
    fail("pretrain settings are incomplete");
  if (c.output_dir.empty()) fail("output_dir must be set");
}

json to_json(const RunSummary& s) {
  auto opt = [](const auto& v) { return v ? json(*v) : json(nullptr); };
  return {{"status", s.status},
          {"error", s.error},
          {"method", s.method},
          {"seed", s.seed},
          {"iterations", s.iterations},
          {"steps", s.steps},
          {"epochs", s.epochs},
          {"initial_val_loss", s.initial_val_loss},
          {"best_val_loss", s.best_val_loss},
          {"final_val_loss", s.final_val_loss},
          {"final_residual", opt(s.final_residual)},
          {"mean_similarity", opt(s.mean_similarity)},
          {"mean_similarity_after_first", opt(s.mean_similarity_after_first)},
          {"decay_monotone", opt(s.decay_monotone)},
          {"compliant", s.compliant},
          {"compressed_bytes", s.compressed_bytes}};
}

// --- runs -----------------------------------------------------------------

ParameterSet pretrain_checkpoint(const RunConfig& config) {
  TaskSpec spec = config.task;
  spec.phase = TaskPhase::Pretrain;
  spec.train_samples = config.pretrain.train_samples;
  spec.seed = config.pretrain.seed;
  const TaskData data = generate_task(spec, config.model);
  AdamConfig adam;
  adam.learning_rate = config.pretrain.learning_rate;
  return pretrain_dense(data, config.model, config.pretrain.epochs, config.pretrain.seed, adam,
                        config.pretrain.batch_size)
      .model.params();
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::string residuals_csv(const std::vector<ResidualRecord>& history) {
  std::ostringstream out;
  out << "k,layer,absolute,relative\n";
  for (const auto& r : history)
    for (const auto& l : r.layers)
      out << r.k << ',' << l.name << ',' << format_double(l.absolute) << ',' << format_double(l.relative) << '\n';
  return out.str();
}

std::string presence_csv(const std::vector<std::string>& layers, const std::vector<std::vector<std::size_t>>& counts,
                         const ParameterSet& initial, const ParameterSet& final_params) {
  std::ostringstream out;
  out << "layer,index,presence,initial,final\n";
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const Tensor& a = initial.get(layers[l]);
    const Tensor& b = final_params.get(layers[l]);
    for (std::size_t i = 0; i < a.numel(); ++i)
      out << layers[l] << ',' << i << ',' << counts[l][i] << ',' << format_double(a[i]) << ',' << format_double(b[i])
          << '\n';
  }
  return out.str();
}

std::string decay_csv(const PresenceHistogram& h) {
  std::ostringstream out;
  out << "presence,population,mean_ratio\n";
  for (const auto& b : h.buckets)
    out << b.presence << ',' << b.population << ',' << (b.population ? format_double(b.mean_ratio) : "") << '\n';
  return out.str();
}

AdmmSchedule schedule_of(const RunConfig& c) {
  AdmmSchedule s;
  s.steps_per_iteration = c.steps_per_iteration;
  s.total_epochs = c.epochs;
  s.min_iterations = c.min_iterations;
  s.prune_eval_each_epoch = c.prune_eval_each_epoch;
  s.reset_adam_each_iteration = c.reset_adam_each_iteration;
  return s;
}

double mean_of(std::span<const double> values) {
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

}  // namespace

RunSummary run_experiment(const RunConfig& config) {
  validate(config);
  const ParameterSet pretrained =
      config.checkpoint.empty() ? pretrain_checkpoint(config) : load_checkpoint(config.checkpoint);
  return run_experiment(config, pretrained);
}

RunSummary run_experiment(const RunConfig& config, const ParameterSet& pretrained) {
  validate(config);
  const fs::path out = config.output_dir;
  fs::create_directories(out);
  write_text(out / "config.json", to_json(config).dump(2) + "\n");

  Model model(config.model, config.seed);
  assign_parameters(model.params(), pretrained);
  model.reinitialize_classifier(config.seed ^ kHeadSalt);
  const ParameterSet initial = model.params();
  const LayerPolicy policy = build_policy(model, config.layer_overrides);

  TaskSpec spec = config.task;
  spec.phase = TaskPhase::Finetune;
  spec.seed = config.seed;
  const TaskData data = generate_task(spec, config.model);

  AdamConfig adam_config;
  adam_config.learning_rate = config.learning_rate;
  Adam adam(model.params(), adam_config);
  const AdmmSchedule schedule = schedule_of(config);

  // Every method trains for as many epochs as an ADMM run of this config
  // would, so budgets match.
  TrainOptions options;
  options.batch_size = config.batch_size;
  options.epochs = planned_admm_epochs(schedule, steps_per_epoch(data.train.size(), config.batch_size));
  options.seed = config.seed;
  options.log_interval = config.log_interval;
  options.method = config.method;
  options.lr_schedule = parse_lr_schedule(config.lr_schedule);

  RunSummary summary;
  summary.method = config.method;
  summary.seed = config.seed;

  auto finish = [&](const TrainResult& r) {
    r.log.write_csv(out / "metrics.csv");
    summary.steps = r.steps;
    summary.epochs = r.epochs;
    summary.initial_val_loss = r.initial_val_loss;
    summary.best_val_loss = r.best_val_loss;
  };

  try {
    if (config.method == "dense") {
      finish(run_dense_finetune(model, data, adam, options));
    } else if (config.method == "asp") {
      const FrozenMask mask = asp_prune(model, policy, config.pattern);
      finish(run_masked_finetune(model, mask, data, adam, options));
    } else {
      AdmmState state = config.method == "admm-nxm"
                            ? init_admm(model, policy, config.pattern, *config.rho)
                            : unstructured_admm_prune(model, policy, *config.sparsity, *config.rho);
      AdmmRun run = run_admm_finetune(model, state, schedule, data, adam, options);
      finish(run.training);
      summary.iterations = state.k;
      summary.final_residual = residuals(state, model.params()).max_relative;
      if (!run.similarity_history.empty()) {
        summary.mean_similarity = mean_of(run.similarity_history);
        if (run.similarity_history.size() > 1)
          summary.mean_similarity_after_first = mean_of(std::span(run.similarity_history).subspan(1));
      }
      finalize(model, state, config.finalize == "adopt-z" ? FinalizeMode::AdoptZ : FinalizeMode::ProjectWeights);

      const std::vector<std::vector<Mask>> history(run.mask_history.begin() + 1, run.mask_history.end());
      const auto counts = presence_counts(history);
      const auto& layers = policy.constrained();
      if (!layers.empty()) {
        const PresenceHistogram h = decay_report(initial, model.params(), layers, history, state.k, 1e-8);
        summary.decay_monotone = decay_is_monotone(h);
        write_text(out / "decay.csv", decay_csv(h));
        if (!counts.empty()) write_text(out / "presence.csv", presence_csv(layers, counts, initial, model.params()));
      }
      write_text(out / "residuals.csv", residuals_csv(run.residual_history));
    }
  } catch (const DivergenceError& e) {
    e.partial_log().write_csv(out / "metrics.csv");
    summary.status = "diverged";
    summary.error = e.what();
    write_text(out / "summary.json", to_json(summary).dump(2) + "\n");
    throw;
  }

  summary.final_val_loss = evaluate_loss(model, model.params(), data.validation);
  save_checkpoint(out / "final.nxmw", model.params());

  const auto& layers = policy.constrained();
  summary.compliant = !layers.empty() && std::all_of(layers.begin(), layers.end(), [&](const std::string& name) {
    const Tensor& w = model.params().get(name);
    return w.cols() % config.pattern.n == 0 && check_compliance(w, config.pattern);
  });
  if (summary.compliant) {
    fs::create_directories(out / "compressed");
    for (const auto& name : layers) {
      const CompressedNxM c = compress(model.params().get(name), config.pattern);
      save_compressed(out / "compressed" / (name + ".nxmc"), c);
      summary.compressed_bytes += serialized_size(c.pattern, c.shape);
    }
  }
  write_text(out / "summary.json", to_json(summary).dump(2) + "\n");
  return summary;
}

// --- sweep ----------------------------------------------------------------

std::vector<SweepCell> sweep(const json& base, const json& grid, const fs::path& output_dir) {
  if (!grid.is_object() || grid.empty()) throw std::invalid_argument("sweep grid must be a non-empty object");
  std::vector<std::string> keys;
  std::vector<std::vector<json>> values;
  for (const auto& [key, list] : grid.items()) {
    if (!list.is_array() || list.empty()) throw std::invalid_argument("grid entry " + key + " must be a non-empty list");
    keys.push_back(key);
    values.emplace_back(list.begin(), list.end());
  }

  fs::create_directories(output_dir);
  json shared = base.is_null() ? json::object() : base;
  // One pretrained checkpoint serves every cell.
  const RunConfig probe = config_from_json(shared);
  ParameterSet pretrained;
  if (probe.checkpoint.empty()) {
    pretrained = pretrain_checkpoint(probe);
    const fs::path path = output_dir / "pretrained.nxmw";
    save_checkpoint(path, pretrained);
    shared["checkpoint"] = path.string();
  } else {
    pretrained = load_checkpoint(probe.checkpoint);
  }

  std::size_t total = 1;
  for (const auto& v : values) total *= v.size();
  std::vector<SweepCell> cells;
  for (std::size_t index = 0; index < total; ++index) {
    SweepCell cell;
    char name[32];
    std::snprintf(name, sizeof name, "cell-%03zu", index);
    cell.name = name;
    json doc = shared;
    std::size_t rest = index;
    for (std::size_t k = keys.size(); k-- > 0;) {
      const json& v = values[k][rest % values[k].size()];
      rest /= values[k].size();
      cell.assignment[keys[k]] = v;
      resolve_path(doc, keys[k]) = v;
    }
    doc["output_dir"] = (output_dir / cell.name).string();
    cell.summary.status = "failed";
    try {
      cell.summary = run_experiment(config_from_json(doc), pretrained);
    } catch (const DivergenceError& e) {
      cell.summary.status = "diverged";
      cell.summary.error = e.what();
    } catch (const std::exception& e) {
      cell.summary.error = e.what();
    }
    cells.push_back(std::move(cell));
  }

  std::vector<const SweepCell*> order;
  for (const auto& c : cells) order.push_back(&c);
  std::stable_sort(order.begin(), order.end(), [](const SweepCell* a, const SweepCell* b) {
    const bool ok_a = a->summary.status == "ok", ok_b = b->summary.status == "ok";
    if (ok_a != ok_b) return ok_a;
    return ok_a && a->summary.final_val_loss < b->summary.final_val_loss;
  });

  auto cell_text = [](const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); };
  auto opt_text = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
  std::ostringstream csv;
  csv << "cell,status";
  for (const auto& k : keys) csv << ',' << k;
  csv << ",best_val_loss,final_val_loss,mean_similarity,final_residual,error\n";
  for (const SweepCell* c : order) {
    const auto& s = c->summary;
    const bool ok = s.status == "ok";
    csv << c->name << ',' << s.status;
    for (const auto& k : keys) csv << ',' << cell_text(c->assignment[k]);
    csv << ',' << (ok ? format_double(s.best_val_loss) : "") << ',' << (ok ? format_double(s.final_val_loss) : "")
        << ',' << opt_text(s.mean_similarity) << ',' << opt_text(s.final_residual) << ',';
    std::string error = s.error;
    std::replace(error.begin(), error.end(), ',', ';');
    std::replace(error.begin(), error.end(), '\n', ' ');
    csv << error << '\n';
  }
  write_text(output_dir / "summary.csv", csv.str());
  return cells;
}

}  // namespace nxm
