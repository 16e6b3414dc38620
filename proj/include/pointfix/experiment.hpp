// Experiment configuration, run-directory layout and checkpoints.
//
// Configuration is JSON. Values resolve as: command-line flag, then config
// file, then built-in default. The top-level seed is the only seed; section
// seeds are derived from it when the config is resolved.
//
// Run layout: <runs_dir>/<name>/{config.json, checkpoints/, logs/, reports/, plots/}
#pragma once

#include <pointfix/archive.hpp>
#include <pointfix/dataset.hpp>
#include <pointfix/evaluator.hpp>
#include <pointfix/meta_trainer.hpp>
#include <pointfix/report_io.hpp>

#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <string>
#include <vector>

namespace pointfix {

struct DataConfig {
  GeneratorConfig generator;
  DomainStyle source_style = DomainStyle::source();
  DomainStyle target_style = DomainStyle::target();
  std::size_t source_sequences = 20;
  std::size_t source_length = 10;
  std::size_t target_sequences = 5;
  std::size_t target_length = 50;
  std::size_t target_environments = 2;  ///< target sequence i gets tag env<i mod E>
};

inline void to_json(nlohmann::json& j, const DataConfig& c) {
  j = {{"generator", c.generator},
       {"source_style", c.source_style},
       {"target_style", c.target_style},
       {"source_sequences", c.source_sequences},
       {"source_length", c.source_length},
       {"target_sequences", c.target_sequences},
       {"target_length", c.target_length},
       {"target_environments", c.target_environments}};
}
inline void from_json(const nlohmann::json& j, DataConfig& c) {
  DataConfig d;
  c.generator = j.value("generator", d.generator);
  c.source_style = j.value("source_style", d.source_style);
  c.target_style = j.value("target_style", d.target_style);
  c.source_sequences = j.value("source_sequences", d.source_sequences);
  c.source_length = j.value("source_length", d.source_length);
  c.target_sequences = j.value("target_sequences", d.target_sequences);
  c.target_length = j.value("target_length", d.target_length);
  c.target_environments = j.value("target_environments", d.target_environments);
  if (c.target_environments < 1) throw std::invalid_argument("data: target_environments must be >= 1");
}

struct EvalConfig {
  std::vector<std::string> protocols{"short", "mid", "long"};
  std::vector<std::string> modes{"none", "full", "mad"};
  bool sparse_gt = false;
  double sparse_fraction = 0.2;
  bool kitti_d1 = false;
  std::size_t repeat_steps = 0;  ///< > 0: also write repeated-adaptation traces
};

inline void to_json(nlohmann::json& j, const EvalConfig& c) {
  j = {{"protocols", c.protocols}, {"modes", c.modes},       {"sparse_gt", c.sparse_gt},
       {"sparse_fraction", c.sparse_fraction}, {"kitti_d1", c.kitti_d1}, {"repeat_steps", c.repeat_steps}};
}
inline void from_json(const nlohmann::json& j, EvalConfig& c) {
  EvalConfig d;
  c.protocols = j.value("protocols", d.protocols);
  c.modes = j.value("modes", d.modes);
  c.sparse_gt = j.value("sparse_gt", d.sparse_gt);
  c.sparse_fraction = j.value("sparse_fraction", d.sparse_fraction);
  c.kitti_d1 = j.value("kitti_d1", d.kitti_d1);
  c.repeat_steps = j.value("repeat_steps", d.repeat_steps);
  for (const auto& p : c.protocols) protocol_from_name(p);
  for (const auto& m : c.modes) adapt_kind_from_name(m);
}

struct ExperimentConfig {
  std::string name = "default";
  std::uint64_t seed = 0;
  std::string runs_dir = "runs";
  std::string data_dir = "data";
  bool record_timing = true;
  DataConfig data;
  NetConfig model;
  PretrainConfig pretrain;
  TrainConfig train;
  AdaptConfig adapt;
  EvalConfig eval;

  ExperimentConfig() {
    pretrain.crop_height = train.crop_height = 32;
    pretrain.crop_width = train.crop_width = 128;
    pretrain.steps = 800;
    train.iterations = 2000;
  }

  /// Propagates the top-level seed and timing switch into the sections.
  void resolve() {
    pretrain.seed = seed;
    train.seed = seed;
    adapt.seed = seed;
    adapt.record_timing = record_timing;
    model.pointfix.d_max = data.generator.d_max;
    train.validate();
    model.stereo.validate();
    model.pointfix.validate();
  }

  std::filesystem::path run_dir() const { return std::filesystem::path(runs_dir) / name; }
};

inline void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  nlohmann::json train = c.train, pre = c.pretrain, adapt = c.adapt;
  train.erase("seed");
  pre.erase("seed");
  adapt.erase("seed");
  adapt.erase("record_timing");
  j = {{"name", c.name},     {"seed", c.seed},   {"runs_dir", c.runs_dir}, {"data_dir", c.data_dir},
       {"record_timing", c.record_timing}, {"data", c.data}, {"model", c.model}, {"pretrain", pre},
       {"train", train},     {"adapt", adapt},   {"eval", c.eval}};
}

namespace detail {
/// Every key of `j` must exist in `ref`; nested objects are checked recursively.
inline void check_keys(const nlohmann::json& j, const nlohmann::json& ref, const std::string& where) {
  if (!j.is_object()) return;
  for (const auto& [k, v] : j.items()) {
    const std::string path = where.empty() ? k : where + "." + k;
    if (!ref.contains(k)) throw std::invalid_argument("config: unknown key '" + path + "'");
    if (ref.at(k).is_object()) check_keys(v, ref.at(k), path);
  }
}
}  // namespace detail

inline void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  const ExperimentConfig d;
  nlohmann::json ref = d;
  ref["train"]["seed"] = ref["pretrain"]["seed"] = ref["adapt"]["seed"] = 0;
  ref["adapt"]["record_timing"] = true;
  detail::check_keys(j, ref, "");
  c.name = j.value("name", d.name);
  c.seed = j.value("seed", d.seed);
  c.runs_dir = j.value("runs_dir", d.runs_dir);
  c.data_dir = j.value("data_dir", d.data_dir);
  c.record_timing = j.value("record_timing", d.record_timing);
  c.data = j.value("data", d.data);
  c.model = j.value("model", d.model);
  c.pretrain = j.value("pretrain", d.pretrain);
  c.train = j.value("train", d.train);
  c.adapt = j.value("adapt", d.adapt);
  c.eval = j.value("eval", d.eval);
  c.resolve();
}

/// Parses "a.b.c=value" into a JSON merge patch; the value is read as JSON
/// when possible and as a string otherwise.
inline nlohmann::json set_patch(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw std::invalid_argument("--set expects key=value, got " + assignment);
  const std::string key = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  nlohmann::json patch = value;
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    parts.push_back(key.substr(start, dot - start));
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) {
    if (it->empty()) throw std::invalid_argument("--set: empty key component in " + key);
    patch = nlohmann::json{{*it, patch}};
  }
  return patch;
}

/// Default config, merged with the file (if any), then with each patch.
inline ExperimentConfig load_config(const std::string& path, const std::vector<nlohmann::json>& patches = {}) {
  nlohmann::json j = ExperimentConfig{};
  if (!path.empty()) j.merge_patch(nlohmann::json::parse(read_text(path)));
  for (const auto& p : patches) j.merge_patch(p);
  return j.get<ExperimentConfig>();
}

inline std::uint64_t config_hash(const nlohmann::json& j) { return hash_string(j.dump()); }

// ---------------------------------------------------------------------------
// Datasets

template <typename T>
struct SplitData {
  std::vector<Sequence<T>> source, target;
};

/// Source sequences use seeds seed*100003 + i, target sequences
/// seed*100003 + 50000 + i.
template <typename T>
SplitData<T> generate_data(const DataConfig& cfg, std::uint64_t seed) {
  SplitData<T> out;
  const std::uint64_t base = seed * 100003ull;
  for (std::size_t i = 0; i < cfg.source_sequences; ++i)
    out.source.push_back(make_sequence<T>(base + i, cfg.source_length, cfg.source_style, "source", cfg.generator,
                                          "src" + std::to_string(i)));
  for (std::size_t i = 0; i < cfg.target_sequences; ++i)
    out.target.push_back(make_sequence<T>(base + 50000 + i, cfg.target_length, cfg.target_style,
                                          "env" + std::to_string(i % cfg.target_environments), cfg.generator,
                                          "tgt" + std::to_string(i)));
  return out;
}

/// Loads <dir>/manifest.json and the sequences it lists.
template <typename T>
SplitData<T> load_dataset(const std::filesystem::path& dir) {
  const auto mpath = dir / "manifest.json";
  if (!std::filesystem::exists(mpath)) throw std::runtime_error("dataset not found: " + mpath.string());
  const auto manifest = nlohmann::json::parse(read_text(mpath.string()));
  SplitData<T> out;
  for (const auto& s : manifest.at("sequences")) {
    const std::string split = s.at("split").get<std::string>();
    auto seq = import_sequence<T>(dir / split / ("seq_" + s.at("id").get<std::string>()));
    (split == "source" ? out.source : out.target).push_back(std::move(seq));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints: <path> holds theta and psi, <path>.opt the optimizer state.

template <typename T>
void save_checkpoint(const std::string& path, const TrainState<T>& st, const nlohmann::json& meta_in) {
  nlohmann::json meta = meta_in;
  meta["iteration"] = st.iteration;
  save_archive<T>(path, {&st.theta, &st.psi.context, &st.psi.head}, meta);
  const auto mt = st.opt_theta.state_params(ParamRole::base);
  const auto mc = st.opt_context.state_params(ParamRole::pointfix_context);
  const auto mh = st.opt_head.state_params(ParamRole::pointfix_head);
  nlohmann::json ometa = {{"iteration", st.iteration},
                          {"steps_base", st.opt_theta.step_counts()},
                          {"steps_pointfix_context", st.opt_context.step_counts()},
                          {"steps_pointfix_head", st.opt_head.step_counts()}};
  save_archive<T>(path + ".opt", {&mt, &mc, &mh}, ometa);
}

/// Restores a training state; the optimizer kind and lr come from `cfg`.
template <typename T>
TrainState<T> load_checkpoint(const std::string& path, const NetConfig& net, const TrainConfig& cfg,
                              nlohmann::json* meta_out = nullptr) {
  const Archive ar = load_archive(path);
  if (ar.meta.contains("model") && ar.meta.at("model") != nlohmann::json(net))
    throw std::runtime_error("checkpoint " + path + " was written for a different model config");
  TrainState<T> st;
  st.theta = ar.params<T>(ParamRole::base).as_leaves();
  st.psi.context = ar.params<T>(ParamRole::pointfix_context).as_leaves();
  st.psi.head = ar.params<T>(ParamRole::pointfix_head).as_leaves();
  const ParamSet<T> ref = init_stereo_model<T>(net.stereo, 0);
  if (!ref.congruent(st.theta)) throw std::runtime_error("checkpoint " + path + " does not match the model config");
  st.iteration = ar.meta.value("iteration", std::size_t{0});
  const auto kind = optimizer_from_name(cfg.outer_optimizer);
  st.opt_theta = Optimizer<T>(kind, cfg.beta);
  st.opt_context = Optimizer<T>(kind, cfg.beta);
  st.opt_head = Optimizer<T>(kind, cfg.beta);
  if (std::filesystem::exists(path + ".opt")) {
    const Archive oa = load_archive(path + ".opt");
    using Counts = std::map<std::string, std::size_t>;
    st.opt_theta.restore(oa.params<T>(ParamRole::base), oa.meta.value("steps_base", Counts{}));
    st.opt_context.restore(oa.params<T>(ParamRole::pointfix_context), oa.meta.value("steps_pointfix_context", Counts{}));
    st.opt_head.restore(oa.params<T>(ParamRole::pointfix_head), oa.meta.value("steps_pointfix_head", Counts{}));
  }
  if (meta_out) *meta_out = ar.meta;
  return st;
}

/// Base parameters of any checkpoint (pretrain or train).
template <typename T>
ParamSet<T> load_theta(const std::string& path, const NetConfig& net) {
  const Archive ar = load_archive(path);
  if (ar.meta.contains("model") && ar.meta.at("model") != nlohmann::json(net))
    throw std::runtime_error("checkpoint " + path + " was written for a different model config");
  ParamSet<T> theta = ar.params<T>(ParamRole::base);
  if (!init_stereo_model<T>(net.stereo, 0).congruent(theta))
    throw std::runtime_error("checkpoint " + path + " does not match the model config");
  return theta;
}

}  // namespace pointfix
