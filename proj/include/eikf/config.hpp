#pragma once

// File-backed run configuration (JSON). Unknown keys are rejected and every
// validation error names the offending field path, e.g. "data.tau".

#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>

#include <json.hpp>

#include "eikf/data/graph.hpp"
#include "eikf/data/missing.hpp"
#include "eikf/data/series.hpp"
#include "eikf/model/eikf_net.hpp"
#include "eikf/training/trainer.hpp"

namespace eikf {

using json = nlohmann::json;

/// Config error carrying the field path it refers to.
class FieldError : public ConfigError {
public:
  FieldError(const std::string& path, const std::string& msg) : ConfigError(path + ": " + msg), path_(path) {}
  const std::string& path() const noexcept { return path_; }

private:
  std::string path_;
};

struct DataSection {
  std::string series_path;
  std::string distance_path;
  std::string mask_path;  // optional observed-cell mask
  std::size_t tau = 12;
  std::size_t upsilon = 12;
  SplitRatios split_ratios;
};

struct ModelSection {
  std::size_t d = 18;
  std::size_t num_hyperedges = 5;
  std::size_t hgat_heads = 1;
  std::size_t hgt_heads = 2;
  double gamma = kDefaultTemperature;
  bool enable_explicit_graph = true;
  bool enable_implicit_hypergraph = true;
  bool enable_spatial = true;
  bool enable_temporal = true;
  bool uncertainty = false;
  bool mask_channel = false;
  double lambda_sparsity = 0.0;
  std::optional<double> kernel_width;  // default: std of the finite distances
  double kernel_threshold = kDefaultKernelThreshold;
  double attention_dropout = 0.1;
  std::size_t head_depth = 2;
};

struct TrainSection {
  double lr = 1e-3;
  std::size_t batch = 18;
  std::size_t epochs = 30;
  std::size_t lr_patience = 5;
  double lr_factor = 0.5;
  std::size_t early_patience = 10;
  std::uint64_t seed = 0;
  std::optional<double> grad_clip = 5.0;
};

struct MissingSection {
  std::optional<MissingScheme> scheme;  // none when absent
  double rate = 0.0;
  double p_failure = kDefaultFailureProbability;
  std::optional<std::uint64_t> seed;  // defaults to train.seed
};

struct RunConfig {
  DataSection data;
  ModelSection model;
  TrainSection train;
  MissingSection missing;
};

namespace detail {

inline void reject_unknown(const json& obj, const std::string& path, std::initializer_list<const char*> keys) {
  if (!obj.is_object()) throw FieldError(path.empty() ? "<root>" : path, "expected an object");
  const std::set<std::string> known(keys.begin(), keys.end());
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!known.count(it.key())) throw FieldError(path.empty() ? it.key() : path + "." + it.key(), "unknown key");
}

template <class T>
void read_field(const json& obj, const std::string& section, const char* key, T& out) {
  if (!obj.contains(key)) return;
  const json& v = obj.at(key);
  const std::string path = section + "." + key;
  if constexpr (std::is_same_v<T, bool>) {
    if (!v.is_boolean()) throw FieldError(path, "expected a boolean");
    out = v.get<bool>();
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!v.is_string()) throw FieldError(path, "expected a string");
    out = v.get<std::string>();
  } else if constexpr (std::is_integral_v<T>) {
    if (!v.is_number_integer()) throw FieldError(path, "expected an integer");
    if (v.is_number_unsigned()) {
      out = static_cast<T>(v.get<std::uint64_t>());
    } else {
      const auto x = v.get<std::int64_t>();
      if (x < 0) throw FieldError(path, "must be non-negative, got " + std::to_string(x));
      out = static_cast<T>(x);
    }
  } else {
    if (!v.is_number()) throw FieldError(path, "expected a number");
    out = v.get<double>();
  }
}

template <class T>
void read_optional(const json& obj, const std::string& section, const char* key, std::optional<T>& out) {
  if (!obj.contains(key)) return;
  if (obj.at(key).is_null()) {
    out.reset();
    return;
  }
  T v{};
  read_field(obj, section, key, v);
  out = v;
}

inline json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace detail

inline void validate(const RunConfig& c) {
  auto positive = [](const std::string& path, double v) {
    if (!(v > 0.0)) throw FieldError(path, "must be positive");
  };
  if (c.data.tau == 0) throw FieldError("data.tau", "must be a positive integer");
  if (c.data.upsilon == 0) throw FieldError("data.upsilon", "must be a positive integer");
  const auto& r = c.data.split_ratios;
  if (!(r.train > 0 && r.val > 0 && r.test > 0) || std::abs(r.train + r.val + r.test - 1.0) > 1e-9)
    throw FieldError("data.split_ratios", "must be three positive ratios summing to 1");
  const auto& m = c.model;
  if (m.d == 0) throw FieldError("model.d", "must be positive");
  if (m.num_hyperedges == 0) throw FieldError("model.num_hyperedges", "must be positive");
  if (m.hgat_heads == 0) throw FieldError("model.hgat_heads", "must be positive");
  if (m.hgt_heads == 0 || m.d % m.hgt_heads != 0) throw FieldError("model.hgt_heads", "must divide model.d");
  positive("model.gamma", m.gamma);
  if (m.enable_spatial && !m.enable_explicit_graph && !m.enable_implicit_hypergraph)
    throw FieldError("model.enable_spatial", "both spatial experts are disabled");
  if (m.lambda_sparsity < 0.0) throw FieldError("model.lambda_sparsity", "must be non-negative");
  if (m.kernel_width) positive("model.kernel_width", *m.kernel_width);
  if (!(m.kernel_threshold >= 0.0 && m.kernel_threshold < 1.0))
    throw FieldError("model.kernel_threshold", "must lie in [0,1)");
  if (!(m.attention_dropout >= 0.0 && m.attention_dropout < 1.0))
    throw FieldError("model.attention_dropout", "must lie in [0,1)");
  if (m.head_depth == 0) throw FieldError("model.head_depth", "must be positive");
  const auto& t = c.train;
  positive("train.lr", t.lr);
  if (t.batch == 0) throw FieldError("train.batch", "must be positive");
  if (t.epochs == 0) throw FieldError("train.epochs", "must be positive");
  if (t.lr_patience == 0) throw FieldError("train.lr_patience", "must be positive");
  if (!(t.lr_factor > 0.0 && t.lr_factor < 1.0)) throw FieldError("train.lr_factor", "must lie in (0,1)");
  if (t.early_patience == 0) throw FieldError("train.early_patience", "must be positive");
  if (t.grad_clip) positive("train.grad_clip", *t.grad_clip);
  if (!(c.missing.rate >= 0.0 && c.missing.rate <= 1.0)) throw FieldError("missing.rate", "must lie in [0,1]");
  if (!(c.missing.p_failure > 0.0 && c.missing.p_failure < 1.0))
    throw FieldError("missing.p_failure", "must lie in (0,1)");
}

inline RunConfig config_from_json(const json& j) {
  using detail::read_field;
  using detail::read_optional;
  RunConfig c;
  detail::reject_unknown(j, "", {"data", "model", "train", "missing"});
  if (j.contains("data")) {
    const json& s = j.at("data");
    detail::reject_unknown(s, "data", {"series_path", "distance_path", "mask_path", "tau", "upsilon", "split_ratios"});
    read_field(s, "data", "series_path", c.data.series_path);
    read_field(s, "data", "distance_path", c.data.distance_path);
    read_field(s, "data", "mask_path", c.data.mask_path);
    read_field(s, "data", "tau", c.data.tau);
    read_field(s, "data", "upsilon", c.data.upsilon);
    if (s.contains("split_ratios")) {
      const json& r = s.at("split_ratios");
      if (!r.is_array() || r.size() != 3 || !r[0].is_number() || !r[1].is_number() || !r[2].is_number())
        throw FieldError("data.split_ratios", "expected [train, val, test]");
      c.data.split_ratios = {r[0].get<double>(), r[1].get<double>(), r[2].get<double>()};
    }
  }
  if (j.contains("model")) {
    const json& s = j.at("model");
    auto& m = c.model;
    detail::reject_unknown(s, "model",
                           {"d", "num_hyperedges", "hgat_heads", "hgt_heads", "gamma", "enable_explicit_graph",
                            "enable_implicit_hypergraph", "enable_spatial", "enable_temporal", "uncertainty",
                            "mask_channel", "lambda_sparsity", "kernel_width", "kernel_threshold",
                            "attention_dropout", "head_depth"});
    read_field(s, "model", "d", m.d);
    read_field(s, "model", "num_hyperedges", m.num_hyperedges);
    read_field(s, "model", "hgat_heads", m.hgat_heads);
    read_field(s, "model", "hgt_heads", m.hgt_heads);
    read_field(s, "model", "gamma", m.gamma);
    read_field(s, "model", "enable_explicit_graph", m.enable_explicit_graph);
    read_field(s, "model", "enable_implicit_hypergraph", m.enable_implicit_hypergraph);
    read_field(s, "model", "enable_spatial", m.enable_spatial);
    read_field(s, "model", "enable_temporal", m.enable_temporal);
    read_field(s, "model", "uncertainty", m.uncertainty);
    read_field(s, "model", "mask_channel", m.mask_channel);
    read_field(s, "model", "lambda_sparsity", m.lambda_sparsity);
    read_optional(s, "model", "kernel_width", m.kernel_width);
    read_field(s, "model", "kernel_threshold", m.kernel_threshold);
    read_field(s, "model", "attention_dropout", m.attention_dropout);
    read_field(s, "model", "head_depth", m.head_depth);
  }
  if (j.contains("train")) {
    const json& s = j.at("train");
    auto& t = c.train;
    detail::reject_unknown(s, "train",
                           {"lr", "batch", "epochs", "lr_patience", "lr_factor", "early_patience", "seed", "grad_clip"});
    read_field(s, "train", "lr", t.lr);
    read_field(s, "train", "batch", t.batch);
    read_field(s, "train", "epochs", t.epochs);
    read_field(s, "train", "lr_patience", t.lr_patience);
    read_field(s, "train", "lr_factor", t.lr_factor);
    read_field(s, "train", "early_patience", t.early_patience);
    read_field(s, "train", "seed", t.seed);
    read_optional(s, "train", "grad_clip", t.grad_clip);
  }
  if (j.contains("missing")) {
    const json& s = j.at("missing");
    detail::reject_unknown(s, "missing", {"scheme", "rate", "p_failure", "seed"});
    if (s.contains("scheme") && !s.at("scheme").is_null()) {
      std::string name;
      read_field(s, "missing", "scheme", name);
      if (name == "none") {
        c.missing.scheme.reset();
      } else {
        try {
          c.missing.scheme = parse_scheme(name);
        } catch (const std::exception&) {
          throw FieldError("missing.scheme", "expected \"none\", \"point\" or \"block\", got \"" + name + "\"");
        }
      }
    }
    read_field(s, "missing", "rate", c.missing.rate);
    read_field(s, "missing", "p_failure", c.missing.p_failure);
    read_optional(s, "missing", "seed", c.missing.seed);
  }
  validate(c);
  return c;
}

inline json config_to_json(const RunConfig& c) {
  json j;
  j["data"] = {{"series_path", c.data.series_path},
               {"distance_path", c.data.distance_path},
               {"mask_path", c.data.mask_path},
               {"tau", c.data.tau},
               {"upsilon", c.data.upsilon},
               {"split_ratios", {c.data.split_ratios.train, c.data.split_ratios.val, c.data.split_ratios.test}}};
  const auto& m = c.model;
  j["model"] = {{"d", m.d},
                {"num_hyperedges", m.num_hyperedges},
                {"hgat_heads", m.hgat_heads},
                {"hgt_heads", m.hgt_heads},
                {"gamma", m.gamma},
                {"enable_explicit_graph", m.enable_explicit_graph},
                {"enable_implicit_hypergraph", m.enable_implicit_hypergraph},
                {"enable_spatial", m.enable_spatial},
                {"enable_temporal", m.enable_temporal},
                {"uncertainty", m.uncertainty},
                {"mask_channel", m.mask_channel},
                {"lambda_sparsity", m.lambda_sparsity},
                {"kernel_width", detail::optional_json(m.kernel_width)},
                {"kernel_threshold", m.kernel_threshold},
                {"attention_dropout", m.attention_dropout},
                {"head_depth", m.head_depth}};
  const auto& t = c.train;
  j["train"] = {{"lr", t.lr},
                {"batch", t.batch},
                {"epochs", t.epochs},
                {"lr_patience", t.lr_patience},
                {"lr_factor", t.lr_factor},
                {"early_patience", t.early_patience},
                {"seed", t.seed},
                {"grad_clip", detail::optional_json(t.grad_clip)}};
  j["missing"] = {{"scheme", c.missing.scheme ? json(scheme_name(*c.missing.scheme)) : json("none")},
                  {"rate", c.missing.rate},
                  {"p_failure", c.missing.p_failure},
                  {"seed", c.missing.seed ? json(*c.missing.seed) : json(nullptr)}};
  return j;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FieldError("<config>", "cannot open '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw FieldError("<config>", std::string("invalid JSON: ") + e.what());
  }
  return config_from_json(j);
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Hash of the sections that decide checkpoint compatibility (data, model,
/// missing). Training knobs and the seed are excluded so a checkpoint can be
/// evaluated with any train section.
inline std::string config_hash(const RunConfig& c) {
  json j = config_to_json(c);
  j.erase("train");
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(j.dump())));
  return buf;
}

inline ModelConfig model_config(const RunConfig& c, std::size_t sensors) {
  ModelConfig m;
  m.sensors = sensors;
  m.tau = c.data.tau;
  m.upsilon = c.data.upsilon;
  m.d = c.model.d;
  m.num_hyperedges = c.model.num_hyperedges;
  m.hgat_heads = c.model.hgat_heads;
  m.hgt_heads = c.model.hgt_heads;
  m.gamma = c.model.gamma;
  m.enable_explicit_graph = c.model.enable_explicit_graph;
  m.enable_implicit_hypergraph = c.model.enable_implicit_hypergraph;
  m.enable_spatial = c.model.enable_spatial;
  m.enable_temporal = c.model.enable_temporal;
  m.uncertainty = c.model.uncertainty;
  m.mask_channel = c.model.mask_channel;
  m.attention_dropout = c.model.attention_dropout;
  m.head_depth = c.model.head_depth;
  return m;
}

inline TrainConfig train_config(const RunConfig& c) {
  TrainConfig t;
  t.lr = c.train.lr;
  t.batch_size = c.train.batch;
  t.max_epochs = c.train.epochs;
  t.lr_patience = c.train.lr_patience;
  t.lr_factor = c.train.lr_factor;
  t.early_patience = c.train.early_patience;
  t.seed = c.train.seed;
  t.grad_clip = c.train.grad_clip;
  t.lambda_sparsity = c.model.lambda_sparsity;
  return t;
}

}  // namespace eikf
