#pragma once

// Versioned JSON checkpoint: config and its hash, sensor ids, explicit
// adjacency, scaler, named parameters with shapes, Adam moments.

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "eikf/config.hpp"
#include "eikf/model/eikf_net.hpp"
#include "eikf/training/optim.hpp"

namespace eikf {

inline constexpr const char* kCheckpointFormat = "eikf-checkpoint";
inline constexpr int kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  RunConfig config;
  std::string config_hash;
  std::vector<std::string> sensor_ids;
  Tensor adjacency;
  ScalerStats scaler;
  std::vector<std::string> param_names;
  std::vector<Tensor> params;
  AdamState optimizer;
  std::size_t best_epoch = 0;
  double best_val_mae = 0.0;
};

namespace detail {

inline json tensor_json(const Tensor& t) {
  return {{"shape", t.shape()}, {"values", std::vector<double>(t.values().begin(), t.values().end())}};
}

inline Tensor tensor_from_json(const json& j, const std::string& what) {
  try {
    const Shape shape = j.at("shape").get<Shape>();
    std::vector<double> values = j.at("values").get<std::vector<double>>();
    return Tensor(shape, std::move(values));
  } catch (const std::exception& e) {
    throw CheckpointError("checkpoint: bad tensor '" + what + "': " + e.what());
  }
}

}  // namespace detail

inline Checkpoint make_checkpoint(const RunConfig& cfg, const EIKFNet& model, const std::vector<std::string>& ids,
                                  const ScalerStats& scaler, const AdamState& optimizer, std::size_t best_epoch,
                                  double best_val_mae) {
  Checkpoint c{cfg, config_hash(cfg), ids, model.adjacency(), scaler, {}, model.params().values(), optimizer,
               best_epoch, best_val_mae};
  for (ParamId id = 0; id < model.params().size(); ++id) c.param_names.push_back(model.params().name(id));
  return c;
}

inline std::string checkpoint_to_string(const Checkpoint& c) {
  json j;
  j["format"] = kCheckpointFormat;
  j["version"] = kCheckpointVersion;
  j["config"] = config_to_json(c.config);
  j["config_hash"] = c.config_hash;
  j["sensor_ids"] = c.sensor_ids;
  j["adjacency"] = detail::tensor_json(c.adjacency);
  j["scaler"] = {{"mean", c.scaler.mean}, {"std", c.scaler.std}};
  json params = json::array();
  for (std::size_t k = 0; k < c.params.size(); ++k) {
    json p = detail::tensor_json(c.params[k]);
    p["name"] = c.param_names[k];
    params.push_back(std::move(p));
  }
  j["params"] = std::move(params);
  json m = json::array(), v = json::array();
  for (const auto& t : c.optimizer.m) m.push_back(detail::tensor_json(t));
  for (const auto& t : c.optimizer.v) v.push_back(detail::tensor_json(t));
  j["optimizer"] = {{"t", c.optimizer.t}, {"m", std::move(m)}, {"v", std::move(v)}};
  j["best_epoch"] = c.best_epoch;
  j["best_val_mae"] = c.best_val_mae;
  return j.dump() + "\n";
}

inline void save_checkpoint(const std::string& path, const Checkpoint& c) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write '" + path + "'");
  out << checkpoint_to_string(c);
  if (!out) throw CheckpointError("write failed for '" + path + "'");
}

inline Checkpoint checkpoint_from_json(const json& j) {
  if (!j.is_object() || j.value("format", "") != kCheckpointFormat)
    throw CheckpointError("checkpoint: not an eikf checkpoint");
  if (j.value("version", 0) != kCheckpointVersion)
    throw CheckpointError("checkpoint: unsupported version " + j.at("version").dump());
  Checkpoint c;
  c.config = config_from_json(j.at("config"));
  c.config_hash = j.at("config_hash").get<std::string>();
  if (c.config_hash != config_hash(c.config)) throw CheckpointError("checkpoint: stored hash does not match its config");
  c.sensor_ids = j.at("sensor_ids").get<std::vector<std::string>>();
  c.adjacency = detail::tensor_from_json(j.at("adjacency"), "adjacency");
  c.scaler.mean = j.at("scaler").at("mean").get<std::vector<double>>();
  c.scaler.std = j.at("scaler").at("std").get<std::vector<double>>();
  for (const auto& p : j.at("params")) {
    c.param_names.push_back(p.at("name").get<std::string>());
    c.params.push_back(detail::tensor_from_json(p, c.param_names.back()));
  }
  const json& o = j.at("optimizer");
  c.optimizer.t = o.at("t").get<std::size_t>();
  for (const auto& t : o.at("m")) c.optimizer.m.push_back(detail::tensor_from_json(t, "optimizer.m"));
  for (const auto& t : o.at("v")) c.optimizer.v.push_back(detail::tensor_from_json(t, "optimizer.v"));
  c.best_epoch = j.value("best_epoch", std::size_t{0});
  c.best_val_mae = j.value("best_val_mae", 0.0);
  return c;
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path + "'");
  try {
    return checkpoint_from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw CheckpointError("checkpoint '" + path + "': " + e.what());
  }
}

/// Rebuilds the model and installs the stored parameters, checking names and
/// shapes against the architecture the config describes.
inline EIKFNet restore_model(const Checkpoint& c) {
  EIKFNet model(model_config(c.config, c.sensor_ids.size()), c.adjacency, 0);
  auto& store = model.params();
  if (store.size() != c.params.size())
    throw CheckpointError("checkpoint: " + std::to_string(c.params.size()) + " parameters, model expects " +
                          std::to_string(store.size()));
  for (ParamId id = 0; id < store.size(); ++id) {
    if (store.name(id) != c.param_names[id])
      throw CheckpointError("checkpoint: parameter " + std::to_string(id) + " is '" + c.param_names[id] +
                            "', expected '" + store.name(id) + "'");
    if (store.value(id).shape() != c.params[id].shape())
      throw CheckpointError("checkpoint: shape mismatch for '" + c.param_names[id] + "'");
    store.value(id) = c.params[id];
  }
  return model;
}

}  // namespace eikf
