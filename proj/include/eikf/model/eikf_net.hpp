#pragma once

// The full forecaster: gated projection, implicit-hypergraph expert
// (structure sampling, HgAT, HgT, fusion), explicit-graph expert (T-GCN),
// mixture-of-experts fusion and the forecast / uncertainty heads.

#include <optional>
#include <string>

#include "eikf/data/graph.hpp"
#include "eikf/model/graph_repr.hpp"
#include "eikf/model/hg_infer.hpp"
#include "eikf/model/hg_repr.hpp"
#include "eikf/model/projection.hpp"
#include "eikf/model/temporal.hpp"

namespace eikf {

struct ModelConfig {
  std::size_t sensors = 0;
  std::size_t tau = 12;
  std::size_t upsilon = 12;
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
  double attention_dropout = 0.1;
  std::size_t head_depth = 2;

  bool uses_hypergraph() const { return enable_spatial && enable_implicit_hypergraph; }
  bool uses_graph() const { return enable_spatial && enable_explicit_graph; }

  void validate() const {
    if (sensors < 2) throw ConfigError("model: need at least 2 sensors");
    if (tau == 0 || upsilon == 0 || d == 0) throw ConfigError("model: tau, upsilon and d must be positive");
    if (enable_spatial && !enable_explicit_graph && !enable_implicit_hypergraph)
      throw ConfigError("model: both spatial experts disabled");
    if (uses_hypergraph() && (num_hyperedges == 0 || hgat_heads == 0 || hgt_heads == 0 || d % hgt_heads != 0))
      throw ConfigError("model: invalid hypergraph settings");
    if (!(gamma > 0.0)) throw ConfigError("model: gamma must be positive");
    if (!(attention_dropout >= 0.0 && attention_dropout < 1.0)) throw ConfigError("model: dropout must be in [0,1)");
    if (head_depth == 0) throw ConfigError("model: head depth must be positive");
  }
};

struct ForwardOptions {
  bool training = false;
  const GumbelNoise* noise = nullptr;  // train mode: shared across a batch
  Rng* dropout_rng = nullptr;
  AttentionTrace* trace = nullptr;
};

struct ForwardResult {
  Var mean;                              // n x upsilon, scaled domain
  std::optional<Var> variance;           // uncertainty mode only
  std::optional<EdgeProbabilities> probs;
  std::optional<Tensor> incidence;       // hard incidence used
};

class EIKFNet {
public:
  EIKFNet(ModelConfig cfg, const Tensor& adjacency, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    if (adjacency.rank() != 2 || adjacency.rows() != cfg_.sensors || adjacency.cols() != cfg_.sensors)
      throw ConfigError("model: adjacency " + shape_str(adjacency.shape()) + " does not match " +
                        std::to_string(cfg_.sensors) + " sensors");
    adjacency_ = adjacency;
    adjacency_norm_ = normalized_adjacency(adjacency);
    Rng rng(seed);
    const std::size_t in_dim = cfg_.mask_channel ? 2 * cfg_.tau : cfg_.tau;
    projection_ = ProjectionParams::create(store_, "projection", in_dim, cfg_.d, rng);
    if (cfg_.uses_hypergraph()) {
      embeddings_ = HgEmbeddings::create(store_, "hg_infer", cfg_.sensors, cfg_.num_hyperedges, cfg_.d, rng);
      hgat_ = HgATParams::create(store_, "hgat", cfg_.d, cfg_.hgat_heads, rng);
      hgt_ = HgTParams::create(store_, "hgt", cfg_.d, cfg_.hgt_heads, rng);
      hg_fusion_ = GateParams::create(store_, "hg_fusion", cfg_.d, rng);
    }
    if (cfg_.uses_graph())
      tgcn_ = TGCNParams::create(store_, "tgcn", cfg_.mask_channel ? 2 : 1, cfg_.d, rng);
    if (cfg_.uses_hypergraph() && cfg_.uses_graph()) moe_gate_ = GateParams::create(store_, "moe", cfg_.d, rng);
    const std::size_t depth = cfg_.enable_temporal ? cfg_.head_depth : 1;
    if (cfg_.uncertainty)
      head_ = HeadParams::create(store_, "uncertainty_head", cfg_.d, 2 * cfg_.upsilon, depth, rng);
    else
      head_ = HeadParams::create(store_, "forecast_head", cfg_.d, cfg_.upsilon, depth, rng);
  }

  const ModelConfig& config() const { return cfg_; }
  const ParamStore& params() const { return store_; }
  ParamStore& params() { return store_; }
  const Tensor& adjacency() const { return adjacency_; }
  const Tensor& adjacency_norm() const { return adjacency_norm_; }
  std::size_t parameter_count() const { return store_.scalar_count(); }

  ForwardResult forward(Tape& tape, const Tensor& history, const Tensor* mask, const ForwardOptions& opt = {}) const {
    if (history.rank() != 2 || history.rows() != cfg_.sensors || history.cols() != cfg_.tau)
      throw ShapeError("forward: history " + shape_str(history.shape()) + ", expected " +
                       shape_str({cfg_.sensors, cfg_.tau}));
    if (cfg_.mask_channel && mask == nullptr) throw ConfigError("forward: model expects a mask channel");
    ForwardResult res;
    const Var hist = tape.constant(history);
    const Var input = cfg_.mask_channel ? concat({hist, tape.constant(*mask)}, 1) : hist;
    const Var features = gln_forward(input, store_, projection_);

    Var fused;
    if (!cfg_.enable_spatial) {
      fused = features;
    } else {
      std::optional<Var> hyper, graph;
      if (cfg_.uses_hypergraph()) {
        const EdgeProbabilities probs = infer_edge_probabilities(tape, store_, *embeddings_);
        const IncidenceSample sample =
            opt.training ? gumbel_sample(probs, cfg_.gamma, SampleMode::train_soft, opt.noise)
                         : gumbel_sample(probs, cfg_.gamma, SampleMode::eval_hard, nullptr);
        const Dropout dropout{opt.training ? cfg_.attention_dropout : 0.0, opt.training ? opt.dropout_rng : nullptr};
        const Var hgat = hgat_forward(features, sample.incidence, store_, *hgat_, dropout, opt.trace);
        const Var hgt = hgt_forward(features, store_, *hgt_, opt.trace);
        hyper = fuse_hgat_hgt(hgt, hgat, store_, *hg_fusion_);
        res.probs = probs;
        res.incidence = sample.hard;
      }
      if (cfg_.uses_graph()) {
        std::optional<Tensor> m;
        if (cfg_.mask_channel) m = *mask;
        graph = tgcn_unroll(hist, m, adjacency_norm_, store_, *tgcn_);
      }
      fused = moe_fuse(hyper, graph, store_, moe_gate_);
    }

    if (cfg_.uncertainty) {
      const GaussianForecast g = uncertainty_head(fused, store_, head_);
      res.mean = g.mean;
      res.variance = g.variance;
    } else {
      res.mean = forecast_head(fused, store_, head_);
    }
    return res;
  }

  /// Hard incidence and connection probabilities in eval mode.
  std::optional<std::pair<Tensor, Tensor>> learned_structure() const {
    if (!cfg_.uses_hypergraph()) return std::nullopt;
    Tape tape;
    const EdgeProbabilities probs = infer_edge_probabilities(tape, store_, *embeddings_);
    return std::make_pair(hard_incidence(probs.connected.value(), probs.disconnected.value()), probs.connected.value());
  }

private:
  ModelConfig cfg_;
  ParamStore store_;
  Tensor adjacency_;
  Tensor adjacency_norm_;
  ProjectionParams projection_;
  std::optional<HgEmbeddings> embeddings_;
  std::optional<HgATParams> hgat_;
  std::optional<HgTParams> hgt_;
  std::optional<GateParams> hg_fusion_;
  std::optional<TGCNParams> tgcn_;
  std::optional<GateParams> moe_gate_;
  HeadParams head_;
};

}  // namespace eikf
