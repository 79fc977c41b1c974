#pragma once

// Encoder H, predictor G, projector J and the BYOL predictor K for each task.

#include <algorithm>
#include <string>
#include <vector>

#include "sibcl/nn/checkpoint.hpp"
#include "sibcl/nn/network.hpp"

namespace sibcl::train {

using nn::LayerSpec;
using nn::Network;

enum class Task { dos, bands, tise3d, tise2d_qho };

inline std::string to_string(Task t) {
  switch (t) {
    case Task::dos: return "dos";
    case Task::bands: return "bands";
    case Task::tise3d: return "tise3d";
    default: return "tise2d-qho";
  }
}

inline Task task_from_string(const std::string& s) {
  if (s == "dos") return Task::dos;
  if (s == "bands") return Task::bands;
  if (s == "tise3d") return Task::tise3d;
  if (s == "tise2d-qho") return Task::tise2d_qho;
  throw ConfigError("unknown task '" + s + "'");
}

inline std::size_t spatial_rank(Task t) { return t == Task::tise3d ? 3 : 2; }

struct ArchConfig {
  std::size_t kernel = 5;     // n_k, odd
  double width = 1.0;         // multiplies every hidden width; output sizes are fixed
  std::size_t band_count = 6;
  std::size_t projector_hidden = 1024;
  std::size_t embedding = 256;
};

inline std::size_t scaled(std::size_t w, double f) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<double>(w) * f)));
}

struct TaskArch {
  std::vector<std::size_t> conv;
  std::vector<std::size_t> encoder_fc;  // last entry is the representation size
  std::vector<std::size_t> predictor;   // hidden layers of G; the output layer is added per task
};

inline TaskArch task_arch(Task t) {
  switch (t) {
    case Task::dos: return {{64, 256, 256}, {1024, 1024}, {1024, 1024, 512}};
    case Task::bands: return {{64, 256, 256}, {256, 1024}, {256, 512, 512}};
    default: return {{64, 256, 256, 256}, {256, 256}, {256, 256, 32}};
  }
}

// Conv, BatchNorm, ReLU per CNN layer, with a 2x2 max pool after each while
// every spatial extent is still even, then flatten and the FC stack. ReLU
// follows every FC layer, so the representation is non-negative.
inline std::vector<LayerSpec> encoder_specs(Task t, std::size_t n, const ArchConfig& a) {
  const auto arch = task_arch(t);
  const bool three_d = spatial_rank(t) == 3;
  std::vector<LayerSpec> s;
  std::size_t extent = n;
  for (std::size_t ch : arch.conv) {
    s.push_back(three_d ? LayerSpec::conv3d(scaled(ch, a.width), a.kernel) : LayerSpec::conv2d(scaled(ch, a.width), a.kernel));
    s.push_back(LayerSpec::batchnorm());
    s.push_back(LayerSpec::relu());
    if (extent % 2 == 0 && extent >= 2) {
      s.push_back(LayerSpec::maxpool());
      extent /= 2;
    }
  }
  s.push_back(LayerSpec::flatten());
  for (std::size_t w : arch.encoder_fc) {
    s.push_back(LayerSpec::fc(scaled(w, a.width)));
    s.push_back(LayerSpec::relu());
  }
  return s;
}

inline std::vector<LayerSpec> mlp_specs(const std::vector<std::size_t>& hidden, std::size_t out) {
  std::vector<LayerSpec> s;
  for (std::size_t w : hidden) {
    s.push_back(LayerSpec::fc(w));
    s.push_back(LayerSpec::relu());
  }
  s.push_back(LayerSpec::fc(out));
  return s;
}

struct Model {
  Task task = Task::dos;
  Network H;
  std::vector<Network> G;  // one block per band for the band task, otherwise one
  Network J;
  Network K;  // BYOL predictor; empty unless requested

  std::size_t representation() const { return H.output_shape()[0]; }

  nn::Var represent(const nn::Var& x, bool training) { return H.forward(x, training); }

  nn::Var predict_from(const nn::Var& h, bool training) {
    if (G.size() == 1) return G[0].forward(h, training);
    std::vector<nn::Var> parts;
    for (auto& g : G) parts.push_back(g.forward(h, training));
    return nn::concat_features(parts);
  }

  nn::Var predict(const nn::Var& x, bool training) { return predict_from(represent(x, training), training); }
  nn::Var embed(const nn::Var& x, bool training) { return J.forward(represent(x, training), training); }

  std::vector<nn::NamedParam> encoder_predictor_params() const {
    auto p = H.parameters("H.");
    for (std::size_t b = 0; b < G.size(); ++b) {
      auto q = G[b].parameters("G" + std::to_string(b) + ".");
      p.insert(p.end(), q.begin(), q.end());
    }
    return p;
  }

  std::vector<nn::NamedParam> contrastive_params() const {
    auto p = H.parameters("H.");
    auto q = J.parameters("J.");
    p.insert(p.end(), q.begin(), q.end());
    if (!K.empty()) {
      auto k = K.parameters("K.");
      p.insert(p.end(), k.begin(), k.end());
    }
    return p;
  }

  Model clone() const {
    Model m;
    m.task = task;
    m.H = H.clone();
    for (const auto& g : G) m.G.push_back(g.clone());
    if (!J.empty()) m.J = J.clone();
    if (!K.empty()) m.K = K.clone();
    return m;
  }

  nn::Checkpoint checkpoint() {
    nn::Checkpoint c;
    c.meta["task"] = to_string(task);
    c.capture(H, "H.");
    for (std::size_t b = 0; b < G.size(); ++b) c.capture(G[b], "G" + std::to_string(b) + ".");
    return c;
  }

  void load(const nn::Checkpoint& c) {
    c.restore(H, "H.");
    for (std::size_t b = 0; b < G.size(); ++b) c.restore(G[b], "G" + std::to_string(b) + ".");
  }
};

// Output size of G per task: 400 DOS points, nk^2 values per band block, or
// one energy.
inline Model build_model(Task t, std::size_t n, std::size_t label_size, const ArchConfig& a, Rng& init,
                         bool with_byol_predictor = false) {
  Model m;
  m.task = t;
  const std::size_t rank = spatial_rank(t);
  nn::Shape in{1};
  for (std::size_t d = 0; d < rank; ++d) in.push_back(n);
  m.H = Network(encoder_specs(t, n, a), in, init);
  const nn::Shape rep{m.H.output_shape()[0]};
  std::vector<std::size_t> hidden;
  for (std::size_t w : task_arch(t).predictor) hidden.push_back(scaled(w, a.width));
  if (t == Task::bands) {
    if (label_size % a.band_count != 0) throw ConfigError("band label size must split evenly over the band blocks");
    for (std::size_t b = 0; b < a.band_count; ++b) m.G.emplace_back(mlp_specs(hidden, label_size / a.band_count), rep, init);
  } else {
    m.G.emplace_back(mlp_specs(hidden, label_size), rep, init);
  }
  const std::size_t ph = scaled(a.projector_hidden, a.width), emb = scaled(a.embedding, a.width);
  m.J = Network(mlp_specs({ph}, emb), rep, init);
  if (with_byol_predictor) m.K = Network(mlp_specs({ph}, emb), nn::Shape{emb}, init);
  return m;
}

}  // namespace sibcl::train
