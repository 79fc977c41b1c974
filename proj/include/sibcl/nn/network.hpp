#pragma once

#include <cmath>
#include <json.hpp>
#include <string>
#include <vector>

#include "sibcl/core/rng.hpp"
#include "sibcl/nn/ops.hpp"

namespace sibcl::nn {

enum class LayerKind { conv2d, conv3d, fc, batchnorm, relu, maxpool, flatten };

inline const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::conv3d: return "conv3d";
    case LayerKind::fc: return "fc";
    case LayerKind::batchnorm: return "batchnorm";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::flatten: return "flatten";
  }
  return "?";
}

inline LayerKind layer_kind_from_string(const std::string& s) {
  for (auto k : {LayerKind::conv2d, LayerKind::conv3d, LayerKind::fc, LayerKind::batchnorm,
                 LayerKind::relu, LayerKind::maxpool, LayerKind::flatten})
    if (s == to_string(k)) return k;
  throw ConfigError("unknown layer kind '" + s + "'");
}

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::size_t out = 0;     // channels for conv, nodes for fc
  std::size_t kernel = 0;  // odd, conv only

  static LayerSpec conv2d(std::size_t ch, std::size_t k) { return {LayerKind::conv2d, ch, k}; }
  static LayerSpec conv3d(std::size_t ch, std::size_t k) { return {LayerKind::conv3d, ch, k}; }
  static LayerSpec fc(std::size_t n) { return {LayerKind::fc, n, 0}; }
  static LayerSpec batchnorm() { return {LayerKind::batchnorm, 0, 0}; }
  static LayerSpec relu() { return {LayerKind::relu, 0, 0}; }
  static LayerSpec maxpool() { return {LayerKind::maxpool, 0, 0}; }
  static LayerSpec flatten() { return {LayerKind::flatten, 0, 0}; }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

inline void to_json(nlohmann::json& j, const LayerSpec& s) {
  j = {{"kind", to_string(s.kind)}, {"out", s.out}, {"kernel", s.kernel}};
}
inline void from_json(const nlohmann::json& j, LayerSpec& s) {
  s.kind = layer_kind_from_string(j.at("kind").get<std::string>());
  s.out = j.value("out", std::size_t{0});
  s.kernel = j.value("kernel", std::size_t{0});
}

struct NamedParam {
  std::string name;
  Var var;
};

struct NamedBuffer {
  std::string name;
  std::vector<Scalar>* data;
};

// A feed-forward stack of layers with shapes fixed at construction.
class Network {
 public:
  Network() = default;

  // sample_shape excludes the batch axis, e.g. {1, 32, 32}.
  Network(std::vector<LayerSpec> specs, Shape sample_shape, Rng& init_rng)
      : specs_(std::move(specs)), input_shape_(std::move(sample_shape)) {
    Shape cur = input_shape_;
    layers_.resize(specs_.size());
    for (std::size_t i = 0; i < specs_.size(); ++i) {
      const auto& s = specs_[i];
      auto& L = layers_[i];
      auto fail = [&](const std::string& why) {
        throw ConfigError("layer " + std::to_string(i) + " (" + to_string(s.kind) + "): " + why +
                          "; input shape " + shape_str(cur));
      };
      switch (s.kind) {
        case LayerKind::conv2d:
        case LayerKind::conv3d: {
          const std::size_t srank = s.kind == LayerKind::conv2d ? 2 : 3;
          if (cur.size() != srank + 1) fail("expects [C, spatial x" + std::to_string(srank) + "]");
          if (s.kernel % 2 == 0 || s.out == 0) fail("needs odd kernel and positive channels");
          Shape ws{s.out, cur[0]};
          for (std::size_t d = 0; d < srank; ++d) ws.push_back(s.kernel);
          const double fan_in = static_cast<double>(cur[0]) * std::pow(static_cast<double>(s.kernel), srank);
          L.weight = Var(kaiming_uniform(ws, fan_in, init_rng), true);
          L.bias = Var(Tensor(Shape{s.out}), true);
          cur[0] = s.out;
          break;
        }
        case LayerKind::fc: {
          if (cur.size() != 1 || s.out == 0) fail("expects a flat feature vector");
          L.weight = Var(kaiming_uniform(Shape{s.out, cur[0]}, static_cast<double>(cur[0]), init_rng), true);
          L.bias = Var(Tensor(Shape{s.out}), true);
          cur = Shape{s.out};
          break;
        }
        case LayerKind::batchnorm:
          L.weight = Var(Tensor(Shape{cur[0]}, Scalar(1)), true);
          L.bias = Var(Tensor(Shape{cur[0]}, Scalar(0)), true);
          L.stats.mean.assign(cur[0], Scalar(0));
          L.stats.var.assign(cur[0], Scalar(1));
          break;
        case LayerKind::relu:
          break;
        case LayerKind::maxpool:
          if (cur.size() < 2) fail("expects spatial input");
          for (std::size_t d = 1; d < cur.size(); ++d) {
            if (cur[d] % 2 != 0) fail("spatial extent must be even");
            cur[d] /= 2;
          }
          break;
        case LayerKind::flatten:
          cur = Shape{shape_numel(cur)};
          break;
      }
      L.out_shape = cur;
    }
    output_shape_ = cur;
  }

  Network(Network&&) = default;
  Network& operator=(Network&&) = default;
  Network(const Network&) = delete;
  Network& operator=(const Network&) = delete;

  // Deep copy: fresh parameter leaves holding the same values.
  Network clone() const {
    Network n;
    n.specs_ = specs_;
    n.input_shape_ = input_shape_;
    n.output_shape_ = output_shape_;
    n.layers_.resize(layers_.size());
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const auto& a = layers_[i];
      auto& b = n.layers_[i];
      if (a.weight.defined()) b.weight = Var(a.weight.value(), true);
      if (a.bias.defined()) b.bias = Var(a.bias.value(), true);
      b.stats = a.stats;
      b.out_shape = a.out_shape;
    }
    return n;
  }

  const std::vector<LayerSpec>& specs() const noexcept { return specs_; }
  const Shape& input_shape() const noexcept { return input_shape_; }
  const Shape& output_shape() const noexcept { return output_shape_; }
  bool empty() const noexcept { return specs_.empty(); }

  Var forward(const Var& x, bool training) {
    const auto& xs = x.shape();
    if (xs.size() != input_shape_.size() + 1 || !std::equal(input_shape_.begin(), input_shape_.end(), xs.begin() + 1))
      throw ConfigError("layer 0 (" + std::string(specs_.empty() ? "input" : to_string(specs_[0].kind)) +
                        "): input shape " + shape_str(xs) + " does not match [B]+" + shape_str(input_shape_));
    Var h = x;
    for (std::size_t i = 0; i < specs_.size(); ++i) {
      auto& L = layers_[i];
      try {
        switch (specs_[i].kind) {
          case LayerKind::conv2d:
          case LayerKind::conv3d: h = conv(h, L.weight, L.bias); break;
          case LayerKind::fc: h = linear(h, L.weight, L.bias); break;
          case LayerKind::batchnorm: h = batchnorm(h, L.weight, L.bias, L.stats, training); break;
          case LayerKind::relu: h = relu(h); break;
          case LayerKind::maxpool: h = maxpool2(h); break;
          case LayerKind::flatten: h = flatten(h); break;
        }
      } catch (const ConfigError& e) {
        throw ConfigError("layer " + std::to_string(i) + " (" + to_string(specs_[i].kind) + "): " + e.what());
      }
    }
    return h;
  }

  std::vector<NamedParam> parameters(const std::string& prefix = "") const {
    std::vector<NamedParam> out;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const auto base = prefix + std::to_string(i) + ".";
      if (layers_[i].weight.defined()) out.push_back({base + "weight", layers_[i].weight});
      if (layers_[i].bias.defined()) out.push_back({base + "bias", layers_[i].bias});
    }
    return out;
  }

  std::vector<NamedBuffer> buffers(const std::string& prefix = "") {
    std::vector<NamedBuffer> out;
    for (std::size_t i = 0; i < layers_.size(); ++i)
      if (specs_[i].kind == LayerKind::batchnorm) {
        const auto base = prefix + std::to_string(i) + ".";
        out.push_back({base + "running_mean", &layers_[i].stats.mean});
        out.push_back({base + "running_var", &layers_[i].stats.var});
      }
    return out;
  }

  nlohmann::json manifest() const {
    return {{"input_shape", input_shape_}, {"layers", specs_}};
  }

 private:
  struct Layer {
    Var weight;
    Var bias;
    BatchNormStats stats;
    Shape out_shape;
  };

  // Uniform(-b, b) with b = sqrt(6 / fan_in).
  static Tensor kaiming_uniform(const Shape& s, double fan_in, Rng& rng) {
    Tensor t(s);
    const double bound = std::sqrt(6.0 / fan_in);
    for (auto& v : t.data()) v = static_cast<Scalar>(rng.uniform(-bound, bound));
    return t;
  }

  std::vector<LayerSpec> specs_;
  Shape input_shape_;
  Shape output_shape_;
  std::vector<Layer> layers_;
};

}  // namespace sibcl::nn
