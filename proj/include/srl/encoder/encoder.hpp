#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include "srl/core/conv.hpp"
#include "srl/core/graph.hpp"

namespace srl::enc {

using core::Graph;
using core::Tensor;
using core::Variable;

/// Architecture of the shared convolutional encoder. `local_layer` is the
/// 1-based index of the conv layer whose post-relu activations serve as the
/// grid of local features; its per-unit receptive field may cover at most
/// 1/16 of the input area.
struct EncoderConfig {
  int input_h = 64;
  int input_w = 64;
  int input_c = 1;
  std::vector<int> channels = {32, 64, 64};
  std::vector<int> kernels = {8, 3, 3};
  std::vector<int> strides = {4, 3, 1};
  int local_layer = 2;
  int feature_dim = 256;
  std::uint64_t seed = 0;

  std::string to_text() const;
  static EncoderConfig from_text(const std::string& text);
};

struct LayerShape {
  int channels, h, w;
};

/// Inclusive pixel rectangle.
struct PixelRect {
  int y0, x0, y1, x1;
  int height() const { return y1 - y0 + 1; }
  int width() const { return x1 - x0 + 1; }
};

/// Receptive-field extent and step of one unit of layer `n` (1-based) in
/// input pixels, from the kernel/stride recurrence.
struct ReceptiveField {
  int size = 1;  // square side in pixels (unclipped)
  int jump = 1;  // input-pixel step between adjacent units
};

inline ReceptiveField receptive_field_of_layer(const EncoderConfig& cfg, int layer) {
  ReceptiveField rf;
  for (int i = 0; i < layer; ++i) {
    rf.size += (cfg.kernels[static_cast<std::size_t>(i)] - 1) * rf.jump;
    rf.jump *= cfg.strides[static_cast<std::size_t>(i)];
  }
  return rf;
}

inline std::vector<LayerShape> layer_shapes(const EncoderConfig& cfg) {
  std::vector<LayerShape> shapes;
  int h = cfg.input_h, w = cfg.input_w;
  for (std::size_t i = 0; i < cfg.channels.size(); ++i) {
    int k = cfg.kernels[i], s = cfg.strides[i];
    if (k > h || k > w)
      throw ConfigError("encoder: layer " + std::to_string(i + 1) + " kernel " +
                        std::to_string(k) + " exceeds its input " + std::to_string(h) +
                        "x" + std::to_string(w));
    if (s < 1) throw ConfigError("encoder: stride must be positive");
    h = (h - k) / s + 1;
    w = (w - k) / s + 1;
    shapes.push_back({cfg.channels[i], h, w});
  }
  return shapes;
}

inline void validate_config(const EncoderConfig& cfg) {
  if (cfg.channels.empty() || cfg.channels.size() != cfg.kernels.size() ||
      cfg.channels.size() != cfg.strides.size())
    throw ConfigError("encoder: channels/kernels/strides must have equal nonzero length");
  if (cfg.feature_dim <= 0) throw ConfigError("encoder: feature_dim must be positive");
  if (cfg.local_layer < 1 || cfg.local_layer > static_cast<int>(cfg.channels.size()))
    throw ConfigError("encoder: local_layer " + std::to_string(cfg.local_layer) +
                      " outside [1," + std::to_string(cfg.channels.size()) + "]");
  layer_shapes(cfg);  // throws if the chain does not fit
  ReceptiveField rf = receptive_field_of_layer(cfg, cfg.local_layer);
  double frame_area = static_cast<double>(cfg.input_h) * cfg.input_w;
  double rf_area = static_cast<double>(rf.size) * rf.size;
  double fraction = rf_area / frame_area;
  if (fraction > 1.0 / 16.0 + 1e-9) {
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "encoder: local layer %d receptive field %dx%d covers %.4f%% of the "
                  "frame (limit 6.25%%)",
                  cfg.local_layer, rf.size, rf.size, fraction * 100.0);
    throw ConfigError(buf);
  }
}

/// Input rectangle (inclusive, clipped to the frame) influencing local unit
/// (m, n).
inline PixelRect receptive_field(const EncoderConfig& cfg, int m, int n) {
  validate_config(cfg);
  auto shapes = layer_shapes(cfg);
  const LayerShape& local = shapes[static_cast<std::size_t>(cfg.local_layer - 1)];
  if (m < 0 || m >= local.h || n < 0 || n >= local.w)
    throw IndexError("receptive_field: unit (" + std::to_string(m) + "," +
                     std::to_string(n) + ") outside grid " + std::to_string(local.h) +
                     "x" + std::to_string(local.w));
  ReceptiveField rf = receptive_field_of_layer(cfg, cfg.local_layer);
  PixelRect r;
  r.y0 = m * rf.jump;
  r.x0 = n * rf.jump;
  r.y1 = std::min(cfg.input_h - 1, r.y0 + rf.size - 1);
  r.x1 = std::min(cfg.input_w - 1, r.x0 + rf.size - 1);
  return r;
}

/// The shared convolutional encoder: conv+relu stack, then one affine layer
/// producing the global feature vector. Local features are the post-relu
/// activations of the configured intermediate layer.
template <class S>
class Encoder {
 public:
  struct Out {
    typename Graph<S>::Ref global;  // B x F
    typename Graph<S>::Ref local;   // B x d_l x M x N
    typename Graph<S>::Ref flat;    // B x flatten_dim (input of the final affine)
  };

  static Encoder build(const EncoderConfig& cfg) {
    validate_config(cfg);
    Encoder e;
    e.cfg_ = cfg;
    e.shapes_ = layer_shapes(cfg);
    Pcg32 rng(cfg.seed, 0x5e1f);
    int in_c = cfg.input_c;
    for (std::size_t i = 0; i < cfg.channels.size(); ++i) {
      int o = cfg.channels[i], k = cfg.kernels[i];
      e.conv_w_.emplace_back("conv" + std::to_string(i + 1) + ".weight",
                             init_uniform(rng, {o, in_c, k, k}, in_c * k * k));
      e.conv_b_.emplace_back("conv" + std::to_string(i + 1) + ".bias",
                             Tensor<S>::zeros({o}));
      in_c = o;
    }
    const LayerShape& last = e.shapes_.back();
    e.flatten_dim_ = last.channels * last.h * last.w;
    e.fc_w_ = Variable<S>("fc.weight",
                          init_uniform(rng, {cfg.feature_dim, e.flatten_dim_}, e.flatten_dim_));
    e.fc_b_ = Variable<S>("fc.bias", Tensor<S>::zeros({cfg.feature_dim}));
    return e;
  }

  /// Runs the encoder on a B x C x H x W batch of frames in [0, 1]. With
  /// `trainable` false the parameters join the graph as constants, so no
  /// gradient can ever reach them.
  Out encode(Graph<S>& g, const Tensor<S>& frames, bool trainable) {
    if (frames.ndim() != 4 || frames.dim(1) != cfg_.input_c ||
        frames.dim(2) != cfg_.input_h || frames.dim(3) != cfg_.input_w)
      throw ShapeError("encode: frames " + Tensor<S>::shape_string(frames.shape) +
                       " do not match configured input " + std::to_string(cfg_.input_c) +
                       "x" + std::to_string(cfg_.input_h) + "x" + std::to_string(cfg_.input_w));
    for (S v : frames.data)
      if (!(v >= S(0) && v <= S(1)))
        throw ContractError("encode: pixel values must lie in [0,1]");
    return encode_ref(g, g.constant(frames), trainable);
  }

  Out encode_ref(Graph<S>& g, typename Graph<S>::Ref x, bool trainable) {
    typename Graph<S>::Ref cur = x;
    typename Graph<S>::Ref local = nullptr;
    for (std::size_t i = 0; i < conv_w_.size(); ++i) {
      auto w = use(g, conv_w_[i], trainable);
      auto b = use(g, conv_b_[i], trainable);
      cur = g.relu(core::conv2d(g, cur, w, b, cfg_.strides[i]));
      if (static_cast<int>(i) + 1 == cfg_.local_layer) local = cur;
    }
    int B = cur->value.dim(0);
    auto flat = g.reshape(cur, {B, flatten_dim_});
    auto global = g.affine(flat, use(g, fc_w_, trainable), use(g, fc_b_, trainable));
    return {global, local, flat};
  }

  std::vector<Variable<S>*> params() {
    std::vector<Variable<S>*> out;
    for (std::size_t i = 0; i < conv_w_.size(); ++i) {
      out.push_back(&conv_w_[i]);
      out.push_back(&conv_b_[i]);
    }
    out.push_back(&fc_w_);
    out.push_back(&fc_b_);
    return out;
  }

  std::vector<const Variable<S>*> params() const {
    std::vector<const Variable<S>*> out;
    for (std::size_t i = 0; i < conv_w_.size(); ++i) {
      out.push_back(&conv_w_[i]);
      out.push_back(&conv_b_[i]);
    }
    out.push_back(&fc_w_);
    out.push_back(&fc_b_);
    return out;
  }

  const EncoderConfig& config() const { return cfg_; }
  const std::vector<LayerShape>& shapes() const { return shapes_; }
  int feature_dim() const { return cfg_.feature_dim; }
  int flatten_dim() const { return flatten_dim_; }
  int local_rows() const { return shapes_[static_cast<std::size_t>(cfg_.local_layer - 1)].h; }
  int local_cols() const { return shapes_[static_cast<std::size_t>(cfg_.local_layer - 1)].w; }
  int local_dim() const {
    return shapes_[static_cast<std::size_t>(cfg_.local_layer - 1)].channels;
  }

  /// Direct access for tests that tweak parameters.
  Variable<S>& conv_weight(int layer) { return conv_w_[static_cast<std::size_t>(layer)]; }
  Variable<S>& conv_bias(int layer) { return conv_b_[static_cast<std::size_t>(layer)]; }

 private:
  static Tensor<S> init_uniform(Pcg32& rng, std::vector<int> shape, int fan_in) {
    Tensor<S> t(std::move(shape));
    double a = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& v : t.data) v = static_cast<S>(rng.uniform(-a, a));
    return t;
  }

  static typename Graph<S>::Ref use(Graph<S>& g, Variable<S>& v, bool trainable) {
    return trainable ? g.param(v) : g.constant(v.value);
  }

  EncoderConfig cfg_;
  std::vector<LayerShape> shapes_;
  std::vector<Variable<S>> conv_w_, conv_b_;
  Variable<S> fc_w_, fc_b_;
  int flatten_dim_ = 0;
};

// ---- config text serialization (canonical key-value block) ----

inline std::string join_ints(const std::vector<int>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

inline std::vector<int> split_ints(const std::string& s) {
  std::vector<int> out;
  std::istringstream is(s);
  std::string tok;
  while (std::getline(is, tok, ',')) out.push_back(std::stoi(tok));
  return out;
}

inline std::string EncoderConfig::to_text() const {
  std::ostringstream os;
  os << "input_h = " << input_h << "\n";
  os << "input_w = " << input_w << "\n";
  os << "input_c = " << input_c << "\n";
  os << "channels = " << join_ints(channels) << "\n";
  os << "kernels = " << join_ints(kernels) << "\n";
  os << "strides = " << join_ints(strides) << "\n";
  os << "local_layer = " << local_layer << "\n";
  os << "feature_dim = " << feature_dim << "\n";
  os << "seed = " << seed << "\n";
  return os.str();
}

inline EncoderConfig EncoderConfig::from_text(const std::string& text) {
  EncoderConfig cfg;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      std::size_t b = s.find_first_not_of(" \t");
      std::size_t e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    if (key == "input_h") cfg.input_h = std::stoi(val);
    else if (key == "input_w") cfg.input_w = std::stoi(val);
    else if (key == "input_c") cfg.input_c = std::stoi(val);
    else if (key == "channels") cfg.channels = split_ints(val);
    else if (key == "kernels") cfg.kernels = split_ints(val);
    else if (key == "strides") cfg.strides = split_ints(val);
    else if (key == "local_layer") cfg.local_layer = std::stoi(val);
    else if (key == "feature_dim") cfg.feature_dim = std::stoi(val);
    else if (key == "seed") cfg.seed = std::stoull(val);
    else throw ConfigError("encoder config: unknown key '" + key + "'");
  }
  return cfg;
}

}  // namespace srl::enc
