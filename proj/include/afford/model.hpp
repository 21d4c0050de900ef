#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "afford/dataset.hpp"
#include "afford/rng.hpp"
#include "afford/scene.hpp"
#include "afford/tape.hpp"
#include "afford/tensor.hpp"

namespace afford {

// Layer widths of the blended conditional-process model. The defaults are
// the reference architecture: 48x48x2 image to 16 features, (1+2)-input
// encoders to a 128-wide latent, a 145-wide merged representation, a shared
// 145->1024 layer and two decoders emitting mean and raw std per channel.
struct ModelConfig {
  int action_dim = 2;
  int effect_dim = 2;
  int latent_dim = 128;
  int image_feat_dim = 16;
  int shared_dim = 1024;
  std::vector<int> conv_channels{32, 64, 64, 128, 128};
  std::vector<int> encoder_widths{32, 64, 64, 128, 128, 256};
  std::vector<int> decoder_widths{512, 256, 128, 32};
  float leaky_alpha = 0.01f;
  float image_height_scale = 10.0f;

  int merged_dim() const { return latent_dim + image_feat_dim + 1; }

  void validate() const {
    require(action_dim >= 1 && effect_dim >= 1, "channel dims must be >= 1");
    require(latent_dim >= 1 && image_feat_dim >= 1 && shared_dim >= 1, "bad layer widths");
    require(!conv_channels.empty() && !encoder_widths.empty() && !decoder_widths.empty(),
            "layer lists must be nonempty");
  }

  nlohmann::json to_json() const {
    return {{"action_dim", action_dim},
            {"effect_dim", effect_dim},
            {"latent_dim", latent_dim},
            {"image_feat_dim", image_feat_dim},
            {"shared_dim", shared_dim},
            {"conv_channels", conv_channels},
            {"encoder_widths", encoder_widths},
            {"decoder_widths", decoder_widths},
            {"leaky_alpha", leaky_alpha},
            {"image_height_scale", image_height_scale}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.action_dim = j.at("action_dim").get<int>();
    c.effect_dim = j.at("effect_dim").get<int>();
    c.latent_dim = j.at("latent_dim").get<int>();
    c.image_feat_dim = j.at("image_feat_dim").get<int>();
    c.shared_dim = j.at("shared_dim").get<int>();
    c.conv_channels = j.at("conv_channels").get<std::vector<int>>();
    c.encoder_widths = j.at("encoder_widths").get<std::vector<int>>();
    c.decoder_widths = j.at("decoder_widths").get<std::vector<int>>();
    c.leaky_alpha = j.at("leaky_alpha").get<float>();
    c.image_height_scale = j.at("image_height_scale").get<float>();
    c.validate();
    return c;
  }

  static ModelConfig for_family(ActionFamily f) {
    ModelConfig c;
    c.action_dim = family_action_dim(f);
    c.effect_dim = family_effect_dim(f);
    return c;
  }
};

// Convex blending coefficients for the action and effect channels.
struct BlendWeights {
  double action = 0.5;
  double effect = 0.5;

  void validate() const {
    require(action >= 0.0 && effect >= 0.0 && std::abs(action + effect - 1.0) < 1e-9,
            "blend weights must be nonnegative and sum to 1");
  }

  static BlendWeights action_only() { return {1.0, 0.0}; }
  static BlendWeights effect_only() { return {0.0, 1.0}; }
  static BlendWeights balanced() { return {0.5, 0.5}; }
};

// One conditioning point in raw (unnormalized) units. Only the channels with
// nonzero blend weight need to be populated.
struct Observation {
  double t = 0.0;
  std::vector<float> action;
  std::vector<float> effect;
};

struct GaussianPrediction {
  std::vector<float> mean;
  std::vector<float> stddev;  // strictly positive
};

// All learnable tensors, in a fixed order so initialization, checkpointing
// and optimizer state stay aligned.
class ModelParams {
 public:
  struct Item {
    std::string name;
    Tensor tensor;
  };

  std::vector<Item>& items() { return items_; }
  const std::vector<Item>& items() const { return items_; }

  Tensor& at(const std::string& name) { return items_[index_of(name)].tensor; }
  const Tensor& at(const std::string& name) const { return items_[index_of(name)].tensor; }

  std::size_t index_of(const std::string& name) const {
    for (std::size_t i = 0; i < items_.size(); ++i)
      if (items_[i].name == name) return i;
    throw std::invalid_argument("unknown parameter '" + name + "'");
  }

  static ModelParams init(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    ModelParams p;
    Rng rng(Rng::derive(seed, 0x9a7aULL));
    auto dense = [&](const std::string& name, int n, int m) {
      p.items_.push_back({name + ".w", glorot(rng, {n, m}, n, m)});
      p.items_.push_back({name + ".b", Tensor::zeros({m})});
    };
    int cin = kImageChannels;
    for (std::size_t i = 0; i < cfg.conv_channels.size(); ++i) {
      const int cout = cfg.conv_channels[i];
      p.items_.push_back({"img.conv" + std::to_string(i) + ".w",
                          glorot(rng, {3, 3, cin, cout}, 9 * cin, 9 * cout)});
      p.items_.push_back({"img.conv" + std::to_string(i) + ".b", Tensor::zeros({cout})});
      cin = cout;
    }
    dense("img.out", cfg.conv_channels.back(), cfg.image_feat_dim);
    for (const char* enc : {"enc_a", "enc_e"}) {
      const int in_dim = 1 + (enc[4] == 'a' ? cfg.action_dim : cfg.effect_dim);
      int w = in_dim;
      for (std::size_t i = 0; i < cfg.encoder_widths.size(); ++i) {
        dense(std::string(enc) + "." + std::to_string(i), w, cfg.encoder_widths[i]);
        w = cfg.encoder_widths[i];
      }
      dense(std::string(enc) + "." + std::to_string(cfg.encoder_widths.size()), w, cfg.latent_dim);
    }
    dense("merge", cfg.merged_dim(), cfg.shared_dim);
    for (const char* dec : {"dec_a", "dec_e"}) {
      const int out_dim = 2 * (dec[4] == 'a' ? cfg.action_dim : cfg.effect_dim);
      int w = cfg.shared_dim;
      for (std::size_t i = 0; i < cfg.decoder_widths.size(); ++i) {
        dense(std::string(dec) + "." + std::to_string(i), w, cfg.decoder_widths[i]);
        w = cfg.decoder_widths[i];
      }
      dense(std::string(dec) + "." + std::to_string(cfg.decoder_widths.size()), w, out_dim);
    }
    return p;
  }

 private:
  static Tensor glorot(Rng& rng, std::vector<int> shape, int fan_in, int fan_out) {
    Tensor t = Tensor::zeros(std::move(shape));
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    for (float& v : t.data) v = static_cast<float>(rng.uniform(-bound, bound));
    return t;
  }

  std::vector<Item> items_;
};

// Builds one forward evaluation on a tape. Parameter leaves are created
// lazily and shared across the ops of the evaluation, so adjoints read back
// per parameter index are totals over the whole graph.
class GraphBuilder {
 public:
  GraphBuilder(const ModelConfig& cfg, const ModelParams& params)
      : cfg_(cfg), params_(params), leaf_ids_(params.items().size(), -1) {}

  Tape tape;

  int param_leaf(std::size_t index) {
    if (leaf_ids_[index] < 0) leaf_ids_[index] = tape.leaf(params_.items()[index].tensor);
    return leaf_ids_[index];
  }

  int param_leaf(const std::string& name) { return param_leaf(params_.index_of(name)); }

  // Normalized depth image [48,48,2] -> image features [image_feat_dim].
  int image_features(int image_node) {
    const Tensor& img = tape.value(image_node);
    require(img.rank() == 3 && img.dim(0) == kImageSize && img.dim(1) == kImageSize &&
                img.dim(2) == kImageChannels,
            "image encoder expects [48x48x2], got " + Tensor::shape_str(img.shape));
    int x = image_node;
    for (std::size_t i = 0; i < cfg_.conv_channels.size(); ++i) {
      x = tape.conv3x3_pool(x, param_leaf("img.conv" + std::to_string(i) + ".w"),
                            param_leaf("img.conv" + std::to_string(i) + ".b"), cfg_.leaky_alpha);
    }
    return tape.dense(x, param_leaf("img.out.w"), param_leaf("img.out.b"));
  }

  // Encoder input is (t ++ value). The action encoder activates every layer;
  // the effect encoder leaves its last layer linear.
  int encode_channel(bool action_channel, int input_node) {
    const char* base = action_channel ? "enc_a" : "enc_e";
    const int expected = 1 + (action_channel ? cfg_.action_dim : cfg_.effect_dim);
    require(tape.value(input_node).size() == expected,
            std::string(base) + ": input size " + std::to_string(tape.value(input_node).size()) +
                ", expected " + std::to_string(expected));
    int x = input_node;
    const std::size_t layers = cfg_.encoder_widths.size() + 1;
    for (std::size_t i = 0; i < layers; ++i) {
      x = tape.dense(x, param_leaf(std::string(base) + "." + std::to_string(i) + ".w"),
                     param_leaf(std::string(base) + "." + std::to_string(i) + ".b"));
      const bool last = i + 1 == layers;
      if (!last || action_channel) x = tape.leaky_relu(x, cfg_.leaky_alpha);
    }
    return x;
  }

  int encode_channel(bool action_channel, float t, std::span<const float> value_norm) {
    std::vector<float> in(1 + value_norm.size());
    in[0] = t;
    std::copy(value_norm.begin(), value_norm.end(), in.begin() + 1);
    return encode_channel(action_channel, tape.constant(Tensor::vec(std::move(in))));
  }

  // r_i = w1 * h_a + w2 * h_e. Channels with zero weight may be omitted.
  int blend(std::optional<int> action_latent, std::optional<int> effect_latent, BlendWeights w) {
    w.validate();
    if (w.action == 0.0) {
      require(effect_latent.has_value(), "blend: effect latent required when w = (0, 1)");
      return *effect_latent;
    }
    if (w.effect == 0.0) {
      require(action_latent.has_value(), "blend: action latent required when w = (1, 0)");
      return *action_latent;
    }
    require(action_latent && effect_latent, "blend: both latents required for mixed weights");
    return tape.lincomb(static_cast<float>(w.action), *action_latent,
                        static_cast<float>(w.effect), *effect_latent);
  }

  int aggregate(std::span<const int> latents) {
    require(!latents.empty(), "aggregate: at least one latent is required");
    if (latents.size() == 1) return latents[0];
    return tape.mean_of(latents);
  }

  // r_mrg = (r ++ image_feat ++ t_q), then the shared dense layer.
  int merged(int r, int image_feat, float t_q) {
    require(t_q >= 0.0f && t_q <= 1.0f, "t_q " + std::to_string(t_q) + " outside [0, 1]");
    const int t_node = tape.constant(Tensor::scalar(t_q));
    const int ids[3] = {r, image_feat, t_node};
    const int cat = tape.concat(ids);
    require(tape.value(cat).size() == cfg_.merged_dim(), "merged representation width mismatch");
    return tape.dense(cat, param_leaf("merge.w"), param_leaf("merge.b"));
  }

  // Decoder head: mean and positive std, each of the channel dimension.
  std::pair<int, int> decode(bool action_channel, int shared) {
    const char* base = action_channel ? "dec_a" : "dec_e";
    const int dim = action_channel ? cfg_.action_dim : cfg_.effect_dim;
    int x = shared;
    const std::size_t layers = cfg_.decoder_widths.size() + 1;
    for (std::size_t i = 0; i < layers; ++i) {
      x = tape.dense(x, param_leaf(std::string(base) + "." + std::to_string(i) + ".w"),
                     param_leaf(std::string(base) + "." + std::to_string(i) + ".b"));
      x = tape.leaky_relu(x, cfg_.leaky_alpha);
    }
    const int mean = tape.slice(x, 0, dim);
    const int raw_std = tape.slice(x, dim, dim);
    return {mean, tape.positive_std(raw_std)};
  }

  const ModelConfig& config() const { return cfg_; }

 private:
  const ModelConfig& cfg_;
  const ModelParams& params_;
  std::vector<int> leaf_ids_;
};

// Exact elementwise mean with 64-bit accumulation; permutation invariant.
inline Tensor aggregate_latents(std::span<const Tensor> latents) {
  require(!latents.empty(), "aggregate: empty latent list");
  Tensor out = Tensor::zeros(latents[0].shape);
  const double inv = 1.0 / static_cast<double>(latents.size());
  for (int i = 0; i < out.size(); ++i) {
    double s = 0.0;
    for (const Tensor& l : latents) {
      require(l.same_shape(out), "aggregate: latent shape mismatch");
      s += static_cast<double>(l.data[i]);
    }
    out.data[i] = static_cast<float>(s * inv);
  }
  return out;
}

inline Tensor normalized_image_tensor(const DepthImage& img, float height_scale) {
  Tensor t = img.data;
  for (std::size_t i = 0; i < t.data.size(); i += 2) t.data[i] *= height_scale;
  return t;
}

// Inference facade: immutable parameters plus the dataset normalization the
// model was trained with. All values cross this interface in raw units; the
// only exception are the *_norm methods used by the planners and tests.
class AffordanceModel {
 public:
  AffordanceModel(ModelConfig cfg, ModelParams params, ChannelStats stats, ActionFamily family)
      : cfg_(std::move(cfg)), params_(std::move(params)), stats_(std::move(stats)), family_(family) {
    cfg_.validate();
  }

  const ModelConfig& config() const { return cfg_; }
  const ModelParams& params() const { return params_; }
  ModelParams& mutable_params() { return params_; }
  const ChannelStats& stats() const { return stats_; }
  ActionFamily family() const { return family_; }

  // Image features are computed once per scene and cached by the caller.
  Tensor encode_image(const DepthImage& img) const {
    GraphBuilder g(cfg_, params_);
    const Tensor norm = normalized_image_tensor(img, cfg_.image_height_scale);
    const int in = g.tape.constant(norm);
    return g.tape.value(g.image_features(in));
  }

  // Blended, aggregated latent for a set of conditioning points.
  Tensor encode_observations(std::span<const Observation> obs, BlendWeights w) const {
    GraphBuilder g(cfg_, params_);
    return g.tape.value(build_latent(g, obs, w));
  }

  std::pair<GaussianPrediction, GaussianPrediction> query(const Tensor& r, const Tensor& image_feat,
                                                          double t_q) const {
    require(t_q >= 0.0 && t_q <= 1.0, "t_q " + std::to_string(t_q) + " outside [0, 1]");
    GraphBuilder g(cfg_, params_);
    const int r_node = g.tape.constant(r);
    const int f_node = g.tape.constant(image_feat);
    const int shared = g.merged(r_node, f_node, static_cast<float>(t_q));
    const auto [am, as] = g.decode(true, shared);
    const auto [em, es] = g.decode(false, shared);
    return {denorm_action(g, am, as), denorm_effect(g, em, es)};
  }

  // One encode/aggregate pass, then one query per phase.
  std::vector<std::pair<GaussianPrediction, GaussianPrediction>> predict_trajectory(
      const Tensor& image_feat, std::span<const Observation> obs, BlendWeights w,
      std::span<const double> ts) const {
    require(!ts.empty(), "predict_trajectory: no query phases");
    const Tensor r = encode_observations(obs, w);
    std::vector<std::pair<GaussianPrediction, GaussianPrediction>> out;
    out.reserve(ts.size());
    for (double t : ts) out.push_back(query(r, image_feat, t));
    return out;
  }

  // Effect means only, in raw units; the planners' inner loop.
  std::vector<std::vector<float>> effect_means(const Tensor& image_feat,
                                               std::span<const Observation> obs, BlendWeights w,
                                               std::span<const double> ts) const {
    require(!ts.empty(), "effect_means: no query phases");
    GraphBuilder g(cfg_, params_);
    const int r = build_latent(g, obs, w);
    const int f_node = g.tape.constant(image_feat);
    std::vector<std::vector<float>> out;
    out.reserve(ts.size());
    for (double t : ts) {
      const int shared = g.merged(r, f_node, static_cast<float>(t));
      const auto [em, es] = g.decode(false, shared);
      (void)es;
      out.push_back(stats_.denorm_effect(g.tape.value(em).data));
    }
    return out;
  }

  struct EffectInputGradient {
    double loss = 0.0;
    std::vector<float> grad;       // d loss / d candidate (normalized space)
    std::vector<float> mean_norm;  // predicted effect mean (normalized space)
  };

  // Gradient of the squared error between the effect-decoder mean at phase t
  // and `target_norm`, taken with respect to the effect-channel input values
  // only. Everything stays in normalized model space; parameters are frozen
  // (their adjoints are simply discarded).
  EffectInputGradient effect_input_gradient(const Tensor& image_feat,
                                            const std::vector<float>& candidate_norm, double t_q,
                                            const std::vector<float>& target_norm) const {
    require(static_cast<int>(candidate_norm.size()) == cfg_.effect_dim &&
                static_cast<int>(target_norm.size()) == cfg_.effect_dim,
            "effect_input_gradient: dim mismatch");
    GraphBuilder g(cfg_, params_);
    Tensor cand = Tensor::vec(candidate_norm);
    const int cand_leaf = g.tape.leaf(cand);
    const int t_node = g.tape.constant(Tensor::scalar(static_cast<float>(t_q)));
    const int ids[2] = {t_node, cand_leaf};
    const int input = g.tape.concat(ids);
    const int latent = g.encode_channel(false, input);
    const int f_node = g.tape.constant(image_feat);
    const int shared = g.merged(latent, f_node, static_cast<float>(t_q));
    const auto [em, es] = g.decode(false, shared);
    (void)es;
    const int loss = g.tape.mse(em, Tensor::vec(target_norm));
    g.tape.backward(loss);
    EffectInputGradient out;
    out.loss = g.tape.value(loss).data[0];
    out.grad = g.tape.grad(cand_leaf).data;
    out.mean_norm = g.tape.value(em).data;
    return out;
  }

 private:
  int build_latent(GraphBuilder& g, std::span<const Observation> obs, BlendWeights w) const {
    w.validate();
    require(!obs.empty(), "encode: at least one observation is required");
    std::vector<int> latents;
    latents.reserve(obs.size());
    for (const Observation& o : obs) {
      std::optional<int> a, e;
      if (w.action > 0.0) {
        const auto an = stats_.normalize_action(o.action);
        a = g.encode_channel(true, static_cast<float>(o.t), an);
      }
      if (w.effect > 0.0) {
        const auto en = stats_.normalize_effect(o.effect);
        e = g.encode_channel(false, static_cast<float>(o.t), en);
      }
      latents.push_back(g.blend(a, e, w));
    }
    return g.aggregate(latents);
  }

  GaussianPrediction denorm_action(const GraphBuilder& g, int mean, int stddev) const {
    GaussianPrediction p;
    p.mean = stats_.denorm_action(g.tape.value(mean).data);
    p.stddev = stats_.action_std_denorm(g.tape.value(stddev).data);
    return p;
  }

  GaussianPrediction denorm_effect(const GraphBuilder& g, int mean, int stddev) const {
    GaussianPrediction p;
    p.mean = stats_.denorm_effect(g.tape.value(mean).data);
    p.stddev = stats_.effect_std_denorm(g.tape.value(stddev).data);
    return p;
  }

  ModelConfig cfg_;
  ModelParams params_;
  ChannelStats stats_;
  ActionFamily family_;
};

// Layer-by-layer (name, input size, output size) trace of a forward pass at
// the given config, for architecture checks and debugging.
struct ShapeTraceRow {
  std::string layer;
  std::vector<int> in;
  std::vector<int> out;
};

inline std::vector<ShapeTraceRow> shape_trace(const ModelConfig& cfg) {
  ModelParams params = ModelParams::init(cfg, 1);
  GraphBuilder g(cfg, params);
  std::vector<ShapeTraceRow> rows;
  int x = g.tape.constant(Tensor::zeros({kImageSize, kImageSize, kImageChannels}));
  for (std::size_t i = 0; i < cfg.conv_channels.size(); ++i) {
    const auto in = g.tape.value(x).shape;
    x = g.tape.conv3x3_pool(x, g.param_leaf("img.conv" + std::to_string(i) + ".w"),
                            g.param_leaf("img.conv" + std::to_string(i) + ".b"), cfg.leaky_alpha);
    rows.push_back({"img.conv" + std::to_string(i), in, g.tape.value(x).shape});
  }
  const int img_feat = g.tape.dense(x, g.param_leaf("img.out.w"), g.param_leaf("img.out.b"));
  rows.push_back({"img.out", g.tape.value(x).shape, g.tape.value(img_feat).shape});

  for (const bool action_channel : {true, false}) {
    const int dim = action_channel ? cfg.action_dim : cfg.effect_dim;
    std::vector<float> zeros(static_cast<std::size_t>(dim), 0.0f);
    const int in_node = g.tape.constant(Tensor::vec(std::vector<float>(1 + dim, 0.0f)));
    const int latent = g.encode_channel(action_channel, in_node);
    rows.push_back({action_channel ? "enc_a" : "enc_e", {1 + dim}, g.tape.value(latent).shape});
    (void)zeros;
  }

  const int r = g.tape.constant(Tensor::zeros({cfg.latent_dim}));
  const int shared = g.merged(r, img_feat, 0.0f);
  rows.push_back({"merge", {cfg.merged_dim()}, g.tape.value(shared).shape});
  for (const bool action_channel : {true, false}) {
    const auto [mean, stddev] = g.decode(action_channel, shared);
    const int dim = g.tape.value(mean).size() + g.tape.value(stddev).size();
    rows.push_back({action_channel ? "dec_a" : "dec_e", {cfg.shared_dim}, {dim}});
  }
  return rows;
}

}  // namespace afford
