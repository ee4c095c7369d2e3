#pragma once

// The parallel relighting + ReID transformer.
//
//   image -> patch/position/camera embedding -> shared encoder
//         -> ReID subnet (encoders, BNNeck, per-domain classifiers)
//         -> relighting subnet (decoders with task embedding, conv head)
//
// Parameters are registered by stable dotted names and partitioned into
// three groups so that either subnet can be dropped or imported alone.

#include "cenet/losses.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <string>

namespace cenet {

/// Pixel normalisation ahead of the patch projection.
enum class InputNorm { fixed, instance };

const char* input_norm_name(InputNorm n);
InputNorm parse_input_norm(const std::string& name);

struct ModelConfig {
  Index image_height = 256;
  Index image_width = 128;
  Index patch_size = 16;
  Index embed_dim = 768;
  Index heads = 12;
  Index shared_depth = 5;
  Index reid_depth = 6;
  Index decoder_depth = 6;
  Index mlp_ratio = 4;
  Index relight_channels = 32;
  std::array<Index, 2> num_classes{0, 0};  // indexed by Domain; 0 = domain not configured
  std::array<Index, 2> num_cameras{1, 1};
  double camera_coefficient = 3.0;
  InputNorm input_norm = InputNorm::fixed;
  bool share_encoder = true;  // false: the relighting branch owns a private embedding + encoder copy

  Index grid_height() const { return image_height / patch_size; }
  Index grid_width() const { return image_width / patch_size; }
  Index num_patches() const { return grid_height() * grid_width(); }
  Index num_tokens() const { return num_patches() + 1; }
  bool has_domain(Domain d) const { return num_classes[static_cast<std::size_t>(d)] > 0; }

  void validate() const;

  static ModelConfig full();
  static ModelConfig toy();
};

enum class ParamGroup { shared = 0, reid = 1, relight = 2 };

const char* group_name(ParamGroup g);

template <typename S>
struct ParamEntry {
  std::string name;
  ParamGroup group;
  Var<S> var;
  bool no_decay;  // normalization scales, biases, embeddings
};

template <typename S>
struct BufferEntry {
  std::string name;
  ParamGroup group;
  Tensor<S>* tensor;
};

template <typename S>
struct SharedFeatures {
  Var<S> full;  // [B, N+1, D], row 0 is the class token

  Var<S> patches_only() const { return slice_tokens(full, 1, full.dim(1) - 1); }
};

template <typename S>
struct ReIDOutput {
  Var<S> global;       // [B, D] class-token output before BNNeck (triplet operand)
  Var<S> feature;      // [B, D] BNNeck output f (identity loss operand, retrieval descriptor)
  Var<S> logits;       // [B, C_domain], undefined when not requested
  Var<S> high_tokens;  // [B, N, D] final ReID patch tokens f_s
};

template <typename S>
struct RelightOutput {
  Var<S> reflectance;   // [B, 3, H, W]
  Var<S> illumination;  // [B, 1, H, W]
  Var<S> tokens;        // [B, N, D] final decoder tokens f_t
};

template <typename S>
struct ForwardResult {
  ReIDOutput<S> reid;
  std::optional<RelightOutput<S>> relight;
};

namespace detail {

inline double truncated_normal(Rng& rng, double stddev) {
  std::normal_distribution<double> n(0.0, 1.0);
  double v;
  do v = n(rng);
  while (std::abs(v) > 2.0);
  return v * stddev;
}

template <typename S>
Tensor<S> init_normal(Shape shape, Rng& rng, double stddev) {
  Tensor<S> t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t.data[i] = static_cast<S>(truncated_normal(rng, stddev));
  return t;
}

}  // namespace detail

template <typename S>
class CENet {
 public:
  struct Linear {
    Var<S> weight;  // [in, out]
    Var<S> bias;    // [out] or undefined
    Var<S> operator()(const Var<S>& x) const { return linear(x, weight, bias); }
  };
  struct Norm {
    Var<S> gamma, beta;
    Var<S> operator()(const Var<S>& x) const { return layer_norm(x, gamma, beta); }
  };
  struct Conv {
    Var<S> weight, bias;  // [Cout, Cin*k*k], [Cout]
    Index kernel;
    Var<S> operator()(const Var<S>& x) const { return conv2d(x, weight, bias, kernel); }
  };
  /// Pre-norm transformer block: x + MHSA(LN(x)), then x + MLP(LN(x)).
  struct Block {
    Norm norm1;
    Linear qkv, proj;
    Norm norm2;
    Linear fc1, fc2;
    Index heads;
    Var<S> operator()(const Var<S>& x) const {
      Var<S> h = x + proj(multi_head_attention(qkv(norm1(x)), heads));
      return h + fc2(gelu(fc1(norm2(h))));
    }
  };
  struct Embedding {
    Linear patch;                          // [3*p*p, D]
    Var<S> cls;                            // [D]
    Var<S> position;                       // [N+1, D]
    std::array<Var<S>, 2> camera;          // per domain: [cameras, D]
  };

  CENet(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    const Index D = cfg_.embed_dim;
    build_embedding(embed_, "embed", ParamGroup::shared, rng);
    for (Index i = 0; i < cfg_.shared_depth; ++i)
      shared_.push_back(make_block("shared.blocks." + std::to_string(i), ParamGroup::shared, rng));

    for (Index i = 0; i < cfg_.reid_depth; ++i)
      reid_.push_back(make_block("reid.blocks." + std::to_string(i), ParamGroup::reid, rng));
    reid_norm_ = make_norm("reid.norm", ParamGroup::reid);
    bn_gamma_ = add_param("reid.bnneck.weight", ParamGroup::reid, Tensor<S>({D}, S(1)), true);
    bn_beta_ = add_param("reid.bnneck.bias", ParamGroup::reid, Tensor<S>({D}), true);
    bn_mean_ = Tensor<S>({D});
    bn_var_ = Tensor<S>({D}, S(1));
    buffers_.push_back({"reid.bnneck.running_mean", ParamGroup::reid, &bn_mean_});
    buffers_.push_back({"reid.bnneck.running_var", ParamGroup::reid, &bn_var_});
    for (Domain d : {Domain::real, Domain::synthetic}) {
      const Index classes = cfg_.num_classes[static_cast<std::size_t>(d)];
      if (classes == 0) continue;
      heads_[static_cast<std::size_t>(d)] = add_param(std::string("reid.head.") + domain_name(d) + ".weight",
                                                      ParamGroup::reid, detail::init_normal<S>({D, classes}, rng, 0.001),
                                                      false);
    }

    if (!cfg_.share_encoder) {
      build_embedding(relight_embed_, "relight.embed", ParamGroup::relight, rng);
      for (Index i = 0; i < cfg_.shared_depth; ++i)
        relight_encoder_.push_back(make_block("relight.encoder.blocks." + std::to_string(i), ParamGroup::relight, rng));
    }
    task_embed_ = add_param("relight.task_embed", ParamGroup::relight, detail::init_normal<S>({D}, rng, 0.02), true);
    for (Index i = 0; i < cfg_.decoder_depth; ++i)
      decoder_.push_back(make_block("relight.blocks." + std::to_string(i), ParamGroup::relight, rng));
    decoder_norm_ = make_norm("relight.norm", ParamGroup::relight);
    const Index c = cfg_.relight_channels;
    conv_tokens_ = make_conv("relight.conv_tokens", D, c, 3, rng);
    conv_max_ = make_conv("relight.conv_max", 1, c, 3, rng);
    fuse1_ = make_conv("relight.fuse1", 2 * c, c, 3, rng);
    fuse2_ = make_conv("relight.fuse2", c, c, 3, rng);
    out_conv_ = make_conv("relight.out", c, 4, 1, rng);
  }

  CENet(const CENet&) = delete;
  CENet& operator=(const CENet&) = delete;

  const ModelConfig& config() const { return cfg_; }
  void set_training(bool on) { training_ = on; }
  bool training() const { return training_; }

  bool has_group(ParamGroup g) const { return available_[static_cast<std::size_t>(g)]; }
  /// Marks a parameter group as absent (e.g. after loading a stripped checkpoint).
  void set_group_available(ParamGroup g, bool on) { available_[static_cast<std::size_t>(g)] = on; }

  std::vector<ParamEntry<S>>& parameters() { return params_; }
  const std::vector<ParamEntry<S>>& parameters() const { return params_; }
  std::vector<BufferEntry<S>>& buffers() { return buffers_; }

  Index parameter_count(std::optional<ParamGroup> group = std::nullopt) const {
    Index n = 0;
    for (const auto& p : params_)
      if (!group || p.group == *group) n += p.var.size();
    return n;
  }

  const ParamEntry<S>* find(const std::string& name) const {
    for (const auto& p : params_)
      if (p.name == name) return &p;
    return nullptr;
  }

  void zero_grad() {
    for (auto& p : params_) p.var.zero_grad();
  }

  /// Non-overlapping patch projection + class token + position embedding +
  /// scaled camera embedding. images: [B, 3, H, W].
  Var<S> patch_embed(const Tensor<S>& images, const std::vector<int>& camids, Domain domain) const {
    return embed_tokens(embed_, images, camids, domain);
  }

  SharedFeatures<S> shared_encode(const Var<S>& tokens) const {
    require(tokens.value().rank() == 3 && tokens.dim(1) == cfg_.num_tokens() && tokens.dim(2) == cfg_.embed_dim,
            "shared_encode: expected [B," + std::to_string(cfg_.num_tokens()) + "," + std::to_string(cfg_.embed_dim) +
                "] tokens, got " + shape_string(tokens.shape()));
    Var<S> x = tokens;
    for (const auto& b : shared_) x = b(x);
    return {x};
  }

  ReIDOutput<S> reid_head(const SharedFeatures<S>& shared, Domain domain, bool with_logits = true) const {
    return reid_forward(shared, domain, with_logits, training_);
  }

  /// Decoder input = patch tokens + task embedding; decoder tokens are
  /// mapped back to pixels and fused with the refined channel maximum of the
  /// input into a sigmoid-bounded 4-channel map (R = channels 0-2, I = channel 3).
  RelightOutput<S> relight_decode(const SharedFeatures<S>& shared, const Tensor<S>& images) const {
    require(has_group(ParamGroup::relight), "relight_decode: relighting subnet parameters are not loaded");
    require(images.rank() == 4 && images.dim(1) == 3 && images.dim(2) == cfg_.image_height &&
                images.dim(3) == cfg_.image_width,
            "relight_decode: expected [B,3," + std::to_string(cfg_.image_height) + "," +
                std::to_string(cfg_.image_width) + "] images, got " + shape_string(images.shape));
    require(shared.full.dim(0) == images.dim(0) && shared.full.dim(1) == cfg_.num_tokens(),
            "relight_decode: shared features do not match the image batch");
    Var<S> x = add_trailing(shared.patches_only(), task_embed_);
    for (const auto& b : decoder_) x = b(x);
    Var<S> tokens = decoder_norm_(x);

    Var<S> grid = tokens_to_grid(tokens, cfg_.grid_height(), cfg_.grid_width());
    Var<S> from_tokens = upsample_bilinear(conv_tokens_(grid), cfg_.image_height, cfg_.image_width);
    Tensor<S> input_max;
    {
      NoGradGuard guard;
      input_max = channel_max(Var<S>::constant(images)).value();
    }
    Var<S> from_input = conv_max_(Var<S>::constant(input_max));
    Var<S> fused = relu(fuse2_(relu(fuse1_(concat_channels(from_tokens, from_input)))));
    Var<S> maps = sigmoid(out_conv_(fused));
    return {slice_channels(maps, 0, 3), slice_channels(maps, 3, 1), tokens};
  }

  /// Shared features for the relighting branch: the shared encoder output, or
  /// the private copy when parameter sharing is disabled.
  SharedFeatures<S> relight_features(const SharedFeatures<S>& shared, const Tensor<S>& images,
                                     const std::vector<int>& camids, Domain domain) const {
    if (cfg_.share_encoder) return shared;
    Var<S> x = embed_tokens(relight_embed_, images, camids, domain);
    for (const auto& b : relight_encoder_) x = b(x);
    return {x};
  }

  ForwardResult<S> forward(const Tensor<S>& images, const std::vector<int>& camids, Domain domain,
                           bool with_relight = true) const {
    SharedFeatures<S> shared = shared_encode(patch_embed(images, camids, domain));
    ForwardResult<S> out;
    out.reid = reid_head(shared, domain, true);
    if (with_relight) out.relight = relight_decode(relight_features(shared, images, camids, domain), images);
    return out;
  }

  /// ReID-only retrieval descriptor (BNNeck output, evaluation statistics).
  /// Never touches the relighting subnet.
  Tensor<S> infer(const Tensor<S>& images, const std::vector<int>& camids, Domain domain) const {
    NoGradGuard guard;
    SharedFeatures<S> shared = shared_encode(patch_embed(images, camids, domain));
    return reid_forward(shared, domain, false, false).feature.value();
  }

  /// Relighting-only path used for enhancement; never touches ReID parameters.
  RelightOutput<S> enhance(const Tensor<S>& images, const std::vector<int>& camids, Domain domain) const {
    NoGradGuard guard;
    SharedFeatures<S> shared = shared_encode(patch_embed(images, camids, domain));
    return relight_decode(relight_features(shared, images, camids, domain), images);
  }

 private:
  Var<S> add_param(std::string name, ParamGroup group, Tensor<S> value, bool no_decay) {
    Var<S> v = Var<S>::parameter(std::move(value));
    params_.push_back({std::move(name), group, v, no_decay});
    return v;
  }

  Linear make_linear(const std::string& name, ParamGroup g, Index in, Index out, Rng& rng, bool bias = true) {
    Linear l;
    l.weight = add_param(name + ".weight", g, detail::init_normal<S>({in, out}, rng, 0.02), false);
    if (bias) l.bias = add_param(name + ".bias", g, Tensor<S>({out}), true);
    return l;
  }

  Norm make_norm(const std::string& name, ParamGroup g) {
    const Index D = cfg_.embed_dim;
    return {add_param(name + ".weight", g, Tensor<S>({D}, S(1)), true), add_param(name + ".bias", g, Tensor<S>({D}), true)};
  }

  Block make_block(const std::string& name, ParamGroup g, Rng& rng) {
    const Index D = cfg_.embed_dim, hidden = cfg_.mlp_ratio * cfg_.embed_dim;
    Block b;
    b.norm1 = make_norm(name + ".norm1", g);
    b.qkv = make_linear(name + ".attn.qkv", g, D, 3 * D, rng);
    b.proj = make_linear(name + ".attn.proj", g, D, D, rng);
    b.norm2 = make_norm(name + ".norm2", g);
    b.fc1 = make_linear(name + ".mlp.fc1", g, D, hidden, rng);
    b.fc2 = make_linear(name + ".mlp.fc2", g, hidden, D, rng);
    b.heads = cfg_.heads;
    return b;
  }

  Conv make_conv(const std::string& name, Index in, Index out, Index k, Rng& rng) {
    const double fan_in = static_cast<double>(in * k * k);
    Conv c;
    c.weight = add_param(name + ".weight", ParamGroup::relight,
                         detail::init_normal<S>({out, in * k * k}, rng, std::sqrt(2.0 / fan_in)), false);
    c.bias = add_param(name + ".bias", ParamGroup::relight, Tensor<S>({out}), true);
    c.kernel = k;
    return c;
  }

  void build_embedding(Embedding& e, const std::string& prefix, ParamGroup g, Rng& rng) {
    const Index D = cfg_.embed_dim, p = cfg_.patch_size;
    e.patch = make_linear(prefix + ".patch", g, 3 * p * p, D, rng);
    e.cls = add_param(prefix + ".cls_token", g, detail::init_normal<S>({D}, rng, 0.02), true);
    e.position = add_param(prefix + ".position", g, detail::init_normal<S>({cfg_.num_tokens(), D}, rng, 0.02), true);
    for (Domain d : {Domain::real, Domain::synthetic}) {
      const Index cams = cfg_.num_cameras[static_cast<std::size_t>(d)];
      e.camera[static_cast<std::size_t>(d)] =
          add_param(prefix + ".camera." + domain_name(d), g, detail::init_normal<S>({cams, D}, rng, 0.02), true);
    }
  }

  /// [B, 3, H, W] -> [B, N, 3*p*p], raster patch order, (channel, row, col)
  /// within a patch. Pixels are mapped to [-1, 1], or standardised per image
  /// (zero mean, unit deviation over all channels) under InputNorm::instance.
  Tensor<S> patchify(const Tensor<S>& images) const {
    const Index B = images.dim(0), H = cfg_.image_height, W = cfg_.image_width, p = cfg_.patch_size;
    const Index gh = cfg_.grid_height(), gw = cfg_.grid_width();
    const Index n = 3 * H * W;
    Tensor<S> out({B, gh * gw, 3 * p * p});
    S* o = out.ptr();
    for (Index b = 0; b < B; ++b) {
      const auto img = images.data.segment(b * n, n);
      S shift = S(1), scale = S(2);
      if (cfg_.input_norm == InputNorm::instance) {
        const S mu = img.mean();
        const S sd = std::sqrt((img.array() - mu).square().mean());
        scale = S(1) / (sd + S(1e-3));
        shift = mu * scale;
      }
      for (Index py = 0; py < gh; ++py)
        for (Index px = 0; px < gw; ++px)
          for (Index c = 0; c < 3; ++c)
            for (Index y = 0; y < p; ++y)
              for (Index x = 0; x < p; ++x) *o++ = scale * img[(c * H + py * p + y) * W + px * p + x] - shift;
    }
    return out;
  }

  Var<S> embed_tokens(const Embedding& e, const Tensor<S>& images, const std::vector<int>& camids, Domain domain) const {
    require(images.rank() == 4 && images.dim(1) == 3 && images.dim(2) == cfg_.image_height &&
                images.dim(3) == cfg_.image_width,
            "patch_embed: expected [B,3," + std::to_string(cfg_.image_height) + "," + std::to_string(cfg_.image_width) +
                "] images, got " + shape_string(images.shape));
    require(static_cast<Index>(camids.size()) == images.dim(0), "patch_embed: one camera id per image required");
    const Index cams = cfg_.num_cameras[static_cast<std::size_t>(domain)];
    for (int c : camids)
      require(c >= 0 && c < cams, "patch_embed: camera id " + std::to_string(c) + " out of range for " +
                                      domain_name(domain) + " domain (" + std::to_string(cams) + " cameras)");
    Var<S> tokens = e.patch(Var<S>::constant(patchify(images)));
    tokens = add_trailing(prepend_token(tokens, e.cls), e.position);
    return add_indexed_rows(tokens, e.camera[static_cast<std::size_t>(domain)], camids,
                            static_cast<S>(cfg_.camera_coefficient));
  }

  ReIDOutput<S> reid_forward(const SharedFeatures<S>& shared, Domain domain, bool with_logits, bool bn_training) const {
    require(has_group(ParamGroup::reid), "reid_head: ReID subnet parameters are not loaded");
    require(cfg_.has_domain(domain), std::string("reid_head: no classification head for domain ") + domain_name(domain));
    Var<S> x = shared.full;
    for (const auto& b : reid_) x = b(x);
    x = reid_norm_(x);
    ReIDOutput<S> out;
    out.global = reshape(slice_tokens(x, 0, 1), {x.dim(0), cfg_.embed_dim});
    out.high_tokens = slice_tokens(x, 1, cfg_.num_patches());
    out.feature = batch_norm(out.global, bn_gamma_, bn_beta_, bn_mean_, bn_var_, bn_training);
    if (with_logits) out.logits = linear(out.feature, heads_[static_cast<std::size_t>(domain)]);
    return out;
  }

  ModelConfig cfg_;
  bool training_ = true;
  std::array<bool, 3> available_{true, true, true};
  std::vector<ParamEntry<S>> params_;
  std::vector<BufferEntry<S>> buffers_;

  Embedding embed_;
  std::vector<Block> shared_;
  std::vector<Block> reid_;
  Norm reid_norm_;
  Var<S> bn_gamma_, bn_beta_;
  mutable Tensor<S> bn_mean_, bn_var_;
  std::array<Var<S>, 2> heads_;

  Embedding relight_embed_;
  std::vector<Block> relight_encoder_;
  Var<S> task_embed_;
  std::vector<Block> decoder_;
  Norm decoder_norm_;
  Conv conv_tokens_, conv_max_, fuse1_, fuse2_, out_conv_;
};

}  // namespace cenet
