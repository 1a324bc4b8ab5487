#include "patchguard/vit.hpp"

#include <cmath>

#include "patchguard/ops.hpp"
#include "patchguard/rng.hpp"

namespace patchguard {

std::size_t TinyViTConfig::num_patches() const {
  return (image_shape.at(1) / patch_size) * (image_shape.at(2) / patch_size);
}

void TinyViTConfig::validate() const {
  if (image_shape.size() != 3) {
    throw ConfigError("vit: image shape must be C×H×W, got " + shape_string(image_shape));
  }
  if (patch_size == 0 || image_shape[1] % patch_size != 0 || image_shape[2] % patch_size != 0) {
    throw ConfigError("vit: patch size " + std::to_string(patch_size) +
                      " does not divide image " + shape_string(image_shape));
  }
  if (embed_dim == 0 || heads == 0 || embed_dim % heads != 0) {
    throw ConfigError("vit: embed_dim " + std::to_string(embed_dim) +
                      " is not divisible by heads " + std::to_string(heads));
  }
  if (depth == 0 || mlp_ratio == 0) throw ConfigError("vit: depth and mlp_ratio must be positive");
  if (num_classes < 2) throw ConfigError("vit: num_classes must be at least 2");
  normalization.validate(image_shape[0]);
}

void to_json(nlohmann::json& j, const TinyViTConfig& c) {
  j = nlohmann::json{{"arch", "vit"},
                     {"image_shape", c.image_shape},
                     {"patch_size", c.patch_size},
                     {"embed_dim", c.embed_dim},
                     {"depth", c.depth},
                     {"heads", c.heads},
                     {"mlp_ratio", c.mlp_ratio},
                     {"num_classes", c.num_classes},
                     {"normalization", c.normalization},
                     {"init_seed", c.init_seed}};
}

void from_json(const nlohmann::json& j, TinyViTConfig& c) {
  TinyViTConfig d;
  c.image_shape = j.value("image_shape", d.image_shape);
  c.patch_size = j.value("patch_size", d.patch_size);
  c.embed_dim = j.value("embed_dim", d.embed_dim);
  c.depth = j.value("depth", d.depth);
  c.heads = j.value("heads", d.heads);
  c.mlp_ratio = j.value("mlp_ratio", d.mlp_ratio);
  c.num_classes = j.value("num_classes", d.num_classes);
  c.normalization = j.value("normalization", d.normalization);
  c.init_seed = j.value("init_seed", d.init_seed);
}

namespace {

template <typename T>
Tensor<T> xavier(Shape shape, Rng& rng) {
  const double fan_in = static_cast<double>(shape[0]);
  const double fan_out = static_cast<double>(shape[1]);
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>((2.0 * uniform01(rng) - 1.0) * bound);
  return t;
}

template <typename T>
Tensor<T> small_normal(Shape shape, Rng& rng, double stddev) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(stddev * standard_normal(rng));
  return t;
}

template <typename T>
Tensor<T> row(const Tensor<T>& m, std::size_t r) {
  const std::size_t cols = m.dim(1);
  return Tensor<T>({1, cols}, std::vector<T>(m.raw() + r * cols, m.raw() + (r + 1) * cols));
}

}  // namespace

template <typename T>
TinyViT<T>::TinyViT(TinyViTConfig config) : config_(std::move(config)) {
  config_.validate();
  this->set_normalization(config_.normalization);
  Rng rng(derive_seed(config_.init_seed, "vit-init"));
  const std::size_t d = config_.embed_dim;
  const std::size_t patch_dim = config_.image_shape[0] * config_.patch_size * config_.patch_size;
  const std::size_t hidden = d * config_.mlp_ratio;
  auto index_of = [this](std::string name, Tensor<T> value) {
    this->add_parameter(std::move(name), std::move(value));
    return this->parameters().size() - 1;
  };
  patch_w_ = index_of("patch_embed.weight", xavier<T>({patch_dim, d}, rng));
  patch_b_ = index_of("patch_embed.bias", Tensor<T>({d}));
  cls_ = index_of("cls_token", small_normal<T>({1, d}, rng, 0.02));
  pos_ = index_of("pos_embed", small_normal<T>({config_.sequence_length(), d}, rng, 0.02));
  for (std::size_t b = 0; b < config_.depth; ++b) {
    const std::string pre = "blocks." + std::to_string(b) + ".";
    BlockIndex bi{};
    bi.ln1_gamma = index_of(pre + "ln1.gamma", Tensor<T>({d}, T{1}));
    bi.ln1_beta = index_of(pre + "ln1.beta", Tensor<T>({d}));
    bi.wq = index_of(pre + "attn.q.weight", xavier<T>({d, d}, rng));
    bi.bq = index_of(pre + "attn.q.bias", Tensor<T>({d}));
    bi.wk = index_of(pre + "attn.k.weight", xavier<T>({d, d}, rng));
    bi.bk = index_of(pre + "attn.k.bias", Tensor<T>({d}));
    bi.wv = index_of(pre + "attn.v.weight", xavier<T>({d, d}, rng));
    bi.bv = index_of(pre + "attn.v.bias", Tensor<T>({d}));
    bi.wo = index_of(pre + "attn.proj.weight", xavier<T>({d, d}, rng));
    bi.bo = index_of(pre + "attn.proj.bias", Tensor<T>({d}));
    bi.ln2_gamma = index_of(pre + "ln2.gamma", Tensor<T>({d}, T{1}));
    bi.ln2_beta = index_of(pre + "ln2.beta", Tensor<T>({d}));
    bi.w1 = index_of(pre + "mlp.fc1.weight", xavier<T>({d, hidden}, rng));
    bi.b1 = index_of(pre + "mlp.fc1.bias", Tensor<T>({hidden}));
    bi.w2 = index_of(pre + "mlp.fc2.weight", xavier<T>({hidden, d}, rng));
    bi.b2 = index_of(pre + "mlp.fc2.bias", Tensor<T>({d}));
    blocks_.push_back(bi);
  }
  norm_gamma_ = index_of("norm.gamma", Tensor<T>({d}, T{1}));
  norm_beta_ = index_of("norm.beta", Tensor<T>({d}));
  head_w_ = index_of("head.weight", xavier<T>({d, config_.num_classes}, rng));
  head_b_ = index_of("head.bias", Tensor<T>({config_.num_classes}));
}

template <typename T>
nlohmann::json TinyViT<T>::config_json() const {
  return config_;
}

template <typename T>
Tensor<T> TinyViT<T>::patchify(const Tensor<T>& x) const {
  if (x.shape() != config_.image_shape) {
    throw DimensionError("vit: input " + shape_string(x.shape()) + " does not match model input " +
                         shape_string(config_.image_shape));
  }
  const std::size_t c = x.dim(0), ps = config_.patch_size;
  const std::size_t gw = x.dim(2) / ps;
  const std::size_t n = config_.num_patches();
  Tensor<T> out({n, c * ps * ps});
  for (std::size_t t = 0; t < n; ++t) {
    const std::size_t py = t / gw, px = t % gw;
    T* dst = out.raw() + t * c * ps * ps;
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < ps; ++i)
        for (std::size_t j = 0; j < ps; ++j) *dst++ = x.at(ch, py * ps + i, px * ps + j);
  }
  return out;
}

template <typename T>
Tensor<T> TinyViT<T>::embed(const Tensor<T>& patches) const {
  const auto tokens = ops::linear(patches, p(patch_w_), p(patch_b_));
  const std::size_t d = config_.embed_dim;
  Tensor<T> seq({config_.sequence_length(), d});
  std::copy(p(cls_).raw(), p(cls_).raw() + d, seq.raw());
  std::copy(tokens.raw(), tokens.raw() + tokens.size(), seq.raw() + d);
  seq += p(pos_);
  return seq;
}

template <typename T>
struct TinyViT<T>::BlockCache {
  Tensor<T> input, ln1, q, k, v, attn, mid, ln2, fc1, act;
};

namespace {
constexpr double kLayerNormEps = 1e-5;
}

template <typename T>
Tensor<T> TinyViT<T>::forward(const Tensor<T>& x) const {
  const T eps = static_cast<T>(kLayerNormEps);
  auto h = embed(patchify(this->normalize_input(x)));
  for (const auto& b : blocks_) {
    const auto a = ops::layer_norm(h, p(b.ln1_gamma), p(b.ln1_beta), eps);
    const auto att = ops::attention(ops::linear(a, p(b.wq), p(b.bq)),
                                    ops::linear(a, p(b.wk), p(b.bk)),
                                    ops::linear(a, p(b.wv), p(b.bv)), config_.heads);
    h += ops::linear(att, p(b.wo), p(b.bo));
    const auto n2 = ops::layer_norm(h, p(b.ln2_gamma), p(b.ln2_beta), eps);
    h += ops::linear(ops::gelu(ops::linear(n2, p(b.w1), p(b.b1))), p(b.w2), p(b.b2));
  }
  const auto z = ops::layer_norm(row(h, 0), p(norm_gamma_), p(norm_beta_), eps);
  return ops::linear(z, p(head_w_), p(head_b_)).reshaped({config_.num_classes});
}

template <typename T>
T TinyViT<T>::accumulate_gradients(const Tensor<T>& x, std::size_t label, T scale,
                                   std::vector<Tensor<T>>& grads) const {
  const T eps = static_cast<T>(kLayerNormEps);
  const std::size_t d = config_.embed_dim;
  const auto patches = patchify(this->normalize_input(x));
  auto h = embed(patches);

  std::vector<BlockCache> caches(blocks_.size());
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const auto& b = blocks_[i];
    auto& c = caches[i];
    c.input = h;
    c.ln1 = ops::layer_norm(h, p(b.ln1_gamma), p(b.ln1_beta), eps);
    c.q = ops::linear(c.ln1, p(b.wq), p(b.bq));
    c.k = ops::linear(c.ln1, p(b.wk), p(b.bk));
    c.v = ops::linear(c.ln1, p(b.wv), p(b.bv));
    c.attn = ops::attention(c.q, c.k, c.v, config_.heads);
    c.mid = h;
    c.mid += ops::linear(c.attn, p(b.wo), p(b.bo));
    c.ln2 = ops::layer_norm(c.mid, p(b.ln2_gamma), p(b.ln2_beta), eps);
    c.fc1 = ops::linear(c.ln2, p(b.w1), p(b.b1));
    c.act = ops::gelu(c.fc1);
    h = c.mid;
    h += ops::linear(c.act, p(b.w2), p(b.b2));
  }
  const auto cls_row = row(h, 0);
  const auto z = ops::layer_norm(cls_row, p(norm_gamma_), p(norm_beta_), eps);
  const auto logits = ops::linear(z, p(head_w_), p(head_b_));
  const std::size_t labels[] = {label};
  const auto loss = ops::softmax_cross_entropy(logits, labels);

  auto accumulate = [&](std::size_t index, const Tensor<T>& g) {
    auto& dst = grads[index];
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += scale * g[i];
  };

  const auto head = ops::linear_backward(z, p(head_w_), loss.dlogits);
  accumulate(head_w_, head.dweight);
  accumulate(head_b_, head.dbias);
  const auto norm = ops::layer_norm_backward(cls_row, p(norm_gamma_), eps, head.dx);
  accumulate(norm_gamma_, norm.dgamma);
  accumulate(norm_beta_, norm.dbeta);

  Tensor<T> dh(h.shape());
  std::copy(norm.dx.raw(), norm.dx.raw() + d, dh.raw());

  for (std::size_t i = blocks_.size(); i-- > 0;) {
    const auto& b = blocks_[i];
    const auto& c = caches[i];
    // MLP branch; dh also flows straight through the residual.
    const auto fc2 = ops::linear_backward(c.act, p(b.w2), dh);
    accumulate(b.w2, fc2.dweight);
    accumulate(b.b2, fc2.dbias);
    const auto dfc1 = ops::gelu_backward(c.fc1, fc2.dx);
    const auto fc1 = ops::linear_backward(c.ln2, p(b.w1), dfc1);
    accumulate(b.w1, fc1.dweight);
    accumulate(b.b1, fc1.dbias);
    const auto ln2 = ops::layer_norm_backward(c.mid, p(b.ln2_gamma), eps, fc1.dx);
    accumulate(b.ln2_gamma, ln2.dgamma);
    accumulate(b.ln2_beta, ln2.dbeta);
    Tensor<T> dmid = dh;
    dmid += ln2.dx;

    // Attention branch.
    const auto proj = ops::linear_backward(c.attn, p(b.wo), dmid);
    accumulate(b.wo, proj.dweight);
    accumulate(b.bo, proj.dbias);
    const auto att = ops::attention_backward(c.q, c.k, c.v, config_.heads, proj.dx);
    const auto gq = ops::linear_backward(c.ln1, p(b.wq), att.dq);
    const auto gk = ops::linear_backward(c.ln1, p(b.wk), att.dk);
    const auto gv = ops::linear_backward(c.ln1, p(b.wv), att.dv);
    accumulate(b.wq, gq.dweight);
    accumulate(b.bq, gq.dbias);
    accumulate(b.wk, gk.dweight);
    accumulate(b.bk, gk.dbias);
    accumulate(b.wv, gv.dweight);
    accumulate(b.bv, gv.dbias);
    Tensor<T> dln1 = gq.dx;
    dln1 += gk.dx;
    dln1 += gv.dx;
    const auto ln1 = ops::layer_norm_backward(c.input, p(b.ln1_gamma), eps, dln1);
    accumulate(b.ln1_gamma, ln1.dgamma);
    accumulate(b.ln1_beta, ln1.dbeta);
    dh = dmid;
    dh += ln1.dx;
  }

  accumulate(pos_, dh);
  accumulate(cls_, row(dh, 0));
  Tensor<T> dtokens({config_.num_patches(), d},
                    std::vector<T>(dh.raw() + d, dh.raw() + dh.size()));
  const auto emb = ops::linear_backward(patches, p(patch_w_), dtokens);
  accumulate(patch_w_, emb.dweight);
  accumulate(patch_b_, emb.dbias);
  return loss.loss;
}

template class TinyViT<float>;
template class TinyViT<double>;

}  // namespace patchguard
