#pragma once

#include <cstddef>
#include <cstdint>

#include "patchguard/model.hpp"

namespace patchguard {

struct TinyViTConfig {
  Shape image_shape{3, 32, 32};
  std::size_t patch_size = 4;
  std::size_t embed_dim = 64;
  std::size_t depth = 4;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 2;
  std::size_t num_classes = 10;
  Normalization normalization;
  std::uint64_t init_seed = 0;

  std::size_t num_patches() const;
  /// Patch tokens plus the class token.
  std::size_t sequence_length() const { return num_patches() + 1; }
  void validate() const;
};

void to_json(nlohmann::json& j, const TinyViTConfig& c);
void from_json(const nlohmann::json& j, TinyViTConfig& c);

/// Vision Transformer: linear patch embedding, class token, learnable
/// positional encoding, `depth` pre-norm encoder blocks
/// (LN → MHSA → residual → LN → GELU MLP → residual), final LN, linear head on
/// the class token.
template <typename T>
class TinyViT final : public Network<T> {
 public:
  explicit TinyViT(TinyViTConfig config);

  std::string architecture() const override { return "vit"; }
  nlohmann::json config_json() const override;
  std::size_t num_classes() const override { return config_.num_classes; }
  Shape input_shape() const override { return config_.image_shape; }
  const TinyViTConfig& config() const { return config_; }

  Tensor<T> forward(const Tensor<T>& x) const override;
  T accumulate_gradients(const Tensor<T>& x, std::size_t label, T scale,
                         std::vector<Tensor<T>>& grads) const override;

  /// Rows are patches in raster order; each row is the patch's pixels,
  /// channel-major.
  Tensor<T> patchify(const Tensor<T>& x) const;

 private:
  struct BlockIndex {
    std::size_t ln1_gamma, ln1_beta, wq, bq, wk, bk, wv, bv, wo, bo;
    std::size_t ln2_gamma, ln2_beta, w1, b1, w2, b2;
  };
  struct BlockCache;

  const Tensor<T>& p(std::size_t i) const { return this->parameters()[i].value; }
  Tensor<T> embed(const Tensor<T>& patches) const;

  TinyViTConfig config_;
  std::size_t patch_w_, patch_b_, cls_, pos_, norm_gamma_, norm_beta_, head_w_, head_b_;
  std::vector<BlockIndex> blocks_;
};

}  // namespace patchguard
