#include "patchguard/patchproc.hpp"

#include "patchguard/errors.hpp"

namespace patchguard {

namespace {

std::size_t round_up(std::size_t v, std::size_t m) { return (v + m - 1) / m * m; }

void require_image(const Image& x, const char* what) {
  if (x.rank() != 3) {
    throw DimensionError(std::string(what) + ": expected C×H×W image, got " +
                         shape_string(x.shape()));
  }
}

/// Edge-replicated copy grown to multiples of the grid side.
Image pad_to_grid(const Image& x, const PatchGrid& grid) {
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t ph = round_up(h, grid.side), pw = round_up(w, grid.side);
  if (ph == h && pw == w) return x;
  Image out({c, ph, pw});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < ph; ++y)
      for (std::size_t xx = 0; xx < pw; ++xx)
        out.at(ch, y, xx) = x.at(ch, std::min(y, h - 1), std::min(xx, w - 1));
  return out;
}

Image crop(const Image& x, std::size_t h, std::size_t w) {
  if (x.dim(1) == h && x.dim(2) == w) return x;
  const std::size_t c = x.dim(0);
  Image out({c, h, w});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t xx = 0; xx < w; ++xx) out.at(ch, y, xx) = x.at(ch, y, xx);
  return out;
}

}  // namespace

std::pair<std::size_t, std::size_t> PatchGrid::patch_extent(std::size_t height,
                                                            std::size_t width) const {
  validate();
  return {round_up(height, side) / side, round_up(width, side) / side};
}

void PatchGrid::validate() const {
  if (side == 0) throw ConfigError("patch grid side must be at least 1");
}

void to_json(nlohmann::json& j, const PatchTransformSpec& s) {
  j = nlohmann::json{{"kind", s.kind == PatchTransformKind::drop ? "drop" : "shuffle"},
                     {"grid", s.grid.side}};
  if (s.kind == PatchTransformKind::drop) j["drop_count"] = s.drop_count;
}

void from_json(const nlohmann::json& j, PatchTransformSpec& s) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "drop") {
    s.kind = PatchTransformKind::drop;
  } else if (kind == "shuffle") {
    s.kind = PatchTransformKind::shuffle;
  } else {
    throw ConfigError("unknown patch transform '" + kind + "' (expected drop or shuffle)");
  }
  s.grid.side = j.at("grid").get<std::size_t>();
  s.drop_count = j.value("drop_count", std::size_t{0});
}

Image replay_drop(const Image& x, const PatchGrid& grid, const std::vector<std::size_t>& dropped) {
  require_image(x, "patch_drop");
  grid.validate();
  if (dropped.empty()) return x;
  Image padded = pad_to_grid(x, grid);
  const auto [ph, pw] = grid.patch_extent(x.dim(1), x.dim(2));
  for (std::size_t index : dropped) {
    if (index >= grid.patches()) {
      throw InputError("patch_drop: patch index " + std::to_string(index) + " outside grid of " +
                       std::to_string(grid.patches()));
    }
    const std::size_t y0 = index / grid.side * ph, x0 = index % grid.side * pw;
    for (std::size_t ch = 0; ch < x.dim(0); ++ch)
      for (std::size_t y = y0; y < y0 + ph; ++y)
        for (std::size_t xx = x0; xx < x0 + pw; ++xx) padded.at(ch, y, xx) = kDropFill;
  }
  return crop(padded, x.dim(1), x.dim(2));
}

Image replay_shuffle(const Image& x, const PatchGrid& grid,
                     const std::vector<std::size_t>& permutation) {
  require_image(x, "patch_shuffle");
  grid.validate();
  if (permutation.size() != grid.patches()) {
    throw InputError("patch_shuffle: permutation has " + std::to_string(permutation.size()) +
                     " entries for " + std::to_string(grid.patches()) + " patches");
  }
  std::vector<bool> seen(permutation.size(), false);
  for (std::size_t p : permutation) {
    if (p >= permutation.size() || seen[p]) throw InputError("patch_shuffle: not a permutation");
    seen[p] = true;
  }
  const Image padded = pad_to_grid(x, grid);
  Image out(padded.shape());
  const auto [ph, pw] = grid.patch_extent(x.dim(1), x.dim(2));
  for (std::size_t dst = 0; dst < permutation.size(); ++dst) {
    const std::size_t src = permutation[dst];
    const std::size_t dy = dst / grid.side * ph, dx = dst % grid.side * pw;
    const std::size_t sy = src / grid.side * ph, sx = src % grid.side * pw;
    for (std::size_t ch = 0; ch < x.dim(0); ++ch)
      for (std::size_t y = 0; y < ph; ++y)
        for (std::size_t xx = 0; xx < pw; ++xx)
          out.at(ch, dy + y, dx + xx) = padded.at(ch, sy + y, sx + xx);
  }
  return crop(out, x.dim(1), x.dim(2));
}

Image replay(const Image& x, const PatchTransformSpec& spec,
             const std::vector<std::size_t>& descriptor) {
  return spec.kind == PatchTransformKind::drop ? replay_drop(x, spec.grid, descriptor)
                                               : replay_shuffle(x, spec.grid, descriptor);
}

PatchTransformOutcome apply_transform(const Image& x, const PatchTransformSpec& spec,
                                      std::uint64_t seed) {
  Rng gen(seed);
  return spec.kind == PatchTransformKind::drop ? patch_drop(x, spec.grid, spec.drop_count, gen)
                                               : patch_shuffle(x, spec.grid, gen);
}

std::vector<PatchTransformOutcome> apply_trials(const Image& x, const PatchTransformSpec& spec,
                                                std::size_t trials, std::uint64_t seed) {
  if (trials == 0) throw ConfigError("apply_trials: T must be at least 1");
  std::vector<PatchTransformOutcome> out;
  out.reserve(trials);
  for (std::size_t t = 0; t < trials; ++t) out.push_back(apply_transform(x, spec, trial_seed(seed, t)));
  return out;
}

}  // namespace patchguard
