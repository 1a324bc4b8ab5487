#include "patchguard/config.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include "patchguard/cnn.hpp"
#include "patchguard/vit.hpp"

namespace patchguard {

namespace {

using nlohmann::json;

/// Reads the keys of one JSON object and rejects whatever was not read.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be an object");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) && !j_.at(key).is_null();
  }

  template <typename T>
  T get(const std::string& key, T fallback) {
    if (!has(key)) return fallback;
    return convert<T>(key);
  }

  template <typename T>
  T require(const std::string& key) {
    if (!has(key)) throw ConfigError(field(key) + " is required");
    return convert<T>(key);
  }

  template <typename T>
  std::optional<T> optional(const std::string& key) {
    if (!has(key)) return std::nullopt;
    return convert<T>(key);
  }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  std::string field(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError("unknown key " + field(key));
    }
  }

 private:
  std::string where() const { return path_.empty() ? "config" : path_; }

  template <typename T>
  T convert(const std::string& key) {
    try {
      return j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(field(key) + ": " + e.what());
    }
  }

  json j_;
  std::string path_;
  std::set<std::string> seen_;
};

json optional_json(const std::optional<std::uint64_t>& v) { return v ? json(*v) : json(); }

json parse_source(const json& j) {
  Fields f(j, "dataset.source");
  const auto kind = f.require<std::string>("kind");
  json out{{"kind", kind}};
  if (kind == "synthetic") {
    out["num_classes"] = f.get<std::size_t>("num_classes", 10);
    out["per_class"] = f.get<std::size_t>("per_class", 400);
    out["image_size"] = f.get<std::size_t>("image_size", 32);
    out["channels"] = f.get<std::size_t>("channels", 3);
    if (out["num_classes"].get<std::size_t>() < 2) {
      throw ConfigError("dataset.source.num_classes must be at least 2");
    }
    if (out["per_class"].get<std::size_t>() == 0) {
      throw ConfigError("dataset.source.per_class must be positive");
    }
  } else if (kind == "idx") {
    out["images"] = f.require<std::string>("images");
    out["labels"] = f.require<std::string>("labels");
    const auto classes = f.optional<std::size_t>("num_classes");
    out["num_classes"] = classes ? json(*classes) : json();
  } else if (kind == "cifar") {
    out["files"] = f.require<std::vector<std::string>>("files");
    if (out["files"].empty()) throw ConfigError("dataset.source.files must not be empty");
  } else {
    throw ConfigError("dataset.source.kind must be synthetic, idx or cifar, got \"" + kind + "\"");
  }
  f.finish();
  return out;
}

json parse_trigger_params(TriggerFamily family, const json& j) {
  Fields f(j, "attack.params");
  json out;
  switch (family) {
    case TriggerFamily::patch:
      out = {{"size", f.get<std::size_t>("size", 3)},
             {"corner", f.get<std::string>("corner", "bottom_right")},
             {"values", f.get<std::vector<float>>("values", {1.0f})}};
      parse_corner(out["corner"].get<std::string>());
      break;
    case TriggerFamily::single_pixel:
      out = {{"row", f.require<std::size_t>("row")},
             {"col", f.require<std::size_t>("col")},
             {"values", f.get<std::vector<float>>("values", {1.0f})}};
      break;
    case TriggerFamily::blend: {
      out = {{"alpha", f.get<double>("alpha", 0.15)}};
      json pattern{{"kind", "checkerboard"}};
      if (f.has("pattern")) {
        Fields p(f.raw("pattern"), "attack.params.pattern");
        pattern["kind"] = p.get<std::string>("kind", "checkerboard");
        if (pattern["kind"] == "noise") {
          pattern["seed"] = p.get<std::uint64_t>("seed", 0);
        } else if (pattern["kind"] != "checkerboard") {
          throw ConfigError("attack.params.pattern.kind must be checkerboard or noise");
        }
        p.finish();
      }
      out["pattern"] = pattern;
      break;
    }
    case TriggerFamily::sinusoid:
      out = {{"amplitude", f.get<double>("amplitude", 0.08)},
             {"frequency", f.get<double>("frequency", 6.0)}};
      break;
  }
  f.finish();
  return out;
}

AttackSection parse_attack(const json& j) {
  Fields f(j, "attack");
  AttackSection a;
  try {
    a.family = parse_family(f.require<std::string>("family"));
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("attack.family: ") + e.what());
  }
  a.target = f.get<std::size_t>("target", a.target);
  a.rate = f.get<double>("rate", a.rate);
  a.max_rate = f.get<double>("max_rate", a.max_rate);
  a.seed = f.optional<std::uint64_t>("seed");
  a.params = parse_trigger_params(a.family, f.has("params") ? f.raw("params") : json::object());
  if (!(a.rate >= 0.0 && a.rate <= 1.0)) throw ConfigError("attack.rate must lie in [0, 1]");
  if (!(a.max_rate >= 0.0 && a.max_rate <= 1.0)) {
    throw ConfigError("attack.max_rate must lie in [0, 1]");
  }
  f.finish();
  return a;
}

json parse_model(const json& j) {
  Fields f(j, "model");
  const auto arch = f.get<std::string>("arch", "vit");
  json out{{"arch", arch}};
  if (arch == "vit") {
    const TinyViTConfig d;
    out["patch_size"] = f.get<std::size_t>("patch_size", d.patch_size);
    out["embed_dim"] = f.get<std::size_t>("embed_dim", d.embed_dim);
    out["depth"] = f.get<std::size_t>("depth", d.depth);
    out["heads"] = f.get<std::size_t>("heads", d.heads);
    out["mlp_ratio"] = f.get<std::size_t>("mlp_ratio", d.mlp_ratio);
  } else if (arch == "cnn") {
    const TinyCNNConfig d;
    out["channels"] = f.get<std::vector<std::size_t>>("channels", d.channels);
    out["kernel_sizes"] = f.get<std::vector<std::size_t>>("kernel_sizes", d.kernel_sizes);
    out["pool"] = f.get<std::vector<bool>>("pool", d.pool);
  } else {
    throw ConfigError("model.arch must be vit or cnn, got \"" + arch + "\"");
  }
  const auto init_seed = f.optional<std::uint64_t>("init_seed");
  out["init_seed"] = optional_json(init_seed);
  f.finish();
  return out;
}

TrainingSection parse_training(const json& j) {
  Fields f(j, "training");
  TrainingSection t;
  auto& o = t.options;
  o.epochs = f.get<std::size_t>("epochs", o.epochs);
  o.batch_size = f.get<std::size_t>("batch_size", o.batch_size);
  o.adam.lr = f.get<double>("lr", o.adam.lr);
  o.adam.beta1 = f.get<double>("beta1", o.adam.beta1);
  o.adam.beta2 = f.get<double>("beta2", o.adam.beta2);
  o.adam.eps = f.get<double>("eps", o.adam.eps);
  o.cosine_schedule = f.get<bool>("cosine_schedule", o.cosine_schedule);
  o.shards = f.get<std::size_t>("shards", o.shards);
  t.seed = f.optional<std::uint64_t>("seed");
  if (o.batch_size == 0) throw ConfigError("training.batch_size must be positive");
  if (o.shards == 0) throw ConfigError("training.shards must be positive");
  if (!(o.adam.lr > 0.0)) throw ConfigError("training.lr must be positive");
  f.finish();
  return t;
}

DefenseSection parse_defense(const json& j) {
  Fields f(j, "defense");
  DefenseSection d;
  auto& p = d.profile;
  p.trials = f.get<std::size_t>("trials", p.trials);
  p.drop_grid = f.get<std::size_t>("drop_grid", p.drop_grid);
  p.drop_count = f.get<std::size_t>("drop_count", p.drop_count);
  p.shuffle_grid = f.get<std::size_t>("shuffle_grid", p.shuffle_grid);
  p.drop_percentile = f.get<double>("drop_percentile", p.drop_percentile);
  p.shuffle_percentile = f.get<double>("shuffle_percentile", p.shuffle_percentile);
  p.early_exit = f.get<bool>("early_exit", p.early_exit);
  d.seed = f.optional<std::uint64_t>("seed");
  d.calibration_size = f.get<std::size_t>("calibration_size", d.calibration_size);
  d.no_clean_data_trials = f.get<std::size_t>("no_clean_data_trials", d.no_clean_data_trials);
  d.bootstrap_epochs = f.optional<std::size_t>("bootstrap_epochs");
  f.finish();
  try {
    p.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("defense: ") + e.what());
  }
  if (d.calibration_size == 0) throw ConfigError("defense.calibration_size must be positive");
  if (d.no_clean_data_trials == 0) {
    throw ConfigError("defense.no_clean_data_trials must be positive");
  }
  return d;
}

SweepSection parse_sweep(const json& j) {
  Fields f(j, "sweep");
  SweepSection s;
  s.drop_grid = f.get<std::size_t>("drop_grid", s.drop_grid);
  s.drop_counts = f.get<std::vector<std::size_t>>("drop_counts", s.drop_counts);
  s.shuffle_grids = f.get<std::vector<std::size_t>>("shuffle_grids", s.shuffle_grids);
  s.seeds = f.get<std::vector<std::uint64_t>>("seeds", s.seeds);
  f.finish();
  if (s.drop_grid == 0) throw ConfigError("sweep.drop_grid must be positive");
  for (auto m : s.drop_counts) {
    if (m > s.drop_grid * s.drop_grid) {
      throw ConfigError("sweep.drop_counts: " + std::to_string(m) + " exceeds the " +
                        std::to_string(s.drop_grid * s.drop_grid) + " patches of the grid");
    }
  }
  for (auto l : s.shuffle_grids) {
    if (l == 0) throw ConfigError("sweep.shuffle_grids entries must be positive");
  }
  if (s.seeds.empty()) throw ConfigError("sweep.seeds must not be empty");
  return s;
}

}  // namespace

TriggerSpec AttackSection::trigger(const Shape& image_shape) const {
  return json{{"family", family_name(family)},
              {"target", target},
              {"image_shape", image_shape},
              {"params", params}}
      .get<TriggerSpec>();
}

std::uint64_t ExperimentConfig::module_seed(std::string_view module) const {
  std::optional<std::uint64_t> explicit_seed;
  if (module == "dataset") explicit_seed = dataset.seed;
  if (module == "poison" && attack) explicit_seed = attack->seed;
  if (module == "train") explicit_seed = training.seed;
  if (module == "defense") explicit_seed = defense.seed;
  if (module == "model" && model.contains("init_seed") && !model["init_seed"].is_null()) {
    explicit_seed = model["init_seed"].get<std::uint64_t>();
  }
  return explicit_seed ? *explicit_seed : derive_seed(seed, module);
}

nlohmann::json ExperimentConfig::network_config(const Shape& image_shape, std::size_t num_classes,
                                                const Normalization& normalization) const {
  json out = model;
  out["image_shape"] = image_shape;
  out["num_classes"] = num_classes;
  out["normalization"] = normalization;
  out["init_seed"] = module_seed("model");
  return out;
}

DetectionProfile ExperimentConfig::detection_profile() const {
  DetectionProfile p = defense.profile;
  p.seed = module_seed("defense");
  p.k_drop.reset();
  p.k_shuffle.reset();
  return p;
}

ExperimentConfig parse_config(const nlohmann::json& j) {
  Fields f(j, "");
  ExperimentConfig c;
  c.name = f.get<std::string>("name", c.name);
  if (c.name.empty() || c.name.find_first_of("/\\,\"\n") != std::string::npos) {
    throw ConfigError("name must be non-empty without slashes, commas or quotes");
  }
  c.seed = f.get<std::uint64_t>("seed", c.seed);

  {
    Fields d(f.has("dataset") ? f.raw("dataset") : json::object(), "dataset");
    c.dataset.source = parse_source(d.has("source") ? d.raw("source") : json{{"kind", "synthetic"}});
    c.dataset.splits = d.get<std::array<double, 3>>("splits", c.dataset.splits);
    c.dataset.seed = d.optional<std::uint64_t>("seed");
    d.finish();
    double sum = 0.0;
    for (double s : c.dataset.splits) {
      if (!(s >= 0.0)) throw ConfigError("dataset.splits entries must be non-negative");
      sum += s;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("dataset.splits must sum to 1");
  }
  if (f.has("attack")) c.attack = parse_attack(f.raw("attack"));
  c.model = parse_model(f.has("model") ? f.raw("model") : json::object());
  c.training = parse_training(f.has("training") ? f.raw("training") : json::object());
  c.defense = parse_defense(f.has("defense") ? f.raw("defense") : json::object());
  c.sweep = parse_sweep(f.has("sweep") ? f.raw("sweep") : json::object());
  if (f.has("output")) {
    Fields o(f.raw("output"), "output");
    if (auto dir = o.optional<std::string>("dir")) c.output_dir = *dir;
    o.finish();
  }
  f.finish();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  auto c = parse_config(j);
  // Relative dataset paths are taken relative to the config file.
  const auto base = path.parent_path();
  auto resolve = [&](json& value) {
    std::filesystem::path p = value.get<std::string>();
    if (p.is_relative()) value = (base / p).lexically_normal().string();
  };
  auto& src = c.dataset.source;
  if (src["kind"] == "idx") {
    resolve(src["images"]);
    resolve(src["labels"]);
  } else if (src["kind"] == "cifar") {
    for (auto& file : src["files"]) resolve(file);
  }
  return c;
}

nlohmann::json serialize_config(const ExperimentConfig& c) {
  json out;
  out["name"] = c.name;
  out["seed"] = c.seed;
  out["dataset"] = {{"source", c.dataset.source},
                    {"splits", c.dataset.splits},
                    {"seed", optional_json(c.dataset.seed)}};
  if (c.attack) {
    const auto& a = *c.attack;
    out["attack"] = {{"family", family_name(a.family)}, {"target", a.target},
                     {"rate", a.rate},                  {"max_rate", a.max_rate},
                     {"params", a.params},              {"seed", optional_json(a.seed)}};
  } else {
    out["attack"] = nullptr;
  }
  out["model"] = c.model;
  json training = c.training.options;
  training["seed"] = optional_json(c.training.seed);
  out["training"] = training;
  const auto& p = c.defense.profile;
  out["defense"] = {{"trials", p.trials},
                    {"drop_grid", p.drop_grid},
                    {"drop_count", p.drop_count},
                    {"shuffle_grid", p.shuffle_grid},
                    {"drop_percentile", p.drop_percentile},
                    {"shuffle_percentile", p.shuffle_percentile},
                    {"early_exit", p.early_exit},
                    {"seed", optional_json(c.defense.seed)},
                    {"calibration_size", c.defense.calibration_size},
                    {"no_clean_data_trials", c.defense.no_clean_data_trials},
                    {"bootstrap_epochs", c.defense.bootstrap_epochs
                                             ? json(*c.defense.bootstrap_epochs)
                                             : json()}};
  out["sweep"] = {{"drop_grid", c.sweep.drop_grid},
                  {"drop_counts", c.sweep.drop_counts},
                  {"shuffle_grids", c.sweep.shuffle_grids},
                  {"seeds", c.sweep.seeds}};
  out["output"] = {{"dir", c.output_dir ? json(c.output_dir->string()) : json()}};
  return out;
}

}  // namespace patchguard
