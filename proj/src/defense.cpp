#include "patchguard/defense.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "patchguard/errors.hpp"
#include "patchguard/parallel.hpp"

namespace patchguard {

PatchTransformSpec DetectionProfile::drop_spec() const {
  return {PatchTransformKind::drop, PatchGrid{drop_grid}, drop_count};
}

PatchTransformSpec DetectionProfile::shuffle_spec() const {
  return {PatchTransformKind::shuffle, PatchGrid{shuffle_grid}, 0};
}

void DetectionProfile::validate() const {
  if (trials == 0) throw ConfigError("defense.trials must be at least 1");
  if (drop_grid == 0 || shuffle_grid == 0) throw ConfigError("defense grid sides must be positive");
  if (drop_count > drop_grid * drop_grid) {
    throw ConfigError("defense.drop_count " + std::to_string(drop_count) + " exceeds the " +
                      std::to_string(drop_grid * drop_grid) + " patches of the drop grid");
  }
  for (double p : {drop_percentile, shuffle_percentile}) {
    if (!(p >= 0.0 && p <= 100.0)) throw ConfigError("defense percentiles must lie in [0,100]");
  }
  if ((k_drop && *k_drop > trials) || (k_shuffle && *k_shuffle > trials)) {
    throw ConfigError("defense thresholds must lie in [0, trials]");
  }
}

void to_json(nlohmann::json& j, const DetectionProfile& p) {
  j = nlohmann::json{{"trials", p.trials},
                     {"drop_grid", p.drop_grid},
                     {"drop_count", p.drop_count},
                     {"shuffle_grid", p.shuffle_grid},
                     {"drop_percentile", p.drop_percentile},
                     {"shuffle_percentile", p.shuffle_percentile},
                     {"seed", p.seed},
                     {"early_exit", p.early_exit}};
  j["k_drop"] = p.k_drop ? nlohmann::json(*p.k_drop) : nlohmann::json();
  j["k_shuffle"] = p.k_shuffle ? nlohmann::json(*p.k_shuffle) : nlohmann::json();
}

void from_json(const nlohmann::json& j, DetectionProfile& p) {
  const DetectionProfile d;
  p.trials = j.value("trials", d.trials);
  p.drop_grid = j.value("drop_grid", d.drop_grid);
  p.drop_count = j.value("drop_count", d.drop_count);
  p.shuffle_grid = j.value("shuffle_grid", d.shuffle_grid);
  p.drop_percentile = j.value("drop_percentile", d.drop_percentile);
  p.shuffle_percentile = j.value("shuffle_percentile", d.shuffle_percentile);
  p.seed = j.value("seed", d.seed);
  p.early_exit = j.value("early_exit", d.early_exit);
  p.k_drop.reset();
  p.k_shuffle.reset();
  if (j.contains("k_drop") && !j["k_drop"].is_null()) p.k_drop = j["k_drop"].get<std::size_t>();
  if (j.contains("k_shuffle") && !j["k_shuffle"].is_null()) {
    p.k_shuffle = j["k_shuffle"].get<std::size_t>();
  }
  p.validate();
}

std::uint64_t sample_trial_seed(const DetectionProfile& profile, std::uint64_t id,
                                PatchTransformKind kind) {
  const char* label = kind == PatchTransformKind::drop ? "patch-drop" : "patch-shuffle";
  return derive_seed(derive_seed(profile.seed, label), id);
}

FlipCounts flip_counts(const Classifier& model, const Image& x, std::uint64_t id,
                       const DetectionProfile& profile, FlipTrace* trace) {
  profile.validate();
  FlipCounts out;
  out.id = id;
  out.trials = profile.trials;
  out.prediction = model.predict(x);
  const bool early = profile.early_exit && profile.has_thresholds();

  const auto drop = profile.drop_spec();
  const std::uint64_t drop_seed = sample_trial_seed(profile, id, PatchTransformKind::drop);
  for (std::size_t t = 0; t < profile.trials; ++t) {
    auto outcome = apply_transform(x, drop, trial_seed(drop_seed, t));
    const std::size_t pred = model.predict(outcome.image);
    out.drop_flips += pred != out.prediction;
    if (trace) {
      trace->drop_descriptors.push_back(std::move(outcome.descriptor));
      trace->drop_predictions.push_back(pred);
    }
    if (early && out.drop_flips > *profile.k_drop) {
      out.truncated = t + 1 < profile.trials;
      return out;
    }
  }

  const auto shuffle = profile.shuffle_spec();
  const std::uint64_t shuffle_seed = sample_trial_seed(profile, id, PatchTransformKind::shuffle);
  for (std::size_t t = 0; t < profile.trials; ++t) {
    auto outcome = apply_transform(x, shuffle, trial_seed(shuffle_seed, t));
    const std::size_t pred = model.predict(outcome.image);
    out.shuffle_flips += pred != out.prediction;
    if (trace) {
      trace->shuffle_descriptors.push_back(std::move(outcome.descriptor));
      trace->shuffle_predictions.push_back(pred);
    }
    // Settled once the shuffle count can no longer fall below k_shuffle.
    if (early && out.shuffle_flips >= *profile.k_shuffle) {
      out.truncated = t + 1 < profile.trials;
      return out;
    }
  }
  return out;
}

FlipCounts replay_flip_counts(const Classifier& model, const Image& x, std::uint64_t id,
                              const DetectionProfile& profile, const FlipTrace& trace) {
  FlipCounts out;
  out.id = id;
  out.trials = profile.trials;
  out.prediction = model.predict(x);
  for (const auto& d : trace.drop_descriptors) {
    out.drop_flips += model.predict(replay(x, profile.drop_spec(), d)) != out.prediction;
  }
  for (const auto& d : trace.shuffle_descriptors) {
    out.shuffle_flips += model.predict(replay(x, profile.shuffle_spec(), d)) != out.prediction;
  }
  out.truncated = trace.drop_descriptors.size() < profile.trials ||
                  trace.shuffle_descriptors.size() < profile.trials;
  return out;
}

std::vector<FlipCounts> score_dataset(const Classifier& model, const LabeledDataset& data,
                                      const DetectionProfile& profile, std::size_t threads) {
  profile.validate();
  std::vector<FlipCounts> out(data.size());
  parallel_for(data.size(), threads, [&](std::size_t i) {
    if (data.images[i].shape() != model.input_shape()) {
      throw DimensionError("detect: sample " + std::to_string(data.ids[i]) + " has shape " +
                           shape_string(data.images[i].shape()) + ", model expects " +
                           shape_string(model.input_shape()));
    }
    out[i] = flip_counts(model, data.images[i], data.ids[i], profile);
  });
  return out;
}

std::size_t nearest_rank_percentile(std::vector<std::size_t> values, double percentile) {
  if (values.empty()) throw CalibrationError("percentile of an empty sample");
  if (!(percentile >= 0.0 && percentile <= 100.0)) {
    throw ConfigError("percentile must lie in [0,100]");
  }
  std::sort(values.begin(), values.end());
  const double k = static_cast<double>(values.size());
  auto rank = static_cast<std::size_t>(std::ceil(percentile * k / 100.0));
  rank = std::clamp<std::size_t>(rank, 1, values.size());
  return values[rank - 1];
}

DetectionProfile calibrate_from_counts(std::span<const FlipCounts> clean_counts,
                                       const DetectionProfile& profile) {
  if (clean_counts.empty()) {
    throw CalibrationError(
        "calibration needs at least one clean sample; without clean data use the no-clean-data "
        "thresholds (k_d = 0, k_s = T)");
  }
  std::vector<std::size_t> drop, shuffle;
  for (const auto& c : clean_counts) {
    if (c.truncated) throw CalibrationError("calibration counts must not use early exit");
    drop.push_back(c.drop_flips);
    shuffle.push_back(c.shuffle_flips);
  }
  DetectionProfile out = profile;
  out.k_drop = nearest_rank_percentile(std::move(drop), profile.drop_percentile);
  out.k_shuffle = nearest_rank_percentile(std::move(shuffle), profile.shuffle_percentile);
  return out;
}

Calibration calibrate(const Classifier& model, const LabeledDataset& clean,
                      const DetectionProfile& profile, std::size_t threads) {
  if (clean.empty()) {
    throw CalibrationError(
        "calibration needs at least one clean sample; without clean data use the no-clean-data "
        "thresholds (k_d = 0, k_s = T)");
  }
  DetectionProfile scoring = profile;
  scoring.early_exit = false;
  Calibration out;
  out.counts = score_dataset(model, clean, scoring, threads);
  out.profile = calibrate_from_counts(out.counts, profile);
  return out;
}

DetectionProfile no_clean_data_profile(std::size_t trials, DetectionProfile base) {
  if (trials == 0) throw ConfigError("no-clean-data profile: T must be at least 1");
  base.trials = trials;
  base.k_drop = 0;
  base.k_shuffle = trials;
  return base;
}

std::string decision_name(Decision d) { return d == Decision::clean ? "clean" : "backdoor"; }

std::string rule_name(Rule r) {
  switch (r) {
    case Rule::none:
      return "none";
    case Rule::drop:
      return "drop";
    case Rule::shuffle:
      return "shuffle";
    case Rule::both:
      return "both";
  }
  return "none";
}

Verdict decide(const FlipCounts& counts, std::size_t k_drop, std::size_t k_shuffle) {
  Verdict v;
  v.id = counts.id;
  v.drop_flips = counts.drop_flips;
  v.shuffle_flips = counts.shuffle_flips;
  v.k_drop = k_drop;
  v.k_shuffle = k_shuffle;
  const bool drop = counts.drop_flips > k_drop;
  const bool shuffle = counts.shuffle_flips < k_shuffle && !counts.truncated;
  v.rule = drop && shuffle ? Rule::both : drop ? Rule::drop : shuffle ? Rule::shuffle : Rule::none;
  v.decision = drop || shuffle ? Decision::backdoor : Decision::clean;
  return v;
}

std::vector<Verdict> decide_all(std::span<const FlipCounts> counts,
                                const DetectionProfile& profile) {
  if (!profile.has_thresholds()) throw ConfigError("detect: profile has no thresholds");
  std::vector<Verdict> out;
  out.reserve(counts.size());
  for (const auto& c : counts) out.push_back(decide(c, *profile.k_drop, *profile.k_shuffle));
  return out;
}

Verdict detect(const Classifier& model, const Image& x, std::uint64_t id,
               const DetectionProfile& profile) {
  if (!profile.has_thresholds()) throw ConfigError("detect: profile has no thresholds");
  return decide(flip_counts(model, x, id, profile), *profile.k_drop, *profile.k_shuffle);
}

std::vector<Verdict> detect_dataset(const Classifier& model, const LabeledDataset& data,
                                    const DetectionProfile& profile, std::size_t threads) {
  if (!profile.has_thresholds()) throw ConfigError("detect: profile has no thresholds");
  const auto counts = score_dataset(model, data, profile, threads);
  return decide_all(counts, profile);
}

void write_verdicts_csv(const std::filesystem::path& path, std::span<const Verdict> verdicts) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write verdicts to " + path.string());
  out << "id,F_d,F_s,k_d,k_s,decision,rule\n";
  for (const auto& v : verdicts) {
    out << v.id << ',' << v.drop_flips << ',' << v.shuffle_flips << ',' << v.k_drop << ','
        << v.k_shuffle << ',' << decision_name(v.decision) << ',' << rule_name(v.rule) << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<Verdict> read_verdicts_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "id,F_d,F_s,k_d,k_s,decision,rule") {
    throw FormatError(path.string() + ": unexpected verdict header '" + line + "'");
  }
  static const std::map<std::string, Rule> kRules{
      {"none", Rule::none}, {"drop", Rule::drop}, {"shuffle", Rule::shuffle}, {"both", Rule::both}};
  std::vector<Verdict> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    if (cells.size() != 7 || !kRules.contains(cells[6]) ||
        (cells[5] != "clean" && cells[5] != "backdoor")) {
      throw FormatError(path.string() + ": malformed verdict on line " + std::to_string(line_no));
    }
    Verdict v;
    try {
      v.id = std::stoull(cells[0]);
      v.drop_flips = std::stoul(cells[1]);
      v.shuffle_flips = std::stoul(cells[2]);
      v.k_drop = std::stoul(cells[3]);
      v.k_shuffle = std::stoul(cells[4]);
    } catch (const std::exception&) {
      throw FormatError(path.string() + ": bad number on line " + std::to_string(line_no));
    }
    v.decision = cells[5] == "clean" ? Decision::clean : Decision::backdoor;
    v.rule = kRules.at(cells[6]);
    out.push_back(v);
  }
  return out;
}

MannWhitneyResult mann_whitney_greater(std::span<const double> greater,
                                       std::span<const double> other) {
  const std::size_t n1 = greater.size(), n2 = other.size();
  if (n1 == 0 || n2 == 0) throw InputError("Mann-Whitney test needs two non-empty samples");
  std::vector<std::pair<double, int>> pooled;
  pooled.reserve(n1 + n2);
  for (double v : greater) pooled.emplace_back(v, 0);
  for (double v : other) pooled.emplace_back(v, 1);
  std::sort(pooled.begin(), pooled.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  const double n = static_cast<double>(n1 + n2);
  double rank_sum = 0.0;
  double tie_term = 0.0;
  for (std::size_t i = 0; i < pooled.size();) {
    std::size_t j = i;
    while (j < pooled.size() && pooled[j].first == pooled[i].first) ++j;
    const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) {
      if (pooled[k].second == 0) rank_sum += avg_rank;
    }
    const double t = static_cast<double>(j - i);
    tie_term += t * t * t - t;
    i = j;
  }
  const double a = static_cast<double>(n1), b = static_cast<double>(n2);
  MannWhitneyResult r;
  r.u = rank_sum - a * (a + 1.0) / 2.0;
  const double mean = a * b / 2.0;
  const double var = a * b / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
  if (var <= 0.0) {
    r.z = 0.0;
    r.p_value = 1.0;
    return r;
  }
  r.z = (r.u - mean - 0.5) / std::sqrt(var);
  r.p_value = 0.5 * std::erfc(r.z / std::sqrt(2.0));
  return r;
}

void to_json(nlohmann::json& j, const RemovalReport& r) {
  j = nlohmann::json{{"total", r.total}, {"flagged", r.flagged}, {"kept", r.kept}};
  j["removed_poisoned"] = r.removed_poisoned ? nlohmann::json(*r.removed_poisoned) : nlohmann::json();
  j["removed_clean"] = r.removed_clean ? nlohmann::json(*r.removed_clean) : nlohmann::json();
  j["poisoned_total"] = r.poisoned_total ? nlohmann::json(*r.poisoned_total) : nlohmann::json();
}

FilterRetrainResult filter_retrain(const LabeledDataset& train_set,
                                   const FilterRetrainOptions& options,
                                   const std::vector<bool>* ground_truth,
                                   const TrainMonitor& monitor) {
  if (train_set.empty()) throw InputError("filter_retrain: empty training set");
  if (ground_truth && ground_truth->size() != train_set.size()) {
    throw InputError("filter_retrain: ground truth has " + std::to_string(ground_truth->size()) +
                     " flags for " + std::to_string(train_set.size()) + " samples");
  }
  if (!options.profile.has_thresholds()) {
    throw ConfigError("filter_retrain: the detection profile needs thresholds");
  }
  FilterRetrainResult out;

  spdlog::info("filter_retrain: bootstrap training for {} epochs", options.bootstrap.epochs);
  out.bootstrap_model = make_network<float>(options.model_config);
  out.bootstrap_history = train(*out.bootstrap_model, train_set, options.bootstrap, monitor);

  out.verdicts = detect_dataset(*out.bootstrap_model, train_set, options.profile, options.threads);
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < train_set.size(); ++i) {
    if (!out.verdicts[i].flagged()) keep.push_back(i);
  }
  out.report.total = train_set.size();
  out.report.kept = keep.size();
  out.report.flagged = train_set.size() - keep.size();
  if (ground_truth) {
    std::size_t poisoned = 0, removed_poisoned = 0, removed_clean = 0;
    for (std::size_t i = 0; i < train_set.size(); ++i) {
      poisoned += (*ground_truth)[i];
      if (out.verdicts[i].flagged()) ((*ground_truth)[i] ? removed_poisoned : removed_clean) += 1;
    }
    out.report.poisoned_total = poisoned;
    out.report.removed_poisoned = removed_poisoned;
    out.report.removed_clean = removed_clean;
  }
  spdlog::info("filter_retrain: flagged {} of {} samples", out.report.flagged, out.report.total);
  if (keep.empty()) {
    throw PipelineError("filter_retrain: every training sample was flagged; nothing to retrain on");
  }

  out.filtered = train_set.subset(keep);
  out.filtered.split = train_set.split + "-filtered";
  out.model = make_network<float>(options.model_config);
  out.retrain_history = train(*out.model, out.filtered, options.retrain, monitor);
  return out;
}

}  // namespace patchguard
