#include "patchguard/evalkit.hpp"

#include <algorithm>
#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

#include <fmt/format.h>

#include "patchguard/parallel.hpp"

namespace patchguard {

namespace {

nlohmann::json opt(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json();
}

std::optional<double> opt_from(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

std::pair<double, double> mean_var(std::span<const double> xs) {
  if (xs.empty()) return {0.0, 0.0};
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  return {mean, var / static_cast<double>(xs.size())};
}

}  // namespace

void to_json(nlohmann::json& j, const MetricsRecord& r) {
  j = nlohmann::json{{"experiment_id", r.experiment_id},
                     {"model", r.model},
                     {"attack", r.attack},
                     {"transform", r.transform},
                     {"param", r.param},
                     {"seed", r.seed},
                     {"clean_acc", opt(r.clean_acc)},
                     {"asr", opt(r.asr)},
                     {"tpr", opt(r.tpr)},
                     {"tnr", opt(r.tnr)},
                     {"n_clean", r.n_clean},
                     {"n_backdoor", r.n_backdoor},
                     {"fd_mean", opt(r.fd_mean)},
                     {"fd_var", opt(r.fd_var)},
                     {"fs_mean", opt(r.fs_mean)},
                     {"fs_var", opt(r.fs_var)}};
}

void from_json(const nlohmann::json& j, MetricsRecord& r) {
  r.experiment_id = j.at("experiment_id").get<std::string>();
  r.model = j.at("model").get<std::string>();
  r.attack = j.at("attack").get<std::string>();
  r.transform = j.at("transform").get<std::string>();
  r.param = j.at("param").get<double>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.clean_acc = opt_from(j, "clean_acc");
  r.asr = opt_from(j, "asr");
  r.tpr = opt_from(j, "tpr");
  r.tnr = opt_from(j, "tnr");
  r.n_clean = j.at("n_clean").get<std::size_t>();
  r.n_backdoor = j.at("n_backdoor").get<std::size_t>();
  r.fd_mean = opt_from(j, "fd_mean");
  r.fd_var = opt_from(j, "fd_var");
  r.fs_mean = opt_from(j, "fs_mean");
  r.fs_var = opt_from(j, "fs_var");
}

double clean_accuracy(const Classifier& model, const LabeledDataset& test, std::size_t threads) {
  if (test.empty()) throw InputError("clean_accuracy: empty test set");
  const auto pred = predict_batch(model, test.images, threads);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test.size(); ++i) correct += pred.labels[i] == test.labels[i];
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

double attack_success_rate(const Classifier& model, const LabeledDataset& test,
                           const TriggerSpec& trigger, std::size_t threads) {
  const auto view = triggered_view(test, trigger);
  if (view.empty()) {
    throw InputError("attack_success_rate: no test sample has a label other than the target " +
                     std::to_string(trigger.target));
  }
  return clean_accuracy(model, view, threads);
}

DetectionRates tpr_tnr(std::span<const Verdict> verdicts, const std::vector<bool>& poisoned) {
  if (verdicts.size() != poisoned.size()) {
    throw InputError("tpr_tnr: " + std::to_string(verdicts.size()) + " verdicts but " +
                     std::to_string(poisoned.size()) + " ground-truth flags");
  }
  DetectionRates r;
  std::size_t tp = 0, tn = 0;
  for (std::size_t i = 0; i < verdicts.size(); ++i) {
    if (poisoned[i]) {
      ++r.n_poisoned;
      tp += verdicts[i].flagged();
    } else {
      ++r.n_clean;
      tn += !verdicts[i].flagged();
    }
  }
  if (r.n_poisoned) r.tpr = static_cast<double>(tp) / static_cast<double>(r.n_poisoned);
  if (r.n_clean) r.tnr = static_cast<double>(tn) / static_cast<double>(r.n_clean);
  return r;
}

FlipSummary summarize_flips(std::span<const FlipCounts> counts) {
  std::vector<double> fd, fs;
  fd.reserve(counts.size());
  fs.reserve(counts.size());
  for (const auto& c : counts) {
    fd.push_back(static_cast<double>(c.drop_flips));
    fs.push_back(static_cast<double>(c.shuffle_flips));
  }
  FlipSummary s;
  std::tie(s.fd_mean, s.fd_var) = mean_var(fd);
  std::tie(s.fs_mean, s.fs_var) = mean_var(fs);
  return s;
}

LabeledDataset transform_dataset(const LabeledDataset& data, const PatchTransformSpec& spec,
                                 std::uint64_t seed) {
  LabeledDataset out = data;
  for (std::size_t i = 0; i < data.size(); ++i) {
    out.images[i] = apply_transform(data.images[i], spec, derive_seed(seed, data.ids[i])).image;
  }
  return out;
}

namespace {

std::vector<MetricsRecord> run_sweep(const Classifier& model, const LabeledDataset& clean,
                                     const LabeledDataset& triggered,
                                     const std::vector<PatchTransformSpec>& specs,
                                     const std::vector<double>& params,
                                     std::span<const std::uint64_t> seeds, const SweepTags& tags,
                                     std::size_t threads) {
  if (clean.empty()) throw InputError("sweep: empty clean set");
  const std::size_t cells = specs.size() * seeds.size();
  std::vector<MetricsRecord> out(cells);
  parallel_for(cells, threads, [&](std::size_t cell) {
    const std::size_t s = cell / seeds.size();
    const std::uint64_t seed = seeds[cell % seeds.size()];
    const auto& spec = specs[s];
    const std::uint64_t stream =
        derive_seed(seed, spec.kind == PatchTransformKind::drop ? "sweep-drop" : "sweep-shuffle");
    MetricsRecord& r = out[cell];
    r.experiment_id = tags.experiment_id;
    r.model = tags.model;
    r.attack = tags.attack;
    r.transform = spec.kind == PatchTransformKind::drop ? "drop" : "shuffle";
    r.param = params[s];
    r.seed = seed;
    r.n_clean = clean.size();
    r.clean_acc = clean_accuracy(model, transform_dataset(clean, spec, stream));
    r.n_backdoor = triggered.size();
    if (!triggered.empty()) {
      r.asr = clean_accuracy(model, transform_dataset(triggered, spec, stream));
    }
  });
  std::stable_sort(out.begin(), out.end(), [](const MetricsRecord& a, const MetricsRecord& b) {
    return std::tie(a.param, a.seed) < std::tie(b.param, b.seed);
  });
  return out;
}

}  // namespace

std::vector<MetricsRecord> sweep_drop(const Classifier& model, const LabeledDataset& clean,
                                      const LabeledDataset& triggered, const PatchGrid& grid,
                                      std::span<const std::size_t> drop_counts,
                                      std::span<const std::uint64_t> seeds,
                                      const SweepTags& tags, std::size_t threads) {
  grid.validate();
  std::vector<PatchTransformSpec> specs;
  std::vector<double> params;
  for (auto m : drop_counts) {
    if (m > grid.patches()) {
      throw ConfigError("sweep_drop: M = " + std::to_string(m) + " exceeds L = " +
                        std::to_string(grid.patches()));
    }
    specs.push_back({PatchTransformKind::drop, grid, m});
    params.push_back(static_cast<double>(m));
  }
  return run_sweep(model, clean, triggered, specs, params, seeds, tags, threads);
}

std::vector<MetricsRecord> sweep_shuffle(const Classifier& model, const LabeledDataset& clean,
                                         const LabeledDataset& triggered,
                                         std::span<const std::size_t> grid_sides,
                                         std::span<const std::uint64_t> seeds,
                                         const SweepTags& tags, std::size_t threads) {
  std::vector<PatchTransformSpec> specs;
  std::vector<double> params;
  for (auto l : grid_sides) {
    PatchGrid g{l};
    g.validate();
    specs.push_back({PatchTransformKind::shuffle, g, 0});
    params.push_back(static_cast<double>(l));
  }
  return run_sweep(model, clean, triggered, specs, params, seeds, tags, threads);
}

std::vector<SweepPoint> summarize_sweep(std::span<const MetricsRecord> records) {
  std::map<double, std::pair<std::vector<double>, std::vector<double>>> by_param;
  for (const auto& r : records) {
    auto& [acc, asr] = by_param[r.param];
    if (r.clean_acc) acc.push_back(*r.clean_acc);
    if (r.asr) asr.push_back(*r.asr);
  }
  std::vector<SweepPoint> out;
  for (const auto& [param, series] : by_param) {
    SweepPoint p;
    p.param = param;
    p.seeds = std::max(series.first.size(), series.second.size());
    if (!series.first.empty()) {
      auto [m, v] = mean_var(series.first);
      p.clean_acc_mean = m;
      p.clean_acc_var = v;
    }
    if (!series.second.empty()) {
      auto [m, v] = mean_var(series.second);
      p.asr_mean = m;
      p.asr_var = v;
    }
    out.push_back(p);
  }
  return out;
}

const std::vector<std::string>& report_columns() {
  static const std::vector<std::string> columns = {
      "experiment_id", "model",  "attack", "transform", "param",   "seed",
      "clean_acc",     "asr",    "tpr",    "tnr",       "n_clean", "n_backdoor",
      "fd_mean",       "fd_var", "fs_mean", "fs_var"};
  return columns;
}

namespace {

std::string cell(const std::optional<double>& v) { return v ? fmt::format("{}", *v) : ""; }

std::string tag(const std::string& s, const char* column) {
  if (s.find_first_of(",\"\n\r") != std::string::npos) {
    throw InputError(std::string("report: ") + column + " \"" + s +
                     "\" contains a comma, quote or newline");
  }
  return s;
}

std::vector<std::string> split_row(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  cells.push_back(cur);
  return cells;
}

double parse_double(const std::string& s, const std::string& where) {
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || errno == ERANGE) {
    throw FormatError(where + ": \"" + s + "\" is not a number");
  }
  return v;
}

std::optional<double> parse_opt(const std::string& s, const std::string& where) {
  if (s.empty()) return std::nullopt;
  return parse_double(s, where);
}

std::uint64_t parse_uint(const std::string& s, const std::string& where) {
  errno = 0;
  char* end = nullptr;
  const auto v = std::strtoull(s.c_str(), &end, 10);
  if (s.empty() || end != s.c_str() + s.size() || errno == ERANGE || s[0] == '-') {
    throw FormatError(where + ": \"" + s + "\" is not an unsigned integer");
  }
  return v;
}

}  // namespace

void emit_report(std::span<const MetricsRecord> records, const std::filesystem::path& path,
                 ReportFormat format, const nlohmann::json& config) {
  std::ostringstream body;
  if (format == ReportFormat::csv) {
    const auto& cols = report_columns();
    for (std::size_t i = 0; i < cols.size(); ++i) body << (i ? "," : "") << cols[i];
    body << '\n';
    for (const auto& r : records) {
      body << tag(r.experiment_id, "experiment_id") << ',' << tag(r.model, "model") << ','
           << tag(r.attack, "attack") << ',' << tag(r.transform, "transform") << ','
           << fmt::format("{}", r.param) << ',' << r.seed << ',' << cell(r.clean_acc) << ','
           << cell(r.asr) << ',' << cell(r.tpr) << ',' << cell(r.tnr) << ',' << r.n_clean << ','
           << r.n_backdoor << ',' << cell(r.fd_mean) << ',' << cell(r.fd_var) << ','
           << cell(r.fs_mean) << ',' << cell(r.fs_var) << '\n';
    }
  } else {
    nlohmann::json j{{"asr_convention", kAsrConvention},
                     {"config", config},
                     {"records", nlohmann::json::array()}};
    for (const auto& r : records) j["records"].push_back(r);
    body << j.dump(2) << '\n';
  }
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("report: cannot open " + path.string() + " for writing");
  out << body.str();
  if (!out) throw IoError("report: failed writing " + path.string());
}

std::vector<MetricsRecord> read_report_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("report: cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError("report " + path.string() + ": missing header");
  if (split_row(line) != report_columns()) {
    throw FormatError("report " + path.string() + ": unexpected header \"" + line + "\"");
  }
  std::vector<MetricsRecord> out;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    const auto c = split_row(line);
    const std::string where = "report " + path.string() + " row " + std::to_string(row);
    if (c.size() != report_columns().size()) {
      throw FormatError(where + ": expected " + std::to_string(report_columns().size()) +
                        " cells, found " + std::to_string(c.size()));
    }
    MetricsRecord r;
    r.experiment_id = c[0];
    r.model = c[1];
    r.attack = c[2];
    r.transform = c[3];
    r.param = parse_double(c[4], where);
    r.seed = parse_uint(c[5], where);
    r.clean_acc = parse_opt(c[6], where);
    r.asr = parse_opt(c[7], where);
    r.tpr = parse_opt(c[8], where);
    r.tnr = parse_opt(c[9], where);
    r.n_clean = parse_uint(c[10], where);
    r.n_backdoor = parse_uint(c[11], where);
    r.fd_mean = parse_opt(c[12], where);
    r.fd_var = parse_opt(c[13], where);
    r.fs_mean = parse_opt(c[14], where);
    r.fs_var = parse_opt(c[15], where);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace patchguard
