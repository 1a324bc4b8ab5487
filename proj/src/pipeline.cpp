#include "patchguard/pipeline.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include <spdlog/spdlog.h>

#include "patchguard/checkpoint.hpp"
#include "patchguard/checksum.hpp"
#include "patchguard/evalkit.hpp"

namespace patchguard {

namespace fs = std::filesystem;
using nlohmann::json;

fs::path resolve_output_dir(const ExperimentConfig& config, const std::optional<fs::path>& flag) {
  if (flag) return *flag;
  if (config.output_dir) return *config.output_dir;
  if (const char* root = std::getenv("PATCHGUARD_OUT"); root && *root) {
    return fs::path(root) / config.name;
  }
  return fs::path("runs") / config.name;
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void require_artifact(const fs::path& path, const std::string& command, const std::string& producer) {
  if (!fs::exists(path)) {
    throw DependencyError(command + " needs " + path.string() + "; run `" + producer + "` first");
  }
}

/// Regular files under each path (the path itself when it is a file), sorted.
std::vector<fs::path> expand_files(const std::vector<fs::path>& paths) {
  std::vector<fs::path> files;
  for (const auto& p : paths) {
    if (fs::is_directory(p)) {
      for (const auto& e : fs::recursive_directory_iterator(p)) {
        if (e.is_regular_file()) files.push_back(e.path());
      }
    } else {
      files.push_back(p);
    }
  }
  std::sort(files.begin(), files.end());
  return files;
}

/// Skip logic: a command is current when its stamp holds the same key (config,
/// input checksums, options) and every recorded output still has its checksum.
class Stamp {
 public:
  Stamp(const RunOptions& run, std::string command, const ExperimentConfig& config,
        const std::vector<fs::path>& inputs, const json& options = json::object())
      : run_(run), command_(std::move(command)) {
    Sha256 h;
    const auto add = [&h](const std::string& s) {
      h.update(s.data(), s.size());
      h.update("\n", 1);
    };
    add(command_);
    add(serialize_config(config).dump());
    add(options.dump());
    for (const auto& f : expand_files(inputs)) {
      add(fs::relative(f, run_.out).generic_string());
      add(sha256_file(f));
    }
    key_ = h.hex();
  }

  fs::path path() const { return run_.out / artifacts::kStamps / (command_ + ".json"); }

  bool current() const {
    if (run_.force || !fs::exists(path())) return false;
    json j;
    try {
      j = read_json(path());
    } catch (const Error&) {
      return false;
    }
    if (j.value("key", std::string{}) != key_) {
      spdlog::debug("{}: configuration or inputs changed", command_);
      return false;
    }
    const json outputs = j.value("outputs", json::object());
    for (const auto& [rel, sum] : outputs.items()) {
      const auto file = run_.out / rel;
      if (!fs::exists(file) || sha256_file(file) != sum.get<std::string>()) {
        spdlog::debug("{}: output {} is missing or modified", command_, rel);
        return false;
      }
    }
    return true;
  }

  CommandResult skipped() const {
    spdlog::info("{}: outputs are up to date; skipping (use --force to rerun)", command_);
    CommandResult r{command_, true, {}};
    const json stamp = read_json(path());
    for (const auto& [rel, sum] : stamp.at("outputs").items()) {
      r.outputs.push_back(run_.out / rel);
    }
    return r;
  }

  CommandResult finish(const std::vector<fs::path>& outputs) const {
    json sums = json::object();
    for (const auto& f : expand_files(outputs)) {
      sums[fs::relative(f, run_.out).generic_string()] = sha256_file(f);
    }
    write_json(path(), json{{"command", command_}, {"key", key_}, {"outputs", sums}});
    return {command_, false, outputs};
  }

 private:
  const RunOptions& run_;
  std::string command_;
  std::string key_;
};

void echo_config(const ExperimentConfig& config, const RunOptions& run) {
  write_json(run.out / artifacts::kConfig, serialize_config(config));
}

LabeledDataset load_source(const ExperimentConfig& c) {
  const auto& src = c.dataset.source;
  const auto kind = src.at("kind").get<std::string>();
  if (kind == "synthetic") {
    return gen_synthetic(src.at("num_classes").get<std::size_t>(),
                         src.at("per_class").get<std::size_t>(),
                         src.at("image_size").get<std::size_t>(), c.module_seed("dataset"),
                         src.at("channels").get<std::size_t>());
  }
  if (kind == "idx") {
    const fs::path images = src.at("images").get<std::string>();
    const fs::path labels = src.at("labels").get<std::string>();
    for (const auto& [field, p] : {std::pair{"images", images}, std::pair{"labels", labels}}) {
      if (!fs::exists(p)) {
        throw ConfigError(std::string("dataset.source.") + field + ": " + p.string() +
                          " does not exist");
      }
    }
    std::optional<std::size_t> classes;
    if (!src.at("num_classes").is_null()) classes = src.at("num_classes").get<std::size_t>();
    return load_idx(images, labels, classes);
  }
  std::vector<fs::path> files;
  for (const auto& f : src.at("files")) {
    files.emplace_back(f.get<std::string>());
    if (!fs::exists(files.back())) {
      throw ConfigError("dataset.source.files: " + files.back().string() + " does not exist");
    }
  }
  return load_cifar_binary(files);
}

StoredDataset load_run_data(const RunOptions& run, const std::string& command) {
  const auto dir = run.out / artifacts::kData;
  require_artifact(dir / "manifest.json", command, "poison");
  return read_dataset(dir);
}

std::unique_ptr<Network<float>> load_run_model(const RunOptions& run, const std::string& command) {
  const auto path = run.out / artifacts::kModel;
  require_artifact(path, command, "train");
  return std::move(load_checkpoint(path).model);
}

const LabeledDataset* find_split(const StoredDataset& data, const std::string& name) {
  auto it = data.splits.find(name);
  return it == data.splits.end() ? nullptr : &it->second;
}

std::string attack_tag(const ExperimentConfig& c) {
  return c.attack ? family_name(c.attack->family) : "none";
}

std::string model_tag(const ExperimentConfig& c) { return c.model.at("arch").get<std::string>(); }

std::optional<TriggerSpec> load_trigger(const RunOptions& run) {
  const auto path = run.out / artifacts::kTrigger;
  if (!fs::exists(path)) return std::nullopt;
  return read_json(path).get<TriggerSpec>();
}

MetricsRecord base_record(const ExperimentConfig& c) {
  MetricsRecord r;
  r.experiment_id = c.name;
  r.model = model_tag(c);
  r.attack = attack_tag(c);
  r.seed = c.seed;
  return r;
}

void fill_flip_stats(MetricsRecord& r, std::span<const Verdict> verdicts) {
  std::vector<FlipCounts> counts;
  counts.reserve(verdicts.size());
  for (const auto& v : verdicts) {
    FlipCounts fc;
    fc.id = v.id;
    fc.drop_flips = v.drop_flips;
    fc.shuffle_flips = v.shuffle_flips;
    counts.push_back(fc);
  }
  const auto s = summarize_flips(counts);
  r.fd_mean = s.fd_mean;
  r.fd_var = s.fd_var;
  r.fs_mean = s.fs_mean;
  r.fs_var = s.fs_var;
}

}  // namespace

CommandResult cmd_poison(const ExperimentConfig& config, const RunOptions& run) {
  echo_config(config, run);
  std::vector<fs::path> sources;
  const auto& src = config.dataset.source;
  if (src.at("kind") == "idx") {
    sources = {src.at("images").get<std::string>(), src.at("labels").get<std::string>()};
  } else if (src.at("kind") == "cifar") {
    for (const auto& f : src.at("files")) sources.emplace_back(f.get<std::string>());
  }
  for (const auto& f : sources) {
    if (!fs::exists(f)) throw ConfigError("dataset.source: " + f.string() + " does not exist");
  }
  Stamp stamp(run, "poison", config, sources);
  if (stamp.current()) return stamp.skipped();

  auto all = load_source(config);
  all.validate();
  auto parts = split(all, config.dataset.splits, config.module_seed("dataset"));
  if (parts.train.empty()) throw ConfigError("dataset.splits leaves the training split empty");
  const auto normalization = compute_normalization(parts.train);
  const auto shape = all.image_shape();

  LabeledDataset train_set = parts.train;
  LabeledDataset triggered_test;
  json manifest{{"evaluation_only", true},
                {"description", "poisoning ground truth; read by evaluation only"},
                {"train_size", parts.train.size()},
                {"records", json::array()}};
  const auto data_dir = run.out / artifacts::kData;
  std::vector<fs::path> outputs{data_dir, run.out / artifacts::kPoisonManifest};
  fs::remove_all(data_dir);
  fs::remove(run.out / artifacts::kTrigger);

  if (config.attack) {
    const auto& a = *config.attack;
    const auto trigger = a.trigger(shape);
    if (trigger.target >= all.num_classes) {
      throw ConfigError("attack.target " + std::to_string(trigger.target) + " is not a class of a " +
                        std::to_string(all.num_classes) + "-class dataset");
    }
    auto result = poison_dataset(parts.train, trigger, a.rate, config.module_seed("poison"),
                                 PoisonPolicy{a.max_rate});
    train_set = std::move(result.dataset.data);
    for (const auto& r : result.records) manifest["records"].push_back(r);
    manifest["family"] = family_name(a.family);
    manifest["target"] = a.target;
    manifest["rate"] = a.rate;
    triggered_test = triggered_view(parts.test, trigger);
    triggered_test.split = artifacts::kTriggeredTest;
    write_json(run.out / artifacts::kTrigger, trigger);
    outputs.push_back(run.out / artifacts::kTrigger);
  }
  train_set.split = "train";
  parts.val.split = "val";
  parts.test.split = "test";
  std::vector<const LabeledDataset*> splits{&train_set, &parts.val, &parts.test};
  if (config.attack && !triggered_test.empty()) splits.push_back(&triggered_test);

  std::optional<std::uint64_t> generation_seed;
  if (config.dataset.source.at("kind") == "synthetic") generation_seed = config.module_seed("dataset");
  write_dataset(data_dir, splits, config.dataset.source, normalization, generation_seed);
  write_json(run.out / artifacts::kPoisonManifest, manifest);
  spdlog::info("poison: wrote {} training samples ({} poisoned) to {}", train_set.size(),
               manifest["records"].size(), data_dir.string());
  return stamp.finish(outputs);
}

CommandResult cmd_train(const ExperimentConfig& config, const RunOptions& run) {
  echo_config(config, run);
  require_artifact(run.out / artifacts::kData / "manifest.json", "train", "poison");
  Stamp stamp(run, "train", config, {run.out / artifacts::kData});
  if (stamp.current()) return stamp.skipped();

  const auto data = load_run_data(run, "train");
  const auto& train_set = data.at("train");
  auto model = make_network<float>(config.network_config(
      data.manifest.image_shape, data.manifest.num_classes, data.manifest.normalization));

  TrainOptions options = config.training.options;
  options.seed = config.module_seed("train");
  options.threads = run.threads;
  TrainMonitor monitor;
  monitor.val = find_split(data, "val");
  monitor.triggered = find_split(data, artifacts::kTriggeredTest);
  const auto history = train(*model, train_set, options, monitor);

  TrainingMetadata meta;
  meta.epochs = options.epochs;
  meta.seed = options.seed;
  meta.dataset_checksum = train_set.checksum();
  meta.extra = json{{"training", options}};
  save_checkpoint(run.out / artifacts::kModel, *model, meta);
  write_json(run.out / artifacts::kTrainHistory, json(history));
  return stamp.finish({run.out / artifacts::kModel, run.out / artifacts::kTrainHistory});
}

CommandResult cmd_calibrate(const ExperimentConfig& config, const RunOptions& run) {
  echo_config(config, run);
  require_artifact(run.out / artifacts::kModel, "calibrate", "train");
  require_artifact(run.out / artifacts::kData / "manifest.json", "calibrate", "poison");
  Stamp stamp(run, "calibrate", config, {run.out / artifacts::kModel, run.out / artifacts::kData});
  if (stamp.current()) return stamp.skipped();

  const auto data = load_run_data(run, "calibrate");
  const auto model = load_run_model(run, "calibrate");
  const auto& val = data.at("val");
  std::vector<std::size_t> idx(std::min(config.defense.calibration_size, val.size()));
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const auto clean = val.subset(idx);
  const auto cal = calibrate(*model, clean, config.detection_profile(), run.threads);

  json counts = json::array();
  for (const auto& c : cal.counts) {
    counts.push_back({{"id", c.id}, {"F_d", c.drop_flips}, {"F_s", c.shuffle_flips}});
  }
  write_json(run.out / artifacts::kProfile, cal.profile);
  write_json(run.out / artifacts::kCalibration,
             json{{"samples", clean.size()}, {"split", "val"}, {"counts", counts}});
  spdlog::info("calibrate: k_d = {}, k_s = {} from {} clean samples", *cal.profile.k_drop,
               *cal.profile.k_shuffle, clean.size());
  return stamp.finish({run.out / artifacts::kProfile, run.out / artifacts::kCalibration});
}

CommandResult cmd_detect(const ExperimentConfig& config, const RunOptions& run,
                         const std::optional<fs::path>& data_dir,
                         const std::vector<std::string>& splits) {
  echo_config(config, run);
  require_artifact(run.out / artifacts::kModel, "detect", "train");
  require_artifact(run.out / artifacts::kProfile, "detect", "calibrate");
  const fs::path dir = data_dir ? *data_dir : run.out / artifacts::kData;
  if (!fs::exists(dir / "manifest.json")) {
    throw DependencyError("detect needs a dataset directory with manifest.json at " + dir.string() +
                          (data_dir ? "" : "; run `poison` first"));
  }
  // Inputs outside the run directory are keyed by absolute path.
  std::vector<fs::path> inputs{run.out / artifacts::kModel, run.out / artifacts::kProfile, dir};
  json options{{"data_dir", fs::absolute(dir).lexically_normal().string()}, {"splits", splits}};
  const auto data = read_dataset(dir);
  Stamp stamp(run, "detect", config, inputs, options);
  if (stamp.current()) return stamp.skipped();

  const auto model = load_run_model(run, "detect");
  const auto profile = read_json(run.out / artifacts::kProfile).get<DetectionProfile>();
  if (!profile.has_thresholds()) {
    throw CalibrationError(run.out.string() + "/" + artifacts::kProfile + " has no thresholds");
  }
  std::vector<std::string> names = splits;
  if (names.empty()) {
    for (const auto& [name, ds] : data.splits) {
      if (name != "train" && name != "val") names.push_back(name);
    }
  }
  std::vector<fs::path> outputs;
  for (const auto& name : names) {
    const auto* ds = find_split(data, name);
    if (!ds) throw InputError("detect: dataset at " + dir.string() + " has no split '" + name + "'");
    const auto verdicts = detect_dataset(*model, *ds, profile, run.threads);
    const auto path = run.out / artifacts::kVerdicts / (name + ".csv");
    write_verdicts_csv(path, verdicts);
    const auto flagged = std::count_if(verdicts.begin(), verdicts.end(),
                                       [](const Verdict& v) { return v.flagged(); });
    spdlog::info("detect: {} flagged {} of {}", name, flagged, verdicts.size());
    outputs.push_back(path);
  }
  return stamp.finish(outputs);
}

CommandResult cmd_evaluate(const ExperimentConfig& config, const RunOptions& run) {
  echo_config(config, run);
  require_artifact(run.out / artifacts::kModel, "evaluate", "train");
  require_artifact(run.out / artifacts::kData / "manifest.json", "evaluate", "poison");
  std::vector<fs::path> inputs{run.out / artifacts::kModel, run.out / artifacts::kData};
  for (const auto* f : {artifacts::kTrigger, artifacts::kVerdicts}) {
    if (fs::exists(run.out / f)) inputs.push_back(run.out / f);
  }
  Stamp stamp(run, "evaluate", config, inputs);
  if (stamp.current()) return stamp.skipped();

  const auto data = load_run_data(run, "evaluate");
  const auto model = load_run_model(run, "evaluate");
  const auto& test = data.at("test");
  const auto trigger = load_trigger(run);

  std::vector<MetricsRecord> records;
  MetricsRecord plain = base_record(config);
  plain.clean_acc = clean_accuracy(*model, test, run.threads);
  plain.n_clean = test.size();
  if (trigger) {
    const auto view = triggered_view(test, *trigger);
    plain.n_backdoor = view.size();
    if (!view.empty()) plain.asr = clean_accuracy(*model, view, run.threads);
  }
  records.push_back(plain);

  const auto verdict_dir = run.out / artifacts::kVerdicts;
  if (fs::exists(verdict_dir / "test.csv")) {
    const auto v = read_verdicts_csv(verdict_dir / "test.csv");
    MetricsRecord r = base_record(config);
    r.transform = "detect:clean";
    const auto rates = tpr_tnr(v, std::vector<bool>(v.size(), false));
    r.tnr = rates.tnr;
    r.n_clean = rates.n_clean;
    fill_flip_stats(r, v);
    records.push_back(r);
  }
  const auto triggered_path = verdict_dir / (std::string(artifacts::kTriggeredTest) + ".csv");
  if (fs::exists(triggered_path)) {
    const auto v = read_verdicts_csv(triggered_path);
    MetricsRecord r = base_record(config);
    r.transform = "detect:backdoor";
    const auto rates = tpr_tnr(v, std::vector<bool>(v.size(), true));
    r.tpr = rates.tpr;
    r.n_backdoor = rates.n_poisoned;
    fill_flip_stats(r, v);
    records.push_back(r);
  }
  emit_report(records, run.out / artifacts::kReportCsv, ReportFormat::csv);
  emit_report(records, run.out / artifacts::kReportJson, ReportFormat::json,
              serialize_config(config));
  return stamp.finish({run.out / artifacts::kReportCsv, run.out / artifacts::kReportJson});
}

CommandResult cmd_sweep(const ExperimentConfig& config, const RunOptions& run) {
  echo_config(config, run);
  require_artifact(run.out / artifacts::kModel, "sweep", "train");
  require_artifact(run.out / artifacts::kData / "manifest.json", "sweep", "poison");
  Stamp stamp(run, "sweep", config, {run.out / artifacts::kModel, run.out / artifacts::kData});
  if (stamp.current()) return stamp.skipped();

  const auto data = load_run_data(run, "sweep");
  const auto model = load_run_model(run, "sweep");
  const auto& test = data.at("test");
  const auto* triggered = find_split(data, artifacts::kTriggeredTest);
  const LabeledDataset none;
  const auto& bd = triggered ? *triggered : none;
  SweepTags tags{config.name, model_tag(config), attack_tag(config)};
  const auto& s = config.sweep;
  auto records = sweep_drop(*model, test, bd, PatchGrid{s.drop_grid}, s.drop_counts, s.seeds, tags,
                            run.threads);
  const auto shuffled = sweep_shuffle(*model, test, bd, s.shuffle_grids, s.seeds, tags, run.threads);
  records.insert(records.end(), shuffled.begin(), shuffled.end());
  emit_report(records, run.out / artifacts::kSweepCsv, ReportFormat::csv);
  emit_report(records, run.out / artifacts::kSweepJson, ReportFormat::json,
              serialize_config(config));
  return stamp.finish({run.out / artifacts::kSweepCsv, run.out / artifacts::kSweepJson});
}

CommandResult cmd_filter_retrain(const ExperimentConfig& config, const RunOptions& run) {
  echo_config(config, run);
  require_artifact(run.out / artifacts::kData / "manifest.json", "filter-retrain", "poison");
  std::vector<fs::path> inputs{run.out / artifacts::kData};
  if (fs::exists(run.out / artifacts::kPoisonManifest)) {
    inputs.push_back(run.out / artifacts::kPoisonManifest);
  }
  Stamp stamp(run, "filter-retrain", config, inputs);
  if (stamp.current()) return stamp.skipped();

  const auto data = load_run_data(run, "filter-retrain");
  const auto& train_set = data.at("train");

  FilterRetrainOptions options;
  options.model_config = config.network_config(data.manifest.image_shape, data.manifest.num_classes,
                                               data.manifest.normalization);
  options.retrain = config.training.options;
  options.retrain.seed = config.module_seed("train");
  options.retrain.threads = run.threads;
  options.bootstrap = options.retrain;
  if (config.defense.bootstrap_epochs) options.bootstrap.epochs = *config.defense.bootstrap_epochs;
  options.profile = no_clean_data_profile(config.defense.no_clean_data_trials,
                                          config.detection_profile());
  options.threads = run.threads;

  // Ground truth only feeds the removal report.
  std::optional<std::vector<bool>> truth;
  if (fs::exists(run.out / artifacts::kPoisonManifest)) {
    std::set<std::uint64_t> poisoned_ids;
    const json manifest = read_json(run.out / artifacts::kPoisonManifest);
    for (const auto& r : manifest.at("records")) {
      poisoned_ids.insert(r.get<PoisonRecord>().id);
    }
    truth.emplace(train_set.size());
    for (std::size_t i = 0; i < train_set.size(); ++i) {
      (*truth)[i] = poisoned_ids.count(train_set.ids[i]) > 0;
    }
  }
  TrainMonitor monitor;
  monitor.val = find_split(data, "val");
  auto result = filter_retrain(train_set, options, truth ? &*truth : nullptr, monitor);

  const auto dir = run.out / artifacts::kFilterDir;
  TrainingMetadata meta;
  meta.epochs = options.retrain.epochs;
  meta.seed = options.retrain.seed;
  meta.dataset_checksum = result.filtered.checksum();
  meta.extra = json{{"training", options.retrain}, {"filtered_from", train_set.checksum()}};
  save_checkpoint(dir / "model.ckpt", *result.model, meta);
  write_verdicts_csv(dir / "verdicts.csv", result.verdicts);
  write_json(dir / "removal.json", json(result.report));

  const auto& test = data.at("test");
  const auto trigger = load_trigger(run);
  std::vector<MetricsRecord> records;
  for (const auto& [tag, net] : {std::pair{"bootstrap", result.bootstrap_model.get()},
                                 std::pair{"retrained", result.model.get()}}) {
    MetricsRecord r = base_record(config);
    r.model = model_tag(config) + ":" + tag;
    r.transform = "filter-retrain";
    r.param = static_cast<double>(config.defense.no_clean_data_trials);
    r.clean_acc = clean_accuracy(*net, test, run.threads);
    r.n_clean = test.size();
    if (trigger) {
      const auto view = triggered_view(test, *trigger);
      r.n_backdoor = view.size();
      if (!view.empty()) r.asr = clean_accuracy(*net, view, run.threads);
    }
    records.push_back(r);
  }
  emit_report(records, dir / "report.csv", ReportFormat::csv);
  emit_report(records, dir / "report.json", ReportFormat::json, serialize_config(config));
  spdlog::info("filter-retrain: removed {} of {} samples; retrained clean accuracy {}",
               result.report.flagged, result.report.total, *records.back().clean_acc);
  return stamp.finish({dir});
}

CommandResult run_command(const std::string& name, const ExperimentConfig& config,
                          const RunOptions& run) {
  if (name == "poison") return cmd_poison(config, run);
  if (name == "train") return cmd_train(config, run);
  if (name == "calibrate") return cmd_calibrate(config, run);
  if (name == "detect") return cmd_detect(config, run);
  if (name == "evaluate") return cmd_evaluate(config, run);
  if (name == "sweep") return cmd_sweep(config, run);
  if (name == "filter-retrain") return cmd_filter_retrain(config, run);
  throw ConfigError("unknown command '" + name + "'");
}

}  // namespace patchguard
