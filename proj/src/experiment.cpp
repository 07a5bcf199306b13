#include "mouthnet/experiment.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <map>
#include <set>
#include <sstream>

#include "mouthnet/augment.hpp"
#include "mouthnet/checkpoint.hpp"

namespace mouthnet {

namespace fs = std::filesystem;
namespace pt = boost::property_tree;

namespace {

const std::map<std::string, std::set<std::string>>& known_keys() {
  static const std::map<std::string, std::set<std::string>> keys{
      {"data",
       {"manifest", "raw_manifest", "cropboxes", "prepared_dir", "per_class", "split_ratios", "train_per_class",
        "frames", "crop_size"}},
      {"model", {"conv_channels", "gru_hidden", "gru_layers"}},
      {"train",
       {"batch_size", "lr", "beta1", "beta2", "eps", "max_epochs", "early_stop_gate", "patience", "seed", "augment",
        "aug_num_ops", "aug_magnitude", "aug_ops", "dann_lambda", "source_checkpoint", "target_task", "threads"}},
      {"experiment", {"kind", "datasets", "source", "name"}},
      {"perturb", {"sigma", "seed"}},
      {"output", {"run_dir"}},
  };
  return keys;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto comma = s.find(',', start);
    const auto item = trim(s.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (!item.empty()) out.push_back(item);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

// Reads typed values out of the tree, collecting every failure.
class Reader {
 public:
  Reader(const pt::ptree& tree, fs::path base) : tree_(tree), base_(std::move(base)) {}

  std::vector<std::string> errors;

  void check_keys() {
    for (const auto& [section, body] : tree_) {
      const auto it = known_keys().find(section);
      if (body.empty()) {
        errors.push_back(fmt::format("key '{}' must be inside a section", section));
      } else if (it == known_keys().end()) {
        errors.push_back(fmt::format("unknown section [{}]", section));
      } else {
        for (const auto& [key, value] : body)
          if (!it->second.count(key)) errors.push_back(fmt::format("[{}] unknown key '{}'", section, key));
      }
    }
  }

  std::optional<std::string> raw(const std::string& section, const std::string& key) const {
    const auto sec = tree_.get_child_optional(section);
    if (!sec) return std::nullopt;
    const auto v = sec->get_optional<std::string>(pt::ptree::path_type(key, '\0'));
    if (!v) return std::nullopt;
    return trim(*v);
  }

  bool has(const std::string& section, const std::string& key) const { return raw(section, key).has_value(); }

  void size(const std::string& section, const std::string& key, std::size_t& out, std::size_t min_value = 0) {
    const auto v = raw(section, key);
    if (!v) return;
    try {
      std::size_t used = 0;
      if (!v->empty() && (*v)[0] == '-') throw std::invalid_argument("negative");
      const auto parsed = std::stoull(*v, &used);
      if (used != v->size()) throw std::invalid_argument("trailing");
      if (parsed < min_value) {
        errors.push_back(fmt::format("[{}] {} must be at least {}, got {}", section, key, min_value, parsed));
        return;
      }
      out = static_cast<std::size_t>(parsed);
    } catch (const std::exception&) {
      errors.push_back(fmt::format("[{}] {}: '{}' is not a non-negative integer", section, key, *v));
    }
  }

  void u64(const std::string& section, const std::string& key, std::uint64_t& out) {
    std::size_t v = out;
    size(section, key, v);
    out = v;
  }

  void real(const std::string& section, const std::string& key, double& out) {
    const auto v = raw(section, key);
    if (!v) return;
    try {
      std::size_t used = 0;
      const double parsed = std::stod(*v, &used);
      if (used != v->size()) throw std::invalid_argument("trailing");
      out = parsed;
    } catch (const std::exception&) {
      errors.push_back(fmt::format("[{}] {}: '{}' is not a number", section, key, *v));
    }
  }

  void boolean(const std::string& section, const std::string& key, bool& out) {
    const auto v = raw(section, key);
    if (!v) return;
    if (*v == "true" || *v == "yes" || *v == "1") out = true;
    else if (*v == "false" || *v == "no" || *v == "0") out = false;
    else errors.push_back(fmt::format("[{}] {}: '{}' is not a boolean", section, key, *v));
  }

  void path(const std::string& section, const std::string& key, fs::path& out) {
    const auto v = raw(section, key);
    if (!v || v->empty()) return;
    const fs::path p(*v);
    out = (p.is_absolute() ? p : base_ / p).lexically_normal();
  }

  std::optional<DatasetId> dataset(const std::string& section, const std::string& key) {
    const auto v = raw(section, key);
    if (!v || v->empty()) return std::nullopt;
    try {
      return parse_dataset(*v);
    } catch (const std::exception& e) {
      errors.push_back(fmt::format("[{}] {}: {}", section, key, e.what()));
      return std::nullopt;
    }
  }

  std::vector<std::size_t> size_list(const std::string& section, const std::string& key) {
    std::vector<std::size_t> out;
    const auto v = raw(section, key);
    if (!v) return out;
    for (const auto& item : split_list(*v)) {
      try {
        std::size_t used = 0;
        if (item[0] == '-') throw std::invalid_argument("negative");
        out.push_back(std::stoull(item, &used));
        if (used != item.size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        errors.push_back(fmt::format("[{}] {}: '{}' is not a non-negative integer", section, key, item));
      }
    }
    return out;
  }

 private:
  const pt::ptree& tree_;
  fs::path base_;
};

std::string join_sizes(const auto& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) out += (i ? "," : "") + std::to_string(values[i]);
  return out;
}

}  // namespace

fs::path ExperimentConfig::manifest_path() const {
  if (!manifest.empty()) return manifest;
  return prepared_dir / "manifest.tsv";
}

PrepareOptions ExperimentConfig::prepare_options() const {
  PrepareOptions o;
  o.raw_manifest = raw_manifest;
  o.cropboxes = cropboxes;
  o.out_dir = prepared_dir;
  o.per_class = per_class;
  o.ratios = split_ratios;
  o.train_per_class = train_per_class;
  o.frames = train.model.frames;
  o.crop_size = train.model.height;
  o.seed = train.seed;
  return o;
}

RunSpec ExperimentConfig::run_spec() const { return RunSpec{train.kind, train.datasets, source}; }

ExperimentConfig parse_config(std::string_view text, const fs::path& base_dir, bool require_experiment) {
  pt::ptree tree;
  try {
    std::istringstream in{std::string(text)};
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError({fmt::format("config line {}: {}", e.line(), e.message())});
  }

  ExperimentConfig c;
  c.base_dir = base_dir;
  Reader r(tree, base_dir);
  r.check_keys();

  r.path("data", "manifest", c.manifest);
  r.path("data", "raw_manifest", c.raw_manifest);
  r.path("data", "cropboxes", c.cropboxes);
  r.path("data", "prepared_dir", c.prepared_dir);
  r.size("data", "per_class", c.per_class, 1);
  r.size("data", "train_per_class", c.train_per_class, 1);
  if (r.has("data", "split_ratios")) {
    const auto ratios = r.size_list("data", "split_ratios");
    if (ratios.size() != 3 || std::count(ratios.begin(), ratios.end(), 0u) > 0)
      r.errors.push_back("[data] split_ratios must be three positive integers (train, val, test)");
    else
      std::copy(ratios.begin(), ratios.end(), c.split_ratios.begin());
  }
  auto& spec = c.train.model;
  r.size("data", "frames", spec.frames, 1);
  std::size_t crop = spec.height;
  r.size("data", "crop_size", crop, 1);
  spec.height = spec.width = crop;

  if (r.has("model", "conv_channels")) {
    const auto ch = r.size_list("model", "conv_channels");
    if (ch.size() != 3 || std::count(ch.begin(), ch.end(), 0u) > 0)
      r.errors.push_back("[model] conv_channels must be three positive integers");
    else
      std::copy(ch.begin(), ch.end(), spec.conv_channels.begin());
  }
  r.size("model", "gru_hidden", spec.gru_hidden, 1);
  r.size("model", "gru_layers", spec.gru_layers, 1);
  try {
    (void)spec.trunk_feature_width();
  } catch (const std::exception& e) {
    r.errors.push_back(fmt::format("[model] input {}x{}x{} is too small for the network: {}", spec.frames,
                                   spec.height, spec.width, e.what()));
  }

  auto& t = c.train;
  r.size("train", "batch_size", t.batch_size);
  r.real("train", "lr", t.adam.lr);
  r.real("train", "beta1", t.adam.beta1);
  r.real("train", "beta2", t.adam.beta2);
  r.real("train", "eps", t.adam.eps);
  r.size("train", "max_epochs", t.stop.max_epochs);
  r.size("train", "early_stop_gate", t.stop.early_stop_gate);
  r.size("train", "patience", t.stop.patience);
  r.u64("train", "seed", t.seed);
  r.boolean("train", "augment", t.augment);
  std::size_t num_ops = t.aug.num_ops;
  std::size_t magnitude = static_cast<std::size_t>(t.aug.magnitude);
  r.size("train", "aug_num_ops", num_ops);
  r.size("train", "aug_magnitude", magnitude);
  std::vector<std::string> op_names;
  if (auto ops = r.raw("train", "aug_ops")) op_names = split_list(*ops);
  try {
    t.aug = AugPolicy::create(num_ops, static_cast<int>(std::min<std::size_t>(magnitude, 1000)), op_names);
  } catch (const std::exception& e) {
    r.errors.push_back(fmt::format("[train] augmentation: {}", e.what()));
  }
  double lambda = t.dann_lambda;
  r.real("train", "dann_lambda", lambda);
  t.dann_lambda = static_cast<float>(lambda);
  r.path("train", "source_checkpoint", t.source_checkpoint);
  t.target_task = r.dataset("train", "target_task");
  r.size("train", "threads", c.threads, 1);

  if (auto kind = r.raw("experiment", "kind")) {
    try {
      t.kind = parse_train_kind(*kind);
    } catch (const std::exception& e) {
      r.errors.push_back(fmt::format("[experiment] kind: {}", e.what()));
    }
  } else if (require_experiment) {
    r.errors.push_back("[experiment] kind is required");
  }
  if (auto ds = r.raw("experiment", "datasets")) {
    for (const auto& name : split_list(*ds)) {
      try {
        t.datasets.push_back(parse_dataset(name));
      } catch (const std::exception& e) {
        r.errors.push_back(fmt::format("[experiment] datasets: {}", e.what()));
      }
    }
  } else if (require_experiment) {
    r.errors.push_back("[experiment] datasets is required");
  }
  c.source = r.dataset("experiment", "source");
  if (auto name = r.raw("experiment", "name")) c.name = *name;

  r.real("perturb", "sigma", c.perturb_sigma);
  r.u64("perturb", "seed", c.perturb_seed);
  t.noise_sigma = c.perturb_sigma;
  r.path("output", "run_dir", c.run_dir);

  if (require_experiment) {
    for (auto& v : t.violations()) r.errors.push_back(std::move(v));
  } else {
    // Only the settings that do not depend on the experiment kind.
    TrainConfig probe = t;
    probe.kind = TrainKind::baseline;
    probe.datasets = {DatasetId::M};
    probe.source_checkpoint.clear();
    probe.target_task.reset();
    for (auto& v : probe.violations()) r.errors.push_back(std::move(v));
  }
  if (c.train_per_class > c.per_class) r.errors.push_back("[data] train_per_class exceeds per_class");
  if (!r.errors.empty()) throw ConfigError(std::move(r.errors));
  return c;
}

ExperimentConfig load_config(const fs::path& path, bool require_experiment) {
  const auto text = read_text(path);
  try {
    return parse_config(text, fs::absolute(path).parent_path(), require_experiment);
  } catch (const ConfigError& e) {
    std::vector<std::string> lines;
    for (const auto& v : e.violations()) lines.push_back(path.string() + ": " + v);
    throw ConfigError(std::move(lines));
  }
}

std::string format_config(const ExperimentConfig& c) {
  const auto& t = c.train;
  const auto& s = t.model;
  std::string out;
  auto path_line = [&](std::string_view key, const fs::path& p) {
    if (!p.empty()) out += fmt::format("{} = {}\n", key, fs::absolute(p).lexically_normal().string());
  };
  out += "[data]\n";
  path_line("manifest", c.manifest);
  path_line("raw_manifest", c.raw_manifest);
  path_line("cropboxes", c.cropboxes);
  path_line("prepared_dir", c.prepared_dir);
  out += fmt::format("per_class = {}\nsplit_ratios = {}\ntrain_per_class = {}\nframes = {}\ncrop_size = {}\n",
                     c.per_class, join_sizes(c.split_ratios), c.train_per_class, s.frames, s.height);
  out += fmt::format("\n[model]\nconv_channels = {}\ngru_hidden = {}\ngru_layers = {}\n", join_sizes(s.conv_channels),
                     s.gru_hidden, s.gru_layers);
  out += fmt::format(
      "\n[train]\nbatch_size = {}\nlr = {:.17g}\nbeta1 = {:.17g}\nbeta2 = {:.17g}\neps = {:.17g}\nmax_epochs = {}\n"
      "early_stop_gate = {}\npatience = {}\nseed = {}\naugment = {}\naug_num_ops = {}\naug_magnitude = {}\n",
      t.batch_size, t.adam.lr, t.adam.beta1, t.adam.beta2, t.adam.eps, t.stop.max_epochs, t.stop.early_stop_gate,
      t.stop.patience, t.seed, t.augment ? "true" : "false", t.aug.num_ops, t.aug.magnitude);
  std::vector<std::string> ops;
  for (auto op : t.aug.op_set) ops.push_back(to_string(op));
  out += fmt::format("aug_ops = {}\ndann_lambda = {:.9g}\n", fmt::join(ops, ","), t.dann_lambda);
  path_line("source_checkpoint", t.source_checkpoint);
  if (t.target_task) out += fmt::format("target_task = {}\n", to_string(*t.target_task));
  out += fmt::format("threads = {}\n", c.threads);
  std::vector<std::string> ds;
  for (auto d : t.datasets) ds.push_back(to_string(d));
  out += fmt::format("\n[experiment]\nkind = {}\ndatasets = {}\n", to_string(t.kind), fmt::join(ds, ","));
  if (c.source) out += fmt::format("source = {}\n", to_string(*c.source));
  if (!c.name.empty()) out += fmt::format("name = {}\n", c.name);
  out += fmt::format("\n[perturb]\nsigma = {:.17g}\nseed = {}\n", c.perturb_sigma, c.perturb_seed);
  out += "\n[output]\n";
  path_line("run_dir", c.run_dir);
  return out;
}

bool run_complete(const fs::path& run_dir) { return fs::exists(run_dir / kRunDone); }

std::vector<TaskData> load_tasks(const ExperimentConfig& cfg, const std::vector<DatasetId>& datasets) {
  const auto path = cfg.manifest_path();
  if (path.empty() || !fs::exists(path)) throw DataError("prepared manifest not found: " + path.string());
  const auto manifest = load_manifest(path);
  std::vector<TaskData> out;
  for (auto d : datasets) out.push_back(load_task(manifest, path.parent_path(), d));
  return out;
}

TrainResult run_training(const ExperimentConfig& cfg, const EpochObserver& observer) {
  cfg.train.validate();
  if (cfg.run_dir.empty()) throw ConfigError({"[output] run_dir is required"});
  fs::create_directories(cfg.run_dir);
  fs::remove(cfg.run_dir / kRunDone);
  write_text_atomic(cfg.run_dir / kRunConfig, format_config(cfg));

  auto result = train(cfg.train, load_tasks(cfg, cfg.train.datasets), observer);

  save_checkpoint(cfg.run_dir / kBestCheckpoint, result.best);
  save_checkpoint(cfg.run_dir / kLastCheckpoint, result.last);
  write_text_atomic(cfg.run_dir / kHistoryFile, format_history(result.history));
  write_text_atomic(cfg.run_dir / kTimingsFile, format_timings(result.history));
  write_text_atomic(cfg.run_dir / kRunDone, fmt::format("best_epoch={}\n", result.best.epoch));
  return result;
}

RunSpec load_run_spec(const fs::path& run_dir) {
  const auto cfg_path = run_dir / kRunConfig;
  if (!fs::exists(cfg_path)) throw DataError("run " + run_dir.string() + ": missing " + std::string(kRunConfig));
  return load_config(cfg_path).run_spec();
}

ModelAssembly<float> load_run_model(const fs::path& run_dir, std::string_view checkpoint) {
  const auto cfg_path = run_dir / kRunConfig;
  const auto ckpt_path = run_dir / checkpoint;
  if (!fs::exists(cfg_path)) throw DataError("run " + run_dir.string() + ": missing " + std::string(kRunConfig));
  if (!fs::exists(ckpt_path))
    throw DataError("run " + run_dir.string() + ": missing checkpoint " + std::string(checkpoint));
  const auto cfg = load_config(cfg_path);
  const auto ckpt = load_checkpoint(ckpt_path);

  BaselineSpec spec = cfg.train.model;
  spec.num_classes = 0;
  for (const auto& [name, t] : ckpt.tensors)
    if (name.rfind("head.", 0) == 0 && name.size() > 7 && name.ends_with(".weight")) {
      spec.num_classes = t.dim(0);
      if (name != "head.domain.weight") break;
    }
  if (spec.num_classes == 0) throw FormatError(FormatError::Kind::corrupt, ckpt_path.string() + ": no class head");

  const Rng rng(0);
  ModelAssembly<float> model;
  switch (model_kind(cfg.train.kind)) {
    case ModelKind::baseline:
      model = build_baseline<float>(spec, rng);
      break;
    case ModelKind::dann:
      model = build_dann<float>(spec, rng);
      break;
    case ModelKind::mtl: {
      std::vector<std::string> names;
      for (auto d : cfg.train.datasets) names.push_back(to_string(d));
      model = build_mtl<float>(spec, names, rng);
      break;
    }
  }
  load_into_model(ckpt, model);
  return model;
}

ExperimentConfig grid_run_config(const ExperimentConfig& base, const RunSpec& run) {
  ExperimentConfig c = base;
  c.train.kind = run.kind;
  c.train.datasets = run.datasets;
  c.train.target_task.reset();
  c.source = run.source;
  c.train.source_checkpoint.clear();
  if (run.kind == TrainKind::finetune && run.source) {
    const RunSpec source_run{TrainKind::baseline, {*run.source}, std::nullopt};
    c.train.source_checkpoint = base.run_dir / source_run.slug() / kBestCheckpoint;
  }
  c.train.seed = base.train.seed + stable_hash(run.slug());
  c.name = run.slug();
  c.run_dir = base.run_dir / run.slug();
  return c;
}

GridProgress run_grid(const ExperimentConfig& base, bool resume) {
  if (base.run_dir.empty()) throw ConfigError({"[output] run_dir is required"});
  GridProgress progress;
  for (const auto& run : grid_runs()) {
    const auto cfg = grid_run_config(base, run);
    if (resume && run_complete(cfg.run_dir)) {
      progress.skipped.push_back(run.slug());
      continue;
    }
    run_training(cfg);
    progress.trained.push_back(run.slug());
  }
  return progress;
}

EvalOutput run_eval(const ExperimentConfig& cfg, const std::vector<fs::path>& run_dirs, const fs::path& out_dir) {
  std::vector<RunSpec> runs;
  std::map<std::string, fs::path> dir_of;
  std::set<DatasetId> needed;
  for (const auto& dir : run_dirs) {
    auto spec = load_run_spec(dir);
    if (dir_of.count(spec.row_name())) throw DataError("eval: two runs share the row '" + spec.row_name() + "'");
    dir_of[spec.row_name()] = dir;
    for (auto c : spec.test_columns()) needed.insert(c == DatasetId::Mbar ? DatasetId::M : c);
    runs.push_back(std::move(spec));
  }

  std::map<DatasetId, std::vector<Example>> test_sets;
  if (!needed.empty()) {
    const auto path = cfg.manifest_path();
    if (path.empty() || !fs::exists(path)) throw DataError("prepared manifest not found: " + path.string());
    const auto manifest = load_manifest(path);
    for (auto d : needed) {
      auto task = load_task(manifest, path.parent_path(), d, {Split::test});
      if (task.test.empty()) throw DataError("eval: dataset " + to_string(d) + " has no test clips");
      test_sets[d] = std::move(task.test);
    }
  }
  if (test_sets.count(DatasetId::M)) {
    const auto& m = test_sets[DatasetId::M];
    std::vector<Clip> clips;
    for (const auto& ex : m) clips.push_back(ex.clip);
    const auto perturbed = build_perturbed_testset(clips, cfg.perturb_sigma, cfg.perturb_seed);
    std::vector<Example> mbar(m.size());
    for (std::size_t i = 0; i < m.size(); ++i) mbar[i] = {perturbed[i], m[i].label};
    test_sets[DatasetId::Mbar] = std::move(mbar);
  }

  const auto loader = [&](const RunSpec& run) { return load_run_model(dir_of.at(run.row_name())); };
  EvalOutput out;
  out.matrix = evaluate_grid(runs, loader, test_sets, cfg.train.batch_size);
  out.table = render_table(out.matrix);
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    write_text_atomic(out_dir / "results.tsv", format_results(out.matrix));
    write_text_atomic(out_dir / "table.txt", out.table);
  }
  return out;
}

}  // namespace mouthnet
