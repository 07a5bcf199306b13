#include "mouthnet/trainer.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <set>

#include "mouthnet/kernels.hpp"
#include "mouthnet/metrics.hpp"
#include "mouthnet/ops.hpp"

namespace mouthnet {

std::string to_string(TrainKind kind) {
  switch (kind) {
    case TrainKind::baseline:
      return "baseline";
    case TrainKind::finetune:
      return "finetune";
    case TrainKind::dann:
      return "dann";
    case TrainKind::mtl:
      return "mtl";
  }
  return "?";
}

TrainKind parse_train_kind(std::string_view text) {
  for (auto k : {TrainKind::baseline, TrainKind::finetune, TrainKind::dann, TrainKind::mtl})
    if (text == to_string(k)) return k;
  throw std::invalid_argument("unknown experiment kind '" + std::string(text) +
                              "' (expected baseline, finetune, dann or mtl)");
}

ModelKind model_kind(TrainKind kind) {
  switch (kind) {
    case TrainKind::dann:
      return ModelKind::dann;
    case TrainKind::mtl:
      return ModelKind::mtl;
    default:
      return ModelKind::baseline;
  }
}

namespace {

std::string join_lines(const std::vector<std::string>& lines) {
  std::string out;
  for (const auto& l : lines) out += (out.empty() ? "" : "\n") + l;
  return out;
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> violations)
    : std::invalid_argument(join_lines(violations)), violations_(std::move(violations)) {}

std::size_t best_epoch(std::span<const double> target_acc) {
  if (target_acc.empty()) return 0;
  std::size_t best = 0;
  for (std::size_t i = 1; i < target_acc.size(); ++i)
    if (target_acc[i] > target_acc[best]) best = i;
  return best + 1;
}

bool should_stop(std::span<const double> target_acc, const StopRule& rule) {
  const std::size_t e = target_acc.size();
  if (e == 0) return false;
  if (e >= rule.max_epochs) return true;
  return e > rule.early_stop_gate && e - best_epoch(target_acc) > rule.patience;
}

DatasetId TrainConfig::resolved_target() const {
  if (target_task) return *target_task;
  if (std::find(datasets.begin(), datasets.end(), DatasetId::M) != datasets.end()) return DatasetId::M;
  return datasets.empty() ? DatasetId::M : datasets.front();
}

std::vector<std::string> TrainConfig::violations() const {
  std::vector<std::string> v;
  const std::string k = to_string(kind);
  if (datasets.empty()) v.push_back("train: no datasets configured");
  std::set<DatasetId> unique(datasets.begin(), datasets.end());
  if (unique.size() != datasets.size()) v.push_back("train: datasets contain duplicates");
  if (unique.count(DatasetId::Mbar)) v.push_back("train: Mbar is a test-only set and cannot be trained on");
  switch (kind) {
    case TrainKind::baseline:
    case TrainKind::finetune:
      if (datasets.size() != 1) v.push_back(k + ": exactly one dataset required, got " + std::to_string(datasets.size()));
      break;
    case TrainKind::dann:
      if (datasets != std::vector<DatasetId>{DatasetId::M, DatasetId::GLipsM})
        v.push_back("dann: datasets must be [M, GLipsM]");
      break;
    case TrainKind::mtl:
      if (datasets.size() < 2) v.push_back("mtl: at least two datasets required");
      break;
  }
  if (kind == TrainKind::finetune && source_checkpoint.empty())
    v.push_back("finetune: source_checkpoint is required");
  if (kind != TrainKind::finetune && !source_checkpoint.empty())
    v.push_back(k + ": source_checkpoint is only valid for finetune");
  if (target_task && !unique.count(*target_task))
    v.push_back("train: target_task " + to_string(*target_task) + " is not among the datasets");
  if (batch_size == 0) v.push_back("train: batch_size must be positive");
  if (kind == TrainKind::dann && batch_size % 2 != 0) v.push_back("dann: batch_size must be even");
  if (!(adam.lr > 0)) v.push_back("train: lr must be positive");
  if (!(adam.beta1 >= 0 && adam.beta1 < 1)) v.push_back("train: beta1 must be in [0, 1)");
  if (!(adam.beta2 >= 0 && adam.beta2 < 1)) v.push_back("train: beta2 must be in [0, 1)");
  if (!(adam.eps > 0)) v.push_back("train: eps must be positive");
  if (stop.max_epochs == 0) v.push_back("train: max_epochs must be positive");
  if (stop.patience == 0) v.push_back("train: patience must be at least 1");
  if (stop.early_stop_gate > stop.max_epochs) v.push_back("train: early_stop_gate exceeds max_epochs");
  if (!(noise_sigma >= 0)) v.push_back("perturb: sigma must be non-negative");
  if (!(dann_lambda >= 0)) v.push_back("train: dann_lambda must be non-negative");
  return v;
}

void TrainConfig::validate() const {
  auto v = violations();
  if (!v.empty()) throw ConfigError(std::move(v));
}

std::string class_head(TrainKind kind, DatasetId dataset) {
  return kind == TrainKind::mtl ? to_string(dataset) : "class";
}

EpochStream::EpochStream(std::size_t size, const Rng& root, std::string task)
    : size_(size), root_(root), task_(std::move(task)) {}

void EpochStream::next_pass() {
  ++pass_;
  order_.resize(size_);
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  Rng rng = root_.substream("shuffle/" + task_ + "/" + std::to_string(pass_));
  shuffle(order_.begin(), order_.end(), rng);
  cursor_ = 0;
}

std::vector<std::size_t> EpochStream::take(std::size_t n) {
  const std::size_t k = std::min(n, order_.size() - std::min(cursor_, order_.size()));
  std::vector<std::size_t> out(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                               order_.begin() + static_cast<std::ptrdiff_t>(cursor_ + k));
  cursor_ += k;
  return out;
}

std::vector<std::size_t> EpochStream::take_cyclic(std::size_t n) {
  if (size_ == 0) throw DataError("stream '" + task_ + "' has no training samples");
  std::vector<std::size_t> out;
  out.reserve(n);
  while (out.size() < n) {
    if (exhausted()) next_pass();
    auto part = take(n - out.size());
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

namespace {

TaskBatch gather(const TaskData& task, const std::vector<std::size_t>& idx, std::string head) {
  TaskBatch b;
  b.head = std::move(head);
  for (auto i : idx) {
    b.examples.push_back(&task.train[i]);
    b.labels.push_back(task.train[i].label);
  }
  return b;
}

}  // namespace

std::optional<BatchBundle> compose_batch(TrainKind kind, std::span<const TaskData* const> tasks,
                                         std::span<EpochStream> streams, std::size_t batch_size) {
  if (tasks.empty() || tasks.size() != streams.size())
    throw std::invalid_argument("compose_batch: tasks and streams must be non-empty and aligned");
  BatchBundle bundle;
  switch (kind) {
    case TrainKind::baseline:
    case TrainKind::finetune: {
      auto idx = streams[0].take(batch_size);
      if (idx.empty()) return std::nullopt;
      bundle.parts.push_back(gather(*tasks[0], idx, "class"));
      break;
    }
    case TrainKind::dann: {
      if (tasks.size() != 2) throw std::invalid_argument("compose_batch: dann needs two datasets");
      auto first = streams[0].take(batch_size / 2);
      if (first.empty()) return std::nullopt;
      auto second = streams[1].take_cyclic(first.size());
      TaskBatch b = gather(*tasks[0], first, "class");
      TaskBatch other = gather(*tasks[1], second, "class");
      b.domains.assign(b.examples.size(), 0);
      b.examples.insert(b.examples.end(), other.examples.begin(), other.examples.end());
      b.labels.insert(b.labels.end(), other.labels.begin(), other.labels.end());
      b.domains.resize(b.examples.size(), 1);
      bundle.parts.push_back(std::move(b));
      break;
    }
    case TrainKind::mtl: {
      auto idx = streams[0].take(batch_size);
      if (idx.empty()) return std::nullopt;
      bundle.parts.push_back(gather(*tasks[0], idx, to_string(tasks[0]->dataset)));
      for (std::size_t t = 1; t < tasks.size(); ++t)
        bundle.parts.push_back(gather(*tasks[t], streams[t].take_cyclic(batch_size), to_string(tasks[t]->dataset)));
      break;
    }
  }
  return bundle;
}

std::vector<PreparedPart<float>> prepare_parts(const BatchBundle& bundle, const BaselineSpec& spec,
                                               const AugPolicy* policy, const Rng& root, std::size_t epoch,
                                               std::size_t step) {
  const kernels::Dims3 dims{spec.frames, spec.height, spec.width};
  std::vector<PreparedPart<float>> out;
  for (std::size_t p = 0; p < bundle.parts.size(); ++p) {
    const auto& part = bundle.parts[p];
    const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(part.examples.size());
    std::vector<Clip> augmented;
    std::vector<const Clip*> clips(part.examples.size());
    if (policy) {
      augmented.resize(part.examples.size());
#pragma omp parallel for schedule(static) num_threads(kernels::num_threads())
      for (std::ptrdiff_t i = 0; i < n; ++i) {
        Rng rng = root.substream(fmt::format("aug/{}/{}/{}/{}", epoch, step, p, i));
        augmented[static_cast<std::size_t>(i)] =
            randaugment_clip(part.examples[static_cast<std::size_t>(i)]->clip, *policy, rng);
      }
      for (std::size_t i = 0; i < clips.size(); ++i) clips[i] = &augmented[i];
    } else {
      for (std::size_t i = 0; i < clips.size(); ++i) clips[i] = &part.examples[i]->clip;
    }
    out.push_back({part.head, to_model_batch(clips, dims), part.labels, part.domains});
  }
  return out;
}

template <typename T>
StepLoss<T> step_loss(TrainKind kind, ModelAssembly<T>& model, const std::vector<PreparedPart<T>>& parts, T lambda) {
  if (parts.empty()) throw std::invalid_argument("step_loss: empty bundle");
  StepLoss<T> out;
  switch (kind) {
    case TrainKind::baseline:
    case TrainKind::finetune:
      out.heads.emplace_back("class", softmax_cross_entropy(forward_baseline(model, parts[0].input, RunMode::train),
                                                            std::span<const std::size_t>(parts[0].labels)));
      break;
    case TrainKind::dann: {
      const auto& part = parts[0];
      if (part.domains.size() != part.labels.size())
        throw std::invalid_argument("step_loss: dann part needs one domain label per sample");
      auto logits = forward_dann(model, part.input, lambda, RunMode::train);
      out.heads.emplace_back("class", softmax_cross_entropy(logits.class_logits, std::span<const std::size_t>(part.labels)));
      out.heads.emplace_back("domain",
                             softmax_cross_entropy(logits.domain_logits, std::span<const std::size_t>(part.domains)));
      break;
    }
    case TrainKind::mtl:
      for (const auto& part : parts)
        out.heads.emplace_back(part.head, softmax_cross_entropy(forward_mtl(model, part.input, part.head, RunMode::train),
                                                                std::span<const std::size_t>(part.labels)));
      break;
  }
  out.total = out.heads[0].second;
  for (std::size_t i = 1; i < out.heads.size(); ++i) out.total = add(out.total, out.heads[i].second);
  return out;
}

template StepLoss<float> step_loss(TrainKind, ModelAssembly<float>&, const std::vector<PreparedPart<float>>&, float);
template StepLoss<double> step_loss(TrainKind, ModelAssembly<double>&, const std::vector<PreparedPart<double>>&,
                                    double);

ModelAssembly<float> finetune_init(const Checkpoint& source, const BaselineSpec& spec, const Rng& rng) {
  std::size_t source_classes = 0;
  for (const auto& [name, t] : source.tensors) {
    if (name == "head.class.weight") source_classes = t.dim(0);
    else if (name.rfind("head.", 0) == 0 && name.rfind("head.class.", 0) != 0)
      throw FormatError(FormatError::Kind::corrupt,
                        "finetune: source checkpoint is not a baseline model (found '" + name + "')");
  }
  if (source_classes == 0)
    throw FormatError(FormatError::Kind::corrupt, "finetune: source checkpoint has no class head");
  BaselineSpec source_spec = spec;
  source_spec.num_classes = source_classes;
  auto model = build_baseline<float>(source_spec, rng.substream("init"));
  load_into_model(source, model);
  reinit_head(model, rng.substream("reinit"), spec.num_classes);
  for (auto& [name, p] : model.named_parameters()) Tensor<float>(p).set_requires_grad(true);
  return model;
}

double EpochRecord::acc(std::string_view key) const {
  for (const auto& [k, v] : val_acc)
    if (k == key) return v;
  throw std::out_of_range("epoch record has no accuracy for '" + std::string(key) + "'");
}

std::string format_history(std::span<const EpochRecord> history) {
  std::string out;
  for (const auto& r : history) {
    out += fmt::format("epoch={}", r.epoch);
    for (const auto& [k, v] : r.train_loss) out += fmt::format("\tloss.{}={:.9g}", k, v);
    for (const auto& [k, v] : r.val_acc) out += fmt::format("\tacc.{}={:.6f}", k, v);
    out += '\n';
  }
  return out;
}

std::string format_timings(std::span<const EpochRecord> history) {
  std::string out;
  for (const auto& r : history) out += fmt::format("epoch={}\tseconds={:.3f}\n", r.epoch, r.wall_seconds);
  return out;
}

namespace {

AdamState clone_adam(const AdamState& s) {
  AdamState c;
  c.step = s.step;
  for (const auto& [n, t] : s.m) c.m.emplace_back(n, t.clone());
  for (const auto& [n, t] : s.v) c.v.emplace_back(n, t.clone());
  return c;
}

Checkpoint capture(const ModelAssembly<float>& model, const AdamState& adam, std::size_t epoch, double best_val,
                   const Rng& root) {
  Checkpoint c;
  c.tensors = snapshot_tensors(model);
  c.epoch = static_cast<std::uint32_t>(epoch);
  c.best_val = best_val;
  c.rng_seed = root.seed();
  c.rng_counter = root.counter();
  c.adam = clone_adam(adam);
  return c;
}

// Validation sets per history key, in a fixed order.
struct ValSet {
  std::string key;
  std::string head;
  std::vector<Example> examples;
};

std::vector<ValSet> validation_sets(const TrainConfig& cfg, const std::vector<const TaskData*>& tasks) {
  std::vector<ValSet> out;
  for (const auto* t : tasks) out.push_back({to_string(t->dataset), class_head(cfg.kind, t->dataset), t->val});
  if (cfg.kind == TrainKind::dann) {
    ValSet domain{"domain", "domain", {}};
    for (std::size_t d = 0; d < tasks.size(); ++d)
      for (const auto& ex : tasks[d]->val) domain.examples.push_back({ex.clip, d});
    out.push_back(std::move(domain));
  }
  return out;
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const std::vector<TaskData>& data, const EpochObserver& observer) {
  cfg.validate();
  const DatasetId target = cfg.resolved_target();

  // Target first, the rest in configured order.
  std::vector<const TaskData*> tasks;
  auto find_task = [&](DatasetId id) -> const TaskData* {
    for (const auto& t : data)
      if (t.dataset == id) return &t;
    throw DataError("train: no data loaded for dataset " + to_string(id));
  };
  tasks.push_back(find_task(target));
  for (auto id : cfg.datasets)
    if (id != target) tasks.push_back(find_task(id));

  const auto& labels = tasks[0]->labels;
  for (const auto* t : tasks) {
    if (t->train.empty()) throw DataError("train: dataset " + to_string(t->dataset) + " has no training clips");
    if (t->val.empty()) throw DataError("train: dataset " + to_string(t->dataset) + " has no validation clips");
    if (t->labels.size() != labels.size())
      throw DataError("train: dataset " + to_string(t->dataset) + " has " + std::to_string(t->labels.size()) +
                      " classes, target has " + std::to_string(labels.size()));
    if (cfg.kind == TrainKind::dann && t->labels != labels)
      throw DataError("dann: both datasets must share the same label set");
  }

  BaselineSpec spec = cfg.model;
  spec.num_classes = labels.size();
  const Rng root(cfg.seed);

  TrainResult result{[&]() -> ModelAssembly<float> {
                       switch (cfg.kind) {
                         case TrainKind::baseline:
                           return build_baseline<float>(spec, root.substream("init"));
                         case TrainKind::finetune:
                           return finetune_init(load_checkpoint(cfg.source_checkpoint), spec, root);
                         case TrainKind::dann:
                           return build_dann<float>(spec, root.substream("init"));
                         case TrainKind::mtl: {
                           std::vector<std::string> names;
                           for (const auto* t : tasks) names.push_back(to_string(t->dataset));
                           return build_mtl<float>(spec, names, root.substream("init"));
                         }
                       }
                       throw std::logic_error("unreachable");
                     }(),
                     {},
                     {},
                     {},
                     to_string(target)};
  auto& model = result.model;

  std::vector<EpochStream> streams;
  for (const auto* t : tasks) streams.emplace_back(t->train.size(), root, to_string(t->dataset));
  const auto val_sets = validation_sets(cfg, tasks);
  const AugPolicy* policy = cfg.augment ? &cfg.aug : nullptr;

  AdamState adam;
  std::vector<double> target_acc;
  double best_acc = -1.0;

  for (std::size_t epoch = 1; epoch <= cfg.stop.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    streams[0].next_pass();
    std::vector<std::pair<std::string, double>> loss_sums;
    std::size_t steps = 0;
    while (auto bundle = compose_batch(cfg.kind, tasks, streams, cfg.batch_size)) {
      ++steps;
      auto parts = prepare_parts(*bundle, spec, policy, root, epoch, steps);
      model.zero_grad();
      auto loss = step_loss(cfg.kind, model, parts, cfg.dann_lambda);
      if (loss_sums.empty())
        for (const auto& [h, l] : loss.heads) loss_sums.emplace_back(h, 0.0);
      for (std::size_t i = 0; i < loss.heads.size(); ++i) {
        const float v = loss.heads[i].second.item();
        if (!std::isfinite(v))
          throw TrainingError(fmt::format("non-finite loss at epoch {} step {} head '{}'", epoch, steps,
                                          loss.heads[i].first));
        loss_sums[i].second += v;
      }
      backward(loss.total);
      adam_step(model.named_parameters(), adam, cfg.adam);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    for (auto& [h, s] : loss_sums) rec.train_loss.emplace_back(h, s / static_cast<double>(steps));
    for (const auto& vs : val_sets)
      rec.val_acc.emplace_back(vs.key, top1_accuracy(model, vs.examples, vs.head, cfg.batch_size));
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    const double acc = rec.acc(result.target_key);
    target_acc.push_back(acc);
    if (acc > best_acc) {
      best_acc = acc;
      result.best = capture(model, adam, epoch, best_acc, root);
    }
    result.history.push_back(rec);

    const bool observer_stop = observer && observer(result.history.back(), model);
    if (observer_stop || should_stop(target_acc, cfg.stop)) break;
  }
  result.last = capture(model, adam, result.history.size(), best_acc, root);
  return result;
}

}  // namespace mouthnet
