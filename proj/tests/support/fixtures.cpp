#include "fixtures.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <unistd.h>

namespace mouthnet::testing {

namespace fs = std::filesystem;

BaselineSpec toy_spec(const ClipDims& dims, std::size_t num_classes) {
  BaselineSpec s;
  s.frames = dims.frames;
  s.height = dims.height;
  s.width = dims.width;
  s.conv_channels = {4, 4, 8};
  s.gru_hidden = 16;
  s.num_classes = num_classes;
  return s;
}

std::string label_name(std::size_t index) { return fmt::format("w{:02}", index); }

Clip moving_pattern_clip(std::size_t label, std::size_t num_classes, const ClipDims& dims, Rng& rng) {
  Clip c;
  c.frames = dims.frames;
  c.height = dims.height;
  c.width = dims.width;
  c.pixels.resize(c.frames * c.height * c.width);
  c.label = label_name(label);

  const double h = static_cast<double>(dims.height), w = static_cast<double>(dims.width);
  const double radius = std::max(2.0, std::min(h, w) / 8.0);
  const double angle = 2.0 * std::numbers::pi * static_cast<double>(label) / static_cast<double>(num_classes) +
                       rng.uniform(-0.15, 0.15);
  const double travel = 0.55 * std::min(h, w) * rng.uniform(0.8, 1.0);
  const double cx = (w - 1) / 2 + rng.uniform(-2.0, 2.0), cy = (h - 1) / 2 + rng.uniform(-2.0, 2.0);
  const double background = 25.0 + rng.uniform(0.0, 20.0);
  const double blob = 200.0 + rng.uniform(0.0, 40.0);
  for (std::size_t t = 0; t < c.frames; ++t) {
    const double phase = c.frames > 1 ? static_cast<double>(t) / static_cast<double>(c.frames - 1) - 0.5 : 0.0;
    const double bx = cx + std::cos(angle) * travel * phase, by = cy + std::sin(angle) * travel * phase;
    auto f = c.frame(t);
    for (std::size_t y = 0; y < c.height; ++y)
      for (std::size_t x = 0; x < c.width; ++x) {
        const double dx = static_cast<double>(x) - bx, dy = static_cast<double>(y) - by;
        double v = (dx * dx + dy * dy <= radius * radius ? blob : background) + rng.uniform(-12.0, 12.0);
        f[y * c.width + x] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
  }
  return c;
}

TaskData make_task(DatasetId dataset, std::size_t num_classes, std::size_t train_per_class,
                   std::size_t val_per_class, std::size_t test_per_class, const ClipDims& dims, std::uint64_t seed) {
  TaskData task;
  task.dataset = dataset;
  for (std::size_t k = 0; k < num_classes; ++k) task.labels.push_back(label_name(k));
  Rng root(seed);
  auto fill = [&](std::vector<Example>& out, std::size_t per_class, const char* split) {
    for (std::size_t i = 0; i < per_class; ++i)
      for (std::size_t k = 0; k < num_classes; ++k) {
        Rng rng = root.substream(fmt::format("{}/{}/{}/{}", to_string(dataset), split, k, i));
        Example ex{moving_pattern_clip(k, num_classes, dims, rng), k};
        ex.clip.dataset = dataset;
        ex.clip.clip_id = fmt::format("{}-{}-{}-{}", to_string(dataset), split, k, i);
        out.push_back(std::move(ex));
      }
  };
  fill(task.train, train_per_class, "train");
  fill(task.val, val_per_class, "val");
  fill(task.test, test_per_class, "test");
  return task;
}

RawCorpus write_raw_corpus(const fs::path& dir, const std::vector<DatasetId>& datasets, std::size_t num_classes,
                           std::size_t clips_per_class, std::size_t raw_frames, std::size_t raw_size,
                           std::size_t crop_size, std::uint64_t seed) {
  RawCorpus corpus;
  fs::create_directories(dir / "raw");
  Manifest manifest;
  std::string boxes;
  const Rng root(seed);
  const ClipDims dims{raw_frames, crop_size, crop_size};
  for (auto ds : datasets)
    for (std::size_t k = 0; k < num_classes; ++k)
      for (std::size_t i = 0; i < clips_per_class; ++i) {
        const std::string id = fmt::format("{}_{}_{:03}", to_string(ds), label_name(k), i);
        Rng rng = root.substream("raw/" + id);
        const Clip inner = moving_pattern_clip(k, num_classes, dims, rng);
        Clip raw;
        raw.frames = raw_frames;
        raw.height = raw.width = raw_size;
        raw.pixels.assign(raw_frames * raw_size * raw_size, 30);
        const std::size_t row0 = rng.below(raw_size - crop_size + 1), col0 = rng.below(raw_size - crop_size + 1);
        for (std::size_t t = 0; t < raw_frames; ++t)
          for (std::size_t y = 0; y < crop_size; ++y)
            for (std::size_t x = 0; x < crop_size; ++x)
              raw.pixels[(t * raw_size + row0 + y) * raw_size + col0 + x] = inner.at(t, y, x);
        const std::string rel = "raw/" + id + ".mclp";
        save_clip(dir / rel, raw);
        manifest.entries.push_back({rel, id, ds, label_name(k), Split::unassigned});
        boxes += fmt::format("{} {} {}\n", id, col0 + crop_size / 2, row0 + crop_size / 2);
        corpus.clip_ids.push_back(id);
      }
  corpus.manifest = dir / "raw_manifest.tsv";
  corpus.cropboxes = dir / "cropboxes.txt";
  save_manifest(corpus.manifest, manifest);
  write_text_atomic(corpus.cropboxes, boxes);
  return corpus;
}

TempDir::TempDir(const std::string& tag) {
  static int counter = 0;
  path_ = fs::temp_directory_path() / fmt::format("mouthnet-{}-{}-{}", tag, ::getpid(), counter++);
  fs::remove_all(path_);
  fs::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

}  // namespace mouthnet::testing
