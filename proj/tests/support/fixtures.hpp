#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mouthnet/datapipe.hpp"
#include "mouthnet/models.hpp"
#include "mouthnet/rng.hpp"

namespace mouthnet::testing {

struct ClipDims {
  std::size_t frames = 8;
  std::size_t height = 32;
  std::size_t width = 32;
};

// Small network used by every training fixture.
BaselineSpec toy_spec(const ClipDims& dims = {}, std::size_t num_classes = 3);

// A bright blob drifting across a noisy background; class k moves along the
// direction 2*pi*k/num_classes. Start offset, speed and noise vary per clip.
Clip moving_pattern_clip(std::size_t label, std::size_t num_classes, const ClipDims& dims, Rng& rng);

// Labels are named "w00", "w01", ... so lexicographic order matches the index.
std::string label_name(std::size_t index);

// One dataset with the given number of clips per class in each split.
TaskData make_task(DatasetId dataset, std::size_t num_classes, std::size_t train_per_class,
                   std::size_t val_per_class, std::size_t test_per_class, const ClipDims& dims, std::uint64_t seed);

// Writes a raw corpus (clips of `raw_frames` at raw_size x raw_size, a raw
// manifest with unassigned splits and a cropbox sidecar) under dir.
struct RawCorpus {
  std::filesystem::path manifest;
  std::filesystem::path cropboxes;
  std::vector<std::string> clip_ids;
};
RawCorpus write_raw_corpus(const std::filesystem::path& dir, const std::vector<DatasetId>& datasets,
                           std::size_t num_classes, std::size_t clips_per_class, std::size_t raw_frames,
                           std::size_t raw_size, std::size_t crop_size, std::uint64_t seed);

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace mouthnet::testing
