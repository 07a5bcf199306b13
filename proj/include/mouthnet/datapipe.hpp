#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mouthnet/io.hpp"
#include "mouthnet/kernels.hpp"
#include "mouthnet/tensor.hpp"

namespace mouthnet {

enum class DatasetId { M, GLipsM, GLipsR, LRW, Mbar };
enum class Split { train, val, test, unassigned };

std::string to_string(DatasetId id);
DatasetId parse_dataset(std::string_view text);
std::string to_string(Split split);
Split parse_split(std::string_view text);

// Grayscale frame volume, frame-major then row-major.
struct Clip {
  std::size_t frames = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;
  std::string label;
  DatasetId dataset = DatasetId::M;
  std::string clip_id;

  std::size_t frame_size() const { return height * width; }
  std::uint8_t at(std::size_t t, std::size_t y, std::size_t x) const { return pixels[(t * height + y) * width + x]; }
  std::span<std::uint8_t> frame(std::size_t t) { return {pixels.data() + t * frame_size(), frame_size()}; }
  std::span<const std::uint8_t> frame(std::size_t t) const { return {pixels.data() + t * frame_size(), frame_size()}; }
  bool same_volume(const Clip& o) const {
    return frames == o.frames && height == o.height && width == o.width && pixels == o.pixels;
  }
};

// "MCLP" container, little-endian: magic, u8 version (1), u32 T, u32 H,
// u32 W, then T*H*W pixel bytes. Only the volume is stored; label and
// provenance live in the manifest.
inline constexpr std::size_t kClipHeaderSize = 17;
std::vector<std::uint8_t> encode_clip(const Clip& clip);
Clip decode_clip(std::span<const std::uint8_t> bytes);

Clip load_clip(const std::filesystem::path& path);
void save_clip(const std::filesystem::path& path, const Clip& clip);

struct ManifestEntry {
  std::string path;  // relative to the manifest's directory unless absolute
  std::string clip_id;
  DatasetId dataset = DatasetId::M;
  std::string label;
  Split split = Split::unassigned;

  bool operator==(const ManifestEntry&) const = default;
};

// One tab-separated record per line: path, clip_id, dataset, label, split.
// Blank lines and lines starting with '#' are ignored on read.
struct Manifest {
  std::vector<ManifestEntry> entries;

  // Lexicographically sorted labels of a dataset and their 0-based indices.
  std::vector<std::string> labels(DatasetId dataset) const;
  std::map<std::string, std::size_t> label_index(DatasetId dataset) const;
  std::size_t count(DatasetId dataset, std::string_view label, Split split) const;
  std::vector<DatasetId> datasets() const;
  // Throws DataError on duplicate clip ids.
  void validate() const;

  bool operator==(const Manifest&) const = default;
};

std::string format_manifest(const Manifest& manifest);
Manifest parse_manifest(std::string_view text);
Manifest load_manifest(const std::filesystem::path& path);
void save_manifest(const std::filesystem::path& path, const Manifest& manifest);

struct CropBox {
  std::string clip_id;
  long x = 0;  // column of the window centre, source pixels
  long y = 0;  // row of the window centre
};

// Sidecar lines "clip_id x y".
std::map<std::string, CropBox> parse_cropboxes(std::string_view text);

// Pads by repeating the last frame, or keeps the first `target` frames.
Clip standardize_frames(const Clip& clip, std::size_t target = 30);

struct CropWindow {
  std::size_t row0, col0, size;
};
CropWindow crop_window(std::size_t height, std::size_t width, const CropBox& box, std::size_t size = 96);
// Same size x size window (centred on the box, clamped inside the frame) for every frame.
Clip crop_mouth(const Clip& clip, const CropBox& box, std::size_t size = 96);

// Per (dataset, label): uniform selection of per_class entries without
// replacement, split by `ratios` (train:val:test). Throws DataError naming the
// first class with too few candidates.
Manifest balance_and_split(const Manifest& manifest, std::size_t per_class, std::array<std::size_t, 3> ratios,
                           std::uint64_t seed);

// Random removal of train entries down to per_class_train per class.
Manifest trim_train(const Manifest& manifest, std::size_t per_class_train, std::uint64_t seed);

// pixel / 255 with a leading channel axis: (1, T, H, W).
Tensor<float> to_model_input(const Clip& clip, kernels::Dims3 expected = {30, 96, 96});

// Stacks clips into (B, 1, T, H, W).
Tensor<float> to_model_batch(std::span<const Clip* const> clips, kernels::Dims3 expected);

struct Example {
  Clip clip;
  std::size_t label = 0;
};

// All clips of one dataset, decoded, grouped by split.
struct TaskData {
  DatasetId dataset = DatasetId::M;
  std::vector<std::string> labels;
  std::vector<Example> train;
  std::vector<Example> val;
  std::vector<Example> test;

  const std::vector<Example>& split(Split s) const;
};

TaskData load_task(const Manifest& manifest, const std::filesystem::path& base_dir, DatasetId dataset,
                   const std::vector<Split>& splits = {Split::train, Split::val, Split::test});

struct PrepareOptions {
  std::filesystem::path raw_manifest;
  std::filesystem::path cropboxes;
  std::filesystem::path out_dir;
  std::size_t per_class = 500;
  std::array<std::size_t, 3> ratios{8, 1, 1};
  std::size_t train_per_class = 397;
  std::size_t frames = 30;
  std::size_t crop_size = 96;
  std::uint64_t seed = 0;
};

struct PrepareResult {
  bool skipped = false;  // output already complete
  std::filesystem::path manifest_path;
  std::size_t clips_written = 0;
};

// Balance, split, trim, standardise, crop; writes clips/<dataset>/<id>.mclp
// and manifest.tsv under out_dir, then a completion marker.
PrepareResult prepare_dataset(const PrepareOptions& options);

}  // namespace mouthnet
