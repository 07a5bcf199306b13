#include "mouthnet/datapipe.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "mouthnet/rng.hpp"

namespace mouthnet {

namespace fs = std::filesystem;

std::string to_string(DatasetId id) {
  switch (id) {
    case DatasetId::M:
      return "M";
    case DatasetId::GLipsM:
      return "GLipsM";
    case DatasetId::GLipsR:
      return "GLipsR";
    case DatasetId::LRW:
      return "LRW";
    case DatasetId::Mbar:
      return "Mbar";
  }
  return "?";
}

DatasetId parse_dataset(std::string_view text) {
  for (auto id : {DatasetId::M, DatasetId::GLipsM, DatasetId::GLipsR, DatasetId::LRW, DatasetId::Mbar})
    if (text == to_string(id)) return id;
  throw DataError("unknown dataset '" + std::string(text) + "'");
}

std::string to_string(Split split) {
  switch (split) {
    case Split::train:
      return "train";
    case Split::val:
      return "val";
    case Split::test:
      return "test";
    case Split::unassigned:
      return "-";
  }
  return "?";
}

Split parse_split(std::string_view text) {
  for (auto s : {Split::train, Split::val, Split::test, Split::unassigned})
    if (text == to_string(s)) return s;
  throw DataError("unknown split '" + std::string(text) + "'");
}

namespace {
constexpr std::uint8_t kClipVersion = 1;
}

std::vector<std::uint8_t> encode_clip(const Clip& clip) {
  if (clip.frames == 0 || clip.height == 0 || clip.width == 0)
    throw DataError("encode_clip: clip '" + clip.clip_id + "' has an empty dimension");
  if (clip.pixels.size() != clip.frames * clip.height * clip.width)
    throw DataError("encode_clip: pixel count does not match dimensions");
  ByteWriter w;
  w.raw("MCLP", 4);
  w.u8(kClipVersion);
  w.u32(static_cast<std::uint32_t>(clip.frames));
  w.u32(static_cast<std::uint32_t>(clip.height));
  w.u32(static_cast<std::uint32_t>(clip.width));
  w.raw(clip.pixels.data(), clip.pixels.size());
  return std::move(w.bytes());
}

Clip decode_clip(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes.data(), bytes.size(), "MCLP");
  if (bytes.size() < 4 || r.str(4) != "MCLP") throw FormatError(FormatError::Kind::bad_magic, "MCLP: bad magic");
  const auto version = r.u8();
  if (version != kClipVersion)
    throw FormatError(FormatError::Kind::version_mismatch,
                      "MCLP: unsupported version " + std::to_string(version));
  Clip c;
  c.frames = r.u32();
  c.height = r.u32();
  c.width = r.u32();
  if (c.frames == 0 || c.height == 0 || c.width == 0)
    throw FormatError(FormatError::Kind::corrupt, "MCLP: zero dimension");
  const std::size_t n = c.frames * c.height * c.width;
  r.need(n);
  c.pixels.resize(n);
  r.raw(c.pixels.data(), n);
  if (r.remaining() != 0) throw FormatError(FormatError::Kind::corrupt, "MCLP: trailing bytes after payload");
  return c;
}

Clip load_clip(const fs::path& path) {
  const auto bytes = read_file(path);
  try {
    return decode_clip(bytes);
  } catch (const FormatError& e) {
    throw FormatError(e.kind(), path.string() + ": " + e.what());
  }
}

void save_clip(const fs::path& path, const Clip& clip) { write_file_atomic(path, encode_clip(clip)); }

std::vector<std::string> Manifest::labels(DatasetId dataset) const {
  std::set<std::string> unique;
  for (const auto& e : entries)
    if (e.dataset == dataset) unique.insert(e.label);
  return {unique.begin(), unique.end()};
}

std::map<std::string, std::size_t> Manifest::label_index(DatasetId dataset) const {
  std::map<std::string, std::size_t> index;
  for (const auto& l : labels(dataset)) index.emplace(l, index.size());
  return index;
}

std::size_t Manifest::count(DatasetId dataset, std::string_view label, Split split) const {
  return static_cast<std::size_t>(std::count_if(entries.begin(), entries.end(), [&](const ManifestEntry& e) {
    return e.dataset == dataset && e.label == label && e.split == split;
  }));
}

std::vector<DatasetId> Manifest::datasets() const {
  std::set<DatasetId> ids;
  for (const auto& e : entries) ids.insert(e.dataset);
  return {ids.begin(), ids.end()};
}

void Manifest::validate() const {
  std::set<std::string> seen;
  for (const auto& e : entries)
    if (!seen.insert(e.clip_id).second) throw DataError("manifest: duplicate clip_id '" + e.clip_id + "'");
}

std::string format_manifest(const Manifest& manifest) {
  std::string out;
  for (const auto& e : manifest.entries) {
    out += e.path;
    out += '\t';
    out += e.clip_id;
    out += '\t';
    out += to_string(e.dataset);
    out += '\t';
    out += e.label;
    out += '\t';
    out += to_string(e.split);
    out += '\n';
  }
  return out;
}

Manifest parse_manifest(std::string_view text) {
  Manifest m;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      const auto tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() != 5)
      throw DataError("manifest line " + std::to_string(line_no) + ": expected 5 tab-separated fields, got " +
                      std::to_string(fields.size()));
    try {
      m.entries.push_back({fields[0], fields[1], parse_dataset(fields[2]), fields[3], parse_split(fields[4])});
    } catch (const DataError& e) {
      throw DataError("manifest line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  m.validate();
  return m;
}

Manifest load_manifest(const fs::path& path) {
  try {
    return parse_manifest(read_text(path));
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void save_manifest(const fs::path& path, const Manifest& manifest) {
  write_text_atomic(path, format_manifest(manifest));
}

std::map<std::string, CropBox> parse_cropboxes(std::string_view text) {
  std::map<std::string, CropBox> boxes;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream fields(line);
    CropBox b;
    double x = 0, y = 0;
    if (!(fields >> b.clip_id >> x >> y))
      throw DataError("cropbox line " + std::to_string(line_no) + ": expected 'clip_id x y'");
    b.x = std::lround(x);
    b.y = std::lround(y);
    boxes[b.clip_id] = b;
  }
  return boxes;
}

Clip standardize_frames(const Clip& clip, std::size_t target) {
  if (clip.frames == 0) throw DataError("standardize_frames: clip '" + clip.clip_id + "' has no frames");
  Clip out = clip;
  if (clip.frames >= target) {
    out.pixels.resize(target * clip.frame_size());
  } else {
    const auto last = clip.frame(clip.frames - 1);
    for (std::size_t t = clip.frames; t < target; ++t) out.pixels.insert(out.pixels.end(), last.begin(), last.end());
  }
  out.frames = target;
  return out;
}

CropWindow crop_window(std::size_t height, std::size_t width, const CropBox& box, std::size_t size) {
  if (height < size || width < size)
    throw DataError("crop_mouth: frame " + std::to_string(height) + "x" + std::to_string(width) +
                    " is smaller than the " + std::to_string(size) + "px window");
  const long half = static_cast<long>(size / 2);
  const long row = std::clamp(box.y - half, 0L, static_cast<long>(height - size));
  const long col = std::clamp(box.x - half, 0L, static_cast<long>(width - size));
  return {static_cast<std::size_t>(row), static_cast<std::size_t>(col), size};
}

Clip crop_mouth(const Clip& clip, const CropBox& box, std::size_t size) {
  const auto w = crop_window(clip.height, clip.width, box, size);
  Clip out = clip;
  out.height = size;
  out.width = size;
  out.pixels.assign(clip.frames * size * size, 0);
  for (std::size_t t = 0; t < clip.frames; ++t)
    for (std::size_t y = 0; y < size; ++y) {
      const auto* src = clip.pixels.data() + (t * clip.height + w.row0 + y) * clip.width + w.col0;
      std::copy_n(src, size, out.pixels.data() + (t * size + y) * size);
    }
  return out;
}

namespace {

using ClassKey = std::pair<DatasetId, std::string>;

std::map<ClassKey, std::vector<ManifestEntry>> group_by_class(const std::vector<ManifestEntry>& entries) {
  std::map<ClassKey, std::vector<ManifestEntry>> groups;
  for (const auto& e : entries) groups[{e.dataset, e.label}].push_back(e);
  return groups;
}

std::string class_name(const ClassKey& k) { return to_string(k.first) + "/" + k.second; }

}  // namespace

Manifest balance_and_split(const Manifest& manifest, std::size_t per_class, std::array<std::size_t, 3> ratios,
                           std::uint64_t seed) {
  const std::size_t total_ratio = ratios[0] + ratios[1] + ratios[2];
  if (total_ratio == 0 || per_class == 0) throw DataError("balance_and_split: empty ratio or class size");
  const std::size_t n_train = per_class * ratios[0] / total_ratio;
  const std::size_t n_val = per_class * ratios[1] / total_ratio;
  const Rng root(seed);
  Manifest out;
  for (auto& [key, group] : group_by_class(manifest.entries)) {
    if (group.size() < per_class)
      throw DataError("balance_and_split: class '" + class_name(key) + "' has " + std::to_string(group.size()) +
                      " candidates, need " + std::to_string(per_class));
    std::sort(group.begin(), group.end(),
              [](const ManifestEntry& a, const ManifestEntry& b) { return a.clip_id < b.clip_id; });
    Rng rng = root.substream("split/" + class_name(key));
    shuffle(group.begin(), group.end(), rng);
    for (std::size_t i = 0; i < per_class; ++i) {
      ManifestEntry e = group[i];
      e.split = i < n_train ? Split::train : (i < n_train + n_val ? Split::val : Split::test);
      out.entries.push_back(std::move(e));
    }
  }
  std::stable_sort(out.entries.begin(), out.entries.end(), [](const ManifestEntry& a, const ManifestEntry& b) {
    return std::tie(a.dataset, a.label, a.split) < std::tie(b.dataset, b.label, b.split);
  });
  return out;
}

Manifest trim_train(const Manifest& manifest, std::size_t per_class_train, std::uint64_t seed) {
  const Rng root(seed);
  std::set<std::string> dropped;
  std::map<ClassKey, std::vector<std::string>> train_ids;
  for (const auto& e : manifest.entries)
    if (e.split == Split::train) train_ids[{e.dataset, e.label}].push_back(e.clip_id);
  for (auto& [key, ids] : train_ids) {
    if (ids.size() < per_class_train)
      throw DataError("trim_train: class '" + class_name(key) + "' has " + std::to_string(ids.size()) +
                      " training clips, need " + std::to_string(per_class_train));
    std::sort(ids.begin(), ids.end());
    Rng rng = root.substream("trim/" + class_name(key));
    shuffle(ids.begin(), ids.end(), rng);
    for (std::size_t i = per_class_train; i < ids.size(); ++i) dropped.insert(ids[i]);
  }
  Manifest out;
  for (const auto& e : manifest.entries)
    if (!dropped.contains(e.clip_id)) out.entries.push_back(e);
  return out;
}

Tensor<float> to_model_input(const Clip& clip, kernels::Dims3 expected) {
  if (clip.frames != expected[0] || clip.height != expected[1] || clip.width != expected[2])
    throw ShapeError("to_model_input: clip '" + clip.clip_id + "' is " + std::to_string(clip.frames) + "x" +
                     std::to_string(clip.height) + "x" + std::to_string(clip.width) + ", expected " +
                     std::to_string(expected[0]) + "x" + std::to_string(expected[1]) + "x" +
                     std::to_string(expected[2]));
  std::vector<float> data(clip.pixels.size());
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<float>(clip.pixels[i]) / 255.0f;
  return Tensor<float>({1, clip.frames, clip.height, clip.width}, std::move(data));
}

Tensor<float> to_model_batch(std::span<const Clip* const> clips, kernels::Dims3 expected) {
  if (clips.empty()) throw ShapeError("to_model_batch: empty batch");
  const std::size_t volume = expected[0] * expected[1] * expected[2];
  std::vector<float> data(clips.size() * volume);
  for (std::size_t b = 0; b < clips.size(); ++b) {
    const auto one = to_model_input(*clips[b], expected);
    std::copy(one.data().begin(), one.data().end(), data.begin() + static_cast<std::ptrdiff_t>(b * volume));
  }
  return Tensor<float>({clips.size(), 1, expected[0], expected[1], expected[2]}, std::move(data));
}

const std::vector<Example>& TaskData::split(Split s) const {
  switch (s) {
    case Split::train:
      return train;
    case Split::val:
      return val;
    case Split::test:
      return test;
    case Split::unassigned:
      break;
  }
  throw DataError("TaskData: no unassigned split");
}

TaskData load_task(const Manifest& manifest, const fs::path& base_dir, DatasetId dataset,
                   const std::vector<Split>& splits) {
  TaskData task;
  task.dataset = dataset;
  task.labels = manifest.labels(dataset);
  if (task.labels.empty()) throw DataError("manifest has no entries for dataset " + to_string(dataset));
  const auto index = manifest.label_index(dataset);
  for (const auto& e : manifest.entries) {
    if (e.dataset != dataset || e.split == Split::unassigned) continue;
    if (std::find(splits.begin(), splits.end(), e.split) == splits.end()) continue;
    const fs::path p = fs::path(e.path).is_absolute() ? fs::path(e.path) : base_dir / e.path;
    Example ex;
    ex.clip = load_clip(p);
    ex.clip.label = e.label;
    ex.clip.dataset = e.dataset;
    ex.clip.clip_id = e.clip_id;
    ex.label = index.at(e.label);
    (e.split == Split::train ? task.train : e.split == Split::val ? task.val : task.test).push_back(std::move(ex));
  }
  return task;
}

PrepareResult prepare_dataset(const PrepareOptions& o) {
  PrepareResult result;
  result.manifest_path = o.out_dir / "manifest.tsv";
  const fs::path marker = o.out_dir / "prepare.done";
  if (fs::exists(marker) && fs::exists(result.manifest_path)) {
    result.skipped = true;
    return result;
  }

  const Manifest raw = load_manifest(o.raw_manifest);
  const auto boxes = parse_cropboxes(read_text(o.cropboxes));
  Manifest selected = balance_and_split(raw, o.per_class, o.ratios, o.seed);
  selected = trim_train(selected, o.train_per_class, o.seed);
  for (const auto& e : selected.entries)
    if (!boxes.contains(e.clip_id)) throw DataError("prepare: no crop box for clip '" + e.clip_id + "'");

  const fs::path raw_dir = o.raw_manifest.parent_path();
  Manifest prepared;
  for (const auto& e : selected.entries) {
    const fs::path src = fs::path(e.path).is_absolute() ? fs::path(e.path) : raw_dir / e.path;
    Clip c = load_clip(src);
    c.clip_id = e.clip_id;
    c = crop_mouth(standardize_frames(c, o.frames), boxes.at(e.clip_id), o.crop_size);
    const std::string rel = "clips/" + to_string(e.dataset) + "/" + e.clip_id + ".mclp";
    save_clip(o.out_dir / rel, c);
    ManifestEntry out = e;
    out.path = rel;
    prepared.entries.push_back(std::move(out));
    ++result.clips_written;
  }
  save_manifest(result.manifest_path, prepared);
  write_text_atomic(marker, "ok\n");
  return result;
}

}  // namespace mouthnet
