#include "mouthnet/checkpoint.hpp"

#include <cstring>
#include <limits>
#include <set>

namespace mouthnet {

namespace {

constexpr char kMagic[4] = {'M', 'C', 'K', 'P'};

void write_tensor(ByteWriter& w, const std::string& name, const Tensor<float>& t) {
  if (name.size() > std::numeric_limits<std::uint16_t>::max())
    throw std::invalid_argument("checkpoint: tensor name too long");
  if (t.rank() > std::numeric_limits<std::uint8_t>::max())
    throw std::invalid_argument("checkpoint: tensor rank too large");
  w.u16(static_cast<std::uint16_t>(name.size()));
  w.raw(name.data(), name.size());
  w.u8(static_cast<std::uint8_t>(t.rank()));
  for (auto d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
  for (float v : t.data()) w.f32(v);
}

std::pair<std::string, Tensor<float>> read_tensor(ByteReader& r) {
  const std::size_t name_len = r.u16();
  std::string name = r.str(name_len);
  const std::size_t rank = r.u8();
  Shape shape(rank);
  std::size_t count = 1;
  for (auto& d : shape) {
    d = r.u32();
    if (d == 0) throw FormatError(FormatError::Kind::corrupt, "checkpoint: tensor '" + name + "' has a zero dim");
    if (count > std::numeric_limits<std::size_t>::max() / d)
      throw FormatError(FormatError::Kind::corrupt, "checkpoint: tensor '" + name + "' is too large");
    count *= d;
  }
  if (count > r.remaining() / 4)
    throw FormatError(FormatError::Kind::truncated,
                      "checkpoint: payload of '" + name + "' exceeds the remaining " +
                          std::to_string(r.remaining()) + " bytes");
  std::vector<float> data(count);
  for (auto& v : data) v = r.f32();
  return {std::move(name), Tensor<float>(std::move(shape), std::move(data))};
}

std::string moment_name(const char* which, const std::string& param) { return std::string("adam.") + which + "/" + param; }

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  ByteWriter w;
  w.raw(kMagic, 4);
  w.u8(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) write_tensor(w, name, t);
  w.u32(ckpt.epoch);
  w.f64(ckpt.best_val);
  w.u64(ckpt.rng_seed);
  w.u64(ckpt.rng_counter);
  w.u64(ckpt.adam.step);
  w.u32(static_cast<std::uint32_t>(ckpt.adam.m.size() + ckpt.adam.v.size()));
  for (const auto& [name, t] : ckpt.adam.m) write_tensor(w, moment_name("m", name), t);
  for (const auto& [name, t] : ckpt.adam.v) write_tensor(w, moment_name("v", name), t);
  return std::move(w.bytes());
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes.data(), bytes.size(), "checkpoint");
  r.need(4);
  if (std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw FormatError(FormatError::Kind::bad_magic, "checkpoint: missing MCKP magic");
  r.str(4);
  const auto version = r.u8();
  if (version != kCheckpointVersion)
    throw FormatError(FormatError::Kind::version_mismatch,
                      "checkpoint: version " + std::to_string(version) + " is not supported");
  Checkpoint ckpt;
  const std::uint32_t count = r.u32();
  std::set<std::string> seen;
  for (std::uint32_t i = 0; i < count; ++i) {
    auto entry = read_tensor(r);
    if (!seen.insert(entry.first).second)
      throw FormatError(FormatError::Kind::corrupt, "checkpoint: duplicate tensor '" + entry.first + "'");
    ckpt.tensors.push_back(std::move(entry));
  }
  ckpt.epoch = r.u32();
  ckpt.best_val = r.f64();
  ckpt.rng_seed = r.u64();
  ckpt.rng_counter = r.u64();
  ckpt.adam.step = r.u64();
  const std::uint32_t moments = r.u32();
  for (std::uint32_t i = 0; i < moments; ++i) {
    auto [name, t] = read_tensor(r);
    if (name.rfind("adam.m/", 0) == 0) {
      ckpt.adam.m.emplace_back(name.substr(7), t);
    } else if (name.rfind("adam.v/", 0) == 0) {
      ckpt.adam.v.emplace_back(name.substr(7), t);
    } else {
      throw FormatError(FormatError::Kind::corrupt, "checkpoint: unexpected optimizer tensor '" + name + "'");
    }
  }
  if (r.remaining() != 0)
    throw FormatError(FormatError::Kind::corrupt,
                      "checkpoint: " + std::to_string(r.remaining()) + " trailing bytes");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_file_atomic(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  try {
    return decode_checkpoint(bytes);
  } catch (const FormatError& e) {
    throw FormatError(e.kind(), path.string() + ": " + e.what());
  }
}

NamedTensors<float> snapshot_tensors(const ModelAssembly<float>& model) {
  NamedTensors<float> out;
  for (const auto& [name, t] : model.named_parameters()) out.emplace_back(name, t.detach().clone());
  for (const auto& [name, t] : model.named_buffers()) out.emplace_back(name, t.detach().clone());
  return out;
}

void load_into_model(const Checkpoint& ckpt, ModelAssembly<float>& model) {
  auto targets = model.named_parameters();
  for (auto& b : model.named_buffers()) targets.push_back(b);
  std::set<std::string> expected;
  for (const auto& [name, t] : targets) expected.insert(name);
  for (const auto& [name, t] : ckpt.tensors)
    if (!expected.count(name))
      throw FormatError(FormatError::Kind::corrupt, "checkpoint: unknown tensor '" + name + "' for this model");
  for (auto& [name, target] : targets) {
    const Tensor<float>* source = nullptr;
    for (const auto& [n, t] : ckpt.tensors)
      if (n == name) source = &t;
    if (!source) throw FormatError(FormatError::Kind::corrupt, "checkpoint: missing tensor '" + name + "'");
    if (source->shape() != target.shape())
      throw FormatError(FormatError::Kind::corrupt, "checkpoint: tensor '" + name + "' is " +
                                                        shape_str(source->shape()) + ", model expects " +
                                                        shape_str(target.shape()));
    auto dst = target.mutable_data();
    std::copy(source->data().begin(), source->data().end(), dst.begin());
  }
}

bool same_tensors(const NamedTensors<float>& a, const NamedTensors<float>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].first != b[i].first || a[i].second.shape() != b[i].second.shape()) return false;
    const auto x = a[i].second.data(), y = b[i].second.data();
    if (std::memcmp(x.data(), y.data(), x.size() * sizeof(float)) != 0) return false;
  }
  return true;
}

}  // namespace mouthnet
