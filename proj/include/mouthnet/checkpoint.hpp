#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "mouthnet/io.hpp"
#include "mouthnet/models.hpp"
#include "mouthnet/optim.hpp"

namespace mouthnet {

// "MCKP" v1, little-endian:
//   magic, u8 version, u32 tensor count,
//   per tensor: u16 name length, name, u8 rank, u32 dims..., f32 payload,
//   u32 epoch, f64 best_val, u64 rng seed, u64 rng counter,
//   u64 adam step, u32 adam tensor count, then adam tensors in the same
//   per-tensor layout named "adam.m/<param>" and "adam.v/<param>".
inline constexpr std::uint8_t kCheckpointVersion = 1;

struct Checkpoint {
  NamedTensors<float> tensors;  // parameters followed by batch-norm buffers
  std::uint32_t epoch = 0;
  double best_val = 0.0;
  std::uint64_t rng_seed = 0;
  std::uint64_t rng_counter = 0;
  AdamState adam;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
// Throws FormatError (bad_magic, truncated, version_mismatch, corrupt).
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Deep copy of the model's parameters and buffers.
NamedTensors<float> snapshot_tensors(const ModelAssembly<float>& model);

// Copies every stored tensor into the model. Unknown names, missing names
// and shape mismatches throw FormatError(corrupt) naming the tensor.
void load_into_model(const Checkpoint& ckpt, ModelAssembly<float>& model);

// Bitwise equality of names, shapes and payloads.
bool same_tensors(const NamedTensors<float>& a, const NamedTensors<float>& b);

}  // namespace mouthnet
