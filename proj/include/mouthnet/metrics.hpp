#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "mouthnet/datapipe.hpp"
#include "mouthnet/models.hpp"

namespace mouthnet {

// First index of the maximum.
std::size_t argmax(std::span<const float> values);

// Eval-mode predictions of one head, computed in chunks of batch_size.
std::vector<std::size_t> predict(ModelAssembly<float>& model, std::span<const Example> examples,
                                 std::string_view head, std::size_t batch_size = 64);

// Percentage of examples whose prediction equals the label. Throws
// std::invalid_argument on an empty set.
double top1_accuracy(ModelAssembly<float>& model, std::span<const Example> examples, std::string_view head,
                     std::size_t batch_size = 64);

// Same metric on precomputed predictions.
double top1_accuracy(std::span<const std::size_t> predictions, std::span<const std::size_t> labels);

}  // namespace mouthnet
