#include "mouthnet/metrics.hpp"

#include <algorithm>
#include <stdexcept>

namespace mouthnet {

std::size_t argmax(std::span<const float> values) {
  if (values.empty()) throw std::invalid_argument("argmax: empty input");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

std::vector<std::size_t> predict(ModelAssembly<float>& model, std::span<const Example> examples,
                                 std::string_view head, std::size_t batch_size) {
  if (batch_size == 0) throw std::invalid_argument("predict: batch_size must be positive");
  NoGradGuard no_grad;
  const kernels::Dims3 dims{model.spec.frames, model.spec.height, model.spec.width};
  std::vector<std::size_t> out;
  out.reserve(examples.size());
  for (std::size_t start = 0; start < examples.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, examples.size() - start);
    std::vector<const Clip*> clips(n);
    for (std::size_t i = 0; i < n; ++i) clips[i] = &examples[start + i].clip;
    const auto trunk = forward_trunk(model, to_model_batch(clips, dims), RunMode::eval);
    const auto logits = forward_head(model, trunk.summary, head);
    const std::size_t width = logits.dim(1);
    for (std::size_t i = 0; i < n; ++i) out.push_back(argmax(logits.data().subspan(i * width, width)));
  }
  return out;
}

double top1_accuracy(std::span<const std::size_t> predictions, std::span<const std::size_t> labels) {
  if (labels.empty()) throw std::invalid_argument("top1_accuracy: empty evaluation set");
  if (predictions.size() != labels.size())
    throw std::invalid_argument("top1_accuracy: " + std::to_string(predictions.size()) + " predictions for " +
                                std::to_string(labels.size()) + " labels");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += predictions[i] == labels[i];
  return 100.0 * static_cast<double>(hits) / static_cast<double>(labels.size());
}

double top1_accuracy(ModelAssembly<float>& model, std::span<const Example> examples, std::string_view head,
                     std::size_t batch_size) {
  if (examples.empty()) throw std::invalid_argument("top1_accuracy: empty evaluation set");
  const auto pred = predict(model, examples, head, batch_size);
  std::vector<std::size_t> labels(examples.size());
  for (std::size_t i = 0; i < examples.size(); ++i) labels[i] = examples[i].label;
  return top1_accuracy(pred, labels);
}

}  // namespace mouthnet
