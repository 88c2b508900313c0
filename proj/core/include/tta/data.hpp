#pragma once

#include <functional>
#include <vector>

#include "tta/tensor.hpp"

namespace tta {

/// Paired (input, target) images with stable sample ids.
struct PairedDataset {
  std::vector<Tensor> inputs;
  std::vector<Tensor> targets;
  std::vector<int> ids;

  std::size_t size() const { return inputs.size(); }
  bool empty() const { return inputs.empty(); }
};

/// Per-epoch mean training loss.
struct TrainReport {
  std::vector<double> epoch_loss;
};

struct TrainOptions {
  int batch_size = 8;
  /// Called after each epoch with (epoch, mean loss); may be empty.
  std::function<void(int, double)> on_epoch;
};

}  // namespace tta
