#pragma once

#include <utility>

#include "pulmo/errors.hpp"
#include "pulmo/tensor.hpp"

namespace pulmo {

// Binary tensor [T x feature dims]. The constructor enforces that every
// element is exactly 0 or 1; downstream spiking layers rely on it.
struct SpikeTrain {
  Tensor spikes;

  SpikeTrain() = default;
  explicit SpikeTrain(Tensor t) : spikes(std::move(t)) {
    if (spikes.rank() < 2) {
      throw DimensionError("spike train: need [T, ...features], got " +
                           Tensor::shape_str(spikes.shape()));
    }
    for (std::size_t i = 0; i < spikes.size(); ++i) {
      if (spikes[i] != 0.0f && spikes[i] != 1.0f) {
        throw DomainError("spike train: non-binary element at index " +
                          std::to_string(i));
      }
    }
  }

  std::size_t timesteps() const { return spikes.dim(0); }
  // Elements of one timestep, flattened.
  std::size_t step_size() const { return spikes.size() / spikes.dim(0); }
  const float* step(std::size_t t) const {
    return spikes.data() + t * step_size();
  }
};

}  // namespace pulmo
