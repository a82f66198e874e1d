#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "pulmo/data.hpp"
#include "pulmo/spikes.hpp"
#include "pulmo/tensor.hpp"

namespace pulmo::enc {

struct EncoderConfig {
  int timesteps_per_frame = 1;  // Bernoulli draws per frame
  std::uint64_t seed = 0;
  int metadata_T = 0;  // total metadata timesteps; 0 = match the video T
};

// Metadata feature layout used by both the spiking and the CNN path:
// 4 numeric features followed by 4 boolean flags.
inline constexpr std::size_t kNumericMetaFeatures = 4;
inline constexpr std::size_t kMetaFeatures = 8;
extern const std::array<const char*, kMetaFeatures> kMetaFeatureNames;

// Per-feature min/max over the *training* subjects only; persisting this with
// the model keeps test folds out of the normalization.
struct MetadataStats {
  std::array<double, kNumericMetaFeatures> min{};
  std::array<double, kNumericMetaFeatures> max{};

  static MetadataStats fit(const std::vector<data::MetadataRecord>& records);
};

// Per-clip min-max scaling to [0,1]; a constant clip maps to all 0.5.
Tensor normalize_clip(const Tensor& clip);

// Average-pools the spatial axes of a normalized [T,C,H,W] clip down to
// [T,C,side,side]. side must divide H and W. Values stay in [0,1].
Tensor downscale_clip(const Tensor& clip, std::size_t side);

// Independent Bernoulli spikes, p = element value, timesteps_per_frame draws
// per frame. Input [T, ...dims] -> train [T*timesteps_per_frame, ...dims].
SpikeTrain rate_encode(const Tensor& normalized, const EncoderConfig& cfg);

// Normalized feature probabilities for one record: numeric features min-max
// scaled then clipped to [0.05, 0.95]; booleans map to 0.95 / 0.05.
Tensor meta_feature_probs(const data::MetadataRecord& record,
                          const MetadataStats& stats);

// Rate-codes the feature probabilities over metadata_T timesteps.
SpikeTrain encode_metadata(const data::MetadataRecord& record,
                           const MetadataStats& stats,
                           const EncoderConfig& cfg);

}  // namespace pulmo::enc
