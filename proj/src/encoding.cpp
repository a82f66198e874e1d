#include "pulmo/encoding.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "pulmo/errors.hpp"
#include "pulmo/rng.hpp"

namespace pulmo::enc {

const std::array<const char*, kMetaFeatures> kMetaFeatureNames = {
    "age",     "height_cm",      "weight_kg",          "smoking_duration",
    "athlete", "seasonal_cough", "lung_past_problems", "lung_genetic_problems",
};

Tensor normalize_clip(const Tensor& clip) {
  if (clip.empty()) {
    throw DimensionError("normalize_clip: empty clip");
  }
  if (!clip.all_finite()) {
    throw NumericError("normalize_clip: non-finite pixel values");
  }
  const float lo = clip.min();
  const float hi = clip.max();
  Tensor out(clip.shape());
  if (hi == lo) {
    out.fill(0.5f);
    return out;
  }
  const float inv = 1.0f / (hi - lo);
  for (std::size_t i = 0; i < clip.size(); ++i) {
    out[i] = (clip[i] - lo) * inv;
  }
  return out;
}

Tensor downscale_clip(const Tensor& clip, std::size_t side) {
  if (clip.rank() != 4) {
    throw DimensionError("downscale_clip: expected [T,C,H,W], got " +
                         Tensor::shape_str(clip.shape()));
  }
  const std::size_t T = clip.dim(0), C = clip.dim(1), H = clip.dim(2),
                    W = clip.dim(3);
  if (side == 0 || H % side != 0 || W % side != 0) {
    throw DimensionError("downscale_clip: side " + std::to_string(side) +
                         " must divide " + std::to_string(H) + "x" +
                         std::to_string(W));
  }
  if (side == H && side == W) return clip;
  const std::size_t fy = H / side, fx = W / side;
  const float inv = 1.0f / static_cast<float>(fy * fx);
  Tensor out({T, C, side, side});
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t c = 0; c < C; ++c) {
      const float* src = clip.data() + ((t * C + c) * H) * W;
      float* dst = out.data() + ((t * C + c) * side) * side;
      for (std::size_t oy = 0; oy < side; ++oy) {
        for (std::size_t ox = 0; ox < side; ++ox) {
          float acc = 0.0f;
          for (std::size_t ky = 0; ky < fy; ++ky) {
            const float* row = src + (oy * fy + ky) * W + ox * fx;
            for (std::size_t kx = 0; kx < fx; ++kx) acc += row[kx];
          }
          dst[oy * side + ox] = acc * inv;
        }
      }
    }
  }
  return out;
}

SpikeTrain rate_encode(const Tensor& normalized, const EncoderConfig& cfg) {
  if (cfg.timesteps_per_frame < 1) {
    throw ConfigError("rate_encode: timesteps_per_frame must be >= 1");
  }
  if (normalized.rank() < 2) {
    throw DimensionError("rate_encode: expected [T, ...dims] input, got " +
                         Tensor::shape_str(normalized.shape()));
  }
  for (std::size_t i = 0; i < normalized.size(); ++i) {
    const float v = normalized[i];
    if (!(v >= 0.0f && v <= 1.0f)) {
      throw DomainError("rate_encode: value " + std::to_string(v) +
                        " outside [0,1] at index " + std::to_string(i));
    }
  }
  const std::size_t frames = normalized.dim(0);
  const std::size_t per_frame = normalized.size() / frames;
  const std::size_t reps = static_cast<std::size_t>(cfg.timesteps_per_frame);

  std::vector<std::size_t> out_shape = normalized.shape();
  out_shape[0] = frames * reps;
  Tensor spikes(out_shape);

  Rng rng(cfg.seed);
  float* dst = spikes.data();
  for (std::size_t f = 0; f < frames; ++f) {
    const float* src = normalized.data() + f * per_frame;
    for (std::size_t r = 0; r < reps; ++r) {
      for (std::size_t i = 0; i < per_frame; ++i) {
        *dst++ = rng.uniform() < src[i] ? 1.0f : 0.0f;
      }
    }
  }
  return SpikeTrain(std::move(spikes));
}

MetadataStats MetadataStats::fit(
    const std::vector<data::MetadataRecord>& records) {
  if (records.empty()) {
    throw DomainError("metadata stats: no training records");
  }
  MetadataStats s;
  s.min.fill(std::numeric_limits<double>::infinity());
  s.max.fill(-std::numeric_limits<double>::infinity());
  for (const auto& r : records) {
    const double vals[kNumericMetaFeatures] = {r.age, r.height_cm, r.weight_kg,
                                               r.smoking_duration_years};
    for (std::size_t i = 0; i < kNumericMetaFeatures; ++i) {
      if (!std::isfinite(vals[i])) {
        throw IngestionError(std::string("metadata stats: field '") +
                             kMetaFeatureNames[i] + "' not finite for subject " +
                             r.subject_id);
      }
      s.min[i] = std::min(s.min[i], vals[i]);
      s.max[i] = std::max(s.max[i], vals[i]);
    }
  }
  return s;
}

Tensor meta_feature_probs(const data::MetadataRecord& record,
                          const MetadataStats& stats) {
  Tensor p({kMetaFeatures});
  const double vals[kNumericMetaFeatures] = {record.age, record.height_cm,
                                             record.weight_kg,
                                             record.smoking_duration_years};
  for (std::size_t i = 0; i < kNumericMetaFeatures; ++i) {
    if (!std::isfinite(vals[i])) {
      throw IngestionError(std::string("encode_metadata: field '") +
                           kMetaFeatureNames[i] + "' missing for subject " +
                           record.subject_id);
    }
    double v;
    if (stats.max[i] == stats.min[i]) {
      v = 0.5;  // degenerate training range
    } else {
      v = (vals[i] - stats.min[i]) / (stats.max[i] - stats.min[i]);
    }
    p[i] = static_cast<float>(std::clamp(v, 0.05, 0.95));
  }
  const bool flags[4] = {record.athlete, record.seasonal_cough,
                         record.lung_past_problems,
                         record.lung_genetic_problems};
  for (std::size_t i = 0; i < 4; ++i) {
    p[kNumericMetaFeatures + i] = flags[i] ? 0.95f : 0.05f;
  }
  return p;
}

SpikeTrain encode_metadata(const data::MetadataRecord& record,
                           const MetadataStats& stats,
                           const EncoderConfig& cfg) {
  const Tensor p = meta_feature_probs(record, stats);
  const std::size_t T =
      cfg.metadata_T > 0
          ? static_cast<std::size_t>(cfg.metadata_T)
          : static_cast<std::size_t>(30 * cfg.timesteps_per_frame);
  Tensor spikes({T, kMetaFeatures});
  Rng rng(cfg.seed);
  float* dst = spikes.data();
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t i = 0; i < kMetaFeatures; ++i) {
      *dst++ = rng.uniform() < p[i] ? 1.0f : 0.0f;
    }
  }
  return SpikeTrain(std::move(spikes));
}

}  // namespace pulmo::enc
