#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "pulmo/encoding.hpp"
#include "pulmo/optim.hpp"
#include "pulmo/spikes.hpp"
#include "pulmo/spirometry.hpp"
#include "pulmo/tensor.hpp"

namespace pulmo::snn {

// Leaky integrate-and-fire neuron parameters.
struct LifParams {
  float beta = 0.9f;             // membrane decay in (0,1)
  float v_th = 1.0f;             // firing threshold, > 0
  float surrogate_slope = 25.0f; // sharpness of the smoothed Heaviside

  void validate() const;
};

// Per-neuron membrane potentials of one layer.
struct LifState {
  Tensor v;
};

// d/du of the smoothed Heaviside: 1 / (1 + k|u|)^2. Peaks at u = 0.
float surrogate_grad(float u, float slope);

// Antiderivative of surrogate_grad: u / (1 + k|u|). Used as the spike
// function when running a net in smooth mode so analytic gradients can be
// checked against finite differences of the very same forward pass.
float smooth_spike(float u, float slope);

// One membrane update: m = beta*v + I; spike iff m >= v_th; v' = m - s*v_th.
// Returns binary spikes and the new state.
std::pair<Tensor, LifState> lif_step(const LifState& state,
                                     const Tensor& input_current,
                                     const LifParams& params);

// Spike loss on output counts: mean over classes of (count/T - target)^2
// where target = r_hi for the true class and r_lo otherwise.
float mse_count_loss(const Tensor& counts, int label, std::size_t timesteps,
                     std::pair<float, float> target_rates);

enum class SpikeMode : std::uint8_t {
  Binary,  // hard threshold; surrogate used only in the backward pass
  Smooth,  // smooth_spike in the forward pass; gradients are exact
};

// ---------------------------------------------------------------------------
// PulmoFusion spiking classifier: spiking conv2d -> max-pool -> flatten ->
// spiking FC, a spiking FC branch over metadata spikes, and a spiking FC
// classifier over the concatenated features. Output spike counts over T
// timesteps drive both the loss and the predicted class.
// ---------------------------------------------------------------------------

struct SpikingNetConfig {
  std::size_t input_side = 28;  // encoded frame is input_side x input_side
  std::size_t in_channels = 1;
  std::size_t conv_filters = 8;
  std::size_t conv_kernel = 5;  // odd; padded to keep the frame size
  std::size_t pool_k = 2;
  std::size_t fc_hidden = 128;
  std::size_t meta_hidden = 16;
  std::size_t meta_features = enc::kMetaFeatures;
  LifParams lif;
  std::uint64_t init_seed = 1;

  std::size_t pooled_side() const { return input_side / pool_k; }
  std::size_t flat_size() const {
    return conv_filters * pooled_side() * pooled_side();
  }
};

struct EncodedSample {
  SpikeTrain video;  // [T, C, S, S]
  SpikeTrain meta;   // [T, meta_features]
  int label = 0;     // 0 = Normal, 1 = Abnormal
};

struct TrainHyper {
  float r_hi = 0.8f;
  float r_lo = 0.2f;
};

class SpikingNet {
 public:
  explicit SpikingNet(const SpikingNetConfig& cfg);

  const SpikingNetConfig& config() const { return cfg_; }

  // Recorded per-timestep intermediates; enough to run BPTT.
  struct Trace {
    std::vector<Tensor> conv_m, pooled, fc1_m, fc1_s, meta_m, meta_s, head_m,
        head_s;
    std::vector<std::vector<std::uint32_t>> pool_idx;  // argmax per window
    std::size_t timesteps = 0;
    SpikeMode mode = SpikeMode::Binary;
  };

  // Runs T timesteps and returns per-class output spike counts (shape [2]).
  // A trace is recorded when the pointer is non-null. Pure given (net,
  // inputs); safe to call concurrently without a trace.
  Tensor forward(const SpikeTrain& video, const SpikeTrain& meta,
                 SpikeMode mode = SpikeMode::Binary,
                 Trace* trace = nullptr) const;

  // BPTT with the surrogate derivative standing in for H' at every spike.
  // grad_counts is dLoss/dcounts (shape [2]). Returns gradients in params()
  // order. Throws ProtocolError if the trace does not match the inputs.
  std::vector<Tensor> backward(const SpikeTrain& video, const SpikeTrain& meta,
                               const Trace& trace,
                               const Tensor& grad_counts) const;

  std::vector<Tensor*> params();
  std::vector<const Tensor*> params() const;
  std::vector<std::string> param_names() const;

  // weights/biases exposed for checkpointing
  Tensor conv_w, conv_b, fc1_w, fc1_b, meta_w, meta_b, head_w, head_b;
  LifParams conv_lif, fc1_lif, meta_lif, head_lif;

 private:
  SpikingNetConfig cfg_;
};

// One Adam step on a batch; returns the mean batch loss. Per-sample gradient
// work fans across the configured worker threads; accumulation order is
// fixed, so results do not depend on the thread count.
float bptt_train_step(SpikingNet& net, const std::vector<EncodedSample>& batch,
                      optim::Adam& opt, const TrainHyper& hyper);

struct Prediction {
  spiro::SpiroClass label = spiro::SpiroClass::Abnormal;
  float confidence = 0.0f;  // |count0 - count1| / T
  float counts[2] = {0.0f, 0.0f};
};

// argmax + tie rule applied to raw class counts (class 0 = Normal).
Prediction decide_from_counts(const Tensor& counts, std::size_t timesteps);

// argmax of class spike counts; ties predict Abnormal.
Prediction predict_cycle(const SpikingNet& net, const SpikeTrain& video,
                         const SpikeTrain& meta);

}  // namespace pulmo::snn
