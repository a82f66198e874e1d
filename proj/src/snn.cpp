#include "pulmo/snn.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>

#include "pulmo/errors.hpp"
#include "pulmo/rng.hpp"

namespace pulmo::snn {

namespace {

using VecMap = Eigen::Map<Eigen::VectorXf>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXf>;
using MatMapRM = Eigen::Map<
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatMapRM = Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic,
                                                     Eigen::Dynamic,
                                                     Eigen::RowMajor>>;

// g_w [M,N] += dm [M] * x[N]^T
void add_outer(Tensor& g_w, const Tensor& dm, const float* x, std::size_t n) {
  MatMapRM g(g_w.data(), static_cast<Eigen::Index>(dm.size()),
             static_cast<Eigen::Index>(n));
  ConstVecMap d(dm.data(), static_cast<Eigen::Index>(dm.size()));
  ConstVecMap xv(x, static_cast<Eigen::Index>(n));
  g.noalias() += d * xv.transpose();
}

// out [N] = w[M,N]^T * dm[M]
Tensor matvec_transposed(const Tensor& w, const Tensor& dm) {
  Tensor out({w.dim(1)});
  ConstMatMapRM wm(w.data(), static_cast<Eigen::Index>(w.dim(0)),
                   static_cast<Eigen::Index>(w.dim(1)));
  ConstVecMap d(dm.data(), static_cast<Eigen::Index>(dm.size()));
  VecMap o(out.data(), static_cast<Eigen::Index>(out.size()));
  o.noalias() = wm.transpose() * d;
  return out;
}

Tensor kaiming_uniform(std::vector<std::size_t> shape, std::size_t fan_in,
                       Rng& rng) {
  Tensor w(std::move(shape));
  const float bound = std::sqrt(6.0f / static_cast<float>(fan_in));
  for (std::size_t i = 0; i < w.size(); ++i) {
    w[i] = static_cast<float>(rng.uniform(-bound, bound));
  }
  return w;
}

float spike_value(float u, float slope, SpikeMode mode) {
  if (mode == SpikeMode::Binary) return u >= 0.0f ? 1.0f : 0.0f;
  return smooth_spike(u, slope);
}

// One LIF update over a whole layer; m and s are written in place, v updated.
void lif_layer_step(const Tensor& current, Tensor& v, Tensor& m, Tensor& s,
                    const LifParams& p, SpikeMode mode) {
  for (std::size_t i = 0; i < current.size(); ++i) {
    const float mi = p.beta * v[i] + current[i];
    const float si = spike_value(mi - p.v_th, p.surrogate_slope, mode);
    v[i] = mi - si * p.v_th;
    m[i] = mi;
    s[i] = si;
  }
}

// Backward of one LIF layer timestep. ds is dLoss/dspikes at this t; dv is
// the running dLoss/dv(t) carried from t+1 and is replaced by the value for
// t-1. Returns dLoss/dm, which equals dLoss/dI.
Tensor lif_layer_back(const Tensor& m, const Tensor& ds, Tensor& dv,
                      const LifParams& p) {
  Tensor dm(m.shape());
  for (std::size_t i = 0; i < m.size(); ++i) {
    const float g = surrogate_grad(m[i] - p.v_th, p.surrogate_slope);
    const float d = ds[i] * g + dv[i] * (1.0f - p.v_th * g);
    dm[i] = d;
    dv[i] = p.beta * d;
  }
  return dm;
}

}  // namespace

void LifParams::validate() const {
  if (!(beta > 0.0f && beta < 1.0f)) {
    throw DomainError("lif: beta must be in (0,1), got " +
                      std::to_string(beta));
  }
  if (!(v_th > 0.0f)) {
    throw DomainError("lif: v_th must be positive");
  }
  if (!(surrogate_slope > 0.0f)) {
    throw DomainError("lif: surrogate slope must be positive");
  }
}

float surrogate_grad(float u, float slope) {
  const float d = 1.0f + slope * std::fabs(u);
  return 1.0f / (d * d);
}

float smooth_spike(float u, float slope) {
  return u / (1.0f + slope * std::fabs(u));
}

std::pair<Tensor, LifState> lif_step(const LifState& state,
                                     const Tensor& input_current,
                                     const LifParams& params) {
  params.validate();
  if (!state.v.same_shape(input_current)) {
    throw DimensionError("lif_step: state shape " +
                         Tensor::shape_str(state.v.shape()) +
                         " != input shape " +
                         Tensor::shape_str(input_current.shape()));
  }
  if (!input_current.all_finite() || !state.v.all_finite()) {
    throw NumericError("lif_step: non-finite membrane state or current");
  }
  Tensor spikes(input_current.shape());
  LifState next{Tensor(input_current.shape())};
  for (std::size_t i = 0; i < input_current.size(); ++i) {
    const float m = params.beta * state.v[i] + input_current[i];
    const float s = m >= params.v_th ? 1.0f : 0.0f;
    spikes[i] = s;
    next.v[i] = m - s * params.v_th;
  }
  return {std::move(spikes), std::move(next)};
}

float mse_count_loss(const Tensor& counts, int label, std::size_t timesteps,
                     std::pair<float, float> target_rates) {
  if (counts.size() != 2) {
    throw DimensionError("mse_count_loss: expected 2 class counts");
  }
  if (label != 0 && label != 1) {
    throw DomainError("mse_count_loss: label must be 0 or 1, got " +
                      std::to_string(label));
  }
  const auto [r_hi, r_lo] = target_rates;
  if (!(r_lo >= 0.0f && r_lo < r_hi && r_hi <= 1.0f)) {
    throw DomainError("mse_count_loss: need 0 <= r_lo < r_hi <= 1");
  }
  const float T = static_cast<float>(timesteps);
  float loss = 0.0f;
  for (int c = 0; c < 2; ++c) {
    const float target = c == label ? r_hi : r_lo;
    const float diff = counts[static_cast<std::size_t>(c)] / T - target;
    loss += diff * diff;
  }
  return loss * 0.5f;
}

// ---------------------------------------------------------------------------
// SpikingNet
// ---------------------------------------------------------------------------

SpikingNet::SpikingNet(const SpikingNetConfig& cfg) : cfg_(cfg) {
  cfg.lif.validate();
  if (cfg.conv_kernel % 2 == 0) {
    throw ConfigError("spiking net: conv kernel must be odd");
  }
  if (cfg.input_side % cfg.pool_k != 0) {
    throw ConfigError("spiking net: pool size must divide the input side");
  }
  Rng rng(cfg.init_seed);
  const std::size_t k = cfg.conv_kernel;
  conv_w = kaiming_uniform({cfg.conv_filters, cfg.in_channels, k, k},
                           cfg.in_channels * k * k, rng);
  conv_b = Tensor({cfg.conv_filters}, 0.0f);
  fc1_w = kaiming_uniform({cfg.fc_hidden, cfg.flat_size()}, cfg.flat_size(),
                          rng);
  fc1_b = Tensor({cfg.fc_hidden}, 0.0f);
  meta_w = kaiming_uniform({cfg.meta_hidden, cfg.meta_features},
                           cfg.meta_features, rng);
  meta_b = Tensor({cfg.meta_hidden}, 0.0f);
  const std::size_t fused = cfg.fc_hidden + cfg.meta_hidden;
  head_w = kaiming_uniform({2, fused}, fused, rng);
  head_b = Tensor({2}, 0.0f);
  conv_lif = fc1_lif = meta_lif = head_lif = cfg.lif;
}

std::vector<Tensor*> SpikingNet::params() {
  return {&conv_w, &conv_b, &fc1_w, &fc1_b,
          &meta_w, &meta_b, &head_w, &head_b};
}

std::vector<const Tensor*> SpikingNet::params() const {
  return {&conv_w, &conv_b, &fc1_w, &fc1_b,
          &meta_w, &meta_b, &head_w, &head_b};
}

std::vector<std::string> SpikingNet::param_names() const {
  return {"conv.w", "conv.b", "fc1.w", "fc1.b",
          "meta.w", "meta.b", "head.w", "head.b"};
}

Tensor SpikingNet::forward(const SpikeTrain& video, const SpikeTrain& meta,
                           SpikeMode mode, Trace* trace) const {
  const std::size_t T = video.timesteps();
  if (meta.timesteps() != T) {
    throw ProtocolError("snn forward: video has " + std::to_string(T) +
                        " timesteps but metadata has " +
                        std::to_string(meta.timesteps()));
  }
  const std::size_t S = cfg_.input_side;
  const std::size_t C = cfg_.in_channels;
  if (video.spikes.rank() != 4 || video.spikes.dim(1) != C ||
      video.spikes.dim(2) != S || video.spikes.dim(3) != S) {
    throw DimensionError("snn forward: video train " +
                         Tensor::shape_str(video.spikes.shape()) +
                         " does not match configured [T," + std::to_string(C) +
                         "," + std::to_string(S) + "," + std::to_string(S) +
                         "]");
  }
  if (meta.spikes.rank() != 2 || meta.spikes.dim(1) != cfg_.meta_features) {
    throw DimensionError("snn forward: metadata train has wrong feature dim");
  }

  const std::size_t F = cfg_.conv_filters;
  const int pad = static_cast<int>(cfg_.conv_kernel / 2);
  const std::size_t P = cfg_.pooled_side();
  const std::size_t flat = cfg_.flat_size();

  Tensor v_conv({F, S, S}, 0.0f), m_conv({F, S, S}), s_conv({F, S, S});
  Tensor v_fc1({cfg_.fc_hidden}, 0.0f), m_fc1({cfg_.fc_hidden}),
      s_fc1({cfg_.fc_hidden});
  Tensor v_meta({cfg_.meta_hidden}, 0.0f), m_meta({cfg_.meta_hidden}),
      s_meta({cfg_.meta_hidden});
  Tensor v_head({2}, 0.0f), m_head({2}), s_head({2});
  Tensor counts({2}, 0.0f);

  if (trace) {
    *trace = Trace{};
    trace->timesteps = T;
    trace->mode = mode;
  }

  Tensor frame({C, S, S});
  Tensor fused({cfg_.fc_hidden + cfg_.meta_hidden});
  for (std::size_t t = 0; t < T; ++t) {
    std::copy_n(video.step(t), frame.size(), frame.data());

    // spiking conv layer
    Tensor current = conv2d(frame, conv_w, 1, pad);
    for (std::size_t f = 0; f < F; ++f) {
      float* ch = current.data() + f * S * S;
      for (std::size_t i = 0; i < S * S; ++i) ch[i] += conv_b[f];
    }
    lif_layer_step(current, v_conv, m_conv, s_conv, conv_lif, mode);

    // max pool with recorded argmax (first maximum in scan order)
    Tensor pooled({flat});
    std::vector<std::uint32_t> idx(flat);
    {
      const std::size_t k = cfg_.pool_k;
      std::size_t out = 0;
      for (std::size_t f = 0; f < F; ++f) {
        for (std::size_t oy = 0; oy < P; ++oy) {
          for (std::size_t ox = 0; ox < P; ++ox, ++out) {
            float best = -1e30f;
            std::uint32_t best_i = 0;
            for (std::size_t ky = 0; ky < k; ++ky) {
              for (std::size_t kx = 0; kx < k; ++kx) {
                const std::size_t lin =
                    (f * S + oy * k + ky) * S + ox * k + kx;
                if (s_conv[lin] > best) {
                  best = s_conv[lin];
                  best_i = static_cast<std::uint32_t>(lin);
                }
              }
            }
            pooled[out] = best;
            idx[out] = best_i;
          }
        }
      }
    }

    // video FC
    Tensor i_fc1 = linear(pooled, fc1_w, fc1_b);
    lif_layer_step(i_fc1, v_fc1, m_fc1, s_fc1, fc1_lif, mode);

    // metadata FC
    Tensor meta_t({cfg_.meta_features});
    std::copy_n(meta.step(t), meta_t.size(), meta_t.data());
    Tensor i_meta = linear(meta_t, meta_w, meta_b);
    lif_layer_step(i_meta, v_meta, m_meta, s_meta, meta_lif, mode);

    // fused classifier
    std::copy_n(s_fc1.data(), s_fc1.size(), fused.data());
    std::copy_n(s_meta.data(), s_meta.size(),
                fused.data() + s_fc1.size());
    Tensor i_head = linear(fused, head_w, head_b);
    lif_layer_step(i_head, v_head, m_head, s_head, head_lif, mode);

    counts[0] += s_head[0];
    counts[1] += s_head[1];

    if (trace) {
      trace->conv_m.push_back(m_conv);
      trace->pooled.push_back(pooled);
      trace->pool_idx.push_back(std::move(idx));
      trace->fc1_m.push_back(m_fc1);
      trace->fc1_s.push_back(s_fc1);
      trace->meta_m.push_back(m_meta);
      trace->meta_s.push_back(s_meta);
      trace->head_m.push_back(m_head);
      trace->head_s.push_back(s_head);
    }
  }
  return counts;
}

std::vector<Tensor> SpikingNet::backward(const SpikeTrain& video,
                                         const SpikeTrain& meta,
                                         const Trace& trace,
                                         const Tensor& grad_counts) const {
  const std::size_t T = video.timesteps();
  if (trace.timesteps != T || trace.conv_m.size() != T) {
    throw ProtocolError("snn backward: trace does not cover the input train");
  }
  if (grad_counts.size() != 2) {
    throw DimensionError("snn backward: grad_counts must have 2 entries");
  }
  const std::size_t S = cfg_.input_side;
  const std::size_t C = cfg_.in_channels;
  const std::size_t F = cfg_.conv_filters;
  const int pad = static_cast<int>(cfg_.conv_kernel / 2);

  Tensor g_conv_w(conv_w.shape(), 0.0f), g_conv_b(conv_b.shape(), 0.0f);
  Tensor g_fc1_w(fc1_w.shape(), 0.0f), g_fc1_b(fc1_b.shape(), 0.0f);
  Tensor g_meta_w(meta_w.shape(), 0.0f), g_meta_b(meta_b.shape(), 0.0f);
  Tensor g_head_w(head_w.shape(), 0.0f), g_head_b(head_b.shape(), 0.0f);

  Tensor dv_head({2}, 0.0f), dv_fc1({cfg_.fc_hidden}, 0.0f),
      dv_meta({cfg_.meta_hidden}, 0.0f), dv_conv({F, S, S}, 0.0f);

  Tensor frame({C, S, S});
  Tensor fused({cfg_.fc_hidden + cfg_.meta_hidden});
  Tensor ds_head({2});
  for (std::size_t ti = T; ti-- > 0;) {
    // classifier head; every timestep's output spike feeds the counts
    ds_head[0] = grad_counts[0];
    ds_head[1] = grad_counts[1];
    Tensor dm_head = lif_layer_back(trace.head_m[ti], ds_head, dv_head,
                                    head_lif);
    std::copy_n(trace.fc1_s[ti].data(), cfg_.fc_hidden, fused.data());
    std::copy_n(trace.meta_s[ti].data(), cfg_.meta_hidden,
                fused.data() + cfg_.fc_hidden);
    add_outer(g_head_w, dm_head, fused.data(), fused.size());
    for (std::size_t i = 0; i < 2; ++i) g_head_b[i] += dm_head[i];
    Tensor dfused = matvec_transposed(head_w, dm_head);

    // video FC
    Tensor ds_fc1({cfg_.fc_hidden});
    std::copy_n(dfused.data(), cfg_.fc_hidden, ds_fc1.data());
    Tensor dm_fc1 = lif_layer_back(trace.fc1_m[ti], ds_fc1, dv_fc1, fc1_lif);
    add_outer(g_fc1_w, dm_fc1, trace.pooled[ti].data(),
              trace.pooled[ti].size());
    for (std::size_t i = 0; i < dm_fc1.size(); ++i) g_fc1_b[i] += dm_fc1[i];
    Tensor dpool = matvec_transposed(fc1_w, dm_fc1);

    // metadata FC
    Tensor ds_meta({cfg_.meta_hidden});
    std::copy_n(dfused.data() + cfg_.fc_hidden, cfg_.meta_hidden,
                ds_meta.data());
    Tensor dm_meta = lif_layer_back(trace.meta_m[ti], ds_meta, dv_meta,
                                    meta_lif);
    add_outer(g_meta_w, dm_meta, meta.step(ti), cfg_.meta_features);
    for (std::size_t i = 0; i < dm_meta.size(); ++i)
      g_meta_b[i] += dm_meta[i];

    // un-pool onto the conv layer's spikes
    Tensor ds_conv({F, S, S}, 0.0f);
    const auto& idx = trace.pool_idx[ti];
    for (std::size_t j = 0; j < idx.size(); ++j) {
      ds_conv[idx[j]] += dpool[j];
    }
    Tensor dm_conv = lif_layer_back(trace.conv_m[ti], ds_conv, dv_conv,
                                    conv_lif);
    for (std::size_t f = 0; f < F; ++f) {
      const float* ch = dm_conv.data() + f * S * S;
      float acc = 0.0f;
      for (std::size_t i = 0; i < S * S; ++i) acc += ch[i];
      g_conv_b[f] += acc;
    }
    std::copy_n(video.step(ti), frame.size(), frame.data());
    Tensor gw = conv2d_grad_kernels(frame, dm_conv, conv_w.shape(), 1, pad);
    for (std::size_t i = 0; i < g_conv_w.size(); ++i) g_conv_w[i] += gw[i];
  }

  std::vector<Tensor> grads;
  grads.push_back(std::move(g_conv_w));
  grads.push_back(std::move(g_conv_b));
  grads.push_back(std::move(g_fc1_w));
  grads.push_back(std::move(g_fc1_b));
  grads.push_back(std::move(g_meta_w));
  grads.push_back(std::move(g_meta_b));
  grads.push_back(std::move(g_head_w));
  grads.push_back(std::move(g_head_b));
  return grads;
}

float bptt_train_step(SpikingNet& net, const std::vector<EncodedSample>& batch,
                      optim::Adam& opt, const TrainHyper& hyper) {
  if (batch.empty()) {
    throw DomainError("bptt_train_step: empty batch");
  }
  const std::size_t T = batch.front().video.timesteps();
  for (const auto& s : batch) {
    if (s.video.timesteps() != T || s.meta.timesteps() != T) {
      throw ProtocolError("bptt_train_step: samples disagree on timesteps");
    }
  }

  std::vector<float> losses(batch.size(), 0.0f);
  std::vector<std::vector<Tensor>> grads(batch.size());
  parallel_for(0, batch.size(), [&](std::size_t i) {
    const EncodedSample& s = batch[i];
    SpikingNet::Trace trace;
    Tensor counts = net.forward(s.video, s.meta, SpikeMode::Binary, &trace);
    losses[i] = mse_count_loss(counts, s.label, T, {hyper.r_hi, hyper.r_lo});
    Tensor grad_counts({2});
    const float Tf = static_cast<float>(T);
    for (int c = 0; c < 2; ++c) {
      const float target = c == s.label ? hyper.r_hi : hyper.r_lo;
      grad_counts[static_cast<std::size_t>(c)] =
          (counts[static_cast<std::size_t>(c)] / Tf - target) / Tf;
    }
    grads[i] = net.backward(s.video, s.meta, trace, grad_counts);
  });

  // fixed-order reduction keeps the step independent of the worker count
  std::vector<Tensor> total = std::move(grads[0]);
  for (std::size_t i = 1; i < grads.size(); ++i) {
    for (std::size_t p = 0; p < total.size(); ++p) {
      for (std::size_t j = 0; j < total[p].size(); ++j) {
        total[p][j] += grads[i][p][j];
      }
    }
  }
  const float inv = 1.0f / static_cast<float>(batch.size());
  float mean_loss = 0.0f;
  for (float l : losses) mean_loss += l * inv;
  const auto names = net.param_names();
  for (std::size_t p = 0; p < total.size(); ++p) {
    for (std::size_t j = 0; j < total[p].size(); ++j) {
      total[p][j] *= inv;
      if (!std::isfinite(total[p][j])) {
        throw TrainingError("bptt_train_step: non-finite gradient in layer " +
                            names[p]);
      }
    }
  }
  opt.step(net.params(), total);
  return mean_loss;
}

Prediction predict_cycle(const SpikingNet& net, const SpikeTrain& video,
                         const SpikeTrain& meta) {
  const Tensor counts = net.forward(video, meta);
  Prediction p;
  p.counts[0] = counts[0];
  p.counts[1] = counts[1];
  // argmax; exact tie goes to Abnormal
  p.label = counts[0] > counts[1] ? spiro::SpiroClass::Normal
                                  : spiro::SpiroClass::Abnormal;
  p.confidence = std::fabs(counts[0] - counts[1]) /
                 static_cast<float>(video.timesteps());
  return p;
}

}  // namespace pulmo::snn
