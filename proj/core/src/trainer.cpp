#include "depthref/trainer.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "depthref/checkpoint.hpp"
#include "depthref/parallel.hpp"
#include "depthref/rng.hpp"

namespace depthref {

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("train: epochs must be at least 1");
  if (batch_size < 1) throw std::invalid_argument("train: batch_size must be at least 1");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("train: learning_rate must be positive");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    throw std::invalid_argument("train: Adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw std::invalid_argument("train: adam_eps must be positive");
  if (!(z_cap > 0.0)) throw std::invalid_argument("train: z_cap must be positive");
  if (d_max && *d_max < 1) throw std::invalid_argument("train: d_max must be at least 1");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) {
    throw std::invalid_argument("train: val_fraction must lie in [0, 1)");
  }
  if (!(flip_probability >= 0.0 && flip_probability <= 1.0)) {
    throw std::invalid_argument("train: flip_probability must lie in [0, 1]");
  }
  net.validate();
}

AdamState AdamState::zeros_like(const std::vector<ad::Tensor>& params) {
  AdamState s;
  for (const auto& p : params) {
    s.m.emplace_back(p.shape(), 0.0);
    s.v.emplace_back(p.shape(), 0.0);
  }
  return s;
}

void adam_step(std::vector<ad::Tensor>& params, const std::vector<ad::Tensor>& grads,
               AdamState& state, const TrainConfig& cfg) {
  if (grads.size() != params.size() || state.m.size() != params.size() ||
      state.v.size() != params.size()) {
    throw std::invalid_argument("adam_step: parameter, gradient and moment counts differ");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (grads[k].shape() != params[k].shape() || state.m[k].shape() != params[k].shape() ||
        state.v[k].shape() != params[k].shape()) {
      throw std::invalid_argument(fmt::format("adam_step: shape mismatch at parameter {}", k));
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.adam_beta1, t);
  const double c2 = 1.0 - std::pow(cfg.adam_beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& m = state.m[k];
    auto& v = state.v[k];
    for (std::size_t i = 0; i < params[k].numel(); ++i) {
      const double g = grads[k][i];
      m[i] = cfg.adam_beta1 * m[i] + (1.0 - cfg.adam_beta1) * g;
      v[i] = cfg.adam_beta2 * v[i] + (1.0 - cfg.adam_beta2) * g * g;
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      params[k][i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.adam_eps);
    }
  }
}

int resolve_d_max(std::optional<int> explicit_d_max, const Manifest& manifest) {
  if (explicit_d_max) return *explicit_d_max;
  if (manifest.d_max) return *manifest.d_max;
  return MatchParams{}.d_max;
}

PreparedSample prepare_sample(const LoadedSample& sample, const CameraRig& rig,
                              const MatchParams& match, double d_max, double z_cap) {
  PreparedSample p;
  p.name = sample.name;
  p.left = sample.left;
  p.d_gt = sample.d_gt;
  // Depth ground truth is re-derived from d_gt in 64 bits; the 32-bit depth
  // file would otherwise add rounding noise of a few micrometres.
  p.z_gt = disparity_to_depth(sample.d_gt, rig);
  for (std::size_t i = 0; i < p.z_gt.size(); ++i) {
    if (!sample.z_gt.valid(i)) p.z_gt.invalidate(i);
  }
  const ScalarField disparity =
      sample.d_baseline ? *sample.d_baseline : compute_disparity(sample.left, sample.right, match);
  p.baseline = make_baseline_view(sample.right, disparity, rig);
  p.input = prepare_inputs(p.baseline.z_a, sample.left, p.baseline.warped, z_cap);
  p.mask = supervision_mask(p.z_gt, p.d_gt, p.baseline.z_a, d_max, z_cap);
  return p;
}

double refined_depth_error(const RefineNetwork& net, const std::vector<PreparedSample>& samples,
                           HeadMode head) {
  std::vector<double> sums(samples.size(), 0.0);
  std::vector<std::size_t> counts(samples.size(), 0);
  parallel_for(samples.size(), [&](std::size_t k) {
    const PreparedSample& s = samples[k];
    const ScalarField z = apply_head(s.baseline.z_a, net.infer(s.input), head);
    for (std::size_t i = 0; i < s.mask.size(); ++i) {
      if (!s.mask[i]) continue;
      sums[k] += std::abs(z[i] - s.z_gt[i]);
      ++counts[k];
    }
  });
  const double sum = std::accumulate(sums.begin(), sums.end(), 0.0);
  const std::size_t count = std::accumulate(counts.begin(), counts.end(), std::size_t{0});
  return count > 0 ? sum / static_cast<double>(count) : std::numeric_limits<double>::quiet_NaN();
}

namespace {

ad::Tensor flip_tensor(const ad::Tensor& t) {
  ad::Tensor out(t.shape(), 0.0);
  const std::size_t w = t.dim(3);
  for (std::size_t n = 0; n < t.dim(0); ++n)
    for (std::size_t c = 0; c < t.dim(1); ++c)
      for (std::size_t y = 0; y < t.dim(2); ++y)
        for (std::size_t x = 0; x < w; ++x) out.at(n, c, y, x) = t.at(n, c, y, w - 1 - x);
  return out;
}

std::vector<std::uint8_t> flip_mask(const std::vector<std::uint8_t>& m, std::size_t w) {
  std::vector<std::uint8_t> out(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) out[i] = m[(i / w) * w + (w - 1 - i % w)];
  return out;
}

struct SampleGrad {
  double loss = 0.0;
  std::vector<ad::Tensor> grads;
};

SampleGrad sample_gradient(const RefineNetwork& net, const PreparedSample& s, bool flip,
                           HeadMode head) {
  ad::Tape tape;
  const auto params = net.register_params(tape);
  const std::size_t w = s.z_gt.width();
  ad::Var f;
  ad::Var loss;
  if (flip) {
    f = net.forward(tape, tape.constant(flip_tensor(s.input)), params);
    loss = loss_range_invariant(tape, s.z_gt.flipped_horizontally(),
                                s.baseline.z_a.flipped_horizontally(), f, flip_mask(s.mask, w), head);
  } else {
    f = net.forward(tape, tape.constant(s.input), params);
    loss = loss_range_invariant(tape, s.z_gt, s.baseline.z_a, f, s.mask, head);
  }
  SampleGrad out;
  out.loss = tape.value(loss)[0];
  out.grads = tape.backward(loss, params.size());
  return out;
}

std::vector<PreparedSample> load_prepared(const Manifest& manifest, int d_max, double z_cap) {
  MatchParams match;
  match.d_max = d_max;
  std::vector<PreparedSample> samples(manifest.entries.size());
  parallel_for(samples.size(), [&](std::size_t k) {
    samples[k] = prepare_sample(load_sample(manifest, k), manifest.rig, match, d_max, z_cap);
  });
  return samples;
}

std::string format_real(double v) { return std::isnan(v) ? std::string("nan") : fmt::format("{:.10g}", v); }

}  // namespace

TrainResult train(const std::filesystem::path& manifest_path, const TrainConfig& cfg,
                  const std::filesystem::path& ckpt_out) {
  cfg.validate();
  const Manifest manifest = read_manifest(manifest_path);
  if (manifest.entries.empty()) throw std::runtime_error("train: dataset is empty");
  const int d_max = resolve_d_max(cfg.d_max, manifest);
  const std::vector<PreparedSample> samples = load_prepared(manifest, d_max, cfg.z_cap);

  const std::size_t n = samples.size();
  const auto n_val = static_cast<std::size_t>(std::floor(cfg.val_fraction * static_cast<double>(n)));
  const std::size_t n_train = n - n_val;
  if (n_train == 0) throw std::runtime_error("train: no training samples after the validation split");
  const std::vector<PreparedSample> val(samples.begin() + static_cast<std::ptrdiff_t>(n_train),
                                        samples.end());
  spdlog::info("train: {} training samples, {} validation samples, d_max {}", n_train, n_val, d_max);

  TrainResult result;
  result.network = build_unet(cfg.net, cfg.seed);
  result.network.set_head(cfg.head);
  result.checkpoint = ckpt_out;
  result.best_checkpoint = ckpt_out.string() + ".best";
  result.log = ckpt_out.string() + ".log.csv";
  RefineNetwork& net = result.network;
  AdamState adam = AdamState::zeros_like(net.params());
  Rng rng(mix64(cfg.seed ^ 0x747261696eULL));

  std::string log = "epoch,train_loss,val_depth_error_m\n";
  double best = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> order(n_train);

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = n_train; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    double loss_sum = 0.0;

    for (std::size_t start = 0; start < n_train; start += cfg.batch_size) {
      const std::size_t count = std::min(cfg.batch_size, n_train - start);
      std::vector<std::uint8_t> flips(count);
      for (auto& f : flips) f = rng.uniform() < cfg.flip_probability ? 1 : 0;
      std::vector<SampleGrad> parts(count);
      parallel_for(count, [&](std::size_t j) {
        parts[j] = sample_gradient(net, samples[order[start + j]], flips[j] != 0, cfg.head);
      });
      std::vector<ad::Tensor> grads = std::move(parts[0].grads);
      loss_sum += parts[0].loss;
      for (std::size_t j = 1; j < count; ++j) {
        loss_sum += parts[j].loss;
        for (std::size_t k = 0; k < grads.size(); ++k) {
          for (std::size_t i = 0; i < grads[k].numel(); ++i) grads[k][i] += parts[j].grads[k][i];
        }
      }
      const double inv = 1.0 / static_cast<double>(count);
      for (auto& g : grads) {
        for (auto& v : g.data()) v *= inv;
      }
      adam_step(net.params(), grads, adam, cfg);
      round_to_float32(net.params());
      for (std::size_t k = 0; k < net.params().size(); ++k) {
        if (!net.params()[k].all_finite()) {
          throw std::runtime_error(fmt::format("train: parameter {} became non-finite at epoch {}, step {}",
                                               net.names()[k], epoch, adam.step));
        }
      }
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = loss_sum / static_cast<double>(n_train);
    stats.val_depth_error_m = val.empty() ? std::numeric_limits<double>::quiet_NaN()
                                          : refined_depth_error(net, val, cfg.head);
    result.history.push_back(stats);
    log += fmt::format("{},{},{}\n", epoch, format_real(stats.train_loss),
                       format_real(stats.val_depth_error_m));
    spdlog::info("epoch {}: train_loss {} val_depth_error_m {}", epoch, format_real(stats.train_loss),
                 format_real(stats.val_depth_error_m));

    const double score = val.empty() ? stats.train_loss : stats.val_depth_error_m;
    if (score < best) {
      best = score;
      save_checkpoint(net, result.best_checkpoint);
    }
    write_file_atomic(result.log, log);
  }
  save_checkpoint(net, result.checkpoint);
  if (!std::isfinite(best)) save_checkpoint(net, result.best_checkpoint);
  return result;
}

}  // namespace depthref
