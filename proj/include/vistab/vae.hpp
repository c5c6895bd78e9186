#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <vector>

#include "vistab/environment.hpp"
#include "vistab/numerics/nn.hpp"
#include "vistab/numerics/ops.hpp"
#include "vistab/numerics/optim.hpp"

namespace vistab {

inline constexpr std::size_t kFeatureDim = 128;
inline constexpr std::size_t kConvFlat = 32 * 7 * 7;  // 1568

struct VaeConfig {
  std::size_t d_latent = 32;
  double beta = 0.05;
};

/// Convolutional variational autoencoder over 25x25 patches.
///
/// Encoder: conv(1->16, 3x3, s2, p1) -> ReLU -> conv(16->32, 3x3, s2, p1) ->
/// ReLU -> flatten(1568) -> fc(128) -> ReLU, then two linear heads for the
/// latent mean and log-variance. The 128-wide layer is the feature vector
/// handed to the attention stage. The decoder mirrors it with transposed
/// convolutions and a sigmoid output.
template <std::floating_point T>
struct Vae {
  Parameter<T> conv1_w, conv1_b, conv2_w, conv2_b;
  Linear<T> fc, fc_mu, fc_logvar;
  Linear<T> dec_fc1, dec_fc2;
  Parameter<T> deconv1_w, deconv1_b, deconv2_w, deconv2_b;

  Vae() = default;
  Vae(const VaeConfig& cfg, Rng& rng)
      : conv1_w("vae.conv1.weight", glorot<T>({16, 1, 3, 3}, 9, 16 * 9, rng)),
        conv1_b("vae.conv1.bias", Tensor<T>({16})),
        conv2_w("vae.conv2.weight", glorot<T>({32, 16, 3, 3}, 16 * 9, 32 * 9, rng)),
        conv2_b("vae.conv2.bias", Tensor<T>({32})),
        fc("vae.fc", kConvFlat, kFeatureDim, rng),
        fc_mu("vae.fc_mu", kFeatureDim, cfg.d_latent, rng),
        fc_logvar("vae.fc_logvar", kFeatureDim, cfg.d_latent, rng),
        dec_fc1("vae.dec_fc1", cfg.d_latent, kFeatureDim, rng),
        dec_fc2("vae.dec_fc2", kFeatureDim, kConvFlat, rng),
        deconv1_w("vae.deconv1.weight", glorot<T>({32, 16, 3, 3}, 32 * 9, 16 * 9, rng)),
        deconv1_b("vae.deconv1.bias", Tensor<T>({16})),
        deconv2_w("vae.deconv2.weight", glorot<T>({16, 1, 3, 3}, 16 * 9, 9, rng)),
        deconv2_b("vae.deconv2.bias", Tensor<T>({1})) {}

  std::size_t d_latent() const { return fc_mu.out_features(); }

  struct Encoded {
    Var<T> conv1;     // (N, 16, 13, 13)
    Var<T> conv2;     // (N, 32, 7, 7)
    Var<T> features;  // (N, 128)
    Var<T> mu;        // (N, d_latent)
    Var<T> logvar;    // (N, d_latent)
  };

  /// patches: (N, 1, 25, 25) with pixels in [0, 1].
  Encoded encode(Tape<T>& tape, Var<T> patches) {
    const Shape s = patches.value().shape();
    if (s.size() != 4 || s[1] != 1 || s[2] != kPatchSide || s[3] != kPatchSide)
      throw DimensionError("vae.encode: expected (N,1,25,25), got " + shape_string(s));
    Encoded e;
    e.conv1 = relu(conv2d(patches, tape.param(conv1_w), tape.param(conv1_b), 2, 1));
    e.conv2 = relu(conv2d(e.conv1, tape.param(conv2_w), tape.param(conv2_b), 2, 1));
    e.features = relu(fc(tape, reshape(e.conv2, Shape{s[0], kConvFlat})));
    e.mu = fc_mu(tape, e.features);
    e.logvar = fc_logvar(tape, e.features);
    return e;
  }

  /// z: (N, d_latent) -> reconstruction (N, 1, 25, 25).
  Var<T> decode(Tape<T>& tape, Var<T> z) {
    const std::size_t n = z.value().rows();
    auto h = relu(dec_fc1(tape, z));
    h = relu(dec_fc2(tape, h));
    auto img = reshape(h, Shape{n, 32, 7, 7});
    img = relu(conv_transpose2d(img, tape.param(deconv1_w), tape.param(deconv1_b), 2, 1));
    return sigmoid(conv_transpose2d(img, tape.param(deconv2_w), tape.param(deconv2_b), 2, 1));
  }

  /// Feature vectors for a batch of patches, without recording gradients.
  Tensor<T> features(const std::vector<Tensorf>& patches) {
    Tape<T> tape;
    tape.set_frozen(true);
    return encode(tape, tape.constant(stack_patches<T>(patches))).features.value();
  }

  template <class U>
  static Tensor<U> stack_patches(const std::vector<Tensorf>& patches) {
    Tensor<U> out({patches.size(), 1, kPatchSide, kPatchSide});
    std::size_t k = 0;
    for (const auto& p : patches) {
      if (p.size() != kPatchSide * kPatchSide) throw DimensionError("vae: patch must be 25x25");
      for (float v : p.data()) out[k++] = U(v);
    }
    return out;
  }

  void collect_encoder(ParamList<T>& out) {
    out.insert(out.end(), {&conv1_w, &conv1_b, &conv2_w, &conv2_b});
    fc.collect(out);
    fc_mu.collect(out);
    fc_logvar.collect(out);
  }

  void collect(ParamList<T>& out) {
    collect_encoder(out);
    dec_fc1.collect(out);
    dec_fc2.collect(out);
    out.insert(out.end(), {&deconv1_w, &deconv1_b, &deconv2_w, &deconv2_b});
  }
};

template <std::floating_point T>
struct LatentSample {
  Tensor<T> mu, logvar, eps, z;
};

/// z = mu + exp(0.5 logvar) * eps with eps ~ N(0, I).
template <std::floating_point T>
LatentSample<T> reparameterize(const Tensor<T>& mu, const Tensor<T>& logvar, Rng& rng) {
  mu.require_same_shape(logvar, "reparameterize");
  LatentSample<T> s{mu, logvar, Tensor<T>(mu.shape()), Tensor<T>(mu.shape())};
  for (auto& e : s.eps.data()) e = T(rng.normal());
  for (std::size_t k = 0; k < mu.size(); ++k) s.z[k] = mu[k] + std::exp(T(0.5) * logvar[k]) * s.eps[k];
  return s;
}

/// Differentiable reparameterization with a fixed noise draw.
template <std::floating_point T>
Var<T> reparameterize(Var<T> mu, Var<T> logvar, const Tensor<T>& eps) {
  auto& tape = mu.tape();
  return mu + exp(scale(logvar, T(0.5))) * tape.constant(eps);
}

/// Per-pixel mean squared reconstruction error plus beta times the
/// per-coordinate mean KL divergence to N(0, I).
template <std::floating_point T>
Var<T> vae_loss(Var<T> patch, Var<T> recon, Var<T> mu, Var<T> logvar, T beta) {
  auto& tape = mu.tape();
  auto rec = mean(square(patch - recon));
  auto ones = tape.constant(Tensor<T>::ones(mu.value().shape()));
  auto kl = mean(scale(exp(logvar) + square(mu) - ones - logvar, T(0.5)));
  return rec + scale(kl, beta);
}

struct VaePretrainConfig {
  std::size_t dataset_size = 10000;
  std::size_t batch = 64;
  std::size_t steps = 2000;
  double learning_rate = 1e-3;
};

struct VaePretrainResult {
  std::vector<double> loss;
  std::vector<double> reconstruction_mse;
};

/// Random Gabor patches at uniform orientations.
inline std::vector<Tensorf> gabor_dataset(std::size_t n, Rng& rng, const GaborConfig& g = {}) {
  std::vector<Tensorf> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(gabor_patch(rng.uniform(0.0, 180.0), g));
  return out;
}

/// Adam pretraining on rendered Gabor patches.
template <std::floating_point T>
VaePretrainResult pretrain_vae(Vae<T>& vae, const VaeConfig& cfg, const VaePretrainConfig& run, Rng& rng,
                               const GaborConfig& gabor = {}) {
  const auto data = gabor_dataset(run.dataset_size, rng, gabor);
  ParamList<T> params;
  vae.collect(params);
  Adam<T> opt(params, {.learning_rate = run.learning_rate});
  VaePretrainResult result;
  std::vector<Tensorf> batch(run.batch);
  for (std::size_t step = 0; step < run.steps; ++step) {
    for (auto& p : batch) p = data[rng.below(data.size())];
    const auto x = Vae<T>::template stack_patches<T>(batch);
    Tensor<T> eps({run.batch, vae.d_latent()});
    for (auto& e : eps.data()) e = T(rng.normal());
    opt.zero_grad();
    Tape<T> tape;
    auto input = tape.constant(x);
    auto enc = vae.encode(tape, input);
    auto recon = vae.decode(tape, reparameterize(enc.mu, enc.logvar, eps));
    auto loss = vae_loss(input, recon, enc.mu, enc.logvar, T(cfg.beta));
    if (!loss.value().all_finite()) throw NumericalError("vae pretraining diverged at step " + std::to_string(step));
    tape.backward(loss);
    opt.step();
    double mse = 0;
    for (std::size_t k = 0; k < x.size(); ++k) mse += std::pow(double(x[k]) - double(recon.value()[k]), 2);
    result.loss.push_back(loss.value()[0]);
    result.reconstruction_mse.push_back(mse / double(x.size()));
  }
  return result;
}

/// Mean reconstruction MSE of the deterministic (mu) path.
template <std::floating_point T>
double reconstruction_mse(Vae<T>& vae, const std::vector<Tensorf>& patches) {
  Tape<T> tape;
  tape.set_frozen(true);
  auto x = tape.constant(Vae<T>::template stack_patches<T>(patches));
  auto recon = vae.decode(tape, vae.encode(tape, x).mu);
  double mse = 0;
  for (std::size_t k = 0; k < x.value().size(); ++k)
    mse += std::pow(double(x.value()[k]) - double(recon.value()[k]), 2);
  return mse / double(x.value().size());
}

}  // namespace vistab
