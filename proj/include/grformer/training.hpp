#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "grformer/imaging.hpp"
#include "grformer/network.hpp"
#include "grformer/rng.hpp"
#include "grformer/tensor.hpp"

namespace grf {

struct TrainConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-8;
  std::size_t iters = 500;
  // Iterations at which the learning rate halves. Empty means "scale the
  // long schedule down to iters" (see scaled_milestones).
  std::vector<std::size_t> milestones;
  std::size_t patch = 64;  // HR patch side; larger images are randomly cropped
  std::size_t batch = 1;
  std::uint64_t seed = 0;
  bool augment = true;
};

// 250k/400k/510k/540k out of 600k, rescaled to `iters`.
std::vector<std::size_t> scaled_milestones(std::size_t iters);
// Learning rate in effect at 0-based iteration `iter`.
double learning_rate(const TrainConfig& cfg, std::size_t iter);

template <typename T>
struct AdamState {
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  std::size_t step = 0;
};

// Mean absolute error.
template <typename T>
Tensor<T> l1_loss(const Tensor<T>& pred, const Tensor<T>& target);

// One bias-corrected Adam update of every tensor in `params`, reading the
// gradients accumulated on them (a tensor without a gradient counts as zero).
// Afterwards any parameter whose name ends in "log_lambda" is clamped to
// log(kMaxLambda).
template <typename T>
void adam_step(const NamedTensors<T>& params, AdamState<T>& state, double lr,
               const TrainConfig& cfg);

// Dihedral transforms of a [C, H, W] map, op in [0, 8): rotate op % 4 quarter
// turns counter-clockwise, then mirror horizontally when op >= 4.
template <typename T>
Tensor<T> dihedral(const Tensor<T>& x, int op);
PlaneF dihedral(const PlaneF& p, int op);
int dihedral_inverse(int op);

// Same random dihedral transform applied to both images.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> augment(const Tensor<T>& hr, const Tensor<T>& lr, Rng& rng);

// LR counterpart of an RGB HR image: per-channel bicubic downscale by 1/scale.
std::array<PlaneF, 3> degrade(const ImageU8& hr, std::size_t scale);

// Small model for overfitting experiments on one image, and the schedule
// used with it: 500 iterations on a whole 48 x 48 crop.
ModelConfig toy_config();
TrainConfig toy_train_config();
// Deterministic textured RGB test image (stripes, disc, gradient, noise).
ImageU8 synthetic_image(std::size_t width, std::size_t height, std::uint64_t seed);

template <typename T>
struct ToyResult {
  std::vector<double> losses;  // one per iteration, on the augmented sample
  GrformerParams<T> params;
  double initial_loss = 0;  // L1 on the un-augmented image before training
  double final_loss = 0;    // and after
  double sr_psnr = 0;       // Y-channel PSNR of the 8-bit SR output vs HR
  double bicubic_psnr = 0;  // same for 8-bit bicubic upscaling of the LR input
};

// Trains from init_parameters(cfg, Rng(tcfg.seed)).
template <typename T>
ToyResult<T> train_toy(const ModelConfig& cfg, const TrainConfig& tcfg, const ImageU8& hr);

// Runs a trained model on an RGB image and returns the 8-bit result.
template <typename T>
ImageU8 super_resolve(const ImageU8& lr, const GrformerParams<T>& params, const ModelConfig& cfg);

std::string format_loss_csv(const std::vector<double>& losses);

}  // namespace grf
