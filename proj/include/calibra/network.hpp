#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <vector>

namespace calibra {

/// Two-hidden-layer perceptron with a scalar linear output. The first
/// hidden layer (50 units) is rectified linear; the second (10 units) is
/// the symmetric saturating linear function clamp(z, -1, 1).
class Mlp {
 public:
  static constexpr std::size_t kHidden1 = 50;
  static constexpr std::size_t kHidden2 = 10;

  explicit Mlp(std::size_t input_dim);

  /// Symmetric uniform init scaled by fan-in, biases zero.
  void init_random(std::mt19937_64& rng);

  std::size_t input_dim() const { return in_; }
  std::size_t param_count() const { return params_.size(); }
  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }

  double forward(std::span<const double> x) const;

  /// Forward pass over a row-major n x input_dim matrix, keeping the
  /// activations needed by backward().
  struct BatchCache {
    std::vector<double> z1, a1, z2, a2, out;
    std::size_t n = 0;
  };
  void forward_batch(std::span<const double> x_rows, std::size_t n, BatchCache& cache) const;

  /// Accumulates d(sum_i loss_i)/d(params) into grad, given dloss/dout per
  /// sample. grad must be zero-initialized by the caller.
  void backward_batch(std::span<const double> x_rows, const BatchCache& cache,
                      std::span<const double> dloss_dout, std::span<double> grad) const;

 private:
  std::size_t in_;
  std::vector<double> params_;
  // layout offsets into params_: W1 (h1*in), b1 (h1), W2 (h2*h1), b2 (h2),
  // w3 (h2), b3 (1)
  std::size_t w1_, b1_, w2_, b2_, w3_, b3_;
};

}  // namespace calibra
