#include "calibra/network.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace calibra {

Mlp::Mlp(std::size_t input_dim) : in_(input_dim) {
  if (input_dim == 0) throw std::invalid_argument("Mlp: input_dim must be >= 1");
  w1_ = 0;
  b1_ = w1_ + kHidden1 * in_;
  w2_ = b1_ + kHidden1;
  b2_ = w2_ + kHidden2 * kHidden1;
  w3_ = b2_ + kHidden2;
  b3_ = w3_ + kHidden2;
  params_.assign(b3_ + 1, 0.0);
}

void Mlp::init_random(std::mt19937_64& rng) {
  auto fill = [&rng](double* w, std::size_t count, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (std::size_t i = 0; i < count; ++i) w[i] = u(rng);
  };
  std::fill(params_.begin(), params_.end(), 0.0);
  fill(&params_[w1_], kHidden1 * in_, in_);
  fill(&params_[w2_], kHidden2 * kHidden1, kHidden1);
  fill(&params_[w3_], kHidden2, kHidden2);
}

double Mlp::forward(std::span<const double> x) const {
  if (x.size() != in_) throw std::invalid_argument("Mlp::forward: input dimension mismatch");
  double a1[kHidden1], a2[kHidden2];
  const double* W1 = &params_[w1_];
  for (std::size_t i = 0; i < kHidden1; ++i) {
    double z = params_[b1_ + i];
    const double* row = W1 + i * in_;
    for (std::size_t j = 0; j < in_; ++j) z += row[j] * x[j];
    a1[i] = z > 0.0 ? z : 0.0;
  }
  const double* W2 = &params_[w2_];
  for (std::size_t i = 0; i < kHidden2; ++i) {
    double z = params_[b2_ + i];
    const double* row = W2 + i * kHidden1;
    for (std::size_t j = 0; j < kHidden1; ++j) z += row[j] * a1[j];
    a2[i] = std::clamp(z, -1.0, 1.0);
  }
  double out = params_[b3_];
  for (std::size_t i = 0; i < kHidden2; ++i) out += params_[w3_ + i] * a2[i];
  return out;
}

void Mlp::forward_batch(std::span<const double> x_rows, std::size_t n,
                        BatchCache& cache) const {
  if (x_rows.size() != n * in_) {
    throw std::invalid_argument("Mlp::forward_batch: bad matrix shape");
  }
  cache.n = n;
  cache.z1.resize(n * kHidden1);
  cache.a1.resize(n * kHidden1);
  cache.z2.resize(n * kHidden2);
  cache.a2.resize(n * kHidden2);
  cache.out.resize(n);
  const double* W1 = &params_[w1_];
  const double* W2 = &params_[w2_];
  for (std::size_t s = 0; s < n; ++s) {
    const double* x = &x_rows[s * in_];
    double* z1 = &cache.z1[s * kHidden1];
    double* a1 = &cache.a1[s * kHidden1];
    for (std::size_t i = 0; i < kHidden1; ++i) {
      double z = params_[b1_ + i];
      const double* row = W1 + i * in_;
      for (std::size_t j = 0; j < in_; ++j) z += row[j] * x[j];
      z1[i] = z;
      a1[i] = z > 0.0 ? z : 0.0;
    }
    double* z2 = &cache.z2[s * kHidden2];
    double* a2 = &cache.a2[s * kHidden2];
    for (std::size_t i = 0; i < kHidden2; ++i) {
      double z = params_[b2_ + i];
      const double* row = W2 + i * kHidden1;
      for (std::size_t j = 0; j < kHidden1; ++j) z += row[j] * a1[j];
      z2[i] = z;
      a2[i] = std::clamp(z, -1.0, 1.0);
    }
    double out = params_[b3_];
    for (std::size_t i = 0; i < kHidden2; ++i) out += params_[w3_ + i] * a2[i];
    cache.out[s] = out;
  }
}

void Mlp::backward_batch(std::span<const double> x_rows, const BatchCache& cache,
                         std::span<const double> dloss_dout, std::span<double> grad) const {
  const std::size_t n = cache.n;
  if (dloss_dout.size() != n || grad.size() != params_.size()) {
    throw std::invalid_argument("Mlp::backward_batch: bad shapes");
  }
  const double* W2 = &params_[w2_];
  const double* w3 = &params_[w3_];
  double dz2[kHidden2], dz1[kHidden1];
  for (std::size_t s = 0; s < n; ++s) {
    const double go = dloss_dout[s];
    if (go == 0.0) continue;
    const double* x = &x_rows[s * in_];
    const double* z1 = &cache.z1[s * kHidden1];
    const double* a1 = &cache.a1[s * kHidden1];
    const double* z2 = &cache.z2[s * kHidden2];
    const double* a2 = &cache.a2[s * kHidden2];

    for (std::size_t i = 0; i < kHidden2; ++i) {
      grad[w3_ + i] += go * a2[i];
      const bool active = z2[i] > -1.0 && z2[i] < 1.0;
      dz2[i] = active ? go * w3[i] : 0.0;
    }
    grad[b3_] += go;

    for (std::size_t j = 0; j < kHidden1; ++j) dz1[j] = 0.0;
    for (std::size_t i = 0; i < kHidden2; ++i) {
      if (dz2[i] == 0.0) continue;
      const double d = dz2[i];
      grad[b2_ + i] += d;
      double* gW2 = &grad[w2_ + i * kHidden1];
      const double* row = W2 + i * kHidden1;
      for (std::size_t j = 0; j < kHidden1; ++j) {
        gW2[j] += d * a1[j];
        dz1[j] += d * row[j];
      }
    }
    for (std::size_t j = 0; j < kHidden1; ++j) {
      if (z1[j] <= 0.0) dz1[j] = 0.0;
    }
    for (std::size_t j = 0; j < kHidden1; ++j) {
      const double d = dz1[j];
      if (d == 0.0) continue;
      grad[b1_ + j] += d;
      double* gW1 = &grad[w1_ + j * in_];
      for (std::size_t k = 0; k < in_; ++k) gW1[k] += d * x[k];
    }
  }
}

}  // namespace calibra
