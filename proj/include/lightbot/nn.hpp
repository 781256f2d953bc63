#pragma once

// Two-layer perceptron (input -> tanh hidden -> linear output) with
// hand-written backpropagation, plus an Adam optimizer over its flat
// parameter vector.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "lightbot/error.hpp"

namespace lightbot::nn {

// Parameter layout in params(): W1 (hidden x in, row-major), b1 (hidden),
// W2 (out x hidden, row-major), b2 (out).
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::size_t in, std::size_t hidden, std::size_t out)
      : in_(in), hidden_(hidden), out_(out), params_(in * hidden + hidden + hidden * out + out, 0.0) {}

  std::size_t input_size() const { return in_; }
  std::size_t hidden_size() const { return hidden_; }
  std::size_t output_size() const { return out_; }

  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }

  // Activations kept for the backward pass.
  struct Cache {
    std::vector<double> hidden;  // tanh outputs
    std::vector<double> output;
  };

  Cache forward(std::span<const double> x) const {
    check_input(x);
    Cache c;
    c.hidden.resize(hidden_);
    c.output.resize(out_);
    const double* w1 = params_.data();
    const double* b1 = w1 + in_ * hidden_;
    const double* w2 = b1 + hidden_;
    const double* b2 = w2 + hidden_ * out_;
    for (std::size_t j = 0; j < hidden_; ++j) {
      double z = b1[j];
      const double* row = w1 + j * in_;
      for (std::size_t i = 0; i < in_; ++i) z += row[i] * x[i];
      c.hidden[j] = std::tanh(z);
    }
    for (std::size_t k = 0; k < out_; ++k) {
      double z = b2[k];
      const double* row = w2 + k * hidden_;
      for (std::size_t j = 0; j < hidden_; ++j) z += row[j] * c.hidden[j];
      c.output[k] = z;
    }
    return c;
  }

  // Accumulates dL/dparams into `grad` given dL/doutput. Returns dL/dinput
  // when `want_input_grad` is set, otherwise an empty vector.
  std::vector<double> backward(std::span<const double> x, const Cache& c,
                               std::span<const double> dout, std::span<double> grad,
                               bool want_input_grad = false) const {
    const double* w1 = params_.data();
    const double* w2 = w1 + in_ * hidden_ + hidden_;
    double* g_w1 = grad.data();
    double* g_b1 = g_w1 + in_ * hidden_;
    double* g_w2 = g_b1 + hidden_;
    double* g_b2 = g_w2 + hidden_ * out_;

    std::vector<double> dh(hidden_, 0.0);
    for (std::size_t k = 0; k < out_; ++k) {
      const double d = dout[k];
      if (d == 0.0) continue;
      g_b2[k] += d;
      const double* row = w2 + k * hidden_;
      double* grow = g_w2 + k * hidden_;
      for (std::size_t j = 0; j < hidden_; ++j) {
        grow[j] += d * c.hidden[j];
        dh[j] += d * row[j];
      }
    }
    std::vector<double> dx;
    if (want_input_grad) dx.assign(in_, 0.0);
    for (std::size_t j = 0; j < hidden_; ++j) {
      const double dz = dh[j] * (1.0 - c.hidden[j] * c.hidden[j]);
      if (dz == 0.0) continue;
      g_b1[j] += dz;
      double* grow = g_w1 + j * in_;
      const double* row = w1 + j * in_;
      for (std::size_t i = 0; i < in_; ++i) {
        grow[i] += dz * x[i];
        if (want_input_grad) dx[i] += dz * row[i];
      }
    }
    return dx;
  }

  // Orthogonal weight matrices scaled by the given gains; zero biases.
  template <class Rng>
  void init_orthogonal(Rng& rng, double hidden_gain, double output_gain) {
    std::fill(params_.begin(), params_.end(), 0.0);
    fill_orthogonal(std::span<double>(params_.data(), in_ * hidden_), hidden_, in_, hidden_gain, rng);
    double* w2 = params_.data() + in_ * hidden_ + hidden_;
    fill_orthogonal(std::span<double>(w2, hidden_ * out_), out_, hidden_, output_gain, rng);
  }

  bool all_finite() const {
    for (double p : params_) {
      if (!std::isfinite(p)) return false;
    }
    return true;
  }

 private:
  void check_input(std::span<const double> x) const {
    if (x.size() != in_) {
      throw Error("network expects " + std::to_string(in_) + " inputs, got " +
                  std::to_string(x.size()));
    }
  }

  // rows x cols matrix with orthonormal rows (rows <= cols) or columns.
  template <class Rng>
  static void fill_orthogonal(std::span<double> m, std::size_t rows, std::size_t cols, double gain,
                              Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    const bool transpose = rows > cols;
    const std::size_t r = transpose ? cols : rows;
    const std::size_t c = transpose ? rows : cols;
    std::vector<double> q(r * c);
    for (auto& v : q) v = normal(rng);
    // Modified Gram-Schmidt on the r rows of length c.
    for (std::size_t i = 0; i < r; ++i) {
      double* qi = q.data() + i * c;
      for (std::size_t k = 0; k < i; ++k) {
        const double* qk = q.data() + k * c;
        double dot = 0.0;
        for (std::size_t t = 0; t < c; ++t) dot += qi[t] * qk[t];
        for (std::size_t t = 0; t < c; ++t) qi[t] -= dot * qk[t];
      }
      double norm = 0.0;
      for (std::size_t t = 0; t < c; ++t) norm += qi[t] * qi[t];
      norm = std::sqrt(norm);
      for (std::size_t t = 0; t < c; ++t) qi[t] /= norm;
    }
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t j = 0; j < cols; ++j) {
        m[i * cols + j] = gain * (transpose ? q[j * c + i] : q[i * c + j]);
      }
    }
  }

  std::size_t in_ = 0;
  std::size_t hidden_ = 0;
  std::size_t out_ = 0;
  std::vector<double> params_;
};

class Adam {
 public:
  explicit Adam(std::size_t n, double lr = 3e-4, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), m_(n, 0.0), v_(n, 0.0) {}

  void step(std::vector<double>& params, std::span<const double> grad) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
      v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
      params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
    }
  }

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<double> m_, v_;
};

// Numerically stable softmax.
inline std::vector<double> softmax(std::span<const double> logits) {
  double mx = logits[0];
  for (double z : logits) mx = std::max(mx, z);
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return p;
}

inline std::vector<double> log_softmax(std::span<const double> logits) {
  double mx = logits[0];
  for (double z : logits) mx = std::max(mx, z);
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z - mx);
  const double lse = mx + std::log(sum);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

}  // namespace lightbot::nn
