#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "groupdro/dataset.hpp"
#include "groupdro/errors.hpp"
#include "groupdro/rng.hpp"

namespace groupdro {

enum class ArchKind { kLogisticBinary, kSoftmax, kMlp1 };

/// Architecture descriptor. String forms: "logistic-binary{d}",
/// "softmax{d,K}", "mlp1{d,H,K}".
struct Arch {
  ArchKind kind = ArchKind::kLogisticBinary;
  int input_dim = 0;
  int hidden = 0;  // mlp1 only
  int classes = 2;

  static Arch logistic_binary(int d) { return Arch{ArchKind::kLogisticBinary, d, 0, 2}; }
  static Arch softmax(int d, int k) { return Arch{ArchKind::kSoftmax, d, 0, k}; }
  static Arch mlp1(int d, int h, int k) { return Arch{ArchKind::kMlp1, d, h, k}; }

  std::size_t param_count() const {
    const std::size_t d = static_cast<std::size_t>(input_dim);
    const std::size_t h = static_cast<std::size_t>(hidden);
    const std::size_t k = static_cast<std::size_t>(classes);
    switch (kind) {
      case ArchKind::kLogisticBinary:
        return d + 1;
      case ArchKind::kSoftmax:
        return k * (d + 1);
      case ArchKind::kMlp1:
        return h * (d + 1) + k * (h + 1);
    }
    return 0;
  }

  void validate() const {
    if (input_dim < 1) throw std::invalid_argument("arch: input dimension must be >= 1");
    switch (kind) {
      case ArchKind::kLogisticBinary:
        if (classes != 2) throw std::invalid_argument("arch: logistic-binary has 2 classes");
        break;
      case ArchKind::kSoftmax:
        if (classes < 2) throw std::invalid_argument("arch: softmax needs >= 2 classes");
        break;
      case ArchKind::kMlp1:
        if (classes < 2) throw std::invalid_argument("arch: mlp1 needs >= 2 classes");
        if (hidden < 1) throw std::invalid_argument("arch: mlp1 needs hidden width >= 1");
        break;
    }
  }

  std::string to_string() const {
    switch (kind) {
      case ArchKind::kLogisticBinary:
        return "logistic-binary{" + std::to_string(input_dim) + "}";
      case ArchKind::kSoftmax:
        return "softmax{" + std::to_string(input_dim) + "," + std::to_string(classes) + "}";
      case ArchKind::kMlp1:
        return "mlp1{" + std::to_string(input_dim) + "," + std::to_string(hidden) + "," +
               std::to_string(classes) + "}";
    }
    return "?";
  }

  static Arch parse(const std::string& text) {
    const std::size_t open = text.find('{');
    const std::size_t close = text.rfind('}');
    if (open == std::string::npos || close != text.size() - 1 || close <= open)
      throw std::invalid_argument("bad arch string: " + text);
    const std::string name = text.substr(0, open);
    std::vector<int> dims;
    std::size_t pos = open + 1;
    while (pos < close) {
      std::size_t comma = text.find(',', pos);
      if (comma == std::string::npos || comma > close) comma = close;
      const std::string tok = text.substr(pos, comma - pos);
      try {
        std::size_t used = 0;
        dims.push_back(std::stoi(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw std::invalid_argument("bad arch dimension '" + tok + "' in: " + text);
      }
      pos = comma + 1;
    }
    Arch arch;
    if (name == "logistic-binary" && dims.size() == 1) {
      arch = logistic_binary(dims[0]);
    } else if (name == "softmax" && dims.size() == 2) {
      arch = softmax(dims[0], dims[1]);
    } else if (name == "mlp1" && dims.size() == 3) {
      arch = mlp1(dims[0], dims[1], dims[2]);
    } else {
      throw std::invalid_argument("bad arch string: " + text);
    }
    arch.validate();
    return arch;
  }

  bool operator==(const Arch&) const = default;
};

/// Flat parameter vector plus its architecture.
///
/// Layout: logistic-binary = [w(d), b]; softmax = per class [w_k(d), b_k];
/// mlp1 = per hidden unit [w1_h(d), b1_h], then per class [w2_k(H), b2_k].
struct ModelParams {
  Arch arch;
  std::vector<double> theta;
};

inline ModelParams zero_params(const Arch& arch) {
  arch.validate();
  return ModelParams{arch, std::vector<double>(arch.param_count(), 0.0)};
}

/// Zeros for the convex models; for mlp1, i.i.d. uniform entries on
/// [-1/sqrt(fan_in), +1/sqrt(fan_in)] drawn deterministically from the seed.
inline ModelParams init_params(const Arch& arch, std::uint64_t seed) {
  ModelParams p = zero_params(arch);
  if (arch.kind != ArchKind::kMlp1) return p;
  Rng rng(seed);
  const double b1 = 1.0 / std::sqrt(static_cast<double>(arch.input_dim));
  const double b2 = 1.0 / std::sqrt(static_cast<double>(arch.hidden));
  const std::size_t layer1 = static_cast<std::size_t>(arch.hidden) * (arch.input_dim + 1);
  for (std::size_t i = 0; i < p.theta.size(); ++i)
    p.theta[i] = rng.uniform(-1.0, 1.0) * (i < layer1 ? b1 : b2);
  return p;
}

namespace detail {

inline void check_features(const Arch& arch, std::span<const double> x) {
  if (static_cast<int>(x.size()) != arch.input_dim)
    throw std::invalid_argument("feature dimension " + std::to_string(x.size()) +
                                " does not match arch " + std::to_string(arch.input_dim));
}

inline void check_example(const Arch& arch, const Example& ex) {
  check_features(arch, ex.features);
  if (ex.label < 0 || ex.label >= arch.classes)
    throw std::invalid_argument("label " + std::to_string(ex.label) +
                                " out of range for " + std::to_string(arch.classes) +
                                " classes");
}

inline double softplus(double z) {
  // log(1 + e^z), stable for large |z|.
  return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
}

inline double logistic_logit(const ModelParams& p, std::span<const double> x) {
  const int d = p.arch.input_dim;
  double z = p.theta[d];
  for (int j = 0; j < d; ++j) z += p.theta[j] * x[j];
  return z;
}

// Scratch buffers reused across calls; thread_local keeps the public
// functions pure and safe on shared immutable params.
struct Mlp1Scratch {
  std::vector<double> pre;     // hidden preactivations
  std::vector<double> act;     // relu(pre)
  std::vector<double> logits;  // class logits
  std::vector<double> probs;
  std::vector<double> dhidden;
};

inline Mlp1Scratch& mlp1_scratch() {
  thread_local Mlp1Scratch s;
  return s;
}

inline std::vector<double>& softmax_scratch() {
  thread_local std::vector<double> logits;
  return logits;
}

inline void softmax_logits(const ModelParams& p, std::span<const double> x,
                           std::vector<double>& logits) {
  const int d = p.arch.input_dim;
  const int k = p.arch.classes;
  logits.assign(k, 0.0);
  for (int c = 0; c < k; ++c) {
    const double* w = p.theta.data() + static_cast<std::size_t>(c) * (d + 1);
    double z = w[d];
    for (int j = 0; j < d; ++j) z += w[j] * x[j];
    logits[c] = z;
  }
}

inline void mlp1_forward(const ModelParams& p, std::span<const double> x, Mlp1Scratch& s) {
  const int d = p.arch.input_dim;
  const int h = p.arch.hidden;
  const int k = p.arch.classes;
  s.pre.assign(h, 0.0);
  s.act.assign(h, 0.0);
  s.logits.assign(k, 0.0);
  for (int u = 0; u < h; ++u) {
    const double* w = p.theta.data() + static_cast<std::size_t>(u) * (d + 1);
    double z = w[d];
    for (int j = 0; j < d; ++j) z += w[j] * x[j];
    s.pre[u] = z;
    s.act[u] = z > 0.0 ? z : 0.0;
  }
  const std::size_t layer2 = static_cast<std::size_t>(h) * (d + 1);
  for (int c = 0; c < k; ++c) {
    const double* w = p.theta.data() + layer2 + static_cast<std::size_t>(c) * (h + 1);
    double z = w[h];
    for (int u = 0; u < h; ++u) z += w[u] * s.act[u];
    s.logits[c] = z;
  }
}

// loss = logsumexp(logits) - logits[y]; fills probs when requested.
inline double cross_entropy(const std::vector<double>& logits, int y,
                            std::vector<double>* probs) {
  double mx = logits[0];
  for (double z : logits) mx = std::max(mx, z);
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z - mx);
  const double lse = mx + std::log(sum);
  if (probs) {
    probs->assign(logits.size(), 0.0);
    for (std::size_t c = 0; c < logits.size(); ++c) (*probs)[c] = std::exp(logits[c] - lse);
  }
  return lse - logits[y];
}

}  // namespace detail

/// Cross-entropy loss -log p(y | x). Nonnegative, log-sum-exp stabilized.
inline double loss(const ModelParams& p, const Example& ex) {
  detail::check_example(p.arch, ex);
  switch (p.arch.kind) {
    case ArchKind::kLogisticBinary: {
      const double z = detail::logistic_logit(p, ex.features);
      return ex.label == 1 ? detail::softplus(-z) : detail::softplus(z);
    }
    case ArchKind::kSoftmax: {
      auto& logits = detail::softmax_scratch();
      detail::softmax_logits(p, ex.features, logits);
      return detail::cross_entropy(logits, ex.label, nullptr);
    }
    case ArchKind::kMlp1: {
      auto& s = detail::mlp1_scratch();
      detail::mlp1_forward(p, ex.features, s);
      return detail::cross_entropy(s.logits, ex.label, nullptr);
    }
  }
  return 0.0;
}

/// Accumulates weight * (gradient of loss at p) into acc and returns the
/// loss. acc must have param_count entries. One forward/backward pass.
inline double add_loss_grad(const ModelParams& p, const Example& ex, double weight,
                            std::vector<double>& acc) {
  detail::check_example(p.arch, ex);
  if (acc.size() != p.theta.size())
    throw std::invalid_argument("gradient accumulator has wrong length");
  const int d = p.arch.input_dim;
  const std::span<const double> x{ex.features};
  switch (p.arch.kind) {
    case ArchKind::kLogisticBinary: {
      const double z = detail::logistic_logit(p, x);
      const double p1 = 1.0 / (1.0 + std::exp(-z));
      const double dz = weight * (p1 - static_cast<double>(ex.label));
      for (int j = 0; j < d; ++j) acc[j] += dz * x[j];
      acc[d] += dz;
      return ex.label == 1 ? detail::softplus(-z) : detail::softplus(z);
    }
    case ArchKind::kSoftmax: {
      auto& s = detail::mlp1_scratch();
      detail::softmax_logits(p, x, s.logits);
      const double value = detail::cross_entropy(s.logits, ex.label, &s.probs);
      const int k = p.arch.classes;
      for (int c = 0; c < k; ++c) {
        const double dz = weight * (s.probs[c] - (c == ex.label ? 1.0 : 0.0));
        double* g = acc.data() + static_cast<std::size_t>(c) * (d + 1);
        for (int j = 0; j < d; ++j) g[j] += dz * x[j];
        g[d] += dz;
      }
      return value;
    }
    case ArchKind::kMlp1: {
      auto& s = detail::mlp1_scratch();
      detail::mlp1_forward(p, x, s);
      const double value = detail::cross_entropy(s.logits, ex.label, &s.probs);
      const int h = p.arch.hidden;
      const int k = p.arch.classes;
      const std::size_t layer2 = static_cast<std::size_t>(h) * (d + 1);
      s.dhidden.assign(h, 0.0);
      for (int c = 0; c < k; ++c) {
        const double dz = weight * (s.probs[c] - (c == ex.label ? 1.0 : 0.0));
        const double* w = p.theta.data() + layer2 + static_cast<std::size_t>(c) * (h + 1);
        double* g = acc.data() + layer2 + static_cast<std::size_t>(c) * (h + 1);
        for (int u = 0; u < h; ++u) {
          g[u] += dz * s.act[u];
          s.dhidden[u] += dz * w[u];
        }
        g[h] += dz;
      }
      for (int u = 0; u < h; ++u) {
        // ReLU subgradient at exactly 0 is 0.
        if (s.pre[u] <= 0.0) continue;
        const double da = s.dhidden[u];
        double* g = acc.data() + static_cast<std::size_t>(u) * (d + 1);
        for (int j = 0; j < d; ++j) g[j] += da * x[j];
        g[d] += da;
      }
      return value;
    }
  }
  return 0.0;
}

/// Exact analytic gradient of loss at p.
inline std::vector<double> grad(const ModelParams& p, const Example& ex) {
  std::vector<double> g(p.theta.size(), 0.0);
  add_loss_grad(p, ex, 1.0, g);
  return g;
}

/// Argmax class; ties break toward the smaller class index.
inline int predict(const ModelParams& p, std::span<const double> features) {
  detail::check_features(p.arch, features);
  switch (p.arch.kind) {
    case ArchKind::kLogisticBinary:
      return detail::logistic_logit(p, features) > 0.0 ? 1 : 0;
    case ArchKind::kSoftmax: {
      auto& logits = detail::softmax_scratch();
      detail::softmax_logits(p, features, logits);
      int best = 0;
      for (int c = 1; c < p.arch.classes; ++c)
        if (logits[c] > logits[best]) best = c;
      return best;
    }
    case ArchKind::kMlp1: {
      auto& s = detail::mlp1_scratch();
      detail::mlp1_forward(p, features, s);
      int best = 0;
      for (int c = 1; c < p.arch.classes; ++c)
        if (s.logits[c] > s.logits[best]) best = c;
      return best;
    }
  }
  return 0;
}

/// Squared l2 norm of theta, bias entries included.
inline double l2_norm_sq(const ModelParams& p) {
  double s = 0.0;
  for (double v : p.theta) s += v * v;
  return s;
}

inline nlohmann::json to_json(const ModelParams& p) {
  return nlohmann::json{{"arch", p.arch.to_string()}, {"theta", p.theta}};
}

inline ModelParams params_from_json(const nlohmann::json& j) {
  ModelParams p;
  p.arch = Arch::parse(j.at("arch").get<std::string>());
  p.theta = j.at("theta").get<std::vector<double>>();
  if (p.theta.size() != p.arch.param_count())
    throw std::invalid_argument("theta length does not match arch " + p.arch.to_string());
  for (double v : p.theta)
    if (!std::isfinite(v)) throw std::invalid_argument("theta has a non-finite entry");
  return p;
}

}  // namespace groupdro
