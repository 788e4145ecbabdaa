#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "modaladapt/matrix.hpp"

namespace modaladapt {

// Mutable view of one named parameter tensor inside a model. Views stay
// valid as long as the owning model is not restructured.
struct ParamRef {
  std::string id;
  double* data = nullptr;
  std::size_t size = 0;

  std::span<double> span() const { return {data, size}; }
};

// Named gradient arrays; keys match parameter ids and flattened sizes match
// the parameter they belong to. std::map keeps iteration deterministic.
class GradientSet {
 public:
  using Map = std::map<std::string, std::vector<double>>;

  std::vector<double>& slot(const std::string& id, std::size_t size) {
    auto [it, inserted] = grads_.try_emplace(id, size, 0.0);
    if (!inserted && it->second.size() != size) {
      throw std::invalid_argument("GradientSet: size mismatch for '" + id + "': " +
                                  std::to_string(it->second.size()) + " vs " +
                                  std::to_string(size));
    }
    return it->second;
  }

  void accumulate(const std::string& id, std::span<const double> g) {
    auto& dst = slot(id, g.size());
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  }

  void accumulate(const GradientSet& other) {
    for (const auto& [id, g] : other.grads_) accumulate(id, g);
  }

  const std::vector<double>* find(const std::string& id) const {
    auto it = grads_.find(id);
    return it == grads_.end() ? nullptr : &it->second;
  }

  bool contains(const std::string& id) const { return grads_.count(id) != 0; }

  // Drops every entry whose id is not in `ids`.
  void restrict_to(const std::set<std::string>& ids) {
    for (auto it = grads_.begin(); it != grads_.end();) {
      it = ids.count(it->first) ? std::next(it) : grads_.erase(it);
    }
  }

  std::size_t size() const { return grads_.size(); }
  bool empty() const { return grads_.empty(); }
  Map::const_iterator begin() const { return grads_.begin(); }
  Map::const_iterator end() const { return grads_.end(); }

 private:
  Map grads_;
};

struct MseResult {
  double loss = 0.0;
  Matrix d_pred;
};

// Mean over all entries of the squared error; d_pred = 2*(pred-target)/count.
inline MseResult mse_loss(const Matrix& pred, const Matrix& target) {
  require_same_shape(pred, target, "mse_loss");
  MseResult r;
  r.d_pred = Matrix(pred.rows(), pred.cols());
  const double count = static_cast<double>(pred.size());
  const double* p = pred.data();
  const double* t = target.data();
  double* d = r.d_pred.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double e = p[i] - t[i];
    acc += e * e;
    d[i] = 2.0 * e / count;
  }
  r.loss = acc / count;
  return r;
}

struct AdamConfig {
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Standard Adam with bias-corrected moments and a shared step counter.
// Parameters absent from a step's gradient set are left untouched, so
// freeze contracts (byte-identical untouched parameters) hold trivially.
class AdamOptimizer {
 public:
  AdamOptimizer() = default;
  explicit AdamOptimizer(AdamConfig config) : config_(config) {}

  const AdamConfig& config() const { return config_; }
  std::uint64_t step_count() const { return t_; }

  void step(const std::vector<ParamRef>& params, const GradientSet& grads) {
    std::map<std::string, ParamRef> by_id;
    for (const auto& p : params) by_id.emplace(p.id, p);

    // Reject the whole step before touching any state.
    for (const auto& [id, g] : grads) {
      auto it = by_id.find(id);
      if (it == by_id.end()) {
        throw std::invalid_argument("adam_step: gradient for unknown parameter '" + id + "'");
      }
      if (it->second.size != g.size()) {
        throw std::invalid_argument("adam_step: gradient size " + std::to_string(g.size()) +
                                    " does not match parameter '" + id + "' of size " +
                                    std::to_string(it->second.size));
      }
      for (double v : g) {
        if (!std::isfinite(v)) {
          throw std::runtime_error("adam_step: non-finite gradient for parameter '" + id + "'");
        }
      }
    }

    t_ += 1;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    for (const auto& [id, g] : grads) {
      const ParamRef& p = by_id.at(id);
      auto& mo = moments_[id];
      if (mo.m.empty()) {
        mo.m.assign(p.size, 0.0);
        mo.v.assign(p.size, 0.0);
      }
      for (std::size_t i = 0; i < p.size; ++i) {
        mo.m[i] = config_.beta1 * mo.m[i] + (1.0 - config_.beta1) * g[i];
        mo.v[i] = config_.beta2 * mo.v[i] + (1.0 - config_.beta2) * g[i] * g[i];
        const double m_hat = mo.m[i] / bc1;
        const double v_hat = mo.v[i] / bc2;
        p.data[i] -= config_.learning_rate * m_hat / (std::sqrt(v_hat) + config_.epsilon);
      }
    }
  }

 private:
  struct Moments {
    std::vector<double> m, v;
  };

  AdamConfig config_;
  std::map<std::string, Moments> moments_;
  std::uint64_t t_ = 0;
};

}  // namespace modaladapt
