#pragma once

#include "deepdiff/layers.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>
#include <unordered_map>

namespace deepdiff {

class Optimizer {
 public:
  virtual ~Optimizer() = default;

  /// Updates every parameter in place from its accumulated gradient.
  /// Throws when a parameter has no gradient. Gradients are left untouched.
  virtual void step(const ParameterList& params) = 0;

  virtual nlohmann::ordered_json state() const = 0;
  virtual void load_state(const nlohmann::ordered_json& state) = 0;
};

void zero_grad(const ParameterList& params);

/// Rescales all gradients so their joint L2 norm is at most max_norm.
/// Returns the norm before clipping.
double clip_grad_norm(const ParameterList& params, double max_norm);

class Sgd final : public Optimizer {
 public:
  explicit Sgd(double learning_rate);

  void step(const ParameterList& params) override;
  nlohmann::ordered_json state() const override;
  void load_state(const nlohmann::ordered_json& state) override;

  double learning_rate() const { return lr_; }

 private:
  double lr_;
};

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Bias-corrected first/second moment estimates; moments are keyed by
/// parameter name and created at zero on first use.
class Adam final : public Optimizer {
 public:
  explicit Adam(AdamConfig config = {});

  void step(const ParameterList& params) override;
  nlohmann::ordered_json state() const override;
  void load_state(const nlohmann::ordered_json& state) override;

  std::int64_t steps() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  struct Moments {
    Matrix m;
    Matrix v;
  };
  AdamConfig cfg_;
  std::int64_t t_ = 0;
  std::unordered_map<std::string, Moments> moments_;
  std::vector<std::string> order_;  // first-seen order, for stable serialization
};

nlohmann::ordered_json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const nlohmann::ordered_json& j);

}  // namespace deepdiff
