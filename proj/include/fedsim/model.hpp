// Desk-scale differentiable models with analytic gradients. Three kinds:
// a linear regressor, a softmax classifier and a small MLP that predicts
// per-pixel masks trained with a soft Dice loss. All parameters live in one
// flat vector; the layout table maps layers to index ranges.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedsim/param_vector.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

enum class ModelKind { linear_regression, logistic_classifier, mlp_softdice_segmenter };

const char* to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& name);

// One mini-batch. inputs is batch_size x input_dim, targets is
// batch_size x target_dim, both row-major.
struct Batch {
  std::size_t batch_size = 0;
  std::size_t input_dim = 0;
  std::size_t target_dim = 0;
  std::vector<double> inputs;
  std::vector<double> targets;
};

struct LayerRange {
  std::string name;
  std::size_t begin = 0;
  std::size_t end = 0;  // half-open
  std::size_t fan_in = 0;
  bool is_bias = false;
};

// Squared-denominator soft Dice with smoothing delta:
//   1 - (2*sum(p*g) + delta) / (sum(p^2) + sum(g^2) + delta).
// Stays in [0, 1] for p, g in [0, 1].
double soft_dice_loss(const double* pred, const double* target, std::size_t n,
                      double delta);

class ToyModel {
 public:
  struct Shape {
    ModelKind kind = ModelKind::linear_regression;
    std::size_t input_dim = 8;
    std::size_t output_dim = 1;   // classes, mask pixels, or 1 for regression
    std::size_t hidden_dim = 16;  // segmenter only
    bool with_bias = true;
    double weight_decay = 1e-5;   // per-step l2 coefficient
    double dice_delta = 1.0;      // soft Dice smoothing constant
  };

  explicit ToyModel(Shape shape);

  const Shape& shape() const { return shape_; }
  ModelKind kind() const { return shape_.kind; }
  std::size_t param_count() const { return param_count_; }
  const std::vector<LayerRange>& layout() const { return layout_; }

  // He-style uniform init per layer, biases zero. Deterministic in seed.
  ParamVector init_params(std::uint64_t seed) const;

  double loss(const ParamVector& w, const Batch& batch) const;

  // Analytic gradient of loss plus weight_decay * w. Returns batch loss so
  // training loops get both from one forward pass.
  double loss_and_gradient(const ParamVector& w, const Batch& batch,
                           ParamVector& grad) const;

  ParamVector gradient(const ParamVector& w, const Batch& batch) const;

  // Held-out evaluation: MSE (regression, lower better), accuracy
  // (classifier) or mean soft-Dice score (segmenter), higher better.
  double evaluate(const ParamVector& w, const Batch& all_examples) const;
  const char* eval_metric_name() const;
  bool eval_higher_is_better() const;

 private:
  void check_batch(const ParamVector& w, const Batch& batch) const;

  Shape shape_;
  std::size_t param_count_ = 0;
  std::vector<LayerRange> layout_;
};

}  // namespace fedsim
