#include "fedsim/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fedsim {

const char* to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::linear_regression: return "linear-regression";
    case ModelKind::logistic_classifier: return "logistic-classifier";
    case ModelKind::mlp_softdice_segmenter: return "mlp-softdice-segmenter";
  }
  return "?";
}

ModelKind model_kind_from_string(const std::string& name) {
  if (name == "linear-regression" || name == "linear") return ModelKind::linear_regression;
  if (name == "logistic-classifier" || name == "classifier") return ModelKind::logistic_classifier;
  if (name == "mlp-softdice-segmenter" || name == "segmenter") return ModelKind::mlp_softdice_segmenter;
  throw std::invalid_argument("unknown model kind: " + name);
}

double soft_dice_loss(const double* pred, const double* target, std::size_t n,
                      double delta) {
  double pg = 0.0, pp = 0.0, gg = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    pg += pred[i] * target[i];
    pp += pred[i] * pred[i];
    gg += target[i] * target[i];
  }
  return 1.0 - (2.0 * pg + delta) / (pp + gg + delta);
}

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// d(dice)/d(pred_j) for the squared-denominator form.
void soft_dice_backward(const double* pred, const double* target, std::size_t n,
                        double delta, double scale, double* dpred) {
  double pg = 0.0, pp = 0.0, gg = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    pg += pred[i] * target[i];
    pp += pred[i] * pred[i];
    gg += target[i] * target[i];
  }
  const double denom = pp + gg + delta;
  const double numer = 2.0 * pg + delta;
  for (std::size_t j = 0; j < n; ++j) {
    dpred[j] = scale * (-(2.0 * target[j] * denom - numer * 2.0 * pred[j]) /
                        (denom * denom));
  }
}

}  // namespace

ToyModel::ToyModel(Shape shape) : shape_(shape) {
  const std::size_t d = shape_.input_dim;
  const std::size_t m = shape_.output_dim;
  const std::size_t h = shape_.hidden_dim;
  if (d == 0 || m == 0) throw std::invalid_argument("ToyModel: zero dimension");
  auto push = [this](const char* name, std::size_t count, std::size_t fan_in,
                     bool bias) {
    layout_.push_back({name, param_count_, param_count_ + count, fan_in, bias});
    param_count_ += count;
  };
  switch (shape_.kind) {
    case ModelKind::linear_regression:
      push("w", d, d, false);
      if (shape_.with_bias) push("b", 1, d, true);
      break;
    case ModelKind::logistic_classifier:
      push("w", m * d, d, false);
      if (shape_.with_bias) push("b", m, d, true);
      break;
    case ModelKind::mlp_softdice_segmenter:
      if (h == 0) throw std::invalid_argument("ToyModel: zero hidden_dim");
      push("w1", h * d, d, false);
      if (shape_.with_bias) push("b1", h, d, true);
      push("w2", m * h, h, false);
      if (shape_.with_bias) push("b2", m, h, true);
      break;
  }
}

ParamVector ToyModel::init_params(std::uint64_t seed) const {
  Rng rng(derive_seed(seed, "init"));
  ParamVector w(param_count_, 0.0);
  for (const auto& layer : layout_) {
    if (layer.is_bias) continue;  // biases start at zero
    const double limit = std::sqrt(6.0 / static_cast<double>(layer.fan_in));
    for (std::size_t i = layer.begin; i < layer.end; ++i) {
      w[i] = rng.uniform(-limit, limit);
    }
  }
  return w;
}

void ToyModel::check_batch(const ParamVector& w, const Batch& batch) const {
  if (w.size() != param_count_) {
    throw std::invalid_argument("ToyModel: parameter vector has length " +
                                std::to_string(w.size()) + ", expected " +
                                std::to_string(param_count_));
  }
  if (batch.batch_size == 0 || batch.input_dim != shape_.input_dim ||
      batch.target_dim != shape_.output_dim ||
      batch.inputs.size() != batch.batch_size * batch.input_dim ||
      batch.targets.size() != batch.batch_size * batch.target_dim) {
    throw std::invalid_argument("ToyModel: batch shape mismatch");
  }
}

double ToyModel::loss(const ParamVector& w, const Batch& batch) const {
  check_batch(w, batch);
  const std::size_t B = batch.batch_size;
  const std::size_t d = shape_.input_dim;
  const std::size_t m = shape_.output_dim;
  double total = 0.0;
  switch (shape_.kind) {
    case ModelKind::linear_regression: {
      const double b0 = shape_.with_bias ? w[d] : 0.0;
      for (std::size_t i = 0; i < B; ++i) {
        const double* x = &batch.inputs[i * d];
        double pred = b0;
        for (std::size_t j = 0; j < d; ++j) pred += w[j] * x[j];
        const double r = pred - batch.targets[i];
        total += r * r;
      }
      break;
    }
    case ModelKind::logistic_classifier: {
      std::vector<double> logits(m);
      for (std::size_t i = 0; i < B; ++i) {
        const double* x = &batch.inputs[i * d];
        const double* y = &batch.targets[i * m];
        for (std::size_t c = 0; c < m; ++c) {
          double z = shape_.with_bias ? w[m * d + c] : 0.0;
          const double* row = &w[c * d];
          for (std::size_t j = 0; j < d; ++j) z += row[j] * x[j];
          logits[c] = z;
        }
        const double zmax = *std::max_element(logits.begin(), logits.end());
        double sum = 0.0;
        for (std::size_t c = 0; c < m; ++c) sum += std::exp(logits[c] - zmax);
        const double logsum = zmax + std::log(sum);
        for (std::size_t c = 0; c < m; ++c) total -= y[c] * (logits[c] - logsum);
      }
      break;
    }
    case ModelKind::mlp_softdice_segmenter: {
      const std::size_t h = shape_.hidden_dim;
      std::vector<double> hidden(h), probs(m);
      for (std::size_t i = 0; i < B; ++i) {
        const double* x = &batch.inputs[i * d];
        const double* g = &batch.targets[i * m];
        for (std::size_t k = 0; k < h; ++k) {
          double z = shape_.with_bias ? w[h * d + k] : 0.0;
          const double* row = &w[k * d];
          for (std::size_t j = 0; j < d; ++j) z += row[j] * x[j];
          hidden[k] = std::tanh(z);
        }
        const std::size_t w2_off = h * d + (shape_.with_bias ? h : 0);
        for (std::size_t c = 0; c < m; ++c) {
          double z = shape_.with_bias ? w[w2_off + m * h + c] : 0.0;
          const double* row = &w[w2_off + c * h];
          for (std::size_t k = 0; k < h; ++k) z += row[k] * hidden[k];
          probs[c] = sigmoid(z);
        }
        total += soft_dice_loss(probs.data(), g, m, shape_.dice_delta);
      }
      break;
    }
  }
  return total / static_cast<double>(B);
}

double ToyModel::loss_and_gradient(const ParamVector& w, const Batch& batch,
                                   ParamVector& grad) const {
  check_batch(w, batch);
  grad.assign(param_count_, 0.0);
  const std::size_t B = batch.batch_size;
  const std::size_t d = shape_.input_dim;
  const std::size_t m = shape_.output_dim;
  const double inv_b = 1.0 / static_cast<double>(B);
  double total = 0.0;
  switch (shape_.kind) {
    case ModelKind::linear_regression: {
      const double b0 = shape_.with_bias ? w[d] : 0.0;
      for (std::size_t i = 0; i < B; ++i) {
        const double* x = &batch.inputs[i * d];
        double pred = b0;
        for (std::size_t j = 0; j < d; ++j) pred += w[j] * x[j];
        const double r = pred - batch.targets[i];
        total += r * r;
        const double coef = 2.0 * r * inv_b;
        for (std::size_t j = 0; j < d; ++j) grad[j] += coef * x[j];
        if (shape_.with_bias) grad[d] += coef;
      }
      break;
    }
    case ModelKind::logistic_classifier: {
      std::vector<double> logits(m), probs(m);
      for (std::size_t i = 0; i < B; ++i) {
        const double* x = &batch.inputs[i * d];
        const double* y = &batch.targets[i * m];
        for (std::size_t c = 0; c < m; ++c) {
          double z = shape_.with_bias ? w[m * d + c] : 0.0;
          const double* row = &w[c * d];
          for (std::size_t j = 0; j < d; ++j) z += row[j] * x[j];
          logits[c] = z;
        }
        const double zmax = *std::max_element(logits.begin(), logits.end());
        double sum = 0.0;
        for (std::size_t c = 0; c < m; ++c) sum += std::exp(logits[c] - zmax);
        const double logsum = zmax + std::log(sum);
        for (std::size_t c = 0; c < m; ++c) {
          probs[c] = std::exp(logits[c] - logsum);
          total -= y[c] * (logits[c] - logsum);
        }
        for (std::size_t c = 0; c < m; ++c) {
          const double coef = (probs[c] - y[c]) * inv_b;
          double* grow = &grad[c * d];
          for (std::size_t j = 0; j < d; ++j) grow[j] += coef * x[j];
          if (shape_.with_bias) grad[m * d + c] += coef;
        }
      }
      break;
    }
    case ModelKind::mlp_softdice_segmenter: {
      const std::size_t h = shape_.hidden_dim;
      const std::size_t w2_off = h * d + (shape_.with_bias ? h : 0);
      std::vector<double> hidden(h), probs(m), dprobs(m), dlogit(m), dhidden(h);
      for (std::size_t i = 0; i < B; ++i) {
        const double* x = &batch.inputs[i * d];
        const double* g = &batch.targets[i * m];
        for (std::size_t k = 0; k < h; ++k) {
          double z = shape_.with_bias ? w[h * d + k] : 0.0;
          const double* row = &w[k * d];
          for (std::size_t j = 0; j < d; ++j) z += row[j] * x[j];
          hidden[k] = std::tanh(z);
        }
        for (std::size_t c = 0; c < m; ++c) {
          double z = shape_.with_bias ? w[w2_off + m * h + c] : 0.0;
          const double* row = &w[w2_off + c * h];
          for (std::size_t k = 0; k < h; ++k) z += row[k] * hidden[k];
          probs[c] = sigmoid(z);
        }
        total += soft_dice_loss(probs.data(), g, m, shape_.dice_delta);
        soft_dice_backward(probs.data(), g, m, shape_.dice_delta, inv_b,
                           dprobs.data());
        for (std::size_t c = 0; c < m; ++c) {
          dlogit[c] = dprobs[c] * probs[c] * (1.0 - probs[c]);
        }
        std::fill(dhidden.begin(), dhidden.end(), 0.0);
        for (std::size_t c = 0; c < m; ++c) {
          const double* row = &w[w2_off + c * h];
          double* grow = &grad[w2_off + c * h];
          for (std::size_t k = 0; k < h; ++k) {
            grow[k] += dlogit[c] * hidden[k];
            dhidden[k] += dlogit[c] * row[k];
          }
          if (shape_.with_bias) grad[w2_off + m * h + c] += dlogit[c];
        }
        for (std::size_t k = 0; k < h; ++k) {
          const double dpre = dhidden[k] * (1.0 - hidden[k] * hidden[k]);
          double* grow = &grad[k * d];
          for (std::size_t j = 0; j < d; ++j) grow[j] += dpre * x[j];
          if (shape_.with_bias) grad[h * d + k] += dpre;
        }
      }
      break;
    }
  }
  if (shape_.weight_decay != 0.0) {
    for (std::size_t i = 0; i < param_count_; ++i) {
      grad[i] += shape_.weight_decay * w[i];
    }
  }
  return total * inv_b;
}

ParamVector ToyModel::gradient(const ParamVector& w, const Batch& batch) const {
  ParamVector grad;
  loss_and_gradient(w, batch, grad);
  return grad;
}

double ToyModel::evaluate(const ParamVector& w, const Batch& examples) const {
  check_batch(w, examples);
  const std::size_t B = examples.batch_size;
  const std::size_t d = shape_.input_dim;
  const std::size_t m = shape_.output_dim;
  switch (shape_.kind) {
    case ModelKind::linear_regression:
      return loss(w, examples);  // decay-free MSE
    case ModelKind::logistic_classifier: {
      std::vector<double> logits(m);
      std::size_t correct = 0;
      for (std::size_t i = 0; i < B; ++i) {
        const double* x = &examples.inputs[i * d];
        const double* y = &examples.targets[i * m];
        for (std::size_t c = 0; c < m; ++c) {
          double z = shape_.with_bias ? w[m * d + c] : 0.0;
          const double* row = &w[c * d];
          for (std::size_t j = 0; j < d; ++j) z += row[j] * x[j];
          logits[c] = z;
        }
        const std::size_t pred =
            std::max_element(logits.begin(), logits.end()) - logits.begin();
        const std::size_t truth =
            std::max_element(y, y + m) - y;
        if (pred == truth) ++correct;
      }
      return static_cast<double>(correct) / static_cast<double>(B);
    }
    case ModelKind::mlp_softdice_segmenter: {
      const std::size_t h = shape_.hidden_dim;
      const std::size_t w2_off = h * d + (shape_.with_bias ? h : 0);
      std::vector<double> hidden(h), probs(m);
      double dice_sum = 0.0;
      for (std::size_t i = 0; i < B; ++i) {
        const double* x = &examples.inputs[i * d];
        const double* g = &examples.targets[i * m];
        for (std::size_t k = 0; k < h; ++k) {
          double z = shape_.with_bias ? w[h * d + k] : 0.0;
          const double* row = &w[k * d];
          for (std::size_t j = 0; j < d; ++j) z += row[j] * x[j];
          hidden[k] = std::tanh(z);
        }
        for (std::size_t c = 0; c < m; ++c) {
          double z = shape_.with_bias ? w[w2_off + m * h + c] : 0.0;
          const double* row = &w[w2_off + c * h];
          for (std::size_t k = 0; k < h; ++k) z += row[k] * hidden[k];
          probs[c] = sigmoid(z);
        }
        dice_sum += 1.0 - soft_dice_loss(probs.data(), g, m, shape_.dice_delta);
      }
      return dice_sum / static_cast<double>(B);
    }
  }
  return 0.0;
}

const char* ToyModel::eval_metric_name() const {
  switch (shape_.kind) {
    case ModelKind::linear_regression: return "eval_mse";
    case ModelKind::logistic_classifier: return "eval_accuracy";
    case ModelKind::mlp_softdice_segmenter: return "eval_dice";
  }
  return "?";
}

bool ToyModel::eval_higher_is_better() const {
  return shape_.kind != ModelKind::linear_regression;
}

}  // namespace fedsim
