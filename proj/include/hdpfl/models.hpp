#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "hdpfl/dp_local.hpp"

namespace hdpfl {

struct Dataset {
  Eigen::MatrixXd features;  // N x d
  Eigen::VectorXi labels;    // values in {0..C-1}

  long size() const { return features.rows(); }
  long dim() const { return features.cols(); }

  Dataset subset(const std::vector<int>& indices) const {
    Dataset out;
    out.features.resize(static_cast<long>(indices.size()), features.cols());
    out.labels.resize(static_cast<long>(indices.size()));
    for (std::size_t j = 0; j < indices.size(); ++j) {
      out.features.row(static_cast<long>(j)) = features.row(indices[j]);
      out.labels(static_cast<long>(j)) = labels(indices[j]);
    }
    return out;
  }
};

enum class ModelKind { LinearSoftmax, Mlp };

/// Cross-entropy classifiers with analytic per-sample gradients.
/// linear-softmax: logits = W^T x + b, p = (d+1)C.
/// mlp: one tanh hidden layer of width h, p = (d+1)h + (h+1)C.
struct Model {
  ModelKind kind = ModelKind::LinearSoftmax;
  int d = 0;
  int classes = 0;
  int hidden = 0;

  long param_count() const {
    if (kind == ModelKind::LinearSoftmax) return static_cast<long>(d + 1) * classes;
    return static_cast<long>(d + 1) * hidden + static_cast<long>(hidden + 1) * classes;
  }

  static Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
    Eigen::VectorXd s = (logits.array() - logits.maxCoeff()).exp();
    return s / s.sum();
  }

  // Probabilities for one sample.
  Eigen::VectorXd predict(const ParamVector& theta, const Eigen::VectorXd& x) const {
    if (kind == ModelKind::LinearSoftmax) {
      Eigen::Map<const Eigen::MatrixXd> w(theta.data(), d, classes);
      Eigen::Map<const Eigen::VectorXd> b(theta.data() + static_cast<long>(d) * classes,
                                          classes);
      return softmax(w.transpose() * x + b);
    }
    Eigen::Map<const Eigen::MatrixXd> w1(theta.data(), d, hidden);
    Eigen::Map<const Eigen::VectorXd> b1(theta.data() + static_cast<long>(d) * hidden,
                                         hidden);
    const long off2 = static_cast<long>(d + 1) * hidden;
    Eigen::Map<const Eigen::MatrixXd> w2(theta.data() + off2, hidden, classes);
    Eigen::Map<const Eigen::VectorXd> b2(
        theta.data() + off2 + static_cast<long>(hidden) * classes, classes);
    Eigen::VectorXd a = (w1.transpose() * x + b1).array().tanh();
    return softmax(w2.transpose() * a + b2);
  }

  // Gradient of the cross-entropy loss for one sample, flattened in
  // parameter order.
  ParamVector sample_gradient(const ParamVector& theta, const Eigen::VectorXd& x,
                              int label) const {
    ParamVector grad = ParamVector::Zero(param_count());
    if (kind == ModelKind::LinearSoftmax) {
      Eigen::Map<const Eigen::MatrixXd> w(theta.data(), d, classes);
      Eigen::Map<const Eigen::VectorXd> b(theta.data() + static_cast<long>(d) * classes,
                                          classes);
      Eigen::VectorXd delta = softmax(w.transpose() * x + b);
      delta(label) -= 1.0;
      Eigen::Map<Eigen::MatrixXd> gw(grad.data(), d, classes);
      Eigen::Map<Eigen::VectorXd> gb(grad.data() + static_cast<long>(d) * classes,
                                     classes);
      gw = x * delta.transpose();
      gb = delta;
      return grad;
    }
    Eigen::Map<const Eigen::MatrixXd> w1(theta.data(), d, hidden);
    Eigen::Map<const Eigen::VectorXd> b1(theta.data() + static_cast<long>(d) * hidden,
                                         hidden);
    const long off2 = static_cast<long>(d + 1) * hidden;
    Eigen::Map<const Eigen::MatrixXd> w2(theta.data() + off2, hidden, classes);
    Eigen::Map<const Eigen::VectorXd> b2(
        theta.data() + off2 + static_cast<long>(hidden) * classes, classes);

    Eigen::VectorXd a = (w1.transpose() * x + b1).array().tanh();
    Eigen::VectorXd delta2 = softmax(w2.transpose() * a + b2);
    delta2(label) -= 1.0;
    Eigen::VectorXd delta1 =
        (w2 * delta2).array() * (1.0 - a.array().square());

    Eigen::Map<Eigen::MatrixXd> gw1(grad.data(), d, hidden);
    Eigen::Map<Eigen::VectorXd> gb1(grad.data() + static_cast<long>(d) * hidden, hidden);
    Eigen::Map<Eigen::MatrixXd> gw2(grad.data() + off2, hidden, classes);
    Eigen::Map<Eigen::VectorXd> gb2(
        grad.data() + off2 + static_cast<long>(hidden) * classes, classes);
    gw1 = x * delta1.transpose();
    gb1 = delta1;
    gw2 = a * delta2.transpose();
    gb2 = delta2;
    return grad;
  }

  double sample_loss(const ParamVector& theta, const Eigen::VectorXd& x,
                     int label) const {
    return -std::log(std::max(predict(theta, x)(label), 1e-300));
  }

  double loss(const ParamVector& theta, const Dataset& data) const {
    double total = 0.0;
    for (long i = 0; i < data.size(); ++i)
      total += sample_loss(theta, data.features.row(i).transpose(), data.labels(i));
    return total / static_cast<double>(data.size());
  }

  double accuracy(const ParamVector& theta, const Dataset& data) const {
    long hits = 0;
    for (long i = 0; i < data.size(); ++i) {
      Eigen::Index pred;
      predict(theta, data.features.row(i).transpose()).maxCoeff(&pred);
      if (static_cast<int>(pred) == data.labels(i)) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(data.size());
  }
};

/// Rows are exact analytic per-sample gradients at theta for the chosen
/// batch indices.
inline Eigen::MatrixXd per_sample_gradients(const Model& model,
                                            const ParamVector& theta,
                                            const Dataset& data,
                                            const std::vector<int>& indices) {
  if (indices.empty()) throw std::invalid_argument("per_sample_gradients: empty batch");
  Eigen::MatrixXd out(static_cast<long>(indices.size()), model.param_count());
  for (std::size_t j = 0; j < indices.size(); ++j)
    out.row(static_cast<long>(j)) =
        model
            .sample_gradient(theta, data.features.row(indices[j]).transpose(),
                             data.labels(indices[j]))
            .transpose();
  return out;
}

}  // namespace hdpfl
