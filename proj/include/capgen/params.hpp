#pragma once

#include <Eigen/Dense>

#include <functional>
#include <limits>
#include <string>
#include <vector>

namespace capgen {

// Non-owning handle to one named parameter block. Vectors are n x 1.
struct ParamRef {
  std::string name;
  Eigen::MatrixXd* value;
};

using ParamList = std::vector<ParamRef>;
// Gradient buffers aligned index-by-index with a ParamList.
using GradList = std::vector<Eigen::MatrixXd>;

GradList zeros_like(const ParamList& params);
void add_scaled(GradList& into, const GradList& from, double scale);
void scale(GradList& grads, double factor);
bool all_finite(const GradList& grads);
double squared_norm(const GradList& grads);
void sgd_step(const ParamList& params, const GradList& grads, double learning_rate);
// Flattens all blocks (column-major within a block) into one vector.
Eigen::VectorXd flatten(const GradList& grads);

// Computes the loss; when `grads` is non-null it must also accumulate the
// analytic gradient into it (buffers arrive zeroed and aligned).
using LossFn = std::function<double(GradList* grads)>;

struct GradientCheckOptions {
  double step = 1e-5;
  // Coordinates whose one-sided differences disagree by more than this are
  // treated as sitting on a kink and skipped. Infinity disables exclusion.
  double kink_threshold = std::numeric_limits<double>::infinity();
};

struct GradientCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t excluded = 0;
  std::string worst;  // "name[index]" of the worst coordinate
};

// Central finite differences on every coordinate; relative error is
// |ga - gn| / max(1e-8, |ga| + |gn|). Parameters are restored afterwards.
// Throws NumericError when the loss is not finite.
GradientCheckResult gradient_check(const ParamList& params, const LossFn& loss,
                                   const GradientCheckOptions& options = {});

}  // namespace capgen
