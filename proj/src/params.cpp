#include "capgen/params.hpp"

#include "capgen/errors.hpp"

#include <cmath>
#include <iostream>
#include <sstream>

namespace capgen {

namespace {
WarningSink& warning_sink() {
  static WarningSink sink;
  return sink;
}
}  // namespace

void set_warning_sink(WarningSink sink) { warning_sink() = std::move(sink); }

void warn(const std::string& message) {
  if (warning_sink()) {
    warning_sink()(message);
  } else {
    std::cerr << "warning: " << message << '\n';
  }
}

GradList zeros_like(const ParamList& params) {
  GradList grads;
  grads.reserve(params.size());
  for (const auto& p : params) grads.push_back(Eigen::MatrixXd::Zero(p.value->rows(), p.value->cols()));
  return grads;
}

void add_scaled(GradList& into, const GradList& from, double factor) {
  for (std::size_t i = 0; i < into.size(); ++i) into[i] += factor * from[i];
}

void scale(GradList& grads, double factor) {
  for (auto& g : grads) g *= factor;
}

bool all_finite(const GradList& grads) {
  for (const auto& g : grads)
    if (!g.allFinite()) return false;
  return true;
}

double squared_norm(const GradList& grads) {
  double s = 0.0;
  for (const auto& g : grads) s += g.squaredNorm();
  return s;
}

void sgd_step(const ParamList& params, const GradList& grads, double learning_rate) {
  for (std::size_t i = 0; i < params.size(); ++i) *params[i].value -= learning_rate * grads[i];
}

Eigen::VectorXd flatten(const GradList& grads) {
  Eigen::Index total = 0;
  for (const auto& g : grads) total += g.size();
  Eigen::VectorXd out(total);
  Eigen::Index at = 0;
  for (const auto& g : grads) {
    out.segment(at, g.size()) = g.reshaped();
    at += g.size();
  }
  return out;
}

GradientCheckResult gradient_check(const ParamList& params, const LossFn& loss,
                                   const GradientCheckOptions& options) {
  GradList analytic = zeros_like(params);
  const double base = loss(&analytic);
  if (!std::isfinite(base)) throw NumericError("gradient_check: loss is not finite");

  GradientCheckResult result;
  const double h = options.step;
  for (std::size_t b = 0; b < params.size(); ++b) {
    Eigen::MatrixXd& value = *params[b].value;
    for (Eigen::Index i = 0; i < value.size(); ++i) {
      const double saved = value.data()[i];
      value.data()[i] = saved + h;
      const double up = loss(nullptr);
      value.data()[i] = saved - h;
      const double down = loss(nullptr);
      value.data()[i] = saved;
      if (!std::isfinite(up) || !std::isfinite(down))
        throw NumericError("gradient_check: loss is not finite at a perturbed point");

      const double forward = (up - base) / h;
      const double backward = (base - down) / h;
      if (std::abs(forward - backward) > options.kink_threshold) {
        ++result.excluded;
        continue;
      }
      const double numeric = (up - down) / (2.0 * h);
      const double ga = analytic[b].data()[i];
      const double rel = std::abs(ga - numeric) / std::max(1e-8, std::abs(ga) + std::abs(numeric));
      ++result.checked;
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        std::ostringstream os;
        os << params[b].name << '[' << i << ']';
        result.worst = os.str();
      }
    }
  }
  return result;
}

}  // namespace capgen
