#include "hrformer/gradcheck.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <string_view>

#include "hrformer/error.hpp"

namespace hrformer {

Tensor LossFunction::operator()(const HRFormer& model) const {
  const Tensor out = model.forward(image);
  if (model.config().head == HeadKind::classification) return cross_entropy_loss(out, labels);
  return mse_loss(out, target);
}

LossFunction make_check_loss(const HRFormer& model, Index batch, Index height, Index width, Rng& rng) {
  LossFunction loss;
  loss.image = normal_tensor({batch, 3, height, width}, rng);
  const ModelConfig& config = model.config();
  if (config.head == HeadKind::classification) {
    for (Index i = 0; i < batch; ++i) loss.labels.push_back(static_cast<int>(rng.integer(0, config.num_classes - 1)));
  } else {
    loss.target = normal_tensor(head_output_shape(config, batch, height, width), rng);
  }
  return loss;
}

void randomize_parameters(HRFormer& model, Rng& rng) {
  for (NamedParameter& p : model.parameters()) {
    Tensor& t = p.tensor;
    const std::string_view name = p.name;
    double mean = 0.0, stddev = 0.1;
    if (name.ends_with(".gamma")) {
      mean = 1.0;
    } else if (t.rank() == 2) {
      stddev = 1.0 / std::sqrt(static_cast<double>(t.dim(0)));
    } else if (t.rank() == 4) {
      stddev = 1.0 / std::sqrt(static_cast<double>(t.dim(1) * t.dim(2) * t.dim(3)));
    }
    for (double& v : t.data()) v = mean + rng.normal(stddev);
  }
}

GradcheckReport gradcheck(HRFormer& model, const GradcheckOptions& options) {
  Rng rng(options.seed);
  if (options.randomize_parameters) randomize_parameters(model, rng);
  const LossFunction loss_fn = make_check_loss(model, options.batch, options.height, options.width, rng);
  ParameterList params = model.parameters();

  for (NamedParameter& p : params) p.tensor.set_requires_grad(true);
  {
    GradTape tape;
    TapeScope scope(tape);
    const Tensor loss = loss_fn(model);
    tape.backward(loss);
  }
  for (NamedParameter& p : params) p.tensor.set_requires_grad(false);

  struct Accum {
    Index scalars = 0;
    double diff2 = 0.0, analytic2 = 0.0, numeric2 = 0.0;
    std::string worst;
    double worst_abs = 0.0;
  };
  std::map<std::string, Accum> groups;
  const double base = loss_fn(model)[0];
  Index refined = 0;
  for (NamedParameter& p : params) {
    Accum& acc = groups[p.group];
    auto values = p.tensor.data();
    const bool has = p.tensor.has_grad();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      double numeric = 0.0, best_gap = std::numeric_limits<double>::infinity();
      double h = options.step;
      // One-sided slopes that disagree mean a ReLU kink lies within the step.
      // Smaller steps are tried and the one with the most consistent slopes kept.
      for (int attempt = 0; attempt < 3; ++attempt, h /= 10.0) {
        values[i] = saved + h;
        const double up = loss_fn(model)[0];
        values[i] = saved - h;
        const double down = loss_fn(model)[0];
        values[i] = saved;
        if (!std::isfinite(up) || !std::isfinite(down)) throw NumericalError("gradcheck: non-finite loss at " + p.name);
        const double forward = (up - base) / h, backward = (base - down) / h;
        const double gap = std::abs(forward - backward);
        if (gap < best_gap) {
          best_gap = gap;
          numeric = (up - down) / (2.0 * h);
        }
        if (gap <= 1e-4 * std::max(std::abs(forward), std::abs(backward)) + 1e-9) break;
        if (attempt == 0) ++refined;
      }
      const double analytic = has ? p.tensor.grad()[i] : 0.0;
      const double d = std::abs(analytic - numeric);
      acc.diff2 += d * d;
      acc.analytic2 += analytic * analytic;
      acc.numeric2 += numeric * numeric;
      if (d > acc.worst_abs) {
        acc.worst_abs = d;
        acc.worst = p.name + "[" + std::to_string(i) + "]";
      }
    }
    acc.scalars += p.tensor.size();
  }

  GradcheckReport report;
  for (const auto& [name, acc] : groups) {
    GroupError g;
    g.group = name;
    g.scalars = acc.scalars;
    g.analytic_norm = std::sqrt(acc.analytic2);
    const double denom = std::max(std::sqrt(acc.analytic2), std::sqrt(acc.numeric2));
    g.rel_error = denom > 0.0 ? std::sqrt(acc.diff2) / denom : 0.0;
    g.worst_parameter = acc.worst;
    g.worst_abs_diff = acc.worst_abs;
    report.max_rel_error = std::max(report.max_rel_error, g.rel_error);
    report.groups.push_back(std::move(g));
  }
  report.refined = refined;
  report.passed = report.max_rel_error < options.fail_threshold;
  return report;
}

std::string format_report(const GradcheckReport& report) {
  std::string out;
  char line[256];
  for (const GroupError& g : report.groups) {
    std::snprintf(line, sizeof line, "%-12s scalars=%-6lld grad_norm=%.3e rel_error=%.3e worst=%s\n", g.group.c_str(),
                  static_cast<long long>(g.scalars), g.analytic_norm, g.rel_error, g.worst_parameter.c_str());
    out += line;
  }
  std::snprintf(line, sizeof line, "refined_elements=%lld\n", static_cast<long long>(report.refined));
  out += line;
  std::snprintf(line, sizeof line, "max_rel_error=%.3e %s\n", report.max_rel_error, report.passed ? "PASS" : "FAIL");
  out += line;
  return out;
}

}  // namespace hrformer
