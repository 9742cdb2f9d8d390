#include "hrformer/toy_training.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

#include "hrformer/error.hpp"

namespace hrformer {

std::string_view to_string(ToyTask task) { return task == ToyTask::synth_class ? "synth-class" : "synth-pose"; }

ToyTask parse_toy_task(std::string_view text) {
  if (text == "synth-class") return ToyTask::synth_class;
  if (text == "synth-pose") return ToyTask::synth_pose;
  throw ConfigError("unknown toy task '" + std::string(text) + "' (expected synth-class or synth-pose)");
}

ToyDataset make_toy_dataset(ToyTask task, Index samples, Index image_size, Rng& rng) {
  if (samples < 1 || image_size < 8) throw ConfigError("toy dataset: need samples >= 1 and image size >= 8");
  const Index s = image_size;
  ToyDataset d;
  d.images = Tensor({samples, 3, s, s});
  if (task == ToyTask::synth_class) {
    for (Index n = 0; n < samples; ++n) {
      const int label = static_cast<int>(n % 2);
      d.labels.push_back(label);
      const double period = rng.uniform(4.0, 8.0);
      const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
      for (Index c = 0; c < 3; ++c) {
        for (Index y = 0; y < s; ++y) {
          for (Index x = 0; x < s; ++x) {
            const double t = static_cast<double>(label == 0 ? y : x);
            d.images.at({n, c, y, x}) = std::sin(2.0 * std::numbers::pi * t / period + phase) + rng.normal(0.3);
          }
        }
      }
    }
    return d;
  }

  const Index hs = s / 4;
  d.heatmaps = Tensor({samples, 1, hs, hs});
  for (Index n = 0; n < samples; ++n) {
    const Index ky = rng.integer(1, hs - 2), kx = rng.integer(1, hs - 2);
    d.keypoints.emplace_back(ky, kx);
    const double cy = 4.0 * static_cast<double>(ky), cx = 4.0 * static_cast<double>(kx);
    for (Index c = 0; c < 3; ++c) {
      for (Index y = 0; y < s; ++y) {
        for (Index x = 0; x < s; ++x) {
          const double r2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
          d.images.at({n, c, y, x}) = 2.0 * std::exp(-r2 / 8.0) + rng.normal(0.1);
        }
      }
    }
    for (Index y = 0; y < hs; ++y) {
      for (Index x = 0; x < hs; ++x) {
        const double r2 = static_cast<double>((y - ky) * (y - ky) + (x - kx) * (x - kx));
        d.heatmaps.at({n, 0, y, x}) = std::exp(-r2 / 2.0);
      }
    }
  }
  return d;
}

std::vector<std::pair<Index, Index>> heatmap_argmax(const Tensor& heatmaps) {
  if (heatmaps.rank() != 4) throw DimensionError("heatmap_argmax: expected [n,k,h,w], got " + to_string(heatmaps.shape()));
  const Index n = heatmaps.dim(0), k = heatmaps.dim(1), h = heatmaps.dim(2), w = heatmaps.dim(3);
  std::vector<std::pair<Index, Index>> out;
  for (Index i = 0; i < n; ++i) {
    const double* map = heatmaps.raw() + i * k * h * w;
    Index best = 0;
    for (Index j = 1; j < h * w; ++j)
      if (map[j] > map[best]) best = j;
    out.emplace_back(best / w, best % w);
  }
  return out;
}

ToyResult train_toy(HRFormer& model, const ToyOptions& options) {
  const HeadKind want = options.task == ToyTask::synth_class ? HeadKind::classification : HeadKind::pose;
  if (model.config().head != want) {
    throw ConfigError(std::string(to_string(options.task)) + " needs a " + std::string(to_string(want)) + " head");
  }
  if (options.steps < 0) throw ConfigError("toy training: steps must be >= 0");
  Rng rng(options.seed);
  const ToyDataset data = make_toy_dataset(options.task, options.samples, options.image_size, rng);

  ParameterList named = model.parameters();
  std::vector<Tensor> params;
  for (NamedParameter& p : named) params.push_back(p.tensor.set_requires_grad(true));

  RunOptions run;
  run.training = options.learning_rate != 0.0;
  ToyResult result;
  for (int step = 0; step < options.steps; ++step) {
    GradTape tape;
    TapeScope scope(tape);
    const Tensor out = model.forward(data.images, run);
    const Tensor loss = want == HeadKind::classification ? cross_entropy_loss(out, data.labels)
                                                         : mse_loss(out, data.heatmaps);
    if (!std::isfinite(loss[0])) throw NumericalError("toy training diverged at step " + std::to_string(step));
    result.losses.push_back(loss[0]);
    tape.backward(loss);
    sgd_step(params, options.learning_rate);
  }
  for (Tensor& p : params) p.set_requires_grad(false);

  if (want == HeadKind::pose) {
    const auto predicted = heatmap_argmax(model.forward(data.images));
    result.max_keypoint_error = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
      const Index dy = std::abs(predicted[i].first - data.keypoints[i].first);
      const Index dx = std::abs(predicted[i].second - data.keypoints[i].second);
      result.max_keypoint_error = std::max({result.max_keypoint_error, dy, dx});
    }
  }
  return result;
}

void write_loss_curve(const std::filesystem::path& path, const std::vector<double>& losses) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write loss curve to " + path.string());
  out.precision(17);
  for (std::size_t i = 0; i < losses.size(); ++i) out << i << ',' << losses[i] << '\n';
}

}  // namespace hrformer
