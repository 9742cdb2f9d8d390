#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "hrformer/complexity.hpp"
#include "hrformer/error.hpp"
#include "hrformer/gradcheck.hpp"
#include "hrformer/model.hpp"
#include "hrformer/tensor_io.hpp"
#include "hrformer/toy_training.hpp"

using namespace hrformer;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitNumerical = 3;

struct ModelArgs {
  std::string model;
  std::string config_file;
  std::vector<std::string> settings;
  std::string head;
  bool no_dw = false;
  std::optional<std::uint64_t> seed;
};

void add_model_args(CLI::App* cmd, ModelArgs& a, const std::string& default_model) {
  a.model = default_model;
  cmd->add_option("model,--model", a.model, "preset name (" + [] {
    std::string s;
    for (const auto& n : preset_names()) s += (s.empty() ? "" : ", ") + n;
    return s;
  }() + ")");
  cmd->add_option("--config", a.config_file, "config file (replaces the preset; may name one with preset = ...)");
  cmd->add_option("--set", a.settings, "key=value override, repeatable");
  cmd->add_option("--head", a.head, "classification, pose or segmentation");
  cmd->add_flag("--no-ffn-dwconv", a.no_dw, "skip the depth-wise conv inside every FFN");
  cmd->add_option("--seed", a.seed, "seed for weights and generated data");
}

ModelConfig build_config(const ModelArgs& a) {
  ModelConfig config = a.config_file.empty() ? preset(a.model) : load_config(a.config_file);
  for (const std::string& kv : a.settings) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    apply_setting(config, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (!a.head.empty()) config.head = parse_head_kind(a.head);
  if (a.no_dw) config.enable_ffn_dwconv = false;
  if (a.seed) config.seed = *a.seed;
  validate(config);
  return config;
}

std::pair<Index, Index> parse_extent(const std::string& text) {
  const auto x = text.find_first_of("xX");
  try {
    if (x == std::string::npos) throw std::invalid_argument(text);
    std::size_t used = 0;
    const long long h = std::stoll(text.substr(0, x), &used);
    if (used != x) throw std::invalid_argument(text);
    const long long w = std::stoll(text.substr(x + 1), &used);
    if (used != text.size() - x - 1 || h < 1 || w < 1) throw std::invalid_argument(text);
    return {h, w};
  } catch (const std::exception&) {
    throw ConfigError("--input expects HxW (e.g. 224x224), got '" + text + "'");
  }
}

std::string shape_line(const MapShape& s) {
  return std::to_string(s.channels) + "x" + std::to_string(s.height) + "x" + std::to_string(s.width);
}

void describe(const ModelConfig& config, Index h, Index w) {
  std::cout << "model " << config.name << "  head " << to_string(config.head)
            << "  ffn_dwconv " << (config.enable_ffn_dwconv ? "on" : "off") << "\n";
  std::cout << "stem: 2 x conv3x3/2, " << config.stem_channels << " channels\n";
  const StageConfig& s0 = config.stages[0];
  std::cout << "stage1: " << s0.modules * s0.blocks << " bottleneck(s), width " << s0.channels << " -> "
            << s0.channels * 4 << ", transition to " << config.base_channels() << "\n";
  for (std::size_t t = 1; t < config.stages.size(); ++t) {
    const StageConfig& st = config.stages[t];
    std::cout << "stage" << t + 1 << ": " << st.modules << " module(s) x " << st.blocks << " block(s)\n";
    for (std::size_t s = 0; s <= t; ++s) {
      std::cout << "  stream" << s << ": channels " << (config.base_channels() << s) << ", heads " << st.heads[s]
                << ", mlp_ratio " << st.mlp_ratio[s] << ", window " << st.window[s] << "\n";
    }
  }
  std::cout << "channels (";
  const auto widths = config.stream_channels();
  for (std::size_t i = 0; i < widths.size(); ++i) std::cout << (i ? "," : "") << widths[i];
  std::cout << ")\n";
  std::cout << "params " << count_params(config).params() << "\n";
  if (h > 0) {
    std::cout << "input 3x" << h << "x" << w << "\n";
    std::cout << "stem " << shape_line(stem_shape(config, h, w)) << "\n";
    const auto shapes = stream_shapes(config, h, w);
    for (std::size_t s = 0; s < shapes.size(); ++s) std::cout << "stream" << s << " " << shape_line(shapes[s]) << "\n";
    std::cout << "output " << to_string(head_output_shape(config, 1, h, w)) << "\n";
  }
}

std::vector<int> parse_int_list(const std::string& text) {
  std::vector<int> out;
  std::string item;
  std::istringstream is(text);
  while (std::getline(is, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("expected a comma-separated integer list, got '" + text + "'");
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"HRFormer reference implementation: forward runs, gradient checks, complexity reports, toy training"};
  app.require_subcommand(1);

  ModelArgs describe_args, analyze_args, forward_args, grad_args, toy_args, sweep_args;
  std::string describe_input, analyze_input = "224x224", forward_input = "224x224", sweep_input = "224x224";

  auto* describe_cmd = app.add_subcommand("describe", "print the expanded architecture");
  add_model_args(describe_cmd, describe_args, "hrformer-t");
  describe_cmd->add_option("--input", describe_input, "HxW input size for stream shapes");

  Index analyze_batch = 1;
  int analyze_depth = 2;
  bool analyze_records = false;
  auto* analyze_cmd = app.add_subcommand("analyze", "static parameter and FLOP report");
  add_model_args(analyze_cmd, analyze_args, "hrformer-t");
  analyze_cmd->add_option("--input", analyze_input, "HxW input size")->capture_default_str();
  analyze_cmd->add_option("--batch", analyze_batch, "batch size")->check(CLI::PositiveNumber);
  analyze_cmd->add_option("--depth", analyze_depth, "table depth")->capture_default_str();
  analyze_cmd->add_flag("--records", analyze_records, "machine-readable path=... lines");

  std::string forward_tensor, forward_out;
  std::optional<std::uint64_t> forward_random;
  Index forward_batch = 1;
  auto* forward_cmd = app.add_subcommand("forward", "run the model and dump the head output");
  add_model_args(forward_cmd, forward_args, "hrformer-t");
  forward_cmd->add_option("--input", forward_input, "HxW size of the random input")->capture_default_str();
  forward_cmd->add_option("--tensor", forward_tensor, "input tensor dump [n,3,h,w]");
  forward_cmd->add_option("--random", forward_random, "seed of a standard normal random input");
  forward_cmd->add_option("--batch", forward_batch, "batch of the random input")->check(CLI::PositiveNumber);
  forward_cmd->add_option("--out", forward_out, "output tensor path")->required();

  std::string grad_input = "24x24";
  auto* grad_cmd = app.add_subcommand("gradcheck", "analytic vs finite-difference gradients per parameter group");
  add_model_args(grad_cmd, grad_args, "micro");
  grad_cmd->add_option("--input", grad_input, "HxW input size")->capture_default_str();

  std::string toy_task = "synth-class", toy_out;
  int toy_steps = 200;
  double toy_lr = 0.05;
  auto* toy_cmd = app.add_subcommand("train-toy", "plain SGD on a synthetic task");
  add_model_args(toy_cmd, toy_args, "micro");
  toy_cmd->add_option("--task", toy_task, "synth-class or synth-pose")->capture_default_str();
  toy_cmd->add_option("--steps", toy_steps, "SGD steps")->capture_default_str();
  toy_cmd->add_option("--lr", toy_lr, "learning rate")->capture_default_str();
  toy_cmd->add_option("--out", toy_out, "loss curve file (step,loss per line)");

  std::string sweep_windows = "7,8,9,10,11,12,13,14,15";
  auto* sweep_cmd = app.add_subcommand("window-sweep", "params and FLOPs across uniform window sizes");
  add_model_args(sweep_cmd, sweep_args, "hrformer-b");
  sweep_cmd->add_option("--input", sweep_input, "HxW input size")->capture_default_str();
  sweep_cmd->add_option("--windows", sweep_windows, "comma-separated window sizes")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (describe_cmd->parsed()) {
      const ModelConfig config = build_config(describe_args);
      Index h = 0, w = 0;
      if (!describe_input.empty()) std::tie(h, w) = parse_extent(describe_input);
      describe(config, h, w);
    } else if (analyze_cmd->parsed()) {
      const ModelConfig config = build_config(analyze_args);
      const auto [h, w] = parse_extent(analyze_input);
      const ComplexityReport report = analyze(config, h, w, analyze_batch);
      std::cout << (analyze_records ? format_records(report) : format_table(report, analyze_depth));
    } else if (forward_cmd->parsed()) {
      const ModelConfig config = build_config(forward_args);
      if (forward_tensor.empty() == !forward_random) throw ConfigError("forward: give exactly one of --tensor or --random");
      Tensor image;
      if (forward_random) {
        const auto [h, w] = parse_extent(forward_input);
        Rng rng(*forward_random);
        image = normal_tensor({forward_batch, 3, h, w}, rng);
      } else {
        image = load_tensor(forward_tensor);
      }
      const HRFormer model(config);
      std::cout << "input " << to_string(image.shape()) << "\n";
      const Tensor out = model.forward(image, {}, [](std::string_view stage, const StreamSet& streams) {
        std::cout << stage;
        for (const Tensor& s : streams) std::cout << " " << to_string(s.shape());
        std::cout << "\n";
      });
      if (!all_finite(out)) throw NumericalError("forward: non-finite output");
      std::cout << "output " << to_string(out.shape()) << "\n";
      save_tensor(forward_out, out);
    } else if (grad_cmd->parsed()) {
      const ModelConfig config = build_config(grad_args);
      HRFormer model(config);
      GradcheckOptions options;
      std::tie(options.height, options.width) = parse_extent(grad_input);
      options.seed = config.seed;
      const GradcheckReport report = gradcheck(model, options);
      std::cout << format_report(report);
      if (!report.passed) {
        for (const GroupError& g : report.groups) {
          if (g.rel_error >= options.fail_threshold)
            std::cerr << "gradcheck failed: group " << g.group << " worst " << g.worst_parameter << "\n";
        }
        return kExitNumerical;
      }
    } else if (toy_cmd->parsed()) {
      ToyOptions options;
      options.task = parse_toy_task(toy_task);
      const HeadKind need = options.task == ToyTask::synth_class ? HeadKind::classification : HeadKind::pose;
      if (toy_args.head.empty()) toy_args.head = std::string(to_string(need));
      const ModelConfig config = build_config(toy_args);
      options.steps = toy_steps;
      options.learning_rate = toy_lr;
      options.seed = config.seed;
      HRFormer model(config);
      const ToyResult result = train_toy(model, options);
      if (!toy_out.empty()) write_loss_curve(toy_out, result.losses);
      if (!result.losses.empty()) {
        std::printf("initial_loss=%.6f final_loss=%.6f ratio=%.4f\n", result.losses.front(), result.losses.back(),
                    result.losses.back() / result.losses.front());
      }
      if (result.max_keypoint_error >= 0) std::printf("max_keypoint_error=%lld\n",
                                                      static_cast<long long>(result.max_keypoint_error));
    } else if (sweep_cmd->parsed()) {
      const ModelConfig config = build_config(sweep_args);
      const auto [h, w] = parse_extent(sweep_input);
      std::vector<std::vector<int>> tuples;
      for (int k : parse_int_list(sweep_windows)) tuples.push_back(std::vector<int>(4, k));
      std::printf("%-8s %14s %16s\n", "window", "params", "flops");
      for (const SweepRow& row : window_sweep(config, tuples, h, w)) {
        std::printf("%-8d %14lld %16lld\n", row.windows.front(), static_cast<long long>(row.report.params()),
                    static_cast<long long>(row.report.flops()));
      }
    }
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return 0;
}
