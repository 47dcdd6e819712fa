#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "pyrafuse/analysis.hpp"
#include "pyrafuse/config.hpp"
#include "pyrafuse/io/checkpoint.hpp"
#include "pyrafuse/io/dataset_dir.hpp"
#include "pyrafuse/io/png.hpp"
#include "pyrafuse/train/trainer.hpp"
#include "pyrafuse/verify.hpp"

namespace fs = std::filesystem;
using namespace pyrafuse;

namespace {

constexpr int kOk = 0;
constexpr int kFailed = 1;
constexpr int kUsage = 2;

struct Options {
  std::string config;
  std::string input_shape;
  std::string convention = "macs";
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  std::string out;
  std::string suite = "all";
  std::size_t seeds = 20;
  bool inject_fault = false;
  std::string data;
  bool generate = false;
  bool resume = false;
  std::size_t stop_after = 0;
  std::string checkpoint;
  std::string image;
};

void echo_config(const std::string& text) {
  std::cout << "# resolved configuration\n" << text << "# end configuration\n\n";
}

Shape parse_shape_flag(const std::string& s) {
  const auto parts = split_list(s, ',');
  if (parts.size() != 4) throw ConfigError("--input-shape", 0, "expected N,C,H,W, got '" + s + "'");
  const IniDocument none;
  std::size_t v[4];
  for (int i = 0; i < 4; ++i) {
    v[i] = none.parse_number<std::size_t>(parts[i], 0, "--input-shape");
    if (v[i] == 0) throw ConfigError("--input-shape", 0, "dimensions must be positive");
  }
  return {v[0], v[1], v[2], v[3]};
}

RunConfig load_with_flags(const Options& o) {
  RunConfig c = load_run_config(o.config);
  if (!o.input_shape.empty()) c.input_shape = parse_shape_flag(o.input_shape);
  if (o.epochs) c = with_override(c, "train.epochs", std::to_string(*o.epochs));
  if (o.seed) c = with_override(c, "train.seed", std::to_string(*o.seed));
  return c;
}

int cmd_describe(const Options& o) {
  const RunConfig c = load_with_flags(o);
  echo_config(to_ini(c));
  const BuiltGraph b = build_graph(c);
  const auto shapes = trace_shapes(b.graph, b.inputs);
  std::cout << format_shapes(b.graph, shapes);
  std::cout << "layers " << b.graph.layers.size() - b.graph.inputs.size() << ", params " << count_params(b.graph)
            << '\n';
  return kOk;
}

fs::path beside_config(const RunConfig& c, const std::string& p) {
  const fs::path path(p);
  if (path.is_absolute() || fs::exists(path)) return path;
  return fs::path(c.source).parent_path() / path;
}

std::string replace_id(std::string s, const std::string& id) {
  for (auto pos = s.find("{id}"); pos != std::string::npos; pos = s.find("{id}", pos + id.size())) {
    s.replace(pos, 4, id);
  }
  return s;
}

int cmd_profile(const Options& o) {
  const RunConfig c = load_with_flags(o);
  const Convention conv = o.convention == "flops" ? Convention::Flops : Convention::Macs;
  echo_config(to_ini(c));

  std::map<std::string, ReferenceTarget> fixture;
  if (!c.report.fixture.empty()) fixture = load_targets(IniDocument::load(beside_config(c, c.report.fixture)));
  if (fixture.empty() && !c.report.targets.empty()) {
    throw ConfigError(c.source, 0, "report targets given without a fixture");
  }

  std::vector<Deviation> devs;
  std::vector<TrendResult> trends;
  if (c.sweep.key.empty()) {
    const BuiltGraph b = build_graph(c);
    const ProfileReport r = profile(b.graph, b.inputs, conv);
    std::cout << format_table(r);
    devs = compare_report(r, fixture, c.report.targets);
  } else {
    std::vector<ProfileReport> reports;
    for (std::size_t i = 0; i < c.sweep.values.size(); ++i) {
      const RunConfig ci = with_override(c, c.sweep.key, c.sweep.values[i]);
      const BuiltGraph b = build_graph(ci);
      reports.push_back(profile(b.graph, b.inputs, conv));
      std::vector<std::string> keys;
      for (const auto& t : c.report.targets) keys.push_back(replace_id(t, c.sweep.ids[i]));
      const auto d = compare_report(reports.back(), fixture, keys);
      devs.insert(devs.end(), d.begin(), d.end());
    }
    const std::string scope = c.report.scope;
    std::cout << "sweep " << c.sweep.key << " input " << reports.front().input.str() << " per sample, convention "
              << convention_name(conv) << " [" << convention_label(conv) << "], scope '"
              << (scope.empty() ? "<model>" : scope) << "'\n";
    std::cout << std::left << std::setw(10) << "id" << std::setw(10) << "value" << std::right << std::setw(14)
              << "params" << std::setw(14) << "params(M)" << std::setw(18) << "flops" << std::setw(12) << "flops(G)"
              << '\n';
    std::vector<double> params, flops;
    for (std::size_t i = 0; i < reports.size(); ++i) {
      const auto p = reports[i].group_params(scope);
      const auto f = reports[i].group_flops(scope);
      params.push_back(static_cast<double>(p));
      flops.push_back(static_cast<double>(f));
      std::cout << std::left << std::setw(10) << c.sweep.ids[i] << std::setw(10) << c.sweep.values[i] << std::right
                << std::setw(14) << p << std::setw(14) << fixed(static_cast<double>(p) / 1e6, 3) << std::setw(18)
                << f << std::setw(12) << fixed(static_cast<double>(f) / 1e9, 3) << '\n';
    }
    for (const auto& check : c.report.checks) {
      const auto colon = check.find(':');
      if (colon == std::string::npos) throw ConfigError(c.source, 0, "check '" + check + "' must be metric:trend");
      const std::string metric = check.substr(0, colon);
      if (metric != "params" && metric != "flops") throw ConfigError(c.source, 0, "check metric must be params or flops");
      Trend kind;
      try {
        kind = parse_trend(check.substr(colon + 1));
      } catch (const std::invalid_argument& e) {
        throw ConfigError(c.source, 0, e.what());
      }
      trends.push_back(check_trend(check, metric == "params" ? params : flops, kind));
    }
  }

  bool ok = true;
  if (!devs.empty()) {
    std::cout << '\n' << format_deviations(devs);
    for (const auto& d : devs) ok = ok && d.passed;
  }
  if (!trends.empty()) std::cout << '\n';
  for (const auto& t : trends) {
    std::cout << "trend " << t.name << ' ' << (t.passed ? "pass" : "FAIL") << ' ' << t.detail << '\n';
    ok = ok && t.passed;
  }
  std::cout << "\nprofile " << (ok ? "pass" : "FAIL") << '\n';
  return ok ? kOk : kFailed;
}

int cmd_verify(const Options& o) {
  const std::uint64_t seed = o.seed.value_or(0);
  std::cout << "# resolved configuration\n[verify]\nsuite = " << o.suite << "\nseed = " << seed
            << "\nseeds = " << o.seeds << "\ninject_fault = " << (o.inject_fault ? "true" : "false")
            << "\n# end configuration\n\n";
  SuiteReport all;
  const auto take = [&all](const SuiteReport& r) { all.lines.insert(all.lines.end(), r.lines.begin(), r.lines.end()); };
  if (o.suite == "grad" || o.suite == "all") {
    auto cases = grad_cases();
    if (o.inject_fault) cases.push_back(faulty_grad_case());
    take(run_grad_suite(cases, seed, o.seeds));
  }
  if (o.suite == "oracle" || o.suite == "all") take(run_oracle_suite(seed));
  if (o.suite == "shape" || o.suite == "all") take(run_shape_suite(seed));
  std::cout << all.format();
  return all.passed() ? kOk : kFailed;
}

TrainOptions train_options(const RunConfig& c) {
  TrainOptions t;
  t.epochs = c.train.epochs;
  t.batch_size = c.train.batch_size;
  t.schedule.lr_init = c.train.lr;
  t.schedule.power = c.train.power;
  t.augment = c.train.augment;
  t.augmentation.scale_min = c.train.scale_min;
  t.augmentation.scale_max = c.train.scale_max;
  t.augmentation.flip = c.train.flip;
  t.class_weights = c.train.class_weights;
  t.seed = c.train.seed;
  return t;
}

std::string epoch_record(const EpochRecord& r) {
  std::ostringstream os;
  char lr[32];
  std::snprintf(lr, sizeof(lr), "%.6e", r.lr);
  os << "epoch=" << r.epoch << " iter=" << r.iter << " lr=" << lr << " train_loss=" << fixed(r.train_loss, 6)
     << " val_miou=" << fixed(r.val_miou, 6) << " val_iou=";
  for (std::size_t k = 0; k < r.val_iou.size(); ++k) {
    os << (k ? "," : "") << (r.val_iou[k] ? fixed(*r.val_iou[k], 6) : std::string("nan"));
  }
  return os.str();
}

int cmd_train_toy(const Options& o) {
  const RunConfig c = load_with_flags(o);
  if (c.type != ModelType::Spfnet) throw ConfigError(c.source, 0, "train-toy needs [model] type = spfnet");
  const std::string cfg_text = to_ini(c);
  echo_config(cfg_text);
  const fs::path out(o.out);
  fs::create_directories(out);

  Dataset data;
  if (o.generate) {
    data = synth_dataset(c.data, c.train.seed);
    save_dataset(out / "data", data);
    std::cout << "generated " << data.train.size() << " train / " << data.val.size() << " val images in "
              << (out / "data").string() << '\n';
  } else {
    const std::string dir = !o.data.empty() ? o.data : c.data_dir;
    if (dir.empty()) throw ConfigError(c.source, 0, "no dataset: pass --data DIR, set [data] dir, or use --generate");
    data = load_dataset(dir);
  }
  if (data.classes != c.net.num_classes) {
    throw ConfigError(c.source, 0, "dataset has " + std::to_string(data.classes) + " classes, model expects " +
                                        std::to_string(c.net.num_classes));
  }

  Model<float> model = instantiate<float>(make_spfnet_graph(c.net), c.train.seed);
  AdamState<float> adam;
  adam.beta1 = static_cast<float>(c.train.beta1);
  adam.beta2 = static_cast<float>(c.train.beta2);
  adam.eps = static_cast<float>(c.train.eps);
  adam.weight_decay = static_cast<float>(c.train.weight_decay);
  TrainState state;
  if (o.resume) {
    load_params(out / "last", model.params);
    load_training_state(out / "last", model.params, adam, state);
    std::cout << "resumed from " << (out / "last").string() << " at epoch " << state.epoch << ", iteration "
              << state.iter << '\n';
  }
  std::cout << "model params " << model.params.scalar_count() << ", " << iters_per_epoch(data.train.size(), c.train.batch_size)
            << " iterations per epoch\n";

  std::ofstream log(out / "metrics.log", o.resume ? std::ios::app : std::ios::trunc);
  if (!log) throw FormatError("cannot write " + (out / "metrics.log").string());
  EpochRecord last;
  TrainOptions topt = train_options(c);
  topt.stop_after = o.stop_after;
  train_loop(model, data, topt, state, adam, [&](const EpochRecord& r, const TrainState& st) {
    const std::string line = epoch_record(r);
    log << line << '\n' << std::flush;
    std::cout << line << std::endl;
    save_checkpoint(out / "last", cfg_text, model.params, adam, st);
    if (st.best_epoch == r.epoch) save_checkpoint(out / "best", cfg_text, model.params, adam, st);
    last = r;
  });
  if (last.epoch == 0) {
    std::cout << "nothing to do: checkpoint already at epoch " << state.epoch << '\n';
  } else {
    std::cout << "final val mIoU " << fixed(last.val_miou, 4) << " (best " << fixed(state.best_miou, 4)
              << " at epoch " << state.best_epoch << ")\n";
  }
  return kOk;
}

/// Repeats the last row / column so both extents become multiples of `m`.
Image pad_to_multiple(const Image& im, std::size_t m) {
  const std::size_t h = (im.h + m - 1) / m * m, w = (im.w + m - 1) / m * m;
  Image out = Image::blank(h, w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t ch = 0; ch < 3; ++ch) out.at(y, x, ch) = im.at(std::min(y, im.h - 1), std::min(x, im.w - 1), ch);
    }
  }
  return out;
}

int cmd_infer(const Options& o) {
  const fs::path ckpt(o.checkpoint);
  const RunConfig c = parse_run_config(IniDocument::parse(read_model_cfg(ckpt), (ckpt / "model.cfg").string()));
  echo_config(to_ini(c));
  if (c.type != ModelType::Spfnet) throw ConfigError(c.source, 0, "checkpoint is not an spfnet model");
  Model<float> model = instantiate<float>(make_spfnet_graph(c.net), 0);
  load_params(ckpt, model.params);

  const Image src = read_rgb_png(o.image);
  const std::size_t stride = c.net.backbone.stride();
  Image im = src;
  if (src.h % stride || src.w % stride) {
    im = pad_to_multiple(src, stride);
    std::cout << "notice: " << src.h << "x" << src.w << " is not a multiple of the model stride " << stride
              << "; padded to " << im.h << "x" << im.w << " and cropped back\n";
  }
  const Tensor<float> logits = model.forward(images_to_tensor<float>({&im}), Mode::Eval);
  const auto pred = argmax_channels(logits);
  LabelImage lab{src.h, src.w, std::vector<std::uint8_t>(src.h * src.w)};
  std::vector<std::size_t> hist(c.net.num_classes, 0);
  for (std::size_t y = 0; y < src.h; ++y) {
    for (std::size_t x = 0; x < src.w; ++x) {
      const auto k = static_cast<std::uint8_t>(pred[y * im.w + x]);
      lab.ids[y * src.w + x] = k;
      ++hist[k];
    }
  }
  const fs::path out(o.out);
  const fs::path ids = out.parent_path() / (out.stem().string() + "_ids.png");
  write_rgb_png(out, colorize(lab));
  write_label_png(ids, lab);
  std::cout << "wrote " << out.string() << " and " << ids.string() << '\n';
  for (std::size_t k = 0; k < hist.size(); ++k) {
    std::cout << "class " << k << " pixels " << hist[k] << " ("
              << fixed(100.0 * static_cast<double>(hist[k]) / static_cast<double>(lab.ids.size()), 2) << "%)\n";
  }
  return kOk;
}

int cmd_gen_data(const Options& o) {
  const RunConfig c = load_with_flags(o);
  echo_config(to_ini(c));
  const Dataset d = synth_dataset(c.data, c.train.seed);
  save_dataset(o.out, d);
  const auto counts = class_counts(d.train, d.classes);
  std::size_t total = 0;
  for (auto n : counts) total += n;
  std::cout << "wrote " << d.train.size() << " train / " << d.val.size() << " val images to " << o.out << '\n';
  for (std::size_t k = 0; k < counts.size(); ++k) {
    std::cout << "class " << k << " train frequency " << fixed(static_cast<double>(counts[k]) / static_cast<double>(total), 4)
              << " target " << fixed(c.data.target_freq[k], 4) << '\n';
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SPFNet building blocks: describe, profile, verify, train and run segmentation models"};
  app.require_subcommand(1);
  Options o;

  const auto config = [&o](CLI::App* s, bool required) {
    auto* opt = s->add_option("--config", o.config, "model / run configuration (INI)")->check(CLI::ExistingFile);
    if (required) opt->required();
  };
  const auto seed = [&o](CLI::App* s) { s->add_option("--seed", o.seed, "random seed (U64)"); };

  auto* describe = app.add_subcommand("describe", "print the per-layer shape trace of a model");
  config(describe, true);
  describe->add_option("--input-shape", o.input_shape, "input shape N,C,H,W");

  auto* prof = app.add_subcommand("profile", "parameter / FLOPs report with deviations from published targets");
  config(prof, true);
  prof->add_option("--input-shape", o.input_shape, "input shape N,C,H,W");
  prof->add_option("--convention", o.convention, "macs (default) or flops (multiply-accumulates doubled)")
      ->check(CLI::IsMember({"macs", "flops"}));

  auto* verify = app.add_subcommand("verify", "gradient, oracle and shape verification suites");
  verify->add_option("suite", o.suite, "grad | oracle | shape | all")->check(CLI::IsMember({"grad", "oracle", "shape", "all"}));
  seed(verify);
  verify->add_option("--seeds", o.seeds, "random seeds per gradient case")->check(CLI::PositiveNumber);
  verify->add_flag("--inject-fault", o.inject_fault, "add an op with a deliberately wrong backward rule");

  auto* train = app.add_subcommand("train-toy", "train on a synthetic (or on-disk) dataset");
  config(train, true);
  seed(train);
  train->add_option("--epochs", o.epochs, "training epochs")->check(CLI::PositiveNumber);
  train->add_option("--out", o.out, "output directory for checkpoints and metrics.log")->required();
  train->add_option("--data", o.data, "dataset directory (images/, labels/, index.txt)");
  train->add_flag("--generate", o.generate, "synthesize the dataset from [data] into OUT/data");
  train->add_flag("--resume", o.resume, "continue from OUT/last");
  train->add_option("--stop-after", o.stop_after, "end after this epoch, keeping the full-length schedule");

  auto* infer = app.add_subcommand("infer", "colorized prediction for one image");
  infer->add_option("--checkpoint", o.checkpoint, "checkpoint directory")->required()->check(CLI::ExistingDirectory);
  infer->add_option("--image", o.image, "input RGB PNG")->required()->check(CLI::ExistingFile);
  infer->add_option("--out", o.out, "output PNG; raw class ids go to <stem>_ids.png")->required();

  auto* gen = app.add_subcommand("gen-data", "write the synthetic dataset to disk");
  config(gen, true);
  seed(gen);
  gen->add_option("--out", o.out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*describe) return cmd_describe(o);
    if (*prof) return cmd_profile(o);
    if (*verify) return cmd_verify(o);
    if (*train) return cmd_train_toy(o);
    if (*infer) return cmd_infer(o);
    if (*gen) return cmd_gen_data(o);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const GraphShapeError& e) {
    std::cerr << "shape error: " << e.what() << '\n';
    return kUsage;
  } catch (const ShapeError& e) {
    std::cerr << "shape error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::out_of_range& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const TrainingError& e) {
    std::cerr << "training aborted: " << e.what() << '\n';
    return kFailed;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailed;
  }
  return kUsage;
}
