#pragma once

#include <charconv>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "pyrafuse/analysis.hpp"
#include "pyrafuse/io/ini.hpp"
#include "pyrafuse/network.hpp"
#include "pyrafuse/train/data.hpp"

namespace pyrafuse {

enum class ModelType { Spfnet, Spfm, Rpp, Esam, Backbone, Sequential };

inline const char* model_type_name(ModelType t) {
  switch (t) {
    case ModelType::Spfnet: return "spfnet";
    case ModelType::Spfm: return "spfm";
    case ModelType::Rpp: return "rpp";
    case ModelType::Esam: return "esam";
    case ModelType::Backbone: return "backbone";
    case ModelType::Sequential: return "sequential";
  }
  return "?";
}

struct TrainSettings {
  std::size_t epochs = 20;
  std::size_t batch_size = 8;
  double lr = 3e-4;
  double power = 0.9;
  double weight_decay = 5e-6;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  bool augment = true;
  double scale_min = 0.75;
  double scale_max = 2.0;
  bool flip = true;
  bool class_weights = true;  // inverse-frequency; false gives unit weights
  std::uint64_t seed = 0;
};

struct ReportSettings {
  std::string fixture;
  std::vector<std::string> targets;  // may contain the {id} placeholder in sweeps
  std::string scope;                 // layer-name prefix for trend checks
  std::vector<std::string> checks;   // metric:trend, e.g. params:halving
};

struct SweepSettings {
  std::string key;  // section.key to override
  std::vector<std::string> values;
  std::vector<std::string> ids;
};

/// One layer of a hand-written sequential graph.
struct SequentialLayer {
  std::string name;
  std::string kind;
  std::size_t line = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t dilation = 1;
  std::size_t groups = 1;
  std::optional<std::size_t> padding;
  bool bias = false;
  std::size_t factor = 2;
  Dims2 hw{1, 1};
};

struct RunConfig {
  std::string source;
  ModelType type = ModelType::Spfnet;
  SpfnetConfig net;
  SpfmConfig spfm;
  EsamConfig esam;
  RppConfig rpp;
  std::optional<Shape> input_shape;
  std::size_t input_channels = 3;
  std::vector<SequentialLayer> layers;
  TrainSettings train;
  SynthSpec data;
  std::string data_dir;
  ReportSettings report;
  SweepSettings sweep;
};

namespace detail {

inline std::string num(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

template <class It>
std::string join(It b, It e, const std::string& sep) {
  std::ostringstream os;
  for (It i = b; i != e; ++i) os << (i == b ? "" : sep) << *i;
  return os.str();
}

inline Shape parse_shape(const IniDocument& doc, const IniEntry& e) {
  const auto v = doc.numbers<std::size_t>(e);
  if (v.size() != 4) throw ConfigError(doc.source(), e.line, "'" + e.key + "' expects N,C,H,W");
  return {v[0], v[1], v[2], v[3]};
}

inline Dims2 parse_pair(const IniDocument& doc, const IniEntry& e) {
  const auto v = doc.numbers<std::size_t>(e);
  if (v.size() != 2) throw ConfigError(doc.source(), e.line, "'" + e.key + "' expects two comma-separated values");
  return {v[0], v[1]};
}

inline std::vector<int> parse_stages(const IniDocument& doc, const IniEntry& e) {
  if (e.value == "none" || e.value.empty()) return {};
  return doc.numbers<int>(e);
}

}  // namespace detail

/// Builds a typed configuration, rejecting unknown sections and keys.
inline RunConfig parse_run_config(const IniDocument& doc) {
  RunConfig c;
  c.source = doc.source();
  const auto bad = [&](const IniEntry* e, const std::string& what) {
    return ConfigError(doc.source(), e ? e->line : 0, what);
  };

  if (const IniEntry* e = doc.entry("model", "type")) {
    const std::map<std::string, ModelType> types{{"spfnet", ModelType::Spfnet},     {"spfm", ModelType::Spfm},
                                                 {"rpp", ModelType::Rpp},           {"esam", ModelType::Esam},
                                                 {"backbone", ModelType::Backbone}, {"sequential", ModelType::Sequential}};
    const auto it = types.find(e->value);
    if (it == types.end()) throw bad(e, "unknown model type '" + e->value + "'");
    c.type = it->second;
  }
  c.net.num_classes = doc.number<std::size_t>("model", "num_classes", c.net.num_classes);
  if (const IniEntry* e = doc.entry("model", "input_shape")) c.input_shape = detail::parse_shape(doc, *e);
  c.input_channels = doc.number<std::size_t>("model", "input_channels", c.input_channels);

  auto& bb = c.net.backbone;
  bb.depth = doc.number<int>("backbone", "depth", bb.depth);
  if (const IniEntry* e = doc.entry("backbone", "variant")) {
    if (e->value == "H") {
      bb.variant = BackboneVariant::H;
    } else if (e->value == "L") {
      bb.variant = BackboneVariant::L;
    } else {
      throw bad(e, "backbone variant must be H or L, got '" + e->value + "'");
    }
  }
  bb.width_multiplier = doc.number<double>("backbone", "width_multiplier", bb.width_multiplier);
  bb.in_channels = doc.number<std::size_t>("backbone", "in_channels", bb.in_channels);

  c.net.spfm_enabled = doc.flag("spfm", "enabled", c.net.spfm_enabled);
  c.spfm.s = doc.number<std::size_t>("spfm", "s", c.spfm.s);
  c.spfm.in_channels = doc.number<std::size_t>("spfm", "in_channels", c.spfm.in_channels);
  c.spfm.out_channels = doc.number<std::size_t>("spfm", "out_channels", c.spfm.out_channels);
  c.spfm.mid_channels = doc.number<std::size_t>("spfm", "mid_channels", c.spfm.mid_channels);
  if (const IniEntry* e = doc.entry("spfm", "dilations")) c.spfm.dilations = detail::parse_pair(doc, *e);
  c.net.spfm = c.spfm;
  c.net.spfm.in_channels = 0;
  c.rpp = c.spfm.per_split();
  c.rpp.split_channels = doc.number<std::size_t>("spfm", "split_channels", c.spfm.in_channels / std::max<std::size_t>(c.spfm.s, 1));

  if (const IniEntry* e = doc.entry("esam", "stages")) c.net.esam_stages = detail::parse_stages(doc, *e);
  c.net.shuffle_groups = doc.number<std::size_t>("esam", "shuffle_groups", c.net.shuffle_groups);
  c.net.uniform_attention = doc.flag("esam", "uniform_attention", c.net.uniform_attention);
  c.esam.channels = doc.number<std::size_t>("esam", "channels", c.esam.channels);
  c.esam.shuffle_groups = c.net.shuffle_groups;
  c.esam.uniform_attention = c.net.uniform_attention;

  if (const IniEntry* e = doc.entry("decoder", "widths")) {
    const auto w = doc.numbers<std::size_t>(*e);
    if (w.size() != 3) throw bad(e, "decoder widths expects three values");
    std::copy(w.begin(), w.end(), c.net.decoder_widths.begin());
  }
  c.net.additive_skips = doc.flag("decoder", "additive_skips", c.net.additive_skips);
  c.net.concat_fusion = doc.flag("decoder", "concat_fusion", c.net.concat_fusion);

  auto& t = c.train;
  t.epochs = doc.number<std::size_t>("train", "epochs", t.epochs);
  t.batch_size = doc.number<std::size_t>("train", "batch_size", t.batch_size);
  t.lr = doc.number<double>("train", "lr", t.lr);
  t.power = doc.number<double>("train", "power", t.power);
  t.weight_decay = doc.number<double>("train", "weight_decay", t.weight_decay);
  t.beta1 = doc.number<double>("train", "beta1", t.beta1);
  t.beta2 = doc.number<double>("train", "beta2", t.beta2);
  t.eps = doc.number<double>("train", "eps", t.eps);
  t.augment = doc.flag("train", "augment", t.augment);
  t.scale_min = doc.number<double>("train", "scale_min", t.scale_min);
  t.scale_max = doc.number<double>("train", "scale_max", t.scale_max);
  t.flip = doc.flag("train", "flip", t.flip);
  t.class_weights = doc.flag("train", "class_weights", t.class_weights);
  t.seed = doc.number<std::uint64_t>("train", "seed", t.seed);
  if (t.batch_size == 0) throw bad(doc.entry("train", "batch_size"), "batch_size must be >= 1");

  auto& d = c.data;
  d.classes = doc.number<std::size_t>("data", "classes", c.net.num_classes);
  d.height = doc.number<std::size_t>("data", "height", d.height);
  d.width = doc.number<std::size_t>("data", "width", d.width);
  d.train = doc.number<std::size_t>("data", "train", d.train);
  d.val = doc.number<std::size_t>("data", "val", d.val);
  if (const IniEntry* e = doc.entry("data", "target_freq")) {
    d.target_freq = doc.numbers<double>(*e);
  } else if (d.classes != d.target_freq.size()) {
    d.target_freq.assign(d.classes, 0.0);
    d.target_freq[0] = 0.55;
    for (std::size_t k = 1; k < d.classes; ++k) d.target_freq[k] = 0.45 / static_cast<double>(d.classes - 1);
  }
  if (auto v = doc.get("data", "dir")) c.data_dir = *v;

  if (auto v = doc.get("report", "fixture")) c.report.fixture = *v;
  if (auto v = doc.get("report", "targets")) c.report.targets = split_list(*v, ';');
  if (auto v = doc.get("report", "scope")) c.report.scope = *v;
  if (auto v = doc.get("report", "checks")) c.report.checks = split_list(*v, ';');

  if (auto v = doc.get("sweep", "key")) c.sweep.key = *v;
  if (auto v = doc.get("sweep", "values")) c.sweep.values = split_list(*v, ';');
  if (auto v = doc.get("sweep", "ids")) c.sweep.ids = split_list(*v, ';');
  if (!c.sweep.key.empty() && c.sweep.values.empty()) throw bad(doc.entry("sweep", "key"), "sweep needs values");
  if (!c.sweep.ids.empty() && c.sweep.ids.size() != c.sweep.values.size()) {
    throw bad(doc.entry("sweep", "ids"), "sweep ids and values differ in length");
  }
  if (c.sweep.ids.empty()) c.sweep.ids = c.sweep.values;

  for (const auto& sec : doc.sections()) {
    if (sec.name.rfind("layer.", 0) != 0) continue;
    SequentialLayer l;
    l.name = sec.name.substr(6);
    l.line = sec.line;
    l.kind = doc.require(sec.name, "kind");
    l.out_channels = doc.number<std::size_t>(sec.name, "out_channels", 0);
    l.kernel = doc.number<std::size_t>(sec.name, "kernel", l.kind == "max_pool" ? 3 : 1);
    l.stride = doc.number<std::size_t>(sec.name, "stride", 1);
    l.dilation = doc.number<std::size_t>(sec.name, "dilation", 1);
    l.groups = doc.number<std::size_t>(sec.name, "groups", 1);
    if (const IniEntry* e = doc.entry(sec.name, "padding")) l.padding = doc.parse_number<std::size_t>(*e);
    l.bias = doc.flag(sec.name, "bias", false);
    l.factor = doc.number<std::size_t>(sec.name, "factor", 2);
    if (const IniEntry* e = doc.entry(sec.name, "size")) l.hw = detail::parse_pair(doc, *e);
    static const std::vector<std::string> kinds{"conv",         "batch_norm",      "prelu",   "relu",
                                                "max_pool",     "avg_pool",        "softmax", "pixel_shuffle",
                                                "pixel_unshuffle", "channel_shuffle", "bilinear"};
    if (std::find(kinds.begin(), kinds.end(), l.kind) == kinds.end()) {
      throw ConfigError(doc.source(), doc.entry(sec.name, "kind")->line, "unknown layer kind '" + l.kind + "'");
    }
    if (l.kind == "conv" && l.out_channels == 0) {
      throw ConfigError(doc.source(), sec.line, "conv layer '" + l.name + "' needs out_channels");
    }
    c.layers.push_back(l);
  }
  if (c.type == ModelType::Sequential && c.layers.empty()) {
    throw ConfigError(doc.source(), 0, "sequential model needs at least one [layer.NAME] section");
  }

  doc.reject_unknown({"model", "backbone", "spfm", "esam", "decoder", "train", "data", "report", "sweep", "layer.*"});
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) { return parse_run_config(IniDocument::load(path)); }

/// Canonical, fully-resolved configuration text; parses back to the same RunConfig.
inline std::string to_ini(const RunConfig& c) {
  using detail::num;
  std::ostringstream os;
  os << "[model]\ntype = " << model_type_name(c.type) << "\nnum_classes = " << c.net.num_classes << '\n';
  if (c.input_shape) {
    os << "input_shape = " << c.input_shape->n << ',' << c.input_shape->c << ',' << c.input_shape->h << ','
       << c.input_shape->w << '\n';
  }
  os << "input_channels = " << c.input_channels << '\n';
  const auto& bb = c.net.backbone;
  os << "\n[backbone]\ndepth = " << bb.depth << "\nvariant = " << variant_name(bb.variant)
     << "\nwidth_multiplier = " << num(bb.width_multiplier) << "\nin_channels = " << bb.in_channels << '\n';
  os << "\n[spfm]\nenabled = " << (c.net.spfm_enabled ? "true" : "false") << "\ns = " << c.spfm.s
     << "\nin_channels = " << c.spfm.in_channels << "\nout_channels = " << c.spfm.out_channels
     << "\nmid_channels = " << c.spfm.mid_channels << "\nsplit_channels = " << c.rpp.split_channels
     << "\ndilations = " << c.spfm.dilations.first << ',' << c.spfm.dilations.second << '\n';
  os << "\n[esam]\nstages = "
     << (c.net.esam_stages.empty() ? std::string("none")
                                   : detail::join(c.net.esam_stages.begin(), c.net.esam_stages.end(), ","))
     << "\nshuffle_groups = " << c.net.shuffle_groups << "\nuniform_attention = "
     << (c.net.uniform_attention ? "true" : "false") << "\nchannels = " << c.esam.channels << '\n';
  os << "\n[decoder]\nwidths = " << detail::join(c.net.decoder_widths.begin(), c.net.decoder_widths.end(), ",")
     << "\nadditive_skips = " << (c.net.additive_skips ? "true" : "false")
     << "\nconcat_fusion = " << (c.net.concat_fusion ? "true" : "false") << '\n';
  const auto& t = c.train;
  os << "\n[train]\nepochs = " << t.epochs << "\nbatch_size = " << t.batch_size << "\nlr = " << num(t.lr)
     << "\npower = " << num(t.power) << "\nweight_decay = " << num(t.weight_decay) << "\nbeta1 = " << num(t.beta1)
     << "\nbeta2 = " << num(t.beta2) << "\neps = " << num(t.eps) << "\naugment = " << (t.augment ? "true" : "false")
     << "\nscale_min = " << num(t.scale_min) << "\nscale_max = " << num(t.scale_max)
     << "\nflip = " << (t.flip ? "true" : "false") << "\nclass_weights = " << (t.class_weights ? "true" : "false")
     << "\nseed = " << t.seed << '\n';
  std::vector<std::string> freq;
  for (double f : c.data.target_freq) freq.push_back(num(f));
  os << "\n[data]\nclasses = " << c.data.classes << "\nheight = " << c.data.height << "\nwidth = " << c.data.width
     << "\ntrain = " << c.data.train << "\nval = " << c.data.val
     << "\ntarget_freq = " << detail::join(freq.begin(), freq.end(), ",") << '\n';
  if (!c.data_dir.empty()) os << "dir = " << c.data_dir << '\n';
  if (!c.report.fixture.empty() || !c.report.targets.empty() || !c.report.checks.empty() || !c.report.scope.empty()) {
    os << "\n[report]\n";
    if (!c.report.fixture.empty()) os << "fixture = " << c.report.fixture << '\n';
    if (!c.report.targets.empty()) os << "targets = " << detail::join(c.report.targets.begin(), c.report.targets.end(), ";") << '\n';
    if (!c.report.scope.empty()) os << "scope = " << c.report.scope << '\n';
    if (!c.report.checks.empty()) os << "checks = " << detail::join(c.report.checks.begin(), c.report.checks.end(), ";") << '\n';
  }
  if (!c.sweep.key.empty()) {
    os << "\n[sweep]\nkey = " << c.sweep.key << "\nvalues = " << detail::join(c.sweep.values.begin(), c.sweep.values.end(), ";")
       << "\nids = " << detail::join(c.sweep.ids.begin(), c.sweep.ids.end(), ";") << '\n';
  }
  for (const auto& l : c.layers) {
    os << "\n[layer." << l.name << "]\nkind = " << l.kind << '\n';
    if (l.kind == "conv") {
      os << "out_channels = " << l.out_channels << "\nkernel = " << l.kernel << "\nstride = " << l.stride
         << "\ndilation = " << l.dilation << "\ngroups = " << l.groups << "\nbias = " << (l.bias ? "true" : "false")
         << '\n';
      if (l.padding) os << "padding = " << *l.padding << '\n';
    } else if (l.kind == "max_pool") {
      os << "kernel = " << l.kernel << "\nstride = " << l.stride << '\n';
      if (l.padding) os << "padding = " << *l.padding << '\n';
    } else if (l.kind == "avg_pool" || l.kind == "bilinear") {
      os << "size = " << l.hw.first << ',' << l.hw.second << '\n';
    } else if (l.kind == "pixel_shuffle" || l.kind == "pixel_unshuffle" || l.kind == "channel_shuffle") {
      os << "factor = " << l.factor << '\n';
    }
  }
  return os.str();
}

/// Copy of `c` with `section.key = value` applied, re-validated through the parser.
inline RunConfig with_override(const RunConfig& c, const std::string& dotted_key, const std::string& value) {
  const auto dot = dotted_key.find('.');
  if (dot == std::string::npos) throw ConfigError(c.source, 0, "sweep key '" + dotted_key + "' must be section.key");
  IniDocument doc = IniDocument::parse(to_ini(c), c.source);
  doc.set(dotted_key.substr(0, dot), dotted_key.substr(dot + 1), value);
  RunConfig out = parse_run_config(doc);
  out.source = c.source;
  return out;
}

/// Graph described by the configuration and the shapes of its inputs.
struct BuiltGraph {
  ModelGraph graph;
  std::vector<Shape> inputs;
};

inline ModelGraph make_sequential_graph(const RunConfig& c) {
  GraphBuilder b;
  std::size_t x = b.input("input", c.input_channels);
  for (const auto& l : c.layers) {
    try {
      if (l.kind == "conv") {
        ConvSpec s = ConvSpec::square(b.channels(x), l.out_channels, l.kernel, l.stride, l.dilation, l.groups, l.bias);
        if (l.padding) s.padding = {*l.padding, *l.padding};
        x = b.conv(l.name, x, s);
      } else if (l.kind == "batch_norm") {
        x = b.batch_norm(l.name, x);
      } else if (l.kind == "prelu") {
        x = b.prelu(l.name, x);
      } else if (l.kind == "relu") {
        x = b.relu(l.name, x);
      } else if (l.kind == "softmax") {
        x = b.softmax(l.name, x);
      } else if (l.kind == "max_pool") {
        x = b.max_pool(l.name, x, PoolSpec::square(l.kernel, l.stride, l.padding.value_or(l.kernel / 2)));
      } else if (l.kind == "avg_pool") {
        x = b.adaptive_avg_pool(l.name, x, l.hw);
      } else if (l.kind == "bilinear") {
        x = b.bilinear_to(l.name, x, l.hw);
      } else if (l.kind == "pixel_shuffle") {
        x = b.pixel_shuffle(l.name, x, l.factor);
      } else if (l.kind == "pixel_unshuffle") {
        x = b.pixel_unshuffle(l.name, x, l.factor);
      } else if (l.kind == "channel_shuffle") {
        x = b.channel_shuffle(l.name, x, l.factor);
      }
    } catch (const ShapeError& e) {
      throw ConfigError(c.source, l.line, "layer '" + l.name + "': " + e.what());
    }
  }
  return b.finish(x);
}

inline Shape default_input_shape(const RunConfig& c) {
  switch (c.type) {
    case ModelType::Spfnet:
    case ModelType::Backbone: return {1, c.net.backbone.in_channels, 64, 64};
    case ModelType::Spfm: return {1, c.spfm.in_channels, 16, 32};
    case ModelType::Rpp: return {1, c.rpp.split_channels, 16, 32};
    case ModelType::Esam: return {1, c.esam.channels, 16, 16};
    case ModelType::Sequential: return {1, c.input_channels, 16, 16};
  }
  return {};
}

inline BuiltGraph build_graph(const RunConfig& c, std::optional<Shape> input_override = std::nullopt) {
  BuiltGraph out;
  switch (c.type) {
    case ModelType::Spfnet: out.graph = make_spfnet_graph(c.net); break;
    case ModelType::Backbone: out.graph = make_backbone_graph(c.net.backbone); break;
    case ModelType::Spfm: out.graph = make_spfm_graph(c.spfm); break;
    case ModelType::Rpp: out.graph = make_rpp_graph(c.rpp); break;
    case ModelType::Esam: out.graph = make_esam_graph(c.esam); break;
    case ModelType::Sequential: out.graph = make_sequential_graph(c); break;
  }
  out.inputs = {input_override ? *input_override : c.input_shape.value_or(default_input_shape(c))};
  return out;
}

/// Loads `[key]` sections of a reference-target fixture.
inline std::map<std::string, ReferenceTarget> load_targets(const IniDocument& doc) {
  std::map<std::string, ReferenceTarget> out;
  for (const auto& sec : doc.sections()) {
    ReferenceTarget t;
    t.key = sec.name;
    t.metric = doc.require(sec.name, "metric");
    if (t.metric != "params" && t.metric != "flops") {
      throw ConfigError(doc.source(), doc.entry(sec.name, "metric")->line, "metric must be params or flops");
    }
    if (auto v = doc.get(sec.name, "scope")) t.scope = *v;
    const IniEntry* value = doc.entry(sec.name, "value");
    if (!value) throw ConfigError(doc.source(), sec.line, "target [" + sec.name + "] needs a value");
    t.value = doc.parse_number<double>(*value);
    if (const IniEntry* e = doc.entry(sec.name, "tolerance")) t.tolerance = doc.parse_number<double>(*e);
    doc.get(sec.name, "source");  // free-text citation, informational
    out.emplace(t.key, t);
  }
  doc.reject_unknown({"*"});
  return out;
}

}  // namespace pyrafuse
