#pragma once

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "pyrafuse/graph.hpp"

namespace pyrafuse {

enum class Convention { Macs, Flops };

inline const char* convention_name(Convention c) { return c == Convention::Macs ? "macs" : "flops"; }

inline const char* convention_label(Convention c) {
  return c == Convention::Macs ? "FLOPS (MACs)" : "FLOPS (2 x MACs)";
}

/// Shape of every layer output, propagated symbolically from the graph inputs.
inline std::vector<Shape> trace_shapes(const ModelGraph& g, const std::vector<Shape>& input_shapes) {
  if (input_shapes.size() != g.inputs.size()) {
    throw ShapeError("trace_shapes: graph has " + std::to_string(g.inputs.size()) + " inputs, " +
                     std::to_string(input_shapes.size()) + " shapes given");
  }
  std::vector<Shape> out(g.layers.size());
  std::size_t next_input = 0;
  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    const LayerSpec& l = g.layers[i];
    std::vector<Shape> in;
    if (l.kind == LayerKind::Input) {
      in.push_back(input_shapes[next_input++]);
    } else {
      for (auto k : l.inputs) in.push_back(out[k]);
    }
    try {
      out[i] = infer_layer_shape(l, in);
    } catch (const ShapeError& e) {
      throw GraphShapeError(i, l.name, e.what());
    }
  }
  return out;
}

inline std::vector<Shape> trace_shapes(const ModelGraph& g, const Shape& input) {
  return trace_shapes(g, std::vector<Shape>{input});
}

inline std::uint64_t count_params(const ModelGraph& g) {
  std::uint64_t n = 0;
  for (const auto& l : g.layers) n += l.param_count();
  return n;
}

/// Cost of one layer: multiply-accumulates plus single elementwise operations.
struct LayerCost {
  std::uint64_t macs = 0;
  std::uint64_t elementwise = 0;

  std::uint64_t total(Convention c) const { return (c == Convention::Flops ? 2 * macs : macs) + elementwise; }
};

inline LayerCost layer_cost(const LayerSpec& l, const std::vector<Shape>& in, const Shape& out) {
  LayerCost cost;
  const std::uint64_t n_out = out.numel();
  switch (l.kind) {
    case LayerKind::Conv: {
      const auto& s = l.conv;
      cost.macs = static_cast<std::uint64_t>(out.n) * out.plane() * s.out_channels * (s.in_channels / s.groups) *
                  s.kernel.first * s.kernel.second;
      if (s.bias) cost.elementwise = n_out;
      break;
    }
    case LayerKind::BatchNorm:
    case LayerKind::PReLU:
    case LayerKind::ReLU:
    case LayerKind::Add:
    case LayerKind::Mul: cost.elementwise = n_out; break;
    case LayerKind::MaxPool: cost.elementwise = n_out * l.pool.kernel.first * l.pool.kernel.second; break;
    case LayerKind::AdaptiveAvgPool: cost.elementwise = in.at(0).numel(); break;
    case LayerKind::Softmax: cost.elementwise = 3 * n_out; break;
    case LayerKind::Bilinear:
      if (!(in.at(0).h == out.h && in.at(0).w == out.w && !l.align_corners)) cost.macs = 4 * n_out;
      break;
    default: break;
  }
  return cost;
}

struct ProfileRow {
  std::string name;
  LayerKind kind = LayerKind::Input;
  Shape shape;
  std::uint64_t params = 0;
  std::uint64_t flops = 0;  // in the report's convention
};

struct ProfileReport {
  std::vector<ProfileRow> rows;
  std::uint64_t total_params = 0;
  std::uint64_t total_flops = 0;
  Convention convention = Convention::Macs;
  Shape input;

  /// Sum over rows whose name starts with `prefix` (empty prefix = totals).
  std::uint64_t group_params(const std::string& prefix) const {
    std::uint64_t n = 0;
    for (const auto& r : rows) {
      if (r.name.rfind(prefix, 0) == 0) n += r.params;
    }
    return n;
  }
  std::uint64_t group_flops(const std::string& prefix) const {
    std::uint64_t n = 0;
    for (const auto& r : rows) {
      if (r.name.rfind(prefix, 0) == 0) n += r.flops;
    }
    return n;
  }
};

/// Per-sample cost profile: the batch dimension of `input` is ignored.
inline ProfileReport profile(const ModelGraph& g, const std::vector<Shape>& inputs, Convention conv) {
  std::vector<Shape> per_sample = inputs;
  for (auto& s : per_sample) s.n = 1;
  const std::vector<Shape> shapes = trace_shapes(g, per_sample);
  ProfileReport rep;
  rep.convention = conv;
  rep.input = per_sample.empty() ? Shape{} : per_sample.front();
  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    const LayerSpec& l = g.layers[i];
    if (l.kind == LayerKind::Input) continue;
    std::vector<Shape> in;
    for (auto k : l.inputs) in.push_back(shapes[k]);
    ProfileRow r{l.name, l.kind, shapes[i], l.param_count(), layer_cost(l, in, shapes[i]).total(conv)};
    rep.total_params += r.params;
    rep.total_flops += r.flops;
    rep.rows.push_back(std::move(r));
  }
  return rep;
}

inline ProfileReport profile(const ModelGraph& g, const Shape& input, Convention conv = Convention::Macs) {
  return profile(g, std::vector<Shape>{input}, conv);
}

inline std::uint64_t count_flops(const ModelGraph& g, const Shape& input, Convention conv = Convention::Macs) {
  return profile(g, input, conv).total_flops;
}

inline std::string fixed(double v, int decimals) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(decimals) << v;
  return os.str();
}

inline std::string format_table(const ProfileReport& r) {
  std::size_t wname = 5;
  for (const auto& row : r.rows) wname = std::max(wname, row.name.size());
  std::ostringstream os;
  os << "input " << r.input.str() << " per sample, convention " << convention_name(r.convention) << " ["
     << convention_label(r.convention) << "]\n";
  os << std::left << std::setw(static_cast<int>(wname)) << "layer" << "  " << std::setw(16) << "kind" << std::setw(22)
     << "output" << std::right << std::setw(14) << "params" << std::setw(18) << "flops" << '\n';
  for (const auto& row : r.rows) {
    os << std::left << std::setw(static_cast<int>(wname)) << row.name << "  " << std::setw(16) << kind_name(row.kind)
       << std::setw(22) << row.shape.str() << std::right << std::setw(14) << row.params << std::setw(18) << row.flops
       << '\n';
  }
  os << std::left << std::setw(static_cast<int>(wname)) << "total" << "  " << std::setw(38) << "" << std::right
     << std::setw(14) << r.total_params << std::setw(18) << r.total_flops << '\n';
  os << "total params " << fixed(static_cast<double>(r.total_params) / 1e6, 3) << " M, "
     << convention_label(r.convention) << ' ' << fixed(static_cast<double>(r.total_flops) / 1e9, 3) << " G\n";
  return os.str();
}

inline std::string format_shapes(const ModelGraph& g, const std::vector<Shape>& shapes) {
  std::size_t wname = 5;
  for (const auto& l : g.layers) wname = std::max(wname, l.name.size());
  std::ostringstream os;
  for (std::size_t id : g.inputs) os << "input " << g.layers[id].name << ' ' << shapes[id].str() << '\n';
  os << std::left << std::setw(static_cast<int>(wname)) << "layer" << "  " << std::setw(16) << "kind" << "output\n";
  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    if (g.layers[i].kind == LayerKind::Input) continue;
    os << std::left << std::setw(static_cast<int>(wname)) << g.layers[i].name << "  " << std::setw(16)
       << kind_name(g.layers[i].kind) << shapes[i].str() << '\n';
  }
  for (const auto& [tap, id] : g.taps) os << "tap " << tap << " = " << g.layers[id].name << ' ' << shapes[id].str() << '\n';
  return os.str();
}

inline std::string format_kv(const ProfileReport& r) {
  std::ostringstream os;
  os << "convention=" << convention_name(r.convention) << '\n';
  os << "input=" << r.input.str() << '\n';
  for (const auto& row : r.rows) {
    os << "layer." << row.name << ".shape=" << row.shape.str() << '\n';
    os << "layer." << row.name << ".params=" << row.params << '\n';
    os << "layer." << row.name << ".flops=" << row.flops << '\n';
  }
  os << "total.params=" << r.total_params << '\n';
  os << "total.flops=" << r.total_flops << '\n';
  return os.str();
}

/// One value from a published cost table.
struct ReferenceTarget {
  std::string key;
  std::string metric = "params";  // params | flops
  std::string scope;              // layer-name prefix; empty means whole model
  double value = 0.0;             // absolute count
  std::optional<double> tolerance;  // relative; absent means informational
};

struct Deviation {
  std::string key;
  std::string metric;
  double target = 0.0;
  double measured = 0.0;
  double relative = 0.0;
  std::optional<double> tolerance;
  bool passed = true;
};

inline double measure(const ProfileReport& r, const ReferenceTarget& t) {
  if (t.metric == "params") return static_cast<double>(r.group_params(t.scope));
  if (t.metric == "flops") return static_cast<double>(r.group_flops(t.scope));
  throw std::invalid_argument("target '" + t.key + "': unknown metric '" + t.metric + "'");
}

inline Deviation compare_value(const ReferenceTarget& t, double measured) {
  Deviation d{t.key, t.metric, t.value, measured, 0.0, t.tolerance, true};
  d.relative = t.value != 0.0 ? (measured - t.value) / t.value : (measured == 0.0 ? 0.0 : INFINITY);
  if (t.tolerance) d.passed = std::abs(d.relative) <= *t.tolerance + 1e-12;
  return d;
}

/// Deviation of `ours` from each requested target key, in request order.
inline std::vector<Deviation> compare_report(const ProfileReport& ours, const std::map<std::string, ReferenceTarget>& fixture,
                                             const std::vector<std::string>& keys) {
  std::vector<Deviation> out;
  for (const auto& k : keys) {
    const auto it = fixture.find(k);
    if (it == fixture.end()) throw std::out_of_range("reference target '" + k + "' missing from fixture");
    out.push_back(compare_value(it->second, measure(ours, it->second)));
  }
  return out;
}

inline std::string format_deviations(const std::vector<Deviation>& ds) {
  std::size_t wkey = 6;
  for (const auto& d : ds) wkey = std::max(wkey, d.key.size());
  wkey += 2;
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(wkey)) << "target" << std::setw(8) << "metric" << std::right
     << std::setw(14) << "published" << std::setw(14) << "ours" << std::setw(11) << "dev" << std::setw(9) << "tol"
     << "  status\n";
  for (const auto& d : ds) {
    const double unit = d.metric == "flops" ? 1e9 : 1e6;
    const char* suffix = d.metric == "flops" ? "G" : "M";
    os << std::left << std::setw(static_cast<int>(wkey)) << d.key << std::setw(8) << d.metric << std::right
       << std::setw(13) << fixed(d.target / unit, 3) << suffix << std::setw(13) << fixed(d.measured / unit, 3) << suffix
       << std::setw(10) << fixed(100.0 * d.relative, 1) << '%' << std::setw(8)
       << (d.tolerance ? fixed(100.0 * *d.tolerance, 0) + "%" : std::string("-")) << "  "
       << (d.tolerance ? (d.passed ? "pass" : "FAIL") : "info") << '\n';
  }
  return os.str();
}

enum class Trend { Decreasing, Increasing, Halving };

struct TrendResult {
  std::string name;
  bool passed = true;
  std::string detail;
};

inline Trend parse_trend(const std::string& s) {
  if (s == "decreasing") return Trend::Decreasing;
  if (s == "increasing") return Trend::Increasing;
  if (s == "halving") return Trend::Halving;
  throw std::invalid_argument("unknown trend '" + s + "' (expected decreasing, increasing or halving)");
}

/// Strict monotonicity, or consecutive ratios v[i]/v[i+1] within [lo, hi].
inline TrendResult check_trend(const std::string& name, const std::vector<double>& v, Trend kind, double lo = 1.8,
                               double hi = 2.2) {
  TrendResult r{name, true, ""};
  std::ostringstream os;
  for (std::size_t i = 0; i + 1 < v.size(); ++i) {
    bool ok = true;
    if (kind == Trend::Decreasing) ok = v[i + 1] < v[i];
    if (kind == Trend::Increasing) ok = v[i + 1] > v[i];
    if (kind == Trend::Halving) {
      const double ratio = v[i + 1] != 0.0 ? v[i] / v[i + 1] : INFINITY;
      ok = ratio >= lo && ratio <= hi;
      os << (i ? " " : "") << fixed(ratio, 3);
    }
    r.passed = r.passed && ok;
  }
  r.detail = kind == Trend::Halving ? "ratios " + os.str() : (r.passed ? "monotone" : "not monotone");
  return r;
}

}  // namespace pyrafuse
