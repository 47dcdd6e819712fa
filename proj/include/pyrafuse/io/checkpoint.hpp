#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "pyrafuse/io/ini.hpp"
#include "pyrafuse/io/tensor_file.hpp"
#include "pyrafuse/model.hpp"
#include "pyrafuse/train/optim.hpp"
#include "pyrafuse/train/trainer.hpp"

namespace pyrafuse {

namespace detail {

inline std::string exact(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

template <class T>
void expect_tensor(std::istream& is, const Tensor<T>& into, const std::string& what) {
  const Tensor<T> t = read_tensor<T>(is);
  if (t.shape() != into.shape()) {
    throw FormatError("checkpoint " + what + ": stored shape " + t.shape().str() + " differs from model " +
                      into.shape().str());
  }
  std::copy(t.data().begin(), t.data().end(), into.data().begin());
}

}  // namespace detail

/// Directory with model.cfg, params.bin (trainable tensors then BN running
/// statistics), optimizer.bin (Adam moments) and state.txt.
template <class T>
void save_checkpoint(const std::filesystem::path& dir, const std::string& model_cfg, ParamStore<T>& params,
                     const AdamState<T>& adam, const TrainState& state) {
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "model.cfg") << model_cfg;
  {
    std::ofstream os(dir / "params.bin", std::ios::binary);
    for (const auto& t : params.trainable()) write_tensor(os, t);
    for (auto* b : params.buffers()) write_tensor(os, Tensor<T>(Shape{1, b->size(), 1, 1}, *b));
    if (!os) throw FormatError("cannot write " + (dir / "params.bin").string());
  }
  {
    std::ofstream os(dir / "optimizer.bin", std::ios::binary);
    for (std::size_t i = 0; i < adam.m.size(); ++i) {
      write_tensor(os, Tensor<T>(Shape{1, adam.m[i].size(), 1, 1}, adam.m[i]));
      write_tensor(os, Tensor<T>(Shape{1, adam.v[i].size(), 1, 1}, adam.v[i]));
    }
  }
  std::ofstream st(dir / "state.txt");
  st << "iter = " << state.iter << "\nepoch = " << state.epoch << "\nbest_miou = " << detail::exact(state.best_miou)
     << "\nbest_epoch = " << state.best_epoch << "\nadam_step = " << adam.step << '\n';
}

inline std::string read_model_cfg(const std::filesystem::path& dir) {
  std::ifstream in(dir / "model.cfg");
  if (!in) throw FormatError("checkpoint " + dir.string() + " has no model.cfg");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

template <class T>
void load_params(const std::filesystem::path& dir, ParamStore<T>& params) {
  std::ifstream is(dir / "params.bin", std::ios::binary);
  if (!is) throw FormatError("checkpoint " + dir.string() + " has no params.bin");
  for (const auto& t : params.trainable()) detail::expect_tensor(is, t, "parameter");
  for (auto* b : params.buffers()) {
    const Tensor<T> t = read_tensor<T>(is);
    if (t.numel() != b->size()) throw FormatError("checkpoint buffer size mismatch");
    b->assign(t.data().begin(), t.data().end());
  }
  if (is.peek() != std::char_traits<char>::eof()) throw FormatError("checkpoint params.bin has trailing data");
}

template <class T>
void load_training_state(const std::filesystem::path& dir, const ParamStore<T>& params, AdamState<T>& adam,
                         TrainState& state) {
  const IniDocument doc = IniDocument::parse("[state]\n" + [&] {
    std::ifstream in(dir / "state.txt");
    if (!in) throw FormatError("checkpoint " + dir.string() + " has no state.txt");
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }(), (dir / "state.txt").string());
  state.iter = doc.number<std::size_t>("state", "iter", 0);
  state.epoch = doc.number<std::size_t>("state", "epoch", 0);
  state.best_miou = doc.number<double>("state", "best_miou", -1.0);
  state.best_epoch = doc.number<std::size_t>("state", "best_epoch", 0);
  const std::size_t step = doc.number<std::size_t>("state", "adam_step", 0);

  const auto tensors = params.trainable();
  adam.init(tensors);
  adam.step = step;
  std::ifstream is(dir / "optimizer.bin", std::ios::binary);
  if (!is) throw FormatError("checkpoint " + dir.string() + " has no optimizer.bin");
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    for (auto* moment : {&adam.m[i], &adam.v[i]}) {
      const Tensor<T> t = read_tensor<T>(is);
      if (t.numel() != moment->size()) throw FormatError("checkpoint optimizer moment size mismatch");
      moment->assign(t.data().begin(), t.data().end());
    }
  }
}

}  // namespace pyrafuse
