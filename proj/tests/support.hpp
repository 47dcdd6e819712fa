#pragma once

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>

#include "pyrafuse/tensor.hpp"

namespace pyrafuse::testing {

/// Gradient of scalar `f` with respect to each of `xs`.
inline std::vector<std::vector<double>> grads_of(std::vector<Tensor<double>> xs,
                                                 const std::function<Tensor<double>(std::vector<Tensor<double>>&)>& f) {
  for (auto& x : xs) {
    x.set_requires_grad(true);
    x.zero_grad();
  }
  Tape<double> tape;
  Tensor<double> loss;
  {
    Tape<double>::Scope scope(tape);
    loss = f(xs);
  }
  backward(tape, loss);
  std::vector<std::vector<double>> out;
  for (auto& x : xs) out.emplace_back(x.grad_ref().begin(), x.grad_ref().end());
  return out;
}

inline std::vector<double> values(const Tensor<double>& t) { return {t.data().begin(), t.data().end()}; }

struct RunResult {
  int code = -1;
  std::string out;
};

/// Runs the CLI with `args`, capturing stdout (stderr goes to `err_file` when given).
inline RunResult run_cli(const std::string& args, const std::string& err_file = "/dev/null") {
  const std::string cmd = std::string(PYRAFUSE_CLI) + " " + args + " 2>" + err_file;
  RunResult r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  std::array<char, 4096> buf{};
  std::size_t n = 0;
  while ((n = fread(buf.data(), 1, buf.size(), p)) > 0) r.out.append(buf.data(), n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

inline std::string source_path(const std::string& rel) { return std::string(PYRAFUSE_SOURCE_DIR) + "/" + rel; }

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto d = std::filesystem::temp_directory_path() / ("pyrafuse_test_" + name);
  std::filesystem::remove_all(d);
  std::filesystem::create_directories(d);
  return d;
}

}  // namespace pyrafuse::testing
