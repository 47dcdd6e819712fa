#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "pyrafuse/io/ini.hpp"
#include "pyrafuse/io/png.hpp"
#include "pyrafuse/train/data.hpp"

namespace pyrafuse {

/// images/NNNNN.png, labels/NNNNN.png and index.txt with "train|val NNNNN" lines.
inline void save_dataset(const std::filesystem::path& dir, const Dataset& d) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "labels");
  std::ofstream index(dir / "index.txt");
  if (!index) throw PngError("cannot write " + (dir / "index.txt").string());
  index << "classes " << d.classes << '\n';
  std::size_t id = 0;
  const auto dump = [&](const std::vector<Sample>& xs, const char* split) {
    for (const auto& s : xs) {
      char name[32];
      std::snprintf(name, sizeof(name), "%05zu", id++);
      write_rgb_png(dir / "images" / (std::string(name) + ".png"), s.image);
      write_label_png(dir / "labels" / (std::string(name) + ".png"), s.label);
      index << split << ' ' << name << '\n';
    }
  };
  dump(d.train, "train");
  dump(d.val, "val");
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  const auto path = dir / "index.txt";
  std::ifstream index(path);
  if (!index) throw ConfigError(path.string(), 0, "cannot open dataset index");
  Dataset d;
  std::string line;
  std::size_t n = 0;
  while (std::getline(index, line)) {
    ++n;
    std::istringstream is(line);
    std::string split, name;
    if (!(is >> split >> name)) continue;
    if (split == "classes") {
      d.classes = std::stoul(name);
      continue;
    }
    Sample s{read_rgb_png(dir / "images" / (name + ".png")), read_label_png(dir / "labels" / (name + ".png"))};
    if (s.image.h != s.label.h || s.image.w != s.label.w) {
      throw ConfigError(path.string(), n, "image and label sizes differ for " + name);
    }
    if (split == "train") {
      d.train.push_back(std::move(s));
    } else if (split == "val") {
      d.val.push_back(std::move(s));
    } else {
      throw ConfigError(path.string(), n, "unknown split '" + split + "'");
    }
  }
  if (d.classes == 0) throw ConfigError(path.string(), 0, "index lacks a 'classes' line");
  return d;
}

}  // namespace pyrafuse
