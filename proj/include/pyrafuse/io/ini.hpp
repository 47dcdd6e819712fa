#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace pyrafuse {

/// Configuration problem, carrying the source line when one applies.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& source, std::size_t line, const std::string& what)
      : std::runtime_error(source + (line ? ":" + std::to_string(line) : std::string()) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

struct IniEntry {
  std::string key;
  std::string value;
  std::size_t line = 0;
  mutable bool used = false;
};

struct IniSection {
  std::string name;
  std::size_t line = 0;
  std::vector<IniEntry> entries;

  const IniEntry* find(const std::string& key) const {
    for (const auto& e : entries) {
      if (e.key == key) return &e;
    }
    return nullptr;
  }
};

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_list(const std::string& s, char sep) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) out.push_back(trim(cur));
  return out;
}

/// `[section]` headers and `key = value` lines; `#` and `;` start comment lines.
class IniDocument {
 public:
  static IniDocument parse(const std::string& text, const std::string& source = "<config>") {
    IniDocument doc;
    doc.source_ = source;
    std::istringstream is(text);
    std::string raw;
    std::size_t line = 0;
    IniSection* cur = nullptr;
    while (std::getline(is, raw)) {
      ++line;
      const std::string s = trim(raw);
      if (s.empty() || s[0] == '#' || s[0] == ';') continue;
      if (s[0] == '[') {
        if (s.back() != ']' || s.size() < 3) throw ConfigError(source, line, "malformed section header '" + s + "'");
        const std::string name = trim(std::string_view(s).substr(1, s.size() - 2));
        if (doc.find(name)) throw ConfigError(source, line, "duplicate section [" + name + "]");
        doc.sections_.push_back(IniSection{name, line, {}});
        cur = &doc.sections_.back();
        continue;
      }
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError(source, line, "expected 'key = value', got '" + s + "'");
      if (!cur) throw ConfigError(source, line, "key outside of any [section]");
      const std::string key = trim(std::string_view(s).substr(0, eq));
      if (key.empty()) throw ConfigError(source, line, "empty key");
      if (cur->find(key)) throw ConfigError(source, line, "duplicate key '" + key + "' in [" + cur->name + "]");
      cur->entries.push_back(IniEntry{key, trim(std::string_view(s).substr(eq + 1)), line});
    }
    return doc;
  }

  static IniDocument load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path.string(), 0, "cannot open file");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path.string());
  }

  /// Overwrites (or appends) `key` in `section`, creating the section if needed.
  void set(const std::string& section, const std::string& key, const std::string& value) {
    IniSection* s = nullptr;
    for (auto& sec : sections_) {
      if (sec.name == section) s = &sec;
    }
    if (!s) {
      sections_.push_back(IniSection{section, 0, {}});
      s = &sections_.back();
    }
    for (auto& e : s->entries) {
      if (e.key == key) {
        e.value = value;
        return;
      }
    }
    s->entries.push_back(IniEntry{key, value, 0});
  }

  const std::string& source() const { return source_; }
  const std::vector<IniSection>& sections() const { return sections_; }

  const IniSection* find(const std::string& name) const {
    for (const auto& s : sections_) {
      if (s.name == name) return &s;
    }
    return nullptr;
  }

  const IniEntry* entry(const std::string& section, const std::string& key) const {
    const IniSection* s = find(section);
    if (!s) return nullptr;
    const IniEntry* e = s->find(key);
    if (e) e->used = true;
    return e;
  }

  std::optional<std::string> get(const std::string& section, const std::string& key) const {
    if (const IniEntry* e = entry(section, key)) return e->value;
    return std::nullopt;
  }

  std::string require(const std::string& section, const std::string& key) const {
    if (const IniEntry* e = entry(section, key)) return e->value;
    const IniSection* s = find(section);
    throw ConfigError(source_, s ? s->line : 0, "missing key '" + key + "' in [" + section + "]");
  }

  template <class U>
  U number(const std::string& section, const std::string& key, U fallback) const {
    const IniEntry* e = entry(section, key);
    return e ? parse_number<U>(*e) : fallback;
  }

  bool flag(const std::string& section, const std::string& key, bool fallback) const {
    const IniEntry* e = entry(section, key);
    if (!e) return fallback;
    if (e->value == "true" || e->value == "yes" || e->value == "1" || e->value == "on") return true;
    if (e->value == "false" || e->value == "no" || e->value == "0" || e->value == "off") return false;
    throw ConfigError(source_, e->line, "'" + key + "' expects a boolean, got '" + e->value + "'");
  }

  template <class U>
  U parse_number(const IniEntry& e) const {
    return parse_number<U>(e.value, e.line, e.key);
  }

  template <class U>
  U parse_number(const std::string& text, std::size_t line, const std::string& key) const {
    U v{};
    const char* b = text.data();
    const char* end = b + text.size();
    const auto r = std::from_chars(b, end, v);
    if (r.ec != std::errc() || r.ptr != end) {
      throw ConfigError(source_, line, "'" + key + "' expects a number, got '" + text + "'");
    }
    return v;
  }

  template <class U>
  std::vector<U> numbers(const IniEntry& e, char sep = ',') const {
    std::vector<U> out;
    for (const auto& item : split_list(e.value, sep)) out.push_back(parse_number<U>(item, e.line, e.key));
    return out;
  }

  /// Rejects any key that no reader consumed, and sections outside `known`
  /// (a trailing '*' in `known` matches by prefix).
  void reject_unknown(const std::vector<std::string>& known) const {
    for (const auto& s : sections_) {
      bool ok = false;
      for (const auto& k : known) {
        if (!k.empty() && k.back() == '*' ? s.name.rfind(k.substr(0, k.size() - 1), 0) == 0 : s.name == k) ok = true;
      }
      if (!ok) throw ConfigError(source_, s.line, "unknown section [" + s.name + "]");
      for (const auto& e : s.entries) {
        if (!e.used) throw ConfigError(source_, e.line, "unknown key '" + e.key + "' in [" + s.name + "]");
      }
    }
  }

 private:
  std::string source_;
  std::vector<IniSection> sections_;
};

}  // namespace pyrafuse
