#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "servebench/common.hpp"

namespace servebench {

// Strict reader over one JSON object. Every key must be consumed before
// finish(); leftovers are reported as unknown with their full dotted path.
class ObjectReader {
 public:
  ObjectReader(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ValidationError(display(), "expected an object");
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  bool has(const std::string& key) const { return obj_.contains(key); }

  const json* get(const std::string& key) {
    seen_.insert(key);
    auto it = obj_.find(key);
    return it == obj_.end() ? nullptr : &*it;
  }

  const json& require(const std::string& key) {
    const json* v = get(key);
    if (!v) throw ValidationError(field(key), "required");
    return *v;
  }

  std::optional<double> number(const std::string& key) {
    const json* v = get(key);
    if (!v) return std::nullopt;
    if (!v->is_number()) throw ValidationError(field(key), "expected a number");
    return v->get<double>();
  }

  std::optional<std::int64_t> integer(const std::string& key) {
    const json* v = get(key);
    if (!v) return std::nullopt;
    if (!v->is_number_integer()) throw ValidationError(field(key), "expected an integer");
    return v->get<std::int64_t>();
  }

  std::optional<std::uint64_t> unsigned_integer(const std::string& key) {
    const json* v = get(key);
    if (!v) return std::nullopt;
    if (v->is_number_unsigned()) return v->get<std::uint64_t>();
    if (v->is_number_integer() && v->get<std::int64_t>() >= 0) return static_cast<std::uint64_t>(v->get<std::int64_t>());
    // Real-world metadata often arrives as 8.2e9; accept integral floats.
    if (v->is_number_float()) {
      const double d = v->get<double>();
      if (d >= 0 && d < 1.8e19 && std::floor(d) == d) return static_cast<std::uint64_t>(d);
    }
    throw ValidationError(field(key), "expected a non-negative integer");
  }

  std::optional<std::string> string(const std::string& key) {
    const json* v = get(key);
    if (!v) return std::nullopt;
    if (!v->is_string()) throw ValidationError(field(key), "expected a string");
    return v->get<std::string>();
  }

  std::optional<bool> boolean(const std::string& key) {
    const json* v = get(key);
    if (!v) return std::nullopt;
    if (!v->is_boolean()) throw ValidationError(field(key), "expected a boolean");
    return v->get<bool>();
  }

  std::optional<ObjectReader> object(const std::string& key) {
    const json* v = get(key);
    if (!v) return std::nullopt;
    return ObjectReader(*v, field(key));
  }

  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      if (!seen_.count(it.key())) throw ValidationError(field(it.key()), "unknown key");
    }
  }

  const std::string& path() const { return path_; }

 private:
  std::string display() const { return path_.empty() ? "<root>" : path_; }

  const json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace servebench
