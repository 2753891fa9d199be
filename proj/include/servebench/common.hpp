#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <ctime>
#include <limits>
#include <stdexcept>
#include <string>
#include <string_view>

#include <json.hpp>

namespace servebench {

using json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;
inline constexpr const char* kVersion = "0.3.0";

// ---------------------------------------------------------------------------
// Errors. Everything a user can cause derives from UserError (CLI exit 1);
// anything else escaping to main is an internal error (exit 2).
// ---------------------------------------------------------------------------
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UserError : public Error {
 public:
  using Error::Error;
};

class ParseError : public UserError {
 public:
  ParseError(std::string what, std::size_t line, std::size_t column)
      : UserError(what + " at line " + std::to_string(line) + ", column " +
                  std::to_string(column)),
        line_(line),
        column_(column) {}
  std::size_t line() const { return line_; }
  std::size_t column() const { return column_; }

 private:
  std::size_t line_;
  std::size_t column_;
};

class ValidationError : public UserError {
 public:
  ValidationError(std::string field, std::string constraint)
      : UserError(field + ": " + constraint),
        field_(std::move(field)),
        constraint_(std::move(constraint)) {}
  const std::string& field() const { return field_; }
  const std::string& constraint() const { return constraint_; }

 private:
  std::string field_;
  std::string constraint_;
};

class NotFoundError : public UserError {
 public:
  using UserError::UserError;
};

class ConflictError : public UserError {
 public:
  using UserError::UserError;
};

class BackendError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Hashing and seeding.
// ---------------------------------------------------------------------------
inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = kDigits[v & 0xf];
    v >>= 4;
  }
  return out;
}

// Canonical hash of a JSON value: keys are sorted by nlohmann's object map, so
// dump() is canonical for a given value.
inline std::string json_hash(const json& j) { return hex64(fnv1a64(j.dump())); }

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline constexpr const char* kPrngName = "mt19937_64/splitmix64/inversion";

// Uniform double in [0,1) from the top 53 bits.
template <class Engine>
double uniform01(Engine& eng) {
  return static_cast<double>(eng() >> 11) * 0x1.0p-53;
}

template <class Engine>
double exponential(Engine& eng, double rate) {
  return -std::log1p(-uniform01(eng)) / rate;
}

// ---------------------------------------------------------------------------
// Checked arithmetic for analytic quantities.
// ---------------------------------------------------------------------------
inline std::uint64_t checked_mul(std::uint64_t a, std::uint64_t b, const char* what) {
  std::uint64_t r = 0;
  if (__builtin_mul_overflow(a, b, &r)) {
    throw ValidationError(what, "quantity overflows 64-bit arithmetic");
  }
  return r;
}

inline std::uint64_t checked_add(std::uint64_t a, std::uint64_t b, const char* what) {
  std::uint64_t r = 0;
  if (__builtin_add_overflow(a, b, &r)) {
    throw ValidationError(what, "quantity overflows 64-bit arithmetic");
  }
  return r;
}

// ---------------------------------------------------------------------------
// Time. Job-relative timestamps are integer nanoseconds so stage durations
// telescope exactly.
// ---------------------------------------------------------------------------
using Nanos = std::int64_t;

inline Nanos to_nanos(double seconds) { return static_cast<Nanos>(std::llround(seconds * 1e9)); }
inline double to_seconds(Nanos ns) { return static_cast<double>(ns) * 1e-9; }

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline double unix_seconds() {
  return std::chrono::duration<double>(std::chrono::system_clock::now().time_since_epoch()).count();
}

// Converts a parser byte offset into 1-based line/column.
inline std::pair<std::size_t, std::size_t> line_column(std::string_view text, std::size_t offset) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < offset && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

inline json parse_json_document(std::string_view text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    const std::size_t off = e.byte > 0 ? e.byte - 1 : 0;
    auto [line, col] = line_column(text, off);
    throw ParseError("syntax error", line, col);
  }
}

}  // namespace servebench
