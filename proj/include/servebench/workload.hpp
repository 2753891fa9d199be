#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "servebench/common.hpp"
#include "servebench/config_reader.hpp"
#include "servebench/hardware.hpp"

namespace servebench {

enum class ArrivalPattern { poisson, constant, burst, closed_loop, replay };

inline const char* to_string(ArrivalPattern p) {
  switch (p) {
    case ArrivalPattern::poisson: return "poisson";
    case ArrivalPattern::constant: return "constant";
    case ArrivalPattern::burst: return "burst";
    case ArrivalPattern::closed_loop: return "closed_loop";
    case ArrivalPattern::replay: return "replay";
  }
  return "?";
}

inline ArrivalPattern parse_arrival_pattern(const std::string& s, const std::string& field) {
  if (s == "poisson") return ArrivalPattern::poisson;
  if (s == "constant") return ArrivalPattern::constant;
  if (s == "burst") return ArrivalPattern::burst;
  if (s == "closed_loop") return ArrivalPattern::closed_loop;
  if (s == "replay") return ArrivalPattern::replay;
  throw ValidationError(field, "unknown pattern '" + s + "'");
}

struct BurstSpec {
  double base_rate = 0.0;  // req/s
  double peak_rate = 0.0;  // req/s
  double period = 0.0;     // s
  double duty = 0.0;       // fraction of each period spent at peak

  bool operator==(const BurstSpec&) const = default;
};

struct PayloadSpec {
  std::uint64_t synthetic_bytes = 0;
  std::string dataset_dir;  // empty = synthetic

  bool operator==(const PayloadSpec&) const = default;
};

struct WorkloadSpec {
  ArrivalPattern pattern = ArrivalPattern::poisson;
  double rate = 0.0;
  BurstSpec burst;
  std::uint64_t concurrency = 0;
  std::optional<double> duration;
  std::optional<std::uint64_t> num_requests;
  std::string replay_file;  // replay pattern only
  PayloadSpec payload;
  std::uint64_t seed = 0;

  bool open_loop() const { return pattern != ArrivalPattern::closed_loop; }

  bool operator==(const WorkloadSpec&) const = default;
};

inline void validate(const WorkloadSpec& w, const std::string& path = "workload") {
  const bool rate_needed = w.pattern == ArrivalPattern::poisson || w.pattern == ArrivalPattern::constant;
  if (rate_needed && !(w.rate > 0)) throw ValidationError(path + ".rate", "must be > 0");
  if (w.pattern == ArrivalPattern::burst) {
    if (!(w.burst.base_rate > 0)) throw ValidationError(path + ".burst.base_rate", "must be > 0");
    if (!(w.burst.peak_rate > 0)) throw ValidationError(path + ".burst.peak_rate", "must be > 0");
    if (!(w.burst.period > 0)) throw ValidationError(path + ".burst.period", "must be > 0");
    if (!(w.burst.duty > 0 && w.burst.duty < 1)) throw ValidationError(path + ".burst.duty", "must be in (0,1)");
  }
  if (w.pattern == ArrivalPattern::closed_loop && w.concurrency < 1) {
    throw ValidationError(path + ".concurrency", "must be >= 1 for closed_loop");
  }
  if (w.pattern == ArrivalPattern::replay) {
    if (w.replay_file.empty()) throw ValidationError(path + ".replay_file", "required for replay");
  } else if (w.duration.has_value() == w.num_requests.has_value()) {
    throw ValidationError(path + ".duration", "exactly one of duration or num_requests is required");
  }
  if (w.duration && !(*w.duration > 0)) throw ValidationError(path + ".duration", "must be > 0");
  if (w.num_requests && *w.num_requests < 1) throw ValidationError(path + ".num_requests", "must be >= 1");
}

struct ArrivalSchedule {
  std::vector<double> offsets;  // seconds from job start, non-decreasing
  std::uint64_t seed = 0;
};

// ---------------------------------------------------------------------------
// Schedule files: one offset per line, '#' comments allowed.
// ---------------------------------------------------------------------------
inline std::string format_schedule(const ArrivalSchedule& s) {
  std::ostringstream out;
  out << "# servebench arrival schedule seed=" << s.seed << " n=" << s.offsets.size() << "\n";
  char buf[40];
  for (double t : s.offsets) {
    std::snprintf(buf, sizeof buf, "%.17g\n", t);
    out << buf;
  }
  return out.str();
}

inline ArrivalSchedule parse_schedule(std::string_view text) {
  ArrivalSchedule s;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(line.substr(first), &used);
    } catch (const std::exception&) {
      throw ParseError("malformed schedule offset", lineno, first + 1);
    }
    if (line.find_first_not_of(" \t\r", first + used) != std::string::npos || !(v >= 0)) {
      throw ParseError("malformed schedule offset", lineno, first + 1);
    }
    if (!s.offsets.empty() && v < s.offsets.back()) throw ParseError("offsets must be non-decreasing", lineno, first + 1);
    s.offsets.push_back(v);
  }
  return s;
}

inline std::mt19937_64 make_engine(std::uint64_t seed, std::uint64_t stream = 0) {
  return std::mt19937_64(splitmix64(seed ^ splitmix64(stream)));
}

// Materializes the arrival process up front. Closed-loop workloads have no
// fixed schedule; the harness releases sends on completions instead, so the
// result holds only the initial `concurrency` offsets (all zero).
inline ArrivalSchedule gen_arrivals(const WorkloadSpec& w) {
  validate(w);
  ArrivalSchedule s;
  s.seed = w.seed;
  if (w.pattern == ArrivalPattern::replay) {
    s = parse_schedule(read_text_file(w.replay_file));
    s.seed = w.seed;
    if (w.num_requests && s.offsets.size() > *w.num_requests) s.offsets.resize(*w.num_requests);
    if (w.duration) std::erase_if(s.offsets, [&](double t) { return t >= *w.duration; });
    return s;
  }
  auto more = [&](double t) {
    if (w.num_requests) return s.offsets.size() < *w.num_requests;
    return t < *w.duration;
  };
  switch (w.pattern) {
    case ArrivalPattern::constant: {
      for (std::uint64_t i = 0;; ++i) {
        const double t = static_cast<double>(i) / w.rate;
        if (!more(t)) break;
        s.offsets.push_back(t);
      }
      break;
    }
    case ArrivalPattern::poisson: {
      auto eng = make_engine(w.seed);
      double t = 0;
      while (true) {
        t += exponential(eng, w.rate);
        if (!more(t)) break;
        s.offsets.push_back(t);
      }
      break;
    }
    case ArrivalPattern::burst: {
      // Two-level modulated Poisson: peak rate for the first duty*period of
      // each period, base rate otherwise. Memorylessness lets us restart the
      // exponential clock at each segment boundary.
      auto eng = make_engine(w.seed);
      const double peak_len = w.burst.duty * w.burst.period;
      double t = 0;
      while (true) {
        const double cycle_start = std::floor(t / w.burst.period) * w.burst.period;
        const double phase = t - cycle_start;
        const bool at_peak = phase < peak_len;
        const double seg_end = cycle_start + (at_peak ? peak_len : w.burst.period);
        const double rate = at_peak ? w.burst.peak_rate : w.burst.base_rate;
        const double next = t + exponential(eng, rate);
        if (next >= seg_end) {
          t = seg_end;
          if (w.duration && t >= *w.duration) break;
          continue;
        }
        t = next;
        if (!more(t)) break;
        s.offsets.push_back(t);
      }
      break;
    }
    case ArrivalPattern::closed_loop: {
      std::uint64_t n = w.concurrency;
      if (w.num_requests) n = std::min(n, *w.num_requests);
      s.offsets.assign(n, 0.0);
      break;
    }
    case ArrivalPattern::replay: break;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Payloads.
// ---------------------------------------------------------------------------
struct Payload {
  std::string bytes;
  std::string payload_id;
};

// Dataset files, sorted by name, regular files only.
inline std::vector<std::filesystem::path> dataset_files(const std::string& dir) {
  std::vector<std::filesystem::path> files;
  if (!std::filesystem::is_directory(dir)) throw NotFoundError("dataset dir '" + dir + "' not found");
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file()) files.push_back(e.path());
  }
  if (files.empty()) throw ValidationError("workload.payload.dataset_dir", "dataset directory is empty");
  std::sort(files.begin(), files.end(), [](const auto& a, const auto& b) { return a.filename() < b.filename(); });
  return files;
}

// Size of payload i without materializing it.
inline std::uint64_t payload_size(const WorkloadSpec& w, const std::vector<std::filesystem::path>& files,
                                  std::uint64_t index) {
  if (w.payload.dataset_dir.empty()) return w.payload.synthetic_bytes;
  return std::filesystem::file_size(files[index % files.size()]);
}

// Synthetic payload i is drawn from its own seeded stream, so it does not
// depend on which other payloads were generated.
inline Payload gen_payload(const WorkloadSpec& w, std::uint64_t index) {
  if (!w.payload.dataset_dir.empty()) {
    const auto files = dataset_files(w.payload.dataset_dir);
    const auto& f = files[index % files.size()];
    return {read_text_file(f), f.filename().string()};
  }
  auto eng = make_engine(w.seed, 0x9a71'0ad0ULL + index);
  Payload p;
  p.payload_id = "synthetic-" + std::to_string(index);
  p.bytes.resize(w.payload.synthetic_bytes);
  std::size_t i = 0;
  while (i < p.bytes.size()) {
    std::uint64_t word = eng();
    for (int k = 0; k < 8 && i < p.bytes.size(); ++k, ++i) {
      p.bytes[i] = static_cast<char>(word & 0xff);
      word >>= 8;
    }
  }
  return p;
}

}  // namespace servebench
