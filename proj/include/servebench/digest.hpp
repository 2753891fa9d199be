#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <vector>

#include "servebench/common.hpp"

namespace servebench {

// Latency digest with two storage modes:
//  - exact: every sample kept; percentile by nearest rank on the sorted store.
//  - histogram: logarithmic buckets of ratio gamma = (1+a)/(1-a), a = 0.01,
//    reporting 2*gamma^i/(gamma+1) for bucket i. Relative error <= a.
class LatencyDigest {
 public:
  enum class Mode { exact, histogram };

  static constexpr double kRelativeAccuracy = 0.01;

  explicit LatencyDigest(Mode mode = Mode::exact) : mode_(mode) {}

  Mode mode() const { return mode_; }

  void record(double v) {
    ++count_;
    sum_ += v;
    min_ = std::min(min_, v);
    max_ = std::max(max_, v);
    if (mode_ == Mode::exact) {
      samples_.push_back(v);
      sorted_ = false;
    } else if (v <= 0) {
      ++zero_count_;
    } else {
      ++buckets_[bucket_index(v)];
    }
  }

  std::size_t count() const { return count_; }
  bool empty() const { return count_ == 0; }
  double min() const { return count_ ? min_ : 0.0; }
  double max() const { return count_ ? max_ : 0.0; }
  double mean() const { return count_ ? sum_ / static_cast<double>(count_) : 0.0; }
  double sum() const { return sum_; }

  // Nearest rank: the ceil(q*n)-th smallest sample (1-based).
  double percentile(double q) const {
    if (count_ == 0) throw UserError("percentile of an empty digest");
    if (!(q > 0 && q < 1)) throw ValidationError("q", "must be in (0,1)");
    const std::size_t rank = nearest_rank(q, count_);
    if (mode_ == Mode::exact) {
      ensure_sorted();
      return samples_[rank - 1];
    }
    std::size_t seen = zero_count_;
    if (rank <= seen) return 0.0;
    for (const auto& [idx, c] : buckets_) {
      seen += c;
      if (rank <= seen) return std::clamp(bucket_value(idx), min_, max_);
    }
    return max_;
  }

  static std::size_t nearest_rank(double q, std::size_t n) {
    auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(n)));
    // q*n can land a hair above an integer in floating point (0.07*100).
    const double lower = static_cast<double>(rank - 1);
    if (rank > 1 && std::abs(q * static_cast<double>(n) - lower) < 1e-9 * static_cast<double>(n)) --rank;
    return std::clamp<std::size_t>(rank, 1, n);
  }

  // Sorted samples (exact mode only).
  const std::vector<double>& sorted_samples() const {
    ensure_sorted();
    return samples_;
  }

  json to_json() const {
    json j = {{"mode", mode_ == Mode::exact ? "exact" : "histogram"},
              {"count", count_},
              {"min", min()},
              {"max", max()},
              {"mean", mean()},
              {"sum", sum_}};
    if (mode_ == Mode::exact) {
      j["samples"] = sorted_samples();
    } else {
      json b = json::array();
      for (const auto& [idx, c] : buckets_) b.push_back({idx, c});
      j["zero_count"] = zero_count_;
      j["buckets"] = b;
    }
    return j;
  }

  static LatencyDigest from_json(const json& j) {
    LatencyDigest d(j.at("mode").get<std::string>() == "exact" ? Mode::exact : Mode::histogram);
    d.count_ = j.at("count").get<std::size_t>();
    d.sum_ = j.at("sum").get<double>();
    if (d.count_) {
      d.min_ = j.at("min").get<double>();
      d.max_ = j.at("max").get<double>();
    }
    if (d.mode_ == Mode::exact) {
      d.samples_ = j.at("samples").get<std::vector<double>>();
      d.sorted_ = true;
    } else {
      d.zero_count_ = j.at("zero_count").get<std::size_t>();
      for (const auto& b : j.at("buckets")) d.buckets_[b[0].get<int>()] = b[1].get<std::size_t>();
    }
    return d;
  }

  bool operator==(const LatencyDigest& o) const {
    return mode_ == o.mode_ && count_ == o.count_ && sum_ == o.sum_ && min() == o.min() && max() == o.max() &&
           sorted_samples_or_empty() == o.sorted_samples_or_empty() && zero_count_ == o.zero_count_ &&
           buckets_ == o.buckets_;
  }

 private:
  static double gamma() { return (1 + kRelativeAccuracy) / (1 - kRelativeAccuracy); }
  static int bucket_index(double v) { return static_cast<int>(std::ceil(std::log(v) / std::log(gamma()))); }
  // Bucket i covers (gamma^(i-1), gamma^i].
  static double bucket_value(int idx) { return 2.0 * std::pow(gamma(), idx) / (gamma() + 1.0); }

  const std::vector<double>& sorted_samples_or_empty() const {
    static const std::vector<double> kNone;
    return mode_ == Mode::exact ? sorted_samples() : kNone;
  }

  void ensure_sorted() const {
    if (!sorted_) {
      std::sort(samples_.begin(), samples_.end());
      sorted_ = true;
    }
  }

  Mode mode_;
  std::size_t count_ = 0;
  double sum_ = 0;
  double min_ = std::numeric_limits<double>::infinity();
  double max_ = -std::numeric_limits<double>::infinity();
  mutable std::vector<double> samples_;
  mutable bool sorted_ = true;
  std::size_t zero_count_ = 0;
  std::map<int, std::size_t> buckets_;
};

}  // namespace servebench
