#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "servebench/common.hpp"
#include "servebench/config_reader.hpp"

namespace servebench {

enum class Precision { fp32, fp16 };

inline const char* to_string(Precision p) { return p == Precision::fp32 ? "fp32" : "fp16"; }

inline Precision parse_precision(const std::string& s, const std::string& field) {
  if (s == "fp32") return Precision::fp32;
  if (s == "fp16") return Precision::fp16;
  throw ValidationError(field, "expected fp32 or fp16, got '" + s + "'");
}

struct CloudOffer {
  std::string provider_label;
  std::string instance_label;
  double hourly_rate = 0.0;  // USD/h

  bool operator==(const CloudOffer&) const = default;
};

struct HardwareProfile {
  std::string id;
  std::string name;
  double peak_flops_fp32 = 0.0;  // FLOP/s
  double peak_flops_fp16 = 0.0;  // FLOP/s
  double mem_bandwidth = 0.0;    // bytes/s
  double mem_capacity = 0.0;     // bytes
  double tdp_power = 0.0;        // W
  std::vector<CloudOffer> cloud_offers;

  double peak_flops(Precision p) const {
    return p == Precision::fp16 && peak_flops_fp16 > 0 ? peak_flops_fp16 : peak_flops_fp32;
  }

  // Intensity (FLOP/byte) at which the compute roof meets the bandwidth slope.
  double ridge_point(Precision p = Precision::fp32) const { return peak_flops(p) / mem_bandwidth; }

  bool operator==(const HardwareProfile&) const = default;
};

inline json to_json(const HardwareProfile& h) {
  json offers = json::array();
  for (const auto& o : h.cloud_offers) {
    offers.push_back({{"provider_label", o.provider_label},
                      {"instance_label", o.instance_label},
                      {"hourly_rate", o.hourly_rate}});
  }
  return {{"id", h.id},
          {"name", h.name},
          {"peak_flops_fp32", h.peak_flops_fp32},
          {"peak_flops_fp16", h.peak_flops_fp16},
          {"mem_bandwidth", h.mem_bandwidth},
          {"mem_capacity", h.mem_capacity},
          {"tdp_power", h.tdp_power},
          {"cloud_offers", offers}};
}

inline void validate(const HardwareProfile& h, const std::string& path) {
  if (h.id.empty()) throw ValidationError(path + ".id", "must be non-empty");
  if (!(h.peak_flops_fp32 > 0)) throw ValidationError(path + ".peak_flops_fp32", "must be > 0");
  if (h.peak_flops_fp16 < 0) throw ValidationError(path + ".peak_flops_fp16", "must be >= 0");
  if (!(h.mem_bandwidth > 0)) throw ValidationError(path + ".mem_bandwidth", "must be > 0");
  if (!(h.mem_capacity > 0)) throw ValidationError(path + ".mem_capacity", "must be > 0");
  if (h.tdp_power < 0) throw ValidationError(path + ".tdp_power", "must be >= 0");
  for (std::size_t i = 0; i < h.cloud_offers.size(); ++i) {
    if (!(h.cloud_offers[i].hourly_rate >= 0)) {
      throw ValidationError(path + ".cloud_offers[" + std::to_string(i) + "].hourly_rate", "must be >= 0");
    }
  }
}

// Reads one profile. `base` supplies defaults when overriding a bundled entry.
inline HardwareProfile hardware_from_json(const json& j, const std::string& path,
                                          const HardwareProfile* base = nullptr) {
  ObjectReader r(j, path);
  HardwareProfile h = base ? *base : HardwareProfile{};
  h.id = r.string("id").value_or(h.id);
  h.name = r.string("name").value_or(h.name);
  h.peak_flops_fp32 = r.number("peak_flops_fp32").value_or(h.peak_flops_fp32);
  h.peak_flops_fp16 = r.number("peak_flops_fp16").value_or(h.peak_flops_fp16);
  h.mem_bandwidth = r.number("mem_bandwidth").value_or(h.mem_bandwidth);
  h.mem_capacity = r.number("mem_capacity").value_or(h.mem_capacity);
  h.tdp_power = r.number("tdp_power").value_or(h.tdp_power);
  if (const json* offers = r.get("cloud_offers")) {
    if (!offers->is_array()) throw ValidationError(r.field("cloud_offers"), "expected a list");
    h.cloud_offers.clear();
    for (std::size_t i = 0; i < offers->size(); ++i) {
      ObjectReader o((*offers)[i], r.field("cloud_offers") + "[" + std::to_string(i) + "]");
      CloudOffer offer;
      offer.provider_label = o.string("provider_label").value_or("");
      offer.instance_label = o.string("instance_label").value_or("");
      offer.hourly_rate = o.number("hourly_rate").value_or(-1.0);
      o.finish();
      h.cloud_offers.push_back(std::move(offer));
    }
  }
  r.finish();
  validate(h, path);
  return h;
}

// Table 1 GPUs. TFLOPS and GB/s converted to FLOP/s and bytes/s; TDP values
// come from vendor datasheets and are catalog data, overridable per file.
// No cloud prices are shipped.
inline std::vector<HardwareProfile> bundled_hardware() {
  return {
      {"G1", "Tesla V100 (Volta)", 15.7e12, 31.4e12, 900e9, 32e9, 300.0, {}},
      {"G2", "GeForce 2080Ti (Turing)", 14.25e12, 28.5e12, 616e9, 11e9, 250.0, {}},
      {"G3", "Tesla T4 (Turing)", 8.1e12, 16.2e12, 300e9, 16e9, 70.0, {}},
      {"G4", "Tesla P4 (Pascal)", 5.5e12, 11.0e12, 192e9, 8e9, 75.0, {}},
  };
}

class HardwareCatalog {
 public:
  HardwareCatalog() : profiles_(bundled_hardware()) {}
  explicit HardwareCatalog(std::vector<HardwareProfile> profiles) : profiles_(std::move(profiles)) {}

  const std::vector<HardwareProfile>& profiles() const { return profiles_; }

  const HardwareProfile* find(const std::string& id) const {
    auto it = std::find_if(profiles_.begin(), profiles_.end(), [&](const auto& h) { return h.id == id; });
    return it == profiles_.end() ? nullptr : &*it;
  }

  const HardwareProfile& at(const std::string& id) const {
    if (const auto* h = find(id)) return *h;
    throw NotFoundError("hardware id '" + id + "' not in catalog");
  }

 private:
  std::vector<HardwareProfile> profiles_;
};

// Parses a catalog document: {"schema_version":1, "hardware":[...]}. Entries
// whose id matches a bundled profile override it field by field; new ids are
// appended. The result always contains the bundled G1-G4.
inline HardwareCatalog parse_hardware_catalog(std::string_view text) {
  const json doc = parse_json_document(text);
  ObjectReader r(doc, "");
  const auto version = r.integer("schema_version").value_or(kSchemaVersion);
  if (version != kSchemaVersion) throw ValidationError("schema_version", "unsupported version " + std::to_string(version));
  std::vector<HardwareProfile> out = bundled_hardware();
  std::set<std::string> ids_in_file;
  if (const json* hw = r.get("hardware")) {
    if (!hw->is_array()) throw ValidationError("hardware", "expected a list");
    for (std::size_t i = 0; i < hw->size(); ++i) {
      const std::string path = "hardware[" + std::to_string(i) + "]";
      const json& entry = (*hw)[i];
      if (!entry.is_object() || !entry.contains("id") || !entry["id"].is_string()) {
        throw ValidationError(path + ".id", "required");
      }
      const std::string id = entry["id"].get<std::string>();
      if (!ids_in_file.insert(id).second) throw ValidationError(path + ".id", "duplicate id '" + id + "'");
      auto it = std::find_if(out.begin(), out.end(), [&](const auto& h) { return h.id == id; });
      if (it != out.end()) {
        *it = hardware_from_json(entry, path, &*it);
      } else {
        out.push_back(hardware_from_json(entry, path));
      }
    }
  }
  r.finish();
  return HardwareCatalog(std::move(out));
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline HardwareCatalog load_hardware_catalog(const std::filesystem::path& path) {
  return parse_hardware_catalog(read_text_file(path));
}

}  // namespace servebench
