#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "servebench/common.hpp"
#include "servebench/config_reader.hpp"

namespace servebench {

enum class BlockKind { fc, cnn, rnn, transformer };

inline const char* to_string(BlockKind b) {
  switch (b) {
    case BlockKind::fc: return "fc";
    case BlockKind::cnn: return "cnn";
    case BlockKind::rnn: return "rnn";
    case BlockKind::transformer: return "transformer";
  }
  return "?";
}

inline BlockKind parse_block_kind(const std::string& s, const std::string& field) {
  if (s == "fc") return BlockKind::fc;
  if (s == "cnn") return BlockKind::cnn;
  if (s == "rnn") return BlockKind::rnn;
  if (s == "transformer") return BlockKind::transformer;
  throw ValidationError(field, "expected one of fc, cnn, rnn, transformer; got '" + s + "'");
}

inline bool needs_seq_len(BlockKind b) { return b == BlockKind::rnn || b == BlockKind::transformer; }

struct GeneratorParams {
  BlockKind block = BlockKind::fc;
  std::uint64_t num_layers = 1;
  std::uint64_t width = 1;
  std::uint64_t seq_len = 0;  // 0 = absent; required for rnn/transformer only
  std::vector<std::uint64_t> input_dims;
  std::uint64_t precision_bytes = 4;

  bool operator==(const GeneratorParams&) const = default;
};

inline void validate(const GeneratorParams& p, const std::string& path = "params") {
  if (p.num_layers < 1) throw ValidationError(path + ".num_layers", "must be >= 1");
  if (p.width < 1) throw ValidationError(path + ".width", "must be >= 1");
  if (p.precision_bytes != 4 && p.precision_bytes != 2) {
    throw ValidationError(path + ".precision_bytes", "must be 4 or 2");
  }
  if (needs_seq_len(p.block) && p.seq_len < 1) {
    throw ValidationError(path + ".seq_len", std::string("required for ") + to_string(p.block));
  }
  if (!needs_seq_len(p.block) && p.seq_len != 0) {
    throw ValidationError(path + ".seq_len", std::string("not allowed for ") + to_string(p.block));
  }
  for (std::size_t i = 0; i < p.input_dims.size(); ++i) {
    if (p.input_dims[i] < 1) throw ValidationError(path + ".input_dims[" + std::to_string(i) + "]", "must be >= 1");
  }
  if (p.block == BlockKind::cnn && p.input_dims.size() < 2) {
    throw ValidationError(path + ".input_dims", "cnn needs at least (H, W)");
  }
}

inline json to_json(const GeneratorParams& p) {
  json j = {{"block", to_string(p.block)},
            {"num_layers", p.num_layers},
            {"width", p.width},
            {"input_dims", p.input_dims},
            {"precision_bytes", p.precision_bytes}};
  if (p.seq_len != 0) j["seq_len"] = p.seq_len;
  return j;
}

inline GeneratorParams generator_params_from_json(const json& j, const std::string& path) {
  ObjectReader r(j, path);
  GeneratorParams p;
  p.block = parse_block_kind(r.string("block").value_or("fc"), r.field("block"));
  p.num_layers = r.unsigned_integer("num_layers").value_or(1);
  p.width = r.unsigned_integer("width").value_or(1);
  p.seq_len = r.unsigned_integer("seq_len").value_or(0);
  if (const json* dims = r.get("input_dims")) {
    if (!dims->is_array()) throw ValidationError(r.field("input_dims"), "expected a list");
    for (const auto& d : *dims) {
      if (!d.is_number_integer() || d.get<std::int64_t>() < 1) throw ValidationError(r.field("input_dims"), "entries must be positive integers");
      p.input_dims.push_back(d.get<std::uint64_t>());
    }
  }
  p.precision_bytes = r.unsigned_integer("precision_bytes").value_or(4);
  if (const auto prec = r.string("precision")) {
    if (*prec == "fp32") p.precision_bytes = 4;
    else if (*prec == "fp16") p.precision_bytes = 2;
    else throw ValidationError(r.field("precision"), "expected fp32 or fp16");
  }
  r.finish();
  validate(p, path);
  return p;
}

struct ModelDescriptor {
  std::string model_id;
  std::string family;  // block kind name or "realworld"
  std::uint64_t flops_per_sample = 0;
  std::uint64_t weight_bytes = 0;
  std::uint64_t activation_bytes_per_sample = 0;
  std::optional<GeneratorParams> params;
  json metadata = json::object();  // free-form for real-world entries
  int version = 1;

  // Operational intensity at batch size b (FLOP/byte).
  double intensity(double batch) const {
    return batch * static_cast<double>(flops_per_sample) /
           (static_cast<double>(weight_bytes) + batch * static_cast<double>(activation_bytes_per_sample));
  }

  double intensity_limit() const {
    return static_cast<double>(flops_per_sample) / static_cast<double>(activation_bytes_per_sample);
  }

  bool operator==(const ModelDescriptor&) const = default;
};

inline void validate(const ModelDescriptor& m, const std::string& path = "descriptor") {
  if (m.model_id.empty()) throw ValidationError(path + ".model_id", "must be non-empty");
  if (m.flops_per_sample == 0) throw ValidationError(path + ".flops_per_sample", "must be > 0");
  if (m.weight_bytes == 0) throw ValidationError(path + ".weight_bytes", "must be > 0");
  if (m.activation_bytes_per_sample == 0) throw ValidationError(path + ".activation_bytes_per_sample", "must be > 0");
  if (m.version < 1) throw ValidationError(path + ".version", "must be >= 1");
}

inline json to_json(const ModelDescriptor& m) {
  json j = {{"model_id", m.model_id},
            {"family", m.family},
            {"flops_per_sample", m.flops_per_sample},
            {"weight_bytes", m.weight_bytes},
            {"activation_bytes_per_sample", m.activation_bytes_per_sample},
            {"metadata", m.metadata},
            {"version", m.version}};
  if (m.params) j["params"] = to_json(*m.params);
  return j;
}

inline ModelDescriptor descriptor_from_json(const json& j, const std::string& path) {
  ObjectReader r(j, path);
  ModelDescriptor m;
  m.model_id = r.string("model_id").value_or("");
  m.family = r.string("family").value_or("realworld");
  m.flops_per_sample = r.unsigned_integer("flops_per_sample").value_or(0);
  m.weight_bytes = r.unsigned_integer("weight_bytes").value_or(0);
  m.activation_bytes_per_sample = r.unsigned_integer("activation_bytes_per_sample").value_or(0);
  if (const json* p = r.get("params")) m.params = generator_params_from_json(*p, r.field("params"));
  if (const json* md = r.get("metadata")) {
    if (!md->is_object()) throw ValidationError(r.field("metadata"), "expected an object");
    m.metadata = *md;
  }
  m.version = static_cast<int>(r.integer("version").value_or(1));
  r.finish();
  validate(m, path);
  return m;
}

inline std::string descriptor_hash(const ModelDescriptor& m) { return json_hash(to_json(m)); }

// Deterministic id for a generated model, e.g. "fc-L4-W1024-I1024-fp32".
inline std::string generated_model_id(const GeneratorParams& p) {
  std::string id = std::string(to_string(p.block)) + "-L" + std::to_string(p.num_layers) + "-W" + std::to_string(p.width);
  if (p.seq_len) id += "-S" + std::to_string(p.seq_len);
  if (!p.input_dims.empty()) {
    id += "-I";
    for (std::size_t i = 0; i < p.input_dims.size(); ++i) {
      if (i) id += "x";
      id += std::to_string(p.input_dims[i]);
    }
  }
  id += p.precision_bytes == 2 ? "-fp16" : "-fp32";
  return id;
}

// Closed-form FLOP/byte accounting per block family. Every activation tensor
// (layer input and output) is counted as touching memory once.
inline ModelDescriptor generate_model(const GeneratorParams& p) {
  validate(p);
  const std::uint64_t L = p.num_layers;
  const std::uint64_t w = p.width;
  const std::uint64_t pb = p.precision_bytes;
  std::uint64_t flops = 0, weights = 0, acts = 0;

  auto mul = [](std::initializer_list<std::uint64_t> xs, const char* what) {
    std::uint64_t r = 1;
    for (auto x : xs) r = checked_mul(r, x, what);
    return r;
  };
  auto add = [](std::uint64_t& acc, std::uint64_t v, const char* what) { acc = checked_add(acc, v, what); };

  switch (p.block) {
    case BlockKind::fc: {
      // First layer maps input width to `width`; the rest are width x width.
      const std::uint64_t n_in0 = p.input_dims.empty() ? w : p.input_dims.front();
      for (std::uint64_t layer = 0; layer < L; ++layer) {
        const std::uint64_t n_in = layer == 0 ? n_in0 : w;
        add(flops, mul({2, n_in, w}, "flops_per_sample"), "flops_per_sample");
        add(weights, mul({n_in, w, pb}, "weight_bytes"), "weight_bytes");
        add(acts, mul({checked_add(n_in, w, "activation_bytes"), pb}, "activation_bytes"), "activation_bytes");
      }
      break;
    }
    case BlockKind::cnn: {
      // Residual block = two 3x3 convs at constant HxW with C = width channels.
      const std::uint64_t H = p.input_dims[p.input_dims.size() - 2];
      const std::uint64_t W = p.input_dims.back();
      const std::uint64_t conv_flops = mul({2, 9, w, w, H, W}, "flops_per_sample");
      const std::uint64_t conv_weights = mul({9, w, w, pb}, "weight_bytes");
      const std::uint64_t conv_acts = mul({2, w, H, W, pb}, "activation_bytes");
      flops = mul({L, 2, conv_flops}, "flops_per_sample");
      weights = mul({L, 2, conv_weights}, "weight_bytes");
      acts = mul({L, 2, conv_acts}, "activation_bytes");
      break;
    }
    case BlockKind::rnn: {
      // LSTM: 4 gates, each 2*(input+hidden)*hidden per step.
      const std::uint64_t s = p.seq_len;
      const std::uint64_t i0 = p.input_dims.empty() ? w : p.input_dims.front();
      for (std::uint64_t layer = 0; layer < L; ++layer) {
        const std::uint64_t in = layer == 0 ? i0 : w;
        const std::uint64_t hi = checked_add(w, in, "flops_per_sample");
        add(flops, mul({8, w, hi, s}, "flops_per_sample"), "flops_per_sample");
        add(weights, mul({4, w, hi, pb}, "weight_bytes"), "weight_bytes");
        add(acts, mul({s, hi, pb}, "activation_bytes"), "activation_bytes");
      }
      break;
    }
    case BlockKind::transformer: {
      // Per token: projections 8d^2, attention 4sd, FFN (x4) 16d^2.
      const std::uint64_t s = p.seq_len;
      const std::uint64_t per_token = checked_add(mul({24, w, w}, "flops_per_sample"), mul({4, s, w}, "flops_per_sample"),
                                                  "flops_per_sample");
      flops = mul({L, s, per_token}, "flops_per_sample");
      weights = mul({L, 20, w, w, pb}, "weight_bytes");
      acts = mul({L, 2, s, w, pb}, "activation_bytes");
      break;
    }
  }

  ModelDescriptor m;
  m.model_id = generated_model_id(p);
  m.family = to_string(p.block);
  m.flops_per_sample = flops;
  m.weight_bytes = weights;
  m.activation_bytes_per_sample = acts;
  m.params = p;
  return m;
}

// ---------------------------------------------------------------------------
// Grid sweeps over generator parameters. Axis names: num_layers (or layers),
// width, seq_len, precision_bytes.
// ---------------------------------------------------------------------------
struct SweepAxis {
  std::string name;
  std::vector<std::uint64_t> values;
};

inline std::string canonical_axis_name(const std::string& name) {
  if (name == "layers" || name == "num_layers") return "num_layers";
  if (name == "width" || name == "neurons" || name == "hidden" || name == "d") return "width";
  if (name == "seq_len" || name == "seq") return "seq_len";
  if (name == "precision_bytes") return "precision_bytes";
  throw ValidationError("axes." + name, "not a model parameter");
}

inline void set_param(GeneratorParams& p, const std::string& axis, std::uint64_t v) {
  const std::string name = canonical_axis_name(axis);
  if (name == "num_layers") p.num_layers = v;
  else if (name == "width") p.width = v;
  else if (name == "seq_len") p.seq_len = v;
  else p.precision_bytes = v;
}

struct SweepPoint {
  std::vector<std::pair<std::string, std::uint64_t>> coords;
  GeneratorParams params;
};

// Cartesian product, row-major over axes in declared order (last axis fastest).
inline std::vector<SweepPoint> sweep_points(const GeneratorParams& base, const std::vector<SweepAxis>& axes) {
  for (const auto& a : axes) {
    canonical_axis_name(a.name);
    if (a.values.empty()) throw ValidationError("axes." + a.name, "axis is empty");
  }
  std::vector<SweepPoint> out;
  std::vector<std::size_t> idx(axes.size(), 0);
  while (true) {
    SweepPoint pt{{}, base};
    for (std::size_t k = 0; k < axes.size(); ++k) {
      pt.coords.emplace_back(axes[k].name, axes[k].values[idx[k]]);
      set_param(pt.params, axes[k].name, axes[k].values[idx[k]]);
    }
    out.push_back(std::move(pt));
    std::size_t k = axes.size();
    while (k > 0) {
      --k;
      if (++idx[k] < axes[k].values.size()) break;
      idx[k] = 0;
      if (k == 0) return out;
    }
    if (axes.empty()) return out;
  }
}

inline std::vector<ModelDescriptor> sweep_grid(const GeneratorParams& base, const std::vector<SweepAxis>& axes) {
  std::vector<ModelDescriptor> out;
  for (const auto& pt : sweep_points(base, axes)) out.push_back(generate_model(pt.params));
  return out;
}

}  // namespace servebench
