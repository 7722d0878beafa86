#pragma once

// CKP1 checkpoint files:
//
//   "CKP1" | u32 header length | UTF-8 header | f32 tensors | 256 x f64 CDF
//
// The header is `key=value` lines describing the architecture, training and
// preprocessing configuration and the epoch counter, followed by one
// `tensor=<name> <dim>...` line per payload tensor in payload order:
// parameters first, then `velocity/<name>` for every trainable tensor.
// All binary fields are little-endian.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "cardiacnet/cvol.hpp"
#include "cardiacnet/error.hpp"
#include "cardiacnet/metrics.hpp"
#include "cardiacnet/network.hpp"
#include "cardiacnet/pipeline.hpp"
#include "cardiacnet/preprocess.hpp"
#include "cardiacnet/train.hpp"

namespace cardiacnet {

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  ArchitectureSpec arch;
  NetworkParams<float> params;
  NetworkParams<float> velocity;
  ReferenceCdf reference;
  TrainConfig config;
  PreprocessConfig preprocess;
  Dims volume_dims{};
  int epoch = 0;

  friend bool operator==(const Checkpoint& a, const Checkpoint& b) {
    return a.arch == b.arch && a.params == b.params && a.velocity == b.velocity && a.reference == b.reference &&
           a.config == b.config && a.preprocess == b.preprocess && a.volume_dims == b.volume_dims && a.epoch == b.epoch;
  }
};

namespace checkpoint_detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline std::uint64_t get_uint(const std::uint8_t* p, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= std::uint64_t{p[i]} << (8 * i);
  return v;
}

inline std::string shape_text(const std::vector<int>& shape) {
  std::string s;
  for (int d : shape) s += " " + std::to_string(d);
  return s;
}

struct Entry {
  std::string name;
  std::vector<int> shape;
};

template <typename Int>
Int parse_int(const std::string& s, const char* key) {
  Int v{};
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw FormatError(std::string("checkpoint field ") + key + " is not an integer: '" + s + "'");
  return v;
}

}  // namespace checkpoint_detail

inline std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck) {
  using namespace checkpoint_detail;
  std::ostringstream h;
  const auto& c = ck.config;
  const auto& p = ck.preprocess;
  h << "version=" << kCheckpointVersion << '\n'
    << "base_filters=" << ck.arch.base_filters << '\n'
    << "in_channels=" << ck.arch.in_channels << '\n'
    << "num_classes=" << ck.arch.num_classes << '\n'
    << "view=" << view_letter(c.view) << '\n'
    << "loss=" << loss_name(c.loss) << '\n'
    << "lr=" << format_double(c.lr) << '\n'
    << "momentum=" << format_double(c.momentum) << '\n'
    << "batch=" << c.batch << '\n'
    << "epochs=" << c.epochs << '\n'
    << "seed=" << c.seed << '\n'
    << "config_base_filters=" << c.base_filters << '\n'
    << "zloss_a=" << format_double(c.zloss.a) << '\n'
    << "zloss_b=" << format_double(c.zloss.b) << '\n'
    << "zloss_sigma_floor=" << format_double(c.zloss.sigma_floor) << '\n'
    << "diffusion_iterations=" << p.diffusion_iterations << '\n'
    << "diffusion_kappa=" << format_double(p.diffusion_kappa) << '\n'
    << "diffusion_dt=" << format_double(p.diffusion_dt) << '\n'
    << "histogram_match=" << (p.histogram_match ? 1 : 0) << '\n'
    << "intensity_scale=" << format_double(p.intensity_scale) << '\n'
    << "volume_dims=" << ck.volume_dims.nx << ' ' << ck.volume_dims.ny << ' ' << ck.volume_dims.nz << '\n'
    << "epoch=" << ck.epoch << '\n';
  for (const auto& t : ck.params.tensors) h << "tensor=" << t.name << shape_text(t.shape) << '\n';
  for (const auto& t : ck.velocity.tensors)
    if (t.trainable) h << "tensor=velocity/" << t.name << shape_text(t.shape) << '\n';
  const std::string header = h.str();

  std::vector<std::uint8_t> out;
  out.insert(out.end(), {'C', 'K', 'P', '1'});
  put_u32(out, static_cast<std::uint32_t>(header.size()));
  out.insert(out.end(), header.begin(), header.end());
  const auto put_tensor = [&](const ParamTensor<float>& t) {
    for (float v : t.values) put_u32(out, std::bit_cast<std::uint32_t>(v));
  };
  for (const auto& t : ck.params.tensors) put_tensor(t);
  for (const auto& t : ck.velocity.tensors)
    if (t.trainable) put_tensor(t);
  for (double v : ck.reference.cdf) put_u64(out, std::bit_cast<std::uint64_t>(v));
  return out;
}

inline Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  using namespace checkpoint_detail;
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "CKP1", 4) != 0) throw FormatError("not a CKP1 checkpoint (bad magic)");
  if (bytes.size() < 8) throw LengthError("checkpoint header truncated");
  const std::size_t header_len = get_uint(bytes.data() + 4, 4);
  if (bytes.size() < 8 + header_len) throw LengthError("checkpoint header truncated");
  const std::string header(reinterpret_cast<const char*>(bytes.data() + 8), header_len);

  std::map<std::string, std::string> kv;
  std::vector<Entry> manifest;
  std::istringstream in(header);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("checkpoint header line without '=': " + line);
    const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    if (key == "tensor") {
      std::istringstream ts(value);
      Entry e;
      ts >> e.name;
      int dim = 0;
      while (ts >> dim) e.shape.push_back(dim);
      manifest.push_back(std::move(e));
    } else {
      kv[key] = value;
    }
  }
  const auto get = [&](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw FormatError(std::string("checkpoint header is missing ") + key);
    return it->second;
  };

  if (parse_int<int>(get("version"), "version") != kCheckpointVersion) throw FormatError("unsupported checkpoint version");
  Checkpoint ck;
  ck.arch.base_filters = parse_int<int>(get("base_filters"), "base_filters");
  ck.arch.in_channels = parse_int<int>(get("in_channels"), "in_channels");
  ck.arch.num_classes = parse_int<int>(get("num_classes"), "num_classes");
  if (ck.arch.base_filters < 1 || ck.arch.in_channels < 1 || ck.arch.num_classes != 2)
    throw FormatError("checkpoint architecture is invalid");
  auto& c = ck.config;
  const auto view = parse_view_name(get("view"));
  if (!view) throw FormatError("checkpoint view is invalid");
  c.view = *view;
  const auto& loss = get("loss");
  if (loss == "zloss")
    c.loss = LossKind::ZLoss;
  else if (loss == "cross_entropy")
    c.loss = LossKind::CrossEntropy;
  else
    throw FormatError("checkpoint loss is invalid: " + loss);
  c.lr = parse_double(get("lr"));
  c.momentum = parse_double(get("momentum"));
  c.batch = parse_int<int>(get("batch"), "batch");
  c.epochs = parse_int<int>(get("epochs"), "epochs");
  c.seed = parse_int<std::uint64_t>(get("seed"), "seed");
  c.base_filters = parse_int<int>(get("config_base_filters"), "config_base_filters");
  c.zloss.a = parse_double(get("zloss_a"));
  c.zloss.b = parse_double(get("zloss_b"));
  c.zloss.sigma_floor = parse_double(get("zloss_sigma_floor"));
  auto& p = ck.preprocess;
  p.diffusion_iterations = parse_int<int>(get("diffusion_iterations"), "diffusion_iterations");
  p.diffusion_kappa = parse_double(get("diffusion_kappa"));
  p.diffusion_dt = parse_double(get("diffusion_dt"));
  p.histogram_match = parse_int<int>(get("histogram_match"), "histogram_match") != 0;
  p.intensity_scale = parse_double(get("intensity_scale"));
  {
    std::istringstream ds(get("volume_dims"));
    if (!(ds >> ck.volume_dims.nx >> ck.volume_dims.ny >> ck.volume_dims.nz)) throw FormatError("checkpoint volume_dims is invalid");
  }
  ck.epoch = parse_int<int>(get("epoch"), "epoch");

  ck.params = make_param_layout<float>(ck.arch);
  ck.velocity = ck.params.zeros_like();
  std::vector<ParamTensor<float>*> targets;
  for (auto& t : ck.params.tensors) targets.push_back(&t);
  for (auto& t : ck.velocity.tensors)
    if (t.trainable) targets.push_back(&t);
  if (manifest.size() != targets.size()) throw FormatError("checkpoint tensor manifest does not match the architecture");
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const bool velocity = i >= ck.params.tensors.size();
    const std::string expected = (velocity ? "velocity/" : "") + targets[i]->name;
    if (manifest[i].name != expected || manifest[i].shape != targets[i]->shape)
      throw FormatError("checkpoint tensor " + manifest[i].name + " does not match expected " + expected);
  }

  std::size_t payload = 0;
  for (auto* t : targets) payload += t->values.size() * 4;
  const std::size_t expected_size = 8 + header_len + payload + kHistogramBins * 8;
  if (bytes.size() != expected_size)
    throw LengthError("checkpoint is " + std::to_string(bytes.size()) + " bytes, expected " + std::to_string(expected_size));
  const std::uint8_t* cur = bytes.data() + 8 + header_len;
  for (auto* t : targets)
    for (auto& v : t->values) {
      v = std::bit_cast<float>(static_cast<std::uint32_t>(get_uint(cur, 4)));
      cur += 4;
    }
  for (auto& v : ck.reference.cdf) {
    v = std::bit_cast<double>(get_uint(cur, 8));
    cur += 8;
  }
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  write_file_atomic(path, encode_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file_bytes(path)); }

/// Snapshot of a float training state.
inline Checkpoint make_checkpoint(const TrainState<float>& state, const TrainConfig& cfg, const PreprocessConfig& pre,
                                  const ReferenceCdf& reference, Dims volume_dims) {
  Checkpoint ck;
  ck.arch = state.arch;
  ck.params = state.params;
  ck.velocity = state.velocity;
  ck.reference = reference;
  ck.config = cfg;
  ck.preprocess = pre;
  ck.volume_dims = volume_dims;
  ck.epoch = state.epoch;
  return ck;
}

inline TrainState<float> resume_state(const Checkpoint& ck) {
  TrainState<float> s;
  s.arch = ck.arch;
  s.params = ck.params;
  s.velocity = ck.velocity;
  s.epoch = ck.epoch;
  return s;
}

}  // namespace cardiacnet
